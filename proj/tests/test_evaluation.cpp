#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "cgah/bench.hpp"
#include "cgah/evaluation.hpp"
#include "cgah/experiment.hpp"
#include "cgah/synthetic.hpp"

using namespace cgah;

namespace {

struct TableRanker {
    std::vector<std::vector<double>> s;
    std::size_t users() const { return s.size(); }
    std::size_t items() const { return s.empty() ? 0 : s[0].size(); }
    double score(std::size_t i, std::size_t j) const { return s[i][j]; }
};

struct OracleRanker {
    const RatingMatrix* test;
    double sign = 1.0;
    std::size_t users() const { return test->users(); }
    std::size_t items() const { return test->items(); }
    double score(std::size_t i, std::size_t j) const { return sign * (test->contains(i, j) ? 1.0 : 0.0); }
};

RatingMatrix synthetic(std::size_t users, std::size_t items, std::uint64_t seed) {
    SyntheticSpec spec;
    spec.users = users;
    spec.items = items;
    spec.seed = seed;
    return RatingMatrix(users, items, make_grouped_ratings(spec).ratings);
}

}  // namespace

TEST(Dcg, HandCases) {
    std::vector<int> both{1, 1}, second{0, 1}, none{0, 0, 0};
    EXPECT_NEAR(dcg_at_k(both, 2), 1.0 + 1.0 / std::log2(3.0), 1e-12);
    EXPECT_NEAR(dcg_at_k(both, 2), 1.6309, 1e-4);
    EXPECT_NEAR(dcg_at_k(second, 2), 0.6309, 1e-4);
    EXPECT_EQ(dcg_at_k(none, 3), 0.0);
    std::vector<int> bad{2, 0};
    EXPECT_THROW(dcg_at_k(bad, 2), ValidationError);
    EXPECT_THROW(dcg_at_k(second, 3), ValidationError);
}

TEST(Dcg, MonotoneInK) {
    std::mt19937_64 rng(1);
    std::bernoulli_distribution coin;
    std::vector<int> rel(30);
    for (auto& r : rel) r = coin(rng);
    for (std::size_t k = 1; k < 30; ++k) EXPECT_LE(dcg_at_k(rel, k), dcg_at_k(rel, k + 1));
}

TEST(Ndcg, HandCases) {
    std::vector<std::uint32_t> rec{4, 7, 9}, rel{4, 7}, other{1, 2}, one{7};
    EXPECT_EQ(ndcg_at_k(rec, rel, 2), 1.0);
    EXPECT_EQ(ndcg_at_k(rec, other, 3), 0.0);
    EXPECT_NEAR(ndcg_at_k(rec, one, 2), 1.0 / std::log2(3.0), 1e-12);
    EXPECT_NEAR(ndcg_at_k(rec, one, 2), 0.6309, 1e-4);
    EXPECT_EQ(ndcg_at_k(rec, {}, 2), 0.0);
    EXPECT_THROW(ndcg_at_k(rec, rel, 0), ValidationError);
}

TEST(Ndcg, BoundsAndIrrelevantOrder) {
    std::mt19937_64 rng(2);
    for (int t = 0; t < 500; ++t) {
        std::vector<std::uint32_t> items(40);
        std::iota(items.begin(), items.end(), 0);
        std::shuffle(items.begin(), items.end(), rng);
        std::vector<std::uint32_t> rel(items.begin(), items.begin() + 1 + t % 8);
        std::sort(rel.begin(), rel.end());
        std::shuffle(items.begin(), items.end(), rng);
        std::size_t k = 1 + t % 15;
        double v = ndcg_at_k(items, rel, k);
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0 + 1e-12);
        std::size_t need = std::min(k, rel.size());
        bool perfect = true;
        for (std::size_t i = 0; i < need; ++i) perfect &= std::binary_search(rel.begin(), rel.end(), items[i]);
        EXPECT_EQ(std::abs(v - 1.0) < 1e-12, perfect);

        // shuffle irrelevant items placed after the last relevant hit in the top k
        std::size_t last = 0;
        for (std::size_t i = 0; i < k; ++i) {
            if (std::binary_search(rel.begin(), rel.end(), items[i])) last = i + 1;
        }
        auto moved = items;
        std::shuffle(moved.begin() + static_cast<std::ptrdiff_t>(last), moved.end(), rng);
        bool still_irrelevant = true;
        for (std::size_t i = last; i < k; ++i) still_irrelevant &= !std::binary_search(rel.begin(), rel.end(), moved[i]);
        if (still_irrelevant) EXPECT_EQ(ndcg_at_k(moved, rel, k), v);
    }
}

TEST(Evaluate, OracleScoresOneReversedLower) {
    auto split = split_ratings(synthetic(60, 50, 3), SplitSpec{});
    std::vector<std::size_t> ks{1, 5, 10};
    auto best = evaluate_model(OracleRanker{&split.test}, split.test, split.train, ks);
    for (double v : best.ndcg) EXPECT_NEAR(v, 1.0, 1e-12);
    auto worst = evaluate_model(OracleRanker{&split.test, -1.0}, split.test, split.train, ks);
    for (std::size_t k = 0; k < ks.size(); ++k) EXPECT_LT(worst.ndcg[k], best.ndcg[k]);
    EXPECT_EQ(best.users_evaluated, 60u);
}

TEST(Evaluate, FiveUserHandAverage) {
    // train excludes items; test holds the relevant ones
    RatingMatrix train(5, 6, {{0, 0, 1}, {1, 1, 1}, {2, 2, 1}, {3, 3, 1}, {4, 4, 1}});
    RatingMatrix test(5, 6, {{0, 1, 1}, {1, 0, 1}, {1, 5, 1}, {2, 5, 1}, {3, 0, 1}});
    TableRanker m;
    for (int i = 0; i < 5; ++i) m.s.push_back({6, 5, 4, 3, 2, 1});
    // user 0: list 1,2,3,.. -> hit at rank 1 -> 1
    // user 1: list 0,2,3,4,5 -> hits at 1 and 5; k=2: 1/(1+1/log2 3)
    // user 2: list 0,1,3,4,5 -> item 5 at rank 5; k=2 -> 0
    // user 3: list 0,1,2,4,5 -> item 0 at rank 1 -> 1
    // user 4: no test items, skipped
    double u1 = 1.0 / (1.0 + 1.0 / std::log2(3.0));
    auto r = evaluate_model(m, test, train, {2});
    EXPECT_EQ(r.users_evaluated, 4u);
    EXPECT_NEAR(r.ndcg[0], (1.0 + u1 + 0.0 + 1.0) / 4.0, 1e-12);
}

TEST(Evaluate, UncoveredUsersSkippedAndThreadsAgree) {
    auto split = split_ratings(synthetic(40, 30, 4), SplitSpec{});
    TableRanker small;
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u;
    for (int i = 0; i < 30; ++i) {
        small.s.emplace_back(30);
        for (auto& x : small.s.back()) x = u(rng);
    }
    auto a = evaluate_model(small, split.test, split.train, {5, 10}, 1);
    auto b = evaluate_model(small, split.test, split.train, {5, 10}, 4);
    EXPECT_EQ(a.users_skipped, 10u);
    EXPECT_EQ(a.users_evaluated, 30u);
    EXPECT_EQ(a.ndcg, b.ndcg);
}

TEST(Report, MeanAndSampleStd) {
    EvalReport rep;
    for (double v : {0.2, 0.4, 0.9}) rep.add_repeat(EvalResult{{10}, {v}, 1, 0});
    EXPECT_NEAR(rep.mean(0), 0.5, 1e-15);
    EXPECT_NEAR(rep.stddev(0), std::sqrt((0.09 + 0.01 + 0.16) / 2.0), 1e-12);
    EXPECT_THROW(rep.add_repeat(EvalResult{{20}, {0.1}, 1, 0}), ValidationError);
    rep.model = "mf";
    rep.fraction = 0.5;
    std::ostringstream raw, sum;
    write_report_header(raw);
    write_report_rows(raw, rep);
    write_summary(sum, {rep});
    auto text = raw.str();
    EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 4);
    EXPECT_EQ(text.rfind("model,fraction,repeat,k,ndcg\n", 0), 0u);
    EXPECT_NE(sum.str().find("mf,"), std::string::npos);
}

TEST(Sweep, DegenerateAndRepeatPrefix) {
    auto ratings = synthetic(60, 40, 6);
    ExperimentConfig cfg;
    cfg.mf.iterations = 5;
    cfg.ks = {10};
    auto one = sparsity_sweep(ratings, {0.9}, {ModelKind::mf}, 1, cfg, 11);
    ASSERT_EQ(one.size(), 1u);
    EXPECT_EQ(one[0].raw.size(), 1u);
    auto three = sparsity_sweep(ratings, {0.9}, {ModelKind::mf}, 3, cfg, 11);
    EXPECT_EQ(three[0].raw[0], one[0].raw[0]);
    EXPECT_NE(three[0].mean(0), one[0].mean(0));
    EXPECT_THROW(sparsity_sweep(ratings, {0.9}, {ModelKind::mf}, 0, cfg, 11), ValidationError);
}

TEST(Sweep, EveryCfModelRuns) {
    auto ratings = synthetic(60, 40, 7);
    ExperimentConfig cfg;
    cfg.mf.iterations = 5;
    cfg.cgah.bits = 8;
    cfg.cgah.kappa = 4;
    cfg.cgah.max_outer_iters = 3;
    cfg.ks = {5, 10};
    auto out = sparsity_sweep(ratings, {0.5},
                              {ModelKind::mf, ModelKind::mf_ga, ModelKind::cgah_cf, ModelKind::cgah_cf_flat}, 1, cfg, 1);
    ASSERT_EQ(out.size(), 4u);
    for (auto& r : out) {
        for (double v : r.raw[0]) {
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 1.0);
        }
    }
    EXPECT_THROW(parse_model_kind("bpr"), ValidationError);
    EXPECT_THROW(train_model(ModelKind::cgah, ratings, cfg, 0), ValidationError);
}

TEST(Bench, SmallRunIsConsistent) {
    BenchSpec spec;
    spec.items = 2000;
    spec.bits = 64;
    spec.queries = 30;
    auto rep = bench_retrieval(spec);
    EXPECT_TRUE(rep.rankings_match);
    EXPECT_GT(rep.rankings_checked, 0u);
    const auto& f = rep.timing(ScoringMode::float_dot);
    EXPECT_NEAR(f.speedup, 1.0, 1e-12);
    for (auto& t : rep.modes) {
        EXPECT_GT(t.median_seconds, 0.0);
        EXPECT_GT(t.mean_seconds, 0.0);
        EXPECT_GE(t.p99_seconds, t.median_seconds);
        EXPECT_NEAR(t.speedup, f.median_seconds / t.median_seconds, 1e-12);
    }
    EXPECT_EQ(rep.timing(ScoringMode::binary_popcount).bytes_per_entity, 8u);
    EXPECT_EQ(rep.timing(ScoringMode::float_dot).bytes_per_entity, 512u);
    EXPECT_EQ(parse_scoring_mode("float-dot"), ScoringMode::float_dot);
    EXPECT_THROW(parse_scoring_mode("cosine"), ValidationError);
}
