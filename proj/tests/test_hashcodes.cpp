#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <Eigen/QR>

#include "cgah/delegate.hpp"
#include "cgah/hashcodes.hpp"

using namespace cgah;

namespace {

std::vector<int> random_code(std::size_t r, std::mt19937_64& rng) {
    std::bernoulli_distribution coin;
    std::vector<int> c(r);
    for (auto& x : c) x = coin(rng) ? 1 : -1;
    return c;
}

BinaryCodeSet random_codes(std::size_t n, std::size_t r, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<std::vector<int>> v;
    for (std::size_t e = 0; e < n; ++e) v.push_back(random_code(r, rng));
    return BinaryCodeSet::pack(v);
}

// sqrt(n) * Q1 * Q2^T with Q1 orthonormal and orthogonal to 1, Q2 orthogonal.
RowMatrix random_feasible(Eigen::Index n, Eigen::Index r, std::mt19937_64& rng) {
    std::normal_distribution<double> g;
    Eigen::MatrixXd a(n, r), b(r, r);
    for (Eigen::Index k = 0; k < a.size(); ++k) a.data()[k] = g(rng);
    for (Eigen::Index k = 0; k < b.size(); ++k) b.data()[k] = g(rng);
    a.rowwise() -= a.colwise().mean();
    Eigen::MatrixXd q1 = Eigen::HouseholderQR<Eigen::MatrixXd>(a).householderQ() * Eigen::MatrixXd::Identity(n, r);
    Eigen::MatrixXd q2 = Eigen::HouseholderQR<Eigen::MatrixXd>(b).householderQ();
    return std::sqrt(static_cast<double>(n)) * q1 * q2.transpose();
}

}  // namespace

TEST(Codes, PackUnpackRoundTrip) {
    std::mt19937_64 rng(1);
    std::vector<std::vector<int>> v{{1, 1, 1, 1}, {-1, 1, -1, 1}};
    auto set = BinaryCodeSet::pack(v);
    EXPECT_EQ(set.unpack(0), v[0]);
    EXPECT_EQ(set.unpack(1), v[1]);
    auto c = random_code(20, rng);
    EXPECT_EQ(BinaryCodeSet::pack({c}).unpack(0), c);
}

TEST(Codes, RejectsNonSignEntries) {
    EXPECT_THROW(BinaryCodeSet::pack({{1, 0, -1}}), ValidationError);
    EXPECT_THROW(BinaryCodeSet::pack({{1, 2}}), ValidationError);
    EXPECT_THROW(BinaryCodeSet::pack({{1, 1}, {1}}), ValidationError);
}

TEST(Codes, PaddingBitsStayZero) {
    for (std::size_t r : {1, 20, 63, 64, 65, 100}) {
        auto set = random_codes(7, r, r);
        for (std::size_t e = 0; e < set.count(); ++e) {
            for (std::size_t k = 0; k < r; ++k) set.set(e, k, 1);
        }
        if (r % 64 == 0) continue;
        std::uint64_t pad = ~((1ULL << (r % 64)) - 1);
        for (std::size_t e = 0; e < set.count(); ++e) EXPECT_EQ(set.code(e).back() & pad, 0u);
    }
}

TEST(Codes, MatrixRoundTrip) {
    auto set = random_codes(9, 70, 2);
    EXPECT_EQ(BinaryCodeSet::from_signs(set.to_matrix()), set);
    std::vector<std::uint64_t> words(set.words().begin(), set.words().end());
    EXPECT_EQ(BinaryCodeSet::from_words(9, 70, words), set);
    words[1] |= 1ULL << 63;
    EXPECT_THROW(BinaryCodeSet::from_words(9, 70, words), ValidationError);
}

TEST(Hamming, HandCases) {
    std::vector<int> b{1, -1, 1, 1, -1, -1, 1, -1};
    std::vector<int> nb(8), half = b;
    for (int k = 0; k < 8; ++k) nb[k] = -b[k];
    for (int k = 0; k < 4; ++k) half[k] = -half[k];
    auto set = BinaryCodeSet::pack({b, nb, half});
    EXPECT_EQ(hamming_similarity(set, 0, set, 0), 1.0);
    EXPECT_EQ(hamming_similarity(set, 0, set, 1), 0.0);
    EXPECT_EQ(hamming_similarity(set, 0, set, 2), 0.5);
    auto other = random_codes(1, 9, 1);
    EXPECT_THROW(hamming_similarity(set, 0, other, 0), ValidationError);
}

TEST(Hamming, EqualsArithmeticFormula) {
    std::mt19937_64 rng(3);
    for (std::size_t r : {16, 20, 32, 64, 100}) {
        for (int t = 0; t < 500; ++t) {
            auto b = random_code(r, rng), d = random_code(r, rng);
            auto set = BinaryCodeSet::pack({b, d});
            int dot = std::inner_product(b.begin(), b.end(), d.begin(), 0);
            double sim = hamming_similarity(set, 0, set, 1);
            EXPECT_EQ(sim, 0.5 + dot / (2.0 * static_cast<double>(r)));
            EXPECT_EQ(sim, hamming_similarity(set, 1, set, 0));
            EXPECT_EQ(code_dot(set.code(0), set.code(1), r), dot);
            EXPECT_EQ(sim == 1.0, b == d);
        }
    }
}

TEST(Preference, Cases) {
    auto set = BinaryCodeSet::pack({{1, -1}, {-1, 1}, {1, 1}});
    EXPECT_EQ(predict_preference(0.5, set, 0, set, 0), 0.5);
    EXPECT_NEAR(predict_preference(logistic(1.0), 0.5), 0.365529, 1e-6);
    EXPECT_EQ(predict_preference(0.7, set, 0, set, 1), 0.0);
    EXPECT_THROW(predict_preference(0.0, 0.5), ValidationError);
    EXPECT_THROW(predict_preference(1.0, 0.5), ValidationError);
}

TEST(TopK, SingleBestItem) {
    auto users = BinaryCodeSet::pack({{1, 1, -1, -1}});
    auto items = BinaryCodeSet::pack({{-1, 1, -1, -1}, {1, 1, -1, -1}, {1, -1, 1, 1}});
    GroupProfile p{RowMatrix::Constant(1, 2, 0.5)};
    GroupProfile q{RowMatrix::Constant(3, 2, 0.5)};
    auto top = topk(0, users, items, p, q, 1);
    ASSERT_EQ(top.size(), 1u);
    EXPECT_EQ(top[0].item, 1u);
}

TEST(TopK, TiesByIndexAndMoreThanAvailable) {
    auto users = BinaryCodeSet::pack({{1, 1}});
    auto items = BinaryCodeSet::pack({{1, -1}, {-1, 1}, {1, -1}, {-1, 1}});
    GroupProfile p{RowMatrix::Zero(1, 2)};
    GroupProfile q{RowMatrix::Zero(4, 2)};
    auto top = topk(0, users, items, p, q, 10);
    ASSERT_EQ(top.size(), 4u);
    for (std::uint32_t k = 0; k < 4; ++k) EXPECT_EQ(top[k].item, k);
    std::vector<char> ex{0, 1, 0, 0};
    auto kept = topk(0, users, items, p, q, 10, ex);
    ASSERT_EQ(kept.size(), 3u);
    for (auto& s : kept) EXPECT_NE(s.item, 1u);
    EXPECT_THROW(topk(0, users, items, p, q, 0), ValidationError);
}

TEST(TopK, MatchesFullSortOracle) {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    auto users = random_codes(3, 12, 5);
    auto items = random_codes(50, 12, 6);
    GroupProfile p{RowMatrix(3, 4)}, q{RowMatrix(50, 4)};
    for (Eigen::Index k = 0; k < p.rows.size(); ++k) p.rows.data()[k] = u(rng);
    for (Eigen::Index k = 0; k < q.rows.size(); ++k) q.rows.data()[k] = std::round(u(rng) * 2) / 2;
    std::vector<char> ex(50, 0);
    for (int k = 0; k < 50; k += 7) ex[k] = 1;
    for (std::size_t i = 0; i < 3; ++i) {
        std::vector<std::pair<double, std::uint32_t>> all;
        for (std::uint32_t j = 0; j < 50; ++j) {
            if (ex[j]) continue;
            all.push_back({group_affinity(p.row(i), q.row(j)) * hamming_similarity(users, i, items, j), j});
        }
        std::stable_sort(all.begin(), all.end(), [](auto& a, auto& b) { return a.first > b.first; });
        for (int threads : {1, 3}) {
            auto top = topk(i, users, items, p, q, 15, ex, threads);
            ASSERT_EQ(top.size(), 15u);
            for (std::size_t k = 0; k < 15; ++k) {
                EXPECT_EQ(top[k].item, all[k].second);
                EXPECT_EQ(top[k].score, all[k].first);
            }
        }
    }
}

TEST(TopK, InvariantUnderMonotoneTransform) {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> s(200);
    for (auto& x : s) x = std::round(u(rng) * 20) / 20;
    auto a = top_k_scan(200, 25, [&](std::size_t j) { return s[j]; });
    auto b = top_k_scan(200, 25, [&](std::size_t j) { return std::exp(3.0 * s[j]) + 1.0; });
    for (std::size_t k = 0; k < 25; ++k) EXPECT_EQ(a[k].item, b[k].item);
}

TEST(Delegate, FeasibleCodesReturnedExactly) {
    RowMatrix b(4, 2);
    b << 1, 1, 1, -1, -1, 1, -1, -1;
    auto x = update_delegate(b);
    EXPECT_NEAR((x - b).norm(), 0.0, 1e-9);
    EXPECT_NEAR(delegate_trace(b, x), 8.0, 1e-9);
}

TEST(Delegate, RequiresMoreEntitiesThanBits) {
    EXPECT_THROW(update_delegate(random_codes(4, 4, 1)), ValidationError);
}

TEST(Delegate, ConstraintsAndOptimality) {
    std::mt19937_64 rng(8);
    for (int t = 0; t < 20; ++t) {
        const std::size_t n = 30 + 5 * t, r = 4 + t % 9;
        auto codes = random_codes(n, r, 100 + t);
        auto x = update_delegate(codes);
        auto d = delegate_diagnostics(x);
        EXPECT_LT(d.max_abs_bit_sum, 1e-6);
        EXPECT_LT(d.orthogonality_error, 1e-4 * static_cast<double>(n));
        auto bm = codes.to_matrix();
        double tr = delegate_trace(bm, x);
        EXPECT_LE(tr, static_cast<double>(n * r) + 1e-9);
        for (int a = 0; a < 100; ++a) {
            EXPECT_GE(tr, delegate_trace(bm, random_feasible(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(r), rng)) - 1e-6);
        }
        // random codes are almost never balanced and decorrelated
        EXPECT_LT(tr, static_cast<double>(n * r) - 1e-6);
    }
}

TEST(Delegate, RankDeficientCodesStillFeasible) {
    // every entity shares the same code for the first two bits, and bit 3 copies bit 2
    auto codes = random_codes(40, 8, 9);
    for (std::size_t e = 0; e < 40; ++e) {
        codes.set(e, 0, 1);
        codes.set(e, 1, -1);
        codes.set(e, 3, codes.get(e, 2));
    }
    auto x = update_delegate(codes);
    auto d = delegate_diagnostics(x);
    EXPECT_LT(d.max_abs_bit_sum, 1e-6);
    EXPECT_LT(d.orthogonality_error, 1e-4 * 40);
    std::mt19937_64 rng(10);
    double tr = delegate_trace(codes.to_matrix(), x);
    for (int a = 0; a < 100; ++a) EXPECT_GE(tr, delegate_trace(codes.to_matrix(), random_feasible(40, 8, rng)) - 1e-6);
}

TEST(Delegate, AllCodesIdentical) {
    BinaryCodeSet codes(12, 3);
    auto x = update_delegate(codes);
    auto d = delegate_diagnostics(x);
    EXPECT_LT(d.max_abs_bit_sum, 1e-6);
    EXPECT_LT(d.orthogonality_error, 1e-4 * 12);
}
