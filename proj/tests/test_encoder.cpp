#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "cgah/encoder.hpp"

using namespace cgah;

namespace {

std::vector<double> random_vec(std::size_t n, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> v(n);
    for (auto& x : v) x = u(rng);
    return v;
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8}); }

}  // namespace

TEST(Encode, ZeroInputZeroBias) {
    auto p = EncoderParams::random(4, 3, 1);
    std::vector<double> x(4, 0.0);
    EXPECT_EQ(encode(p, x).norm(), 0.0);
}

TEST(Encode, BoundedAndPure) {
    std::mt19937_64 rng(2);
    auto p = EncoderParams::random(6, 5, 2);
    p.w_enc *= 20.0;
    for (int t = 0; t < 100; ++t) {
        auto x = random_vec(6, rng);
        auto a = encode(p, x);
        EXPECT_LE(a.cwiseAbs().maxCoeff(), 1.0);
        EXPECT_EQ(a, encode(p, x));
    }
    std::vector<double> wrong(5, 0.0);
    EXPECT_THROW(encode(p, wrong), ValidationError);
}

TEST(Encode, HandComputedTwoTwoTwo) {
    auto p = EncoderParams::zeros(2, 2);
    p.w_enc << 0.5, -1.0, 0.25, 2.0;
    p.b_enc << 0.1, -0.2;
    p.w_dec << 1.0, 0.5, -0.5, 2.0;
    p.b_dec << 0.3, 0.0;
    std::vector<double> x{1.0, 0.5};
    // z = (0.5 - 0.5 + 0.1, 0.25 + 1.0 - 0.2) = (0.1, 1.05)
    auto e = encode(p, x);
    EXPECT_NEAR(e(0), std::tanh(0.1), 1e-15);
    EXPECT_NEAR(e(1), std::tanh(1.05), 1e-15);
    double a0 = 1.0 / (1.0 + std::exp(-0.1)), a1 = 1.0 / (1.0 + std::exp(-1.05));
    auto y = reconstruct(p, x);
    EXPECT_NEAR(y(0), a0 + 0.5 * a1 + 0.3, 1e-15);
    EXPECT_NEAR(y(1), -0.5 * a0 + 2.0 * a1, 1e-15);
}

TEST(Gradient, ReconstructionMatchesFiniteDifferences) {
    std::mt19937_64 rng(3);
    auto p = EncoderParams::random(4, 3, 3);
    std::normal_distribution<double> g(0.0, 0.3);
    p.b_enc << g(rng), g(rng), g(rng);
    for (int k = 0; k < 4; ++k) p.b_dec(k) = g(rng);
    const double h = 1e-5;
    for (int t = 0; t < 20; ++t) {
        auto clean = random_vec(4, rng);
        auto noisy = clean;
        noisy[static_cast<std::size_t>(t % 4)] = 0.0;
        auto grad = reconstruction_gradient(p, noisy, clean).flatten();
        auto theta = p.flatten();
        for (std::size_t k = 0; k < theta.size(); ++k) {
            auto up = p, down = p;
            auto tu = theta, td = theta;
            tu[k] += h;
            td[k] -= h;
            up.assign(tu);
            down.assign(td);
            double fd = (reconstruction_loss(up, noisy, clean) - reconstruction_loss(down, noisy, clean)) / (2 * h);
            EXPECT_LT(rel_err(grad[k], fd), 1e-4) << "param " << k;
        }
    }
}

TEST(Gradient, EmbeddingMatchesFiniteDifferences) {
    std::mt19937_64 rng(4);
    // 2 inputs, 1 output: three parameters
    auto p = EncoderParams::random(2, 1, 4);
    p.b_enc(0) = 0.2;
    const double h = 1e-5;
    for (int t = 0; t < 20; ++t) {
        auto x = random_vec(2, rng);
        std::vector<double> target{t % 2 ? 1.0 : -1.0};
        auto g = embedding_gradient(p, x, target);
        std::vector<double> analytic{g.w_enc(0, 0), g.w_enc(0, 1), g.b_enc(0)};
        for (int k = 0; k < 3; ++k) {
            auto up = p, down = p;
            double* slot_up = k < 2 ? &up.w_enc(0, k) : &up.b_enc(0);
            double* slot_down = k < 2 ? &down.w_enc(0, k) : &down.b_enc(0);
            *slot_up += h;
            *slot_down -= h;
            double fd = (embedding_loss(up, x, target) - embedding_loss(down, x, target)) / (2 * h);
            EXPECT_LT(rel_err(analytic[static_cast<std::size_t>(k)], fd), 1e-4);
        }
    }
}

TEST(CorruptionMask, ExactCountAndUniformPositions) {
    std::mt19937_64 rng(5);
    std::vector<int> hits(10, 0);
    const int draws = 20000;
    for (int t = 0; t < draws; ++t) {
        auto m = corruption_mask(10, 0.3, rng);
        int zeros = 0;
        for (int k = 0; k < 10; ++k) {
            zeros += m[k];
            hits[k] += m[k];
        }
        ASSERT_EQ(zeros, 3);
    }
    for (int h : hits) EXPECT_NEAR(h / static_cast<double>(draws), 0.3, 0.02);
    auto none = corruption_mask(7, 0.0, rng);
    EXPECT_EQ(std::count(none.begin(), none.end(), 1), 0);
}

TEST(Pretrain, IdentityIsLearnable) {
    RowMatrix c(2, 2);
    c << 1, 0, 0, 1;
    DaeConfig cfg;
    cfg.embed_dim = 2;
    cfg.corruption = 0.0;
    cfg.epochs = 3000;
    cfg.lr = 0.5;
    auto p = pretrain_dae(c, cfg).params;
    double mse = 0.0;
    for (int i = 0; i < 2; ++i) {
        std::vector<double> x{c(i, 0), c(i, 1)};
        mse += reconstruction_loss(p, x, x) / 2.0;
    }
    EXPECT_LT(mse / 2.0, 1e-2);
}

TEST(Pretrain, ZeroEpochsAndDeterminism) {
    std::mt19937_64 rng(6);
    RowMatrix c(8, 6);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (Eigen::Index k = 0; k < c.size(); ++k) c.data()[k] = u(rng);
    DaeConfig cfg;
    cfg.embed_dim = 3;
    cfg.epochs = 0;
    auto init = pretrain_dae(c, cfg).params;
    auto ref = EncoderParams::random(6, 3, cfg.seed);
    EXPECT_EQ(init.w_enc, ref.w_enc);
    EXPECT_EQ(init.w_dec, ref.w_dec);
    cfg.epochs = 5;
    EXPECT_EQ(pretrain_dae(c, cfg).params, pretrain_dae(c, cfg).params);
}

TEST(Pretrain, Validation) {
    RowMatrix c = RowMatrix::Ones(3, 3);
    DaeConfig cfg;
    cfg.corruption = 1.0;
    EXPECT_THROW(pretrain_dae(c, cfg), ValidationError);
    cfg = DaeConfig{};
    cfg.embed_dim = 0;
    EXPECT_THROW(pretrain_dae(c, cfg), ValidationError);
    cfg = DaeConfig{};
    cfg.lr = 1e6;
    cfg.epochs = 200;
    RowMatrix big = RowMatrix::Constant(3, 3, 50.0);
    EXPECT_THROW(pretrain_dae(big, cfg), DivergenceError);
}

TEST(Finetune, SaturatedTargetsBarelyMove) {
    // same-sign rows on positive inputs: every unit sits deep in a tanh tail
    auto p = EncoderParams::random(3, 4, 7);
    p.w_enc = p.w_enc.cwiseAbs() * 40.0;
    p.w_enc.row(1) *= -1.0;
    p.w_enc.row(3) *= -1.0;
    std::mt19937_64 rng(7);
    RowMatrix c(10, 3);
    std::uniform_real_distribution<double> u(0.5, 1.0);
    for (Eigen::Index k = 0; k < c.size(); ++k) c.data()[k] = u(rng);
    auto targets = BinaryCodeSet::from_signs(encode_all(p, c));
    double before = embedding_objective(p, c, targets);
    EXPECT_LT(before, 1e-6);
    auto tuned = finetune_encoder(p, c, targets, 5, 0.05, 1).params;
    EXPECT_LT((tuned.w_enc - p.w_enc).norm(), 1e-3);
}

TEST(Finetune, LossDropsOnToySet) {
    auto p = EncoderParams::random(5, 4, 8);
    std::mt19937_64 rng(8);
    RowMatrix c(10, 5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (Eigen::Index k = 0; k < c.size(); ++k) c.data()[k] = u(rng);
    std::bernoulli_distribution coin;
    BinaryCodeSet targets(10, 4);
    for (std::size_t e = 0; e < 10; ++e) {
        for (std::size_t k = 0; k < 4; ++k) targets.set(e, k, coin(rng) ? 1 : -1);
    }
    auto res = finetune_encoder(p, c, targets, 20, 0.05, 2);
    ASSERT_EQ(res.epoch_loss.size(), 20u);
    EXPECT_LT(res.epoch_loss.back(), res.epoch_loss.front());
    EXPECT_LT(embedding_objective(res.params, c, targets), embedding_objective(p, c, targets));
    EXPECT_THROW(finetune_encoder(p, c, BinaryCodeSet(9, 4), 1, 0.05, 2), ValidationError);
    EXPECT_THROW(finetune_encoder(p, c, BinaryCodeSet(10, 3), 1, 0.05, 2), ValidationError);
}
