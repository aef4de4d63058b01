#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include "common.hpp"
#include "hashcodes.hpp"

namespace cgah {

/// Single-hidden-layer denoising autoencoder: input -> embedding -> input.
///
/// The embedding layer z = W_enc x + b_enc is read through the logistic during
/// reconstruction pretraining and through tanh when it serves as a content
/// embedding compared against +-1 codes. The decoder is linear.
struct EncoderParams {
    Eigen::MatrixXd w_enc;  // embed x input
    Eigen::VectorXd b_enc;
    Eigen::MatrixXd w_dec;  // input x embed
    Eigen::VectorXd b_dec;
    double corruption = 0.2;

    std::size_t input_dim() const { return static_cast<std::size_t>(w_enc.cols()); }
    std::size_t embed_dim() const { return static_cast<std::size_t>(w_enc.rows()); }

    std::size_t parameter_count() const {
        return static_cast<std::size_t>(w_enc.size() + b_enc.size() + w_dec.size() + b_dec.size());
    }

    /// Parameters in the order w_enc, b_enc, w_dec, b_dec (column-major).
    std::vector<double> flatten() const {
        std::vector<double> out;
        out.reserve(parameter_count());
        out.insert(out.end(), w_enc.data(), w_enc.data() + w_enc.size());
        out.insert(out.end(), b_enc.data(), b_enc.data() + b_enc.size());
        out.insert(out.end(), w_dec.data(), w_dec.data() + w_dec.size());
        out.insert(out.end(), b_dec.data(), b_dec.data() + b_dec.size());
        return out;
    }

    void assign(std::span<const double> flat) {
        if (flat.size() != parameter_count()) throw ValidationError("parameter vector size mismatch");
        auto p = flat.begin();
        std::copy_n(p, w_enc.size(), w_enc.data());
        p += w_enc.size();
        std::copy_n(p, b_enc.size(), b_enc.data());
        p += b_enc.size();
        std::copy_n(p, w_dec.size(), w_dec.data());
        p += w_dec.size();
        std::copy_n(p, b_dec.size(), b_dec.data());
    }

    static EncoderParams zeros(std::size_t input_dim, std::size_t embed_dim) {
        const auto in = static_cast<Eigen::Index>(input_dim);
        const auto em = static_cast<Eigen::Index>(embed_dim);
        return {Eigen::MatrixXd::Zero(em, in), Eigen::VectorXd::Zero(em), Eigen::MatrixXd::Zero(in, em),
                Eigen::VectorXd::Zero(in), 0.2};
    }

    /// Glorot-uniform weights, zero biases.
    static EncoderParams random(std::size_t input_dim, std::size_t embed_dim, std::uint64_t seed) {
        auto p = zeros(input_dim, embed_dim);
        std::mt19937_64 rng(seed);
        double bound = std::sqrt(6.0 / static_cast<double>(input_dim + embed_dim));
        std::uniform_real_distribution<double> u(-bound, bound);
        for (Eigen::Index k = 0; k < p.w_enc.size(); ++k) p.w_enc.data()[k] = u(rng);
        for (Eigen::Index k = 0; k < p.w_dec.size(); ++k) p.w_dec.data()[k] = u(rng);
        return p;
    }

    friend bool operator==(const EncoderParams& a, const EncoderParams& b) {
        return a.w_enc == b.w_enc && a.b_enc == b.b_enc && a.w_dec == b.w_dec && a.b_dec == b.b_dec &&
               a.corruption == b.corruption;
    }
};

namespace detail {

inline Eigen::VectorXd as_vector(std::span<const double> x) {
    return Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
}

inline void check_input(const EncoderParams& p, std::size_t dim) {
    if (dim != p.input_dim()) {
        throw ValidationError("content row has " + std::to_string(dim) + " features, encoder expects " +
                              std::to_string(p.input_dim()));
    }
}

}  // namespace detail

/// Content embedding tanh(W_enc c + b_enc); no corruption.
inline Eigen::VectorXd encode(const EncoderParams& p, std::span<const double> content) {
    detail::check_input(p, content.size());
    return (p.w_enc * detail::as_vector(content) + p.b_enc).array().tanh().matrix();
}

inline RowMatrix encode_all(const EncoderParams& p, const RowMatrix& content) {
    detail::check_input(p, static_cast<std::size_t>(content.cols()));
    RowMatrix z = (content * p.w_enc.transpose()).rowwise() + p.b_enc.transpose();
    return z.array().tanh().matrix();
}

/// Pretraining forward pass: linear decoder applied to the logistic hidden layer.
inline Eigen::VectorXd reconstruct(const EncoderParams& p, std::span<const double> input) {
    detail::check_input(p, input.size());
    Eigen::VectorXd a = (p.w_enc * detail::as_vector(input) + p.b_enc).unaryExpr([](double z) { return logistic(z); });
    return p.w_dec * a + p.b_dec;
}

/// ||clean - reconstruct(corrupted)||^2.
inline double reconstruction_loss(const EncoderParams& p, std::span<const double> corrupted, std::span<const double> clean) {
    return (reconstruct(p, corrupted) - detail::as_vector(clean)).squaredNorm();
}

/// Gradient of reconstruction_loss, shaped like the parameters.
inline EncoderParams reconstruction_gradient(const EncoderParams& p, std::span<const double> corrupted,
                                                   std::span<const double> clean, double* loss = nullptr) {
    detail::check_input(p, corrupted.size());
    Eigen::VectorXd x = detail::as_vector(corrupted);
    Eigen::VectorXd a = (p.w_enc * x + p.b_enc).unaryExpr([](double z) { return logistic(z); });
    Eigen::VectorXd y = p.w_dec * a + p.b_dec;
    Eigen::VectorXd dy = 2.0 * (y - detail::as_vector(clean));
    if (loss) *loss = (y - detail::as_vector(clean)).squaredNorm();
    Eigen::VectorXd dz = (p.w_dec.transpose() * dy).cwiseProduct(a.cwiseProduct(Eigen::VectorXd::Ones(a.size()) - a));

    EncoderParams g = EncoderParams::zeros(p.input_dim(), p.embed_dim());
    g.w_enc = dz * x.transpose();
    g.b_enc = dz;
    g.w_dec = dy * a.transpose();
    g.b_dec = dy;
    g.corruption = 0.0;
    return g;
}

/// ||target - encode(content)||^2.
inline double embedding_loss(const EncoderParams& p, std::span<const double> content, std::span<const double> target) {
    return (encode(p, content) - detail::as_vector(target)).squaredNorm();
}

/// Gradient of embedding_loss with respect to the encoder weights and bias.
struct EmbeddingGradient {
    Eigen::MatrixXd w_enc;
    Eigen::VectorXd b_enc;
};

inline EmbeddingGradient embedding_gradient(const EncoderParams& p, std::span<const double> content,
                                            std::span<const double> target, double* loss = nullptr) {
    Eigen::VectorXd x = detail::as_vector(content);
    Eigen::VectorXd xi = encode(p, content);
    Eigen::VectorXd diff = xi - detail::as_vector(target);
    if (loss) *loss = diff.squaredNorm();
    Eigen::VectorXd dz = 2.0 * diff.cwiseProduct((Eigen::VectorXd::Ones(xi.size()) - xi.cwiseProduct(xi)));
    return {dz * x.transpose(), dz};
}

/// Zeroes exactly round(rate * dim) positions, chosen uniformly.
inline std::vector<char> corruption_mask(std::size_t dim, double rate, std::mt19937_64& rng) {
    std::vector<char> mask(dim, 0);
    auto count = static_cast<std::size_t>(std::lround(rate * static_cast<double>(dim)));
    std::vector<std::size_t> idx(dim);
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t k = 0; k < count && k < dim; ++k) {
        std::uniform_int_distribution<std::size_t> pick(k, dim - 1);
        std::swap(idx[k], idx[pick(rng)]);
        mask[idx[k]] = 1;
    }
    return mask;
}

struct DaeConfig {
    std::size_t embed_dim = 20;
    double corruption = 0.2;
    int epochs = 50;
    double lr = 0.05;
    std::uint64_t seed = 42;

    void validate() const {
        if (embed_dim < 1) throw ValidationError("embed_dim must be >= 1");
        if (!(corruption >= 0.0 && corruption < 1.0)) throw ValidationError("corruption must lie in [0, 1)");
        if (epochs < 0) throw ValidationError("epochs must be >= 0");
        if (!(lr > 0.0)) throw ValidationError("learning rate must be > 0");
    }
};

struct EncoderTrainResult {
    EncoderParams params;
    /// Mean per-sample loss of every epoch.
    std::vector<double> epoch_loss;
};

namespace detail {

inline void sgd_step(EncoderParams& p, const EncoderParams& g, double lr) {
    p.w_enc -= lr * g.w_enc;
    p.b_enc -= lr * g.b_enc;
    p.w_dec -= lr * g.w_dec;
    p.b_dec -= lr * g.b_dec;
}

inline void sgd_step(EncoderParams& p, const EmbeddingGradient& g, double lr) {
    p.w_enc -= lr * g.w_enc;
    p.b_enc -= lr * g.b_enc;
}

}  // namespace detail

/// Plain SGD on the denoising reconstruction loss, shuffling every epoch.
inline EncoderTrainResult pretrain_dae(const RowMatrix& content, const DaeConfig& cfg) {
    cfg.validate();
    if (content.rows() == 0) throw ValidationError("no content rows to train on");
    EncoderTrainResult out{EncoderParams::random(static_cast<std::size_t>(content.cols()), cfg.embed_dim, cfg.seed), {}};
    out.params.corruption = cfg.corruption;
    std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    std::vector<std::size_t> order(static_cast<std::size_t>(content.rows()));
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> clean(static_cast<std::size_t>(content.cols())), noisy(clean.size());
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double total = 0.0;
        for (auto e : order) {
            auto row = content.row(static_cast<Eigen::Index>(e));
            std::copy(row.data(), row.data() + row.size(), clean.begin());
            auto mask = corruption_mask(clean.size(), cfg.corruption, rng);
            for (std::size_t k = 0; k < clean.size(); ++k) noisy[k] = mask[k] ? 0.0 : clean[k];
            double loss = 0.0;
            auto grad = reconstruction_gradient(out.params, noisy, clean, &loss);
            if (!std::isfinite(loss)) throw DivergenceError("autoencoder loss is not finite; try a smaller learning rate");
            total += loss;
            detail::sgd_step(out.params, grad, cfg.lr);
        }
        out.epoch_loss.push_back(total / static_cast<double>(order.size()));
    }
    return out;
}

/// Mean over entities of ||target_e - encode(c_e)||^2.
inline double embedding_objective(const EncoderParams& p, const RowMatrix& content, const BinaryCodeSet& targets) {
    RowMatrix xi = encode_all(p, content);
    return (targets.to_matrix() - xi).squaredNorm();
}

/// Supervised SGD pulling tanh embeddings toward the +-1 targets.
inline EncoderTrainResult finetune_encoder(const EncoderParams& params, const RowMatrix& content,
                                           const BinaryCodeSet& targets, int epochs, double lr, std::uint64_t seed) {
    if (targets.count() != static_cast<std::size_t>(content.rows())) {
        throw ValidationError("target count does not match content rows");
    }
    if (targets.bits() != params.embed_dim()) throw ValidationError("code length differs from embedding dimension");
    if (!(lr > 0.0)) throw ValidationError("learning rate must be > 0");
    EncoderTrainResult out{params, {}};
    std::mt19937_64 rng(seed);
    std::vector<std::size_t> order(targets.count());
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> x(static_cast<std::size_t>(content.cols())), t(targets.bits());
    for (int epoch = 0; epoch < epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double total = 0.0;
        for (auto e : order) {
            auto row = content.row(static_cast<Eigen::Index>(e));
            std::copy(row.data(), row.data() + row.size(), x.begin());
            for (std::size_t k = 0; k < t.size(); ++k) t[k] = targets.get(e, k);
            double loss = 0.0;
            auto grad = embedding_gradient(out.params, x, t, &loss);
            if (!std::isfinite(loss)) throw DivergenceError("encoder fine-tuning diverged; try a smaller learning rate");
            total += loss;
            detail::sgd_step(out.params, grad, lr);
        }
        out.epoch_loss.push_back(total / static_cast<double>(std::max<std::size_t>(order.size(), 1)));
    }
    return out;
}

}  // namespace cgah
