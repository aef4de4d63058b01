#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "common.hpp"
#include "rating_matrix.hpp"

namespace cgah {

/// Real latent factors: row i of `users` is h_i, row j of `items` is g_j.
struct FactorMatrix {
    RowMatrix users;
    RowMatrix items;

    std::size_t dim() const { return static_cast<std::size_t>(users.cols()); }
};

struct MfConfig {
    std::size_t dim = 20;
    double reg = 0.1;
    int iterations = 50;
    std::uint64_t seed = 42;
    double init_scale = 0.0;  // <= 0 means 0.1 / sqrt(dim)
    double tolerance = 1e-6;  // relative objective change for early exit
    int threads = 1;

    void validate() const {
        if (dim < 1) throw ValidationError("factor dimension must be >= 1");
        if (!(reg > 0.0)) throw ValidationError("MF regularization must be > 0");
        if (iterations < 1) throw ValidationError("MF iterations must be >= 1");
    }
};

struct MfResult {
    FactorMatrix factors;
    /// Objective at initialization and after every half-sweep (users, then items).
    std::vector<double> objective_trace;
};

inline double predict_mf(const FactorMatrix& f, std::size_t user, std::size_t item) {
    if (user >= static_cast<std::size_t>(f.users.rows()) || item >= static_cast<std::size_t>(f.items.rows())) {
        throw ValidationError("prediction index out of range");
    }
    return f.users.row(static_cast<Eigen::Index>(user)).dot(f.items.row(static_cast<Eigen::Index>(item)));
}

/// sum over observed (r - w * h.g)^2 + reg * (|H|^2 + |G|^2). An empty weight
/// span means w = 1.
inline double mf_objective(const RatingMatrix& train, const FactorMatrix& f, double reg,
                           std::span<const double> weights = {}) {
    double loss = 0.0;
    auto entries = train.entries();
    for (std::size_t k = 0; k < entries.size(); ++k) {
        const auto& r = entries[k];
        double w = weights.empty() ? 1.0 : weights[k];
        double e = r.value - w * f.users.row(r.user).dot(f.items.row(r.item));
        loss += e * e;
    }
    return loss + reg * (f.users.squaredNorm() + f.items.squaredNorm());
}

namespace detail {

// Ridge solve for one row: (reg I + sum w^2 v v^T) x = sum w r v.
template <typename Entries, typename WeightOf>
inline void solve_row(const RowMatrix& other, const Entries& entries, WeightOf weight_of, double reg,
                      Eigen::Ref<Eigen::RowVectorXd> out) {
    const auto r = other.cols();
    Eigen::MatrixXd a = Eigen::MatrixXd::Identity(r, r) * reg;
    Eigen::VectorXd b = Eigen::VectorXd::Zero(r);
    for (std::size_t k = 0; k < entries.size(); ++k) {
        const auto& e = entries[k];
        double w = weight_of(k);
        auto v = other.row(e.index).transpose();
        a.selfadjointView<Eigen::Lower>().rankUpdate(v, w * w);
        b += (w * e.value) * v;
    }
    out = a.selfadjointView<Eigen::Lower>().ldlt().solve(b).transpose();
}

}  // namespace detail

/// Alternating ridge regressions on the weighted squared loss. Weights are
/// aligned with train.entries(); empty means unweighted MF.
inline MfResult train_mf_weighted(const RatingMatrix& train, std::span<const double> weights, const MfConfig& cfg) {
    cfg.validate();
    if (train.empty()) throw ValidationError("training set is empty");
    if (!weights.empty() && weights.size() != train.size()) {
        throw ValidationError("weight count does not match the number of ratings");
    }
    const auto r = static_cast<Eigen::Index>(cfg.dim);
    const double scale = cfg.init_scale > 0.0 ? cfg.init_scale : 0.1 / std::sqrt(static_cast<double>(cfg.dim));

    MfResult result;
    auto& f = result.factors;
    f.users.resize(static_cast<Eigen::Index>(train.users()), r);
    f.items.resize(static_cast<Eigen::Index>(train.items()), r);
    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<double> init(-scale, scale);
    for (Eigen::Index i = 0; i < f.users.size(); ++i) f.users.data()[i] = init(rng);
    for (Eigen::Index j = 0; j < f.items.size(); ++j) f.items.data()[j] = init(rng);

    auto objective = [&] {
        double v = mf_objective(train, f, cfg.reg, weights);
        if (!std::isfinite(v)) throw DivergenceError("MF objective is not finite");
        return v;
    };
    result.objective_trace.push_back(objective());

    for (int it = 0; it < cfg.iterations; ++it) {
        parallel_for(train.users(), cfg.threads, [&](std::size_t begin, std::size_t end) {
            for (std::size_t i = begin; i < end; ++i) {
                std::size_t base = train.row_offset(i);
                detail::solve_row(
                    f.items, train.row(i),
                    [&](std::size_t k) { return weights.empty() ? 1.0 : weights[base + k]; }, cfg.reg,
                    f.users.row(static_cast<Eigen::Index>(i)));
            }
        });
        result.objective_trace.push_back(objective());
        parallel_for(train.items(), cfg.threads, [&](std::size_t begin, std::size_t end) {
            for (std::size_t j = begin; j < end; ++j) {
                auto ids = train.col_entry_ids(j);
                detail::solve_row(
                    f.users, train.col(j),
                    [&](std::size_t k) { return weights.empty() ? 1.0 : weights[ids[k]]; }, cfg.reg,
                    f.items.row(static_cast<Eigen::Index>(j)));
            }
        });
        double before = result.objective_trace[result.objective_trace.size() - 2];
        double after = objective();
        result.objective_trace.push_back(after);
        if (std::abs(before - after) <= cfg.tolerance * std::max(std::abs(before), 1e-300)) break;
    }
    return result;
}

inline MfResult train_mf(const RatingMatrix& train, const MfConfig& cfg) {
    return train_mf_weighted(train, {}, cfg);
}

/// MF-GA: predictions are s_ij * h_i.g_j, with s supplied per observed pair.
inline MfResult train_mf_ga(const RatingMatrix& train,
                            const std::function<double(std::size_t, std::size_t)>& affinity,
                            const MfConfig& cfg) {
    std::vector<double> weights;
    weights.reserve(train.size());
    for (const auto& r : train.entries()) {
        double s = affinity(r.user, r.item);
        if (!(s > 0.0 && s <= 1.0)) {
            throw ValidationError("group affinity for (" + std::to_string(r.user) + ", " +
                                  std::to_string(r.item) + ") must lie in (0, 1]");
        }
        weights.push_back(s);
    }
    return train_mf_weighted(train, weights, cfg);
}

}  // namespace cgah
