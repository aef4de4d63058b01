#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "common.hpp"
#include "factorization.hpp"
#include "rating_matrix.hpp"

namespace cgah {

struct KMeansResult {
    RowMatrix centroids;
    std::vector<std::uint32_t> assignment;
    /// Within-cluster sum of squares after every Lloyd iteration.
    std::vector<double> wcss_trace;
    int iterations = 0;
};

namespace detail {

inline std::size_t count_distinct_rows(const RowMatrix& v) {
    std::vector<Eigen::Index> order(static_cast<std::size_t>(v.rows()));
    for (Eigen::Index i = 0; i < v.rows(); ++i) order[static_cast<std::size_t>(i)] = i;
    auto less = [&](Eigen::Index a, Eigen::Index b) {
        for (Eigen::Index c = 0; c < v.cols(); ++c) {
            if (v(a, c) != v(b, c)) return v(a, c) < v(b, c);
        }
        return false;
    };
    std::sort(order.begin(), order.end(), less);
    std::size_t distinct = order.empty() ? 0 : 1;
    for (std::size_t k = 1; k < order.size(); ++k) {
        if (less(order[k - 1], order[k])) ++distinct;
    }
    return distinct;
}

inline double wcss(const RowMatrix& v, const RowMatrix& c, std::span<const std::uint32_t> assignment) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < v.rows(); ++i) {
        total += (v.row(i) - c.row(assignment[static_cast<std::size_t>(i)])).squaredNorm();
    }
    return total;
}

}  // namespace detail

/// Lloyd's algorithm with k-means++ seeding. Empty clusters are re-seeded at
/// the point farthest from its current centroid.
inline KMeansResult kmeans(const RowMatrix& vectors, std::size_t k, std::uint64_t seed, int max_iters = 100) {
    if (k < 1) throw ValidationError("k-means needs k >= 1");
    if (detail::count_distinct_rows(vectors) < k) {
        throw ValidationError("k-means needs at least " + std::to_string(k) + " distinct vectors");
    }
    const auto n = vectors.rows();
    const auto kk = static_cast<Eigen::Index>(k);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    KMeansResult out;
    out.centroids.resize(kk, vectors.cols());
    std::vector<double> nearest(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
    std::uniform_int_distribution<Eigen::Index> first(0, n - 1);
    out.centroids.row(0) = vectors.row(first(rng));
    for (Eigen::Index c = 1; c < kk; ++c) {
        double total = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            auto& d = nearest[static_cast<std::size_t>(i)];
            d = std::min(d, (vectors.row(i) - out.centroids.row(c - 1)).squaredNorm());
            total += d;
        }
        double target = unit(rng) * total;
        Eigen::Index pick = -1;
        double acc = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            double d = nearest[static_cast<std::size_t>(i)];
            if (d <= 0.0) continue;
            acc += d;
            pick = i;
            if (acc > target) break;
        }
        out.centroids.row(c) = vectors.row(pick);
    }

    out.assignment.assign(static_cast<std::size_t>(n), 0);
    std::vector<std::uint32_t> previous;
    for (int it = 0; it < max_iters; ++it) {
        for (Eigen::Index i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::infinity();
            std::uint32_t arg = 0;
            for (Eigen::Index c = 0; c < kk; ++c) {
                double d = (vectors.row(i) - out.centroids.row(c)).squaredNorm();
                if (d < best) {
                    best = d;
                    arg = static_cast<std::uint32_t>(c);
                }
            }
            out.assignment[static_cast<std::size_t>(i)] = arg;
        }

        RowMatrix sums = RowMatrix::Zero(kk, vectors.cols());
        std::vector<std::size_t> counts(k, 0);
        for (Eigen::Index i = 0; i < n; ++i) {
            auto c = out.assignment[static_cast<std::size_t>(i)];
            sums.row(c) += vectors.row(i);
            ++counts[c];
        }
        for (Eigen::Index c = 0; c < kk; ++c) {
            if (counts[static_cast<std::size_t>(c)] > 0) {
                out.centroids.row(c) = sums.row(c) / static_cast<double>(counts[static_cast<std::size_t>(c)]);
            }
        }
        for (Eigen::Index c = 0; c < kk; ++c) {
            if (counts[static_cast<std::size_t>(c)] > 0) continue;
            Eigen::Index far = 0;
            double far_d = -1.0;
            for (Eigen::Index i = 0; i < n; ++i) {
                double d = (vectors.row(i) - out.centroids.row(out.assignment[static_cast<std::size_t>(i)])).squaredNorm();
                if (d > far_d) {
                    far_d = d;
                    far = i;
                }
            }
            out.centroids.row(c) = vectors.row(far);
            out.assignment[static_cast<std::size_t>(far)] = static_cast<std::uint32_t>(c);
        }
        out.wcss_trace.push_back(detail::wcss(vectors, out.centroids, out.assignment));
        out.iterations = it + 1;
        if (out.assignment == previous) break;
        previous = out.assignment;
    }
    return out;
}

/// Shared centroids in the joint user/item latent space, frozen after construction.
class Codebook {
public:
    Codebook() = default;

    explicit Codebook(RowMatrix centroids) : centroids_(std::move(centroids)) {
        if (centroids_.rows() < 2) throw ValidationError("a codebook needs at least 2 centroids");
    }

    std::size_t size() const { return static_cast<std::size_t>(centroids_.rows()); }
    std::size_t dim() const { return static_cast<std::size_t>(centroids_.cols()); }
    const RowMatrix& centroids() const { return centroids_; }

private:
    RowMatrix centroids_;
};

/// Per-entity cosine similarities to each centroid (one row per entity).
struct GroupProfile {
    RowMatrix rows;

    std::size_t entity_count() const { return static_cast<std::size_t>(rows.rows()); }
    std::size_t groups() const { return static_cast<std::size_t>(rows.cols()); }

    std::span<const double> row(std::size_t e) const {
        return {rows.data() + static_cast<Eigen::Index>(e) * rows.cols(), static_cast<std::size_t>(rows.cols())};
    }
};

/// Entry (e, k) = cosine(factors_e, centroid_k). Zero rows (and zero-norm
/// centroids) give cosine 0; the number of zero rows is reported in *zero_rows.
inline GroupProfile compute_group_profile(const RowMatrix& factors, const Codebook& codebook,
                                          std::size_t* zero_rows = nullptr, int threads = 1) {
    if (static_cast<std::size_t>(factors.cols()) != codebook.dim()) {
        throw ValidationError("factor dimension " + std::to_string(factors.cols()) +
                              " does not match codebook dimension " + std::to_string(codebook.dim()));
    }
    const auto& c = codebook.centroids();
    Eigen::VectorXd c_norm = c.rowwise().norm();
    GroupProfile profile;
    profile.rows = RowMatrix::Zero(factors.rows(), c.rows());
    std::vector<char> zero(static_cast<std::size_t>(factors.rows()), 0);
    parallel_for(static_cast<std::size_t>(factors.rows()), threads, [&](std::size_t begin, std::size_t end) {
        for (auto e = static_cast<Eigen::Index>(begin); e < static_cast<Eigen::Index>(end); ++e) {
            double f_norm = factors.row(e).norm();
            if (f_norm == 0.0) {
                zero[static_cast<std::size_t>(e)] = 1;
                continue;
            }
            for (Eigen::Index k = 0; k < c.rows(); ++k) {
                if (c_norm(k) == 0.0) continue;
                double cos = factors.row(e).dot(c.row(k)) / (f_norm * c_norm(k));
                profile.rows(e, k) = std::clamp(cos, -1.0, 1.0);
            }
        }
    });
    if (zero_rows) *zero_rows = static_cast<std::size_t>(std::count(zero.begin(), zero.end(), 1));
    return profile;
}

/// s_ij = max_k logistic(1 - |p_ik - q_jk|) = logistic(1 - min_k |p_ik - q_jk|).
inline double group_affinity(std::span<const double> p, std::span<const double> q) {
    if (p.size() != q.size()) throw ValidationError("group profile lengths differ");
    if (p.empty()) throw ValidationError("group profiles are empty");
    double closest = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < p.size(); ++k) closest = std::min(closest, std::abs(p[k] - q[k]));
    return logistic(1.0 - closest);
}

/// Affinities for observed pairs, aligned with RatingMatrix::entries().
struct AffinityMap {
    std::vector<double> values;

    bool empty() const { return values.empty(); }
    std::size_t size() const { return values.size(); }

    /// Looks up (user, item) in `ratings`, the matrix the map was built from.
    double at(const RatingMatrix& ratings, std::size_t user, std::size_t item) const {
        auto row = ratings.row(user);
        auto it = std::lower_bound(row.begin(), row.end(), item,
                                   [](const IndexedRating& e, std::size_t v) { return e.index < v; });
        if (it == row.end() || it->index != item) throw ValidationError("pair is not observed");
        return values[ratings.row_offset(user) + static_cast<std::size_t>(it - row.begin())];
    }
};

inline AffinityMap affinity_matrix(const GroupProfile& users, const GroupProfile& items, const RatingMatrix& observed) {
    if (users.groups() != items.groups()) throw ValidationError("profiles come from different codebooks");
    if (users.entity_count() < observed.users() || items.entity_count() < observed.items()) {
        throw ValidationError("profiles do not cover every rated entity");
    }
    AffinityMap map;
    map.values.reserve(observed.size());
    for (const auto& r : observed.entries()) map.values.push_back(group_affinity(users.row(r.user), items.row(r.item)));
    return map;
}

/// Codebook plus the user (P) and item (Q) profiles derived from it.
struct GroupModel {
    Codebook codebook;
    GroupProfile users;
    GroupProfile items;
    std::size_t zero_rows = 0;
    std::vector<double> wcss_trace;

    double affinity(std::size_t user, std::size_t item) const {
        return group_affinity(users.row(user), items.row(item));
    }
};

inline RowMatrix stack_rows(const RowMatrix& top, const RowMatrix& bottom) {
    if (top.cols() != bottom.cols()) throw ValidationError("cannot stack matrices of different width");
    RowMatrix out(top.rows() + bottom.rows(), top.cols());
    out << top, bottom;
    return out;
}

inline RowMatrix concat_columns(const RowMatrix& left, const RowMatrix& right) {
    if (left.rows() != right.rows()) throw ValidationError("cannot concatenate matrices of different height");
    RowMatrix out(left.rows(), left.cols() + right.cols());
    out << left, right;
    return out;
}

/// Clusters the stacked user and item vectors into kappa shared centroids
/// and derives both profiles.
inline GroupModel build_groups(const RowMatrix& user_vectors, const RowMatrix& item_vectors, std::size_t kappa,
                               std::uint64_t seed, int max_iters = 100, int threads = 1) {
    if (kappa < 2) throw ValidationError("kappa must be >= 2");
    auto km = kmeans(stack_rows(user_vectors, item_vectors), kappa, seed, max_iters);
    GroupModel model{Codebook(std::move(km.centroids)), {}, {}, 0, std::move(km.wcss_trace)};
    std::size_t zu = 0, zi = 0;
    model.users = compute_group_profile(user_vectors, model.codebook, &zu, threads);
    model.items = compute_group_profile(item_vectors, model.codebook, &zi, threads);
    model.zero_rows = zu + zi;
    return model;
}

inline GroupModel build_groups(const FactorMatrix& f, std::size_t kappa, std::uint64_t seed, int max_iters = 100,
                               int threads = 1) {
    return build_groups(f.users, f.items, kappa, seed, max_iters, threads);
}

}  // namespace cgah
