#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "common.hpp"
#include "grouping.hpp"
#include "hashcodes.hpp"

namespace cgah {

enum class ScoringMode { binary_popcount, affinity_weighted_binary, float_dot };

inline std::string_view to_string(ScoringMode m) {
    switch (m) {
        case ScoringMode::binary_popcount: return "binary-popcount";
        case ScoringMode::affinity_weighted_binary: return "affinity-weighted-binary";
        case ScoringMode::float_dot: return "float-dot";
    }
    return "?";
}

inline ScoringMode parse_scoring_mode(std::string_view name) {
    if (name == "binary-popcount") return ScoringMode::binary_popcount;
    if (name == "affinity-weighted-binary") return ScoringMode::affinity_weighted_binary;
    if (name == "float-dot") return ScoringMode::float_dot;
    throw ValidationError("unknown scoring mode '" + std::string(name) + "'");
}

struct BenchSpec {
    std::size_t items = 100000;
    std::size_t bits = 64;
    std::size_t queries = 1000;
    std::size_t k = 10;
    std::size_t kappa = 10;
    std::size_t warmup = 10;
    std::uint64_t seed = 42;
    std::vector<ScoringMode> modes{ScoringMode::binary_popcount, ScoringMode::affinity_weighted_binary,
                                   ScoringMode::float_dot};
};

struct ModeTiming {
    ScoringMode mode;
    double mean_seconds = 0.0;
    double median_seconds = 0.0;
    double p99_seconds = 0.0;
    /// float-dot median / this mode's median (0 when float-dot was not run).
    double speedup = 0.0;
    std::size_t bytes_per_entity = 0;
};

struct BenchReport {
    std::size_t items = 0;
    std::size_t bits = 0;
    std::size_t queries = 0;
    std::vector<ModeTiming> modes;
    /// Queries whose popcount ranking was compared against the arithmetic b.d ranking.
    std::size_t rankings_checked = 0;
    bool rankings_match = true;

    const ModeTiming& timing(ScoringMode m) const {
        for (const auto& t : modes) {
            if (t.mode == m) return t;
        }
        throw ValidationError("mode " + std::string(to_string(m)) + " was not benchmarked");
    }
};

namespace detail {

inline double percentile(std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    auto idx = static_cast<std::size_t>(std::ceil(q * static_cast<double>(v.size())));
    idx = std::clamp<std::size_t>(idx, 1, v.size()) - 1;
    return v[idx];
}

inline double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    auto n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace detail

/// Full-scan top-k latency over identical random data for each mode,
/// single-threaded.
inline BenchReport bench_retrieval(const BenchSpec& spec) {
    if (spec.items < 1 || spec.queries < 1 || spec.bits < 1 || spec.k < 1) {
        throw ValidationError("bench needs items, queries, bits and k >= 1");
    }
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);

    RowMatrix item_vecs(static_cast<Eigen::Index>(spec.items), static_cast<Eigen::Index>(spec.bits));
    RowMatrix user_vecs(static_cast<Eigen::Index>(spec.queries), static_cast<Eigen::Index>(spec.bits));
    for (Eigen::Index i = 0; i < item_vecs.size(); ++i) item_vecs.data()[i] = gauss(rng);
    for (Eigen::Index i = 0; i < user_vecs.size(); ++i) user_vecs.data()[i] = gauss(rng);
    auto item_codes = BinaryCodeSet::from_signs(item_vecs);
    auto user_codes = BinaryCodeSet::from_signs(user_vecs);
    GroupProfile item_profile{RowMatrix(static_cast<Eigen::Index>(spec.items), static_cast<Eigen::Index>(spec.kappa))};
    GroupProfile user_profile{RowMatrix(static_cast<Eigen::Index>(spec.queries), static_cast<Eigen::Index>(spec.kappa))};
    for (Eigen::Index i = 0; i < item_profile.rows.size(); ++i) item_profile.rows.data()[i] = unit(rng);
    for (Eigen::Index i = 0; i < user_profile.rows.size(); ++i) user_profile.rows.data()[i] = unit(rng);

    const auto bits = spec.bits;
    auto run = [&](ScoringMode mode, std::size_t q) {
        switch (mode) {
            case ScoringMode::binary_popcount: {
                auto b = user_codes.code(q);
                return top_k_scan(spec.items, spec.k, [&](std::size_t j) {
                    return static_cast<double>(bits - hamming_distance(b, item_codes.code(j)));
                });
            }
            case ScoringMode::affinity_weighted_binary:
                return topk(q, user_codes, item_codes, user_profile, item_profile, spec.k);
            case ScoringMode::float_dot: {
                auto u = user_vecs.row(static_cast<Eigen::Index>(q));
                return top_k_scan(spec.items, spec.k, [&](std::size_t j) {
                    return u.dot(item_vecs.row(static_cast<Eigen::Index>(j)));
                });
            }
        }
        return std::vector<ScoredItem>{};
    };

    BenchReport report;
    report.items = spec.items;
    report.bits = spec.bits;
    report.queries = spec.queries;
    std::size_t sink = 0;
    for (auto mode : spec.modes) {
        for (std::size_t w = 0; w < spec.warmup; ++w) sink += run(mode, w % spec.queries).size();
        std::vector<double> times(spec.queries);
        for (std::size_t q = 0; q < spec.queries; ++q) {
            auto t0 = std::chrono::steady_clock::now();
            auto top = run(mode, q);
            auto t1 = std::chrono::steady_clock::now();
            sink += top.empty() ? 0 : top.front().item;
            times[q] = std::chrono::duration<double>(t1 - t0).count();
        }
        ModeTiming t{mode};
        double sum = 0.0;
        for (double v : times) sum += v;
        t.mean_seconds = sum / static_cast<double>(times.size());
        t.median_seconds = detail::median(times);
        t.p99_seconds = detail::percentile(times, 0.99);
        t.bytes_per_entity = mode == ScoringMode::float_dot ? bits * sizeof(double)
                                                             : item_codes.words_per_code() * sizeof(std::uint64_t);
        if (mode == ScoringMode::affinity_weighted_binary) t.bytes_per_entity += spec.kappa * sizeof(double);
        report.modes.push_back(t);
    }
    for (const auto& t : report.modes) {
        if (t.mode == ScoringMode::float_dot) {
            for (auto& m : report.modes) m.speedup = t.median_seconds / m.median_seconds;
        }
    }

    // Popcount ranking against explicit +-1 arithmetic on a few queries.
    RowMatrix item_signs = item_codes.to_matrix();
    const std::size_t checks = std::min<std::size_t>(spec.queries, 5);
    for (std::size_t q = 0; q < checks; ++q) {
        auto fast = run(ScoringMode::binary_popcount, q);
        Eigen::VectorXd b = user_codes.to_matrix().row(static_cast<Eigen::Index>(q)).transpose();
        Eigen::VectorXd dots = item_signs * b;
        auto slow = top_k_scan(spec.items, spec.k, [&](std::size_t j) { return dots(static_cast<Eigen::Index>(j)); });
        bool same = fast.size() == slow.size();
        for (std::size_t p = 0; same && p < fast.size(); ++p) same = fast[p].item == slow[p].item;
        report.rankings_match = report.rankings_match && same;
        ++report.rankings_checked;
    }
    if (sink == static_cast<std::size_t>(-1)) report.rankings_checked = 0;
    return report;
}

}  // namespace cgah
