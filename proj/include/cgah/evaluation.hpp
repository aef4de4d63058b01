#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "common.hpp"
#include "dataset.hpp"
#include "factorization.hpp"
#include "grouping.hpp"
#include "hashcodes.hpp"
#include "rating_matrix.hpp"

namespace cgah {

/// sum_{i=1..k} (2^rel_i - 1) / log2(i + 1) with binary relevance.
inline double dcg_at_k(std::span<const int> relevance, std::size_t k) {
    if (relevance.size() < k) throw ValidationError("relevance list is shorter than k");
    double dcg = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        int rel = relevance[i];
        if (rel != 0 && rel != 1) throw ValidationError("relevance values must be 0 or 1");
        if (rel) dcg += 1.0 / std::log2(static_cast<double>(i) + 2.0);
    }
    return dcg;
}

/// DCG of the first k recommendations over the ideal DCG with
/// min(k, |relevant|) hits. `relevant` must be sorted ascending. 0 when
/// nothing is relevant.
inline double ndcg_at_k(std::span<const std::uint32_t> recommended, std::span<const std::uint32_t> relevant,
                        std::size_t k) {
    if (k < 1) throw ValidationError("k must be >= 1");
    if (relevant.empty()) return 0.0;
    double dcg = 0.0;
    const auto depth = std::min(k, recommended.size());
    for (std::size_t i = 0; i < depth; ++i) {
        if (std::binary_search(relevant.begin(), relevant.end(), recommended[i])) {
            dcg += 1.0 / std::log2(static_cast<double>(i) + 2.0);
        }
    }
    double ideal = 0.0;
    const auto hits = std::min(k, relevant.size());
    for (std::size_t i = 0; i < hits; ++i) ideal += 1.0 / std::log2(static_cast<double>(i) + 2.0);
    return dcg / ideal;
}

// Rankers score (user, item) pairs; higher is better.

/// Continuous MF: h_i . g_j.
struct MfRanker {
    const FactorMatrix* factors;
    std::size_t users() const { return static_cast<std::size_t>(factors->users.rows()); }
    std::size_t items() const { return static_cast<std::size_t>(factors->items.rows()); }
    double score(std::size_t i, std::size_t j) const {
        return factors->users.row(static_cast<Eigen::Index>(i)).dot(factors->items.row(static_cast<Eigen::Index>(j)));
    }
};

/// MF-GA: s_ij * h_i . g_j.
struct MfGaRanker {
    const FactorMatrix* factors;
    const GroupModel* groups;
    std::size_t users() const { return static_cast<std::size_t>(factors->users.rows()); }
    std::size_t items() const { return static_cast<std::size_t>(factors->items.rows()); }
    double score(std::size_t i, std::size_t j) const {
        return groups->affinity(i, j) * MfRanker{factors}.score(i, j);
    }
};

/// Hashing model: s_ij * sim_H(b_i, d_j); a constant affinity replaces s_ij
/// when given.
struct HashRanker {
    const BinaryCodeSet* user_codes;
    const BinaryCodeSet* item_codes;
    const GroupModel* groups = nullptr;
    std::optional<double> constant_affinity;

    std::size_t users() const { return user_codes->count(); }
    std::size_t items() const { return item_codes->count(); }
    double score(std::size_t i, std::size_t j) const {
        double s = constant_affinity ? *constant_affinity : groups->affinity(i, j);
        return s * hamming_similarity(user_codes->code(i), item_codes->code(j), user_codes->bits());
    }
};

/// Mean NDCG per k over the evaluated users of one run.
struct EvalResult {
    std::vector<std::size_t> ks;
    std::vector<double> ndcg;
    std::size_t users_evaluated = 0;
    /// Test users the model does not cover.
    std::size_t users_skipped = 0;
};

/// Ranks every item not in the user's training row and scores the list
/// against the user's test items. Users without test items are left out.
template <typename Ranker>
EvalResult evaluate_model(const Ranker& model, const RatingMatrix& test, const RatingMatrix& train,
                          std::vector<std::size_t> ks, int threads = 1) {
    if (ks.empty()) throw ValidationError("at least one k is required");
    for (auto k : ks) {
        if (k < 1) throw ValidationError("k must be >= 1");
    }
    const auto k_max = *std::max_element(ks.begin(), ks.end());
    const auto items = model.items();
    EvalResult out;
    out.ks = ks;
    out.ndcg.assign(ks.size(), 0.0);

    std::vector<std::size_t> candidates;
    for (std::size_t i = 0; i < test.users(); ++i) {
        if (test.row(i).empty()) continue;
        if (i >= model.users()) {
            ++out.users_skipped;
            continue;
        }
        candidates.push_back(i);
    }
    std::vector<std::vector<double>> per_user(candidates.size());
    parallel_for(candidates.size(), threads, [&](std::size_t b, std::size_t e) {
        for (std::size_t c = b; c < e; ++c) {
            const auto i = candidates[c];
            auto excluded = rated_mask(train, i, items);
            auto ranked = top_k_scan(items, k_max, [&](std::size_t j) { return model.score(i, j); }, excluded);
            std::vector<std::uint32_t> rec(ranked.size());
            for (std::size_t p = 0; p < ranked.size(); ++p) rec[p] = ranked[p].item;
            std::vector<std::uint32_t> relevant;
            for (const auto& r : test.row(i)) relevant.push_back(r.index);
            per_user[c].resize(ks.size());
            for (std::size_t q = 0; q < ks.size(); ++q) per_user[c][q] = ndcg_at_k(rec, relevant, ks[q]);
        }
    });
    // Summed in user order so the result does not depend on the thread count.
    for (const auto& u : per_user) {
        for (std::size_t q = 0; q < ks.size(); ++q) out.ndcg[q] += u[q];
    }
    out.users_evaluated = candidates.size();
    if (out.users_evaluated) {
        for (auto& v : out.ndcg) v /= static_cast<double>(out.users_evaluated);
    }
    return out;
}

/// NDCG across repeats of one (model, fraction) cell.
struct EvalReport {
    std::string model;
    double fraction = 0.0;
    std::uint64_t seed = 0;
    std::vector<std::size_t> ks;
    /// raw[repeat][k index]
    std::vector<std::vector<double>> raw;

    void add_repeat(const EvalResult& r) {
        if (ks.empty()) ks = r.ks;
        if (r.ks != ks) throw ValidationError("repeats use different k lists");
        raw.push_back(r.ndcg);
    }

    double mean(std::size_t k_index) const {
        if (raw.empty()) return 0.0;
        double sum = 0.0;
        for (const auto& r : raw) sum += r.at(k_index);
        return sum / static_cast<double>(raw.size());
    }

    /// Sample standard deviation; 0 for a single repeat.
    double stddev(std::size_t k_index) const {
        if (raw.size() < 2) return 0.0;
        double m = mean(k_index);
        double ss = 0.0;
        for (const auto& r : raw) ss += (r.at(k_index) - m) * (r.at(k_index) - m);
        return std::sqrt(ss / static_cast<double>(raw.size() - 1));
    }

    std::size_t k_index(std::size_t k) const {
        auto it = std::find(ks.begin(), ks.end(), k);
        if (it == ks.end()) throw ValidationError("k=" + std::to_string(k) + " was not evaluated");
        return static_cast<std::size_t>(it - ks.begin());
    }
};

inline void write_report_header(std::ostream& out) { out << "model,fraction,repeat,k,ndcg\n"; }

/// One csv row per repeat and k.
inline void write_report_rows(std::ostream& out, const EvalReport& report) {
    for (std::size_t rep = 0; rep < report.raw.size(); ++rep) {
        for (std::size_t q = 0; q < report.ks.size(); ++q) {
            out << report.model << ',' << detail::format_double(report.fraction) << ',' << rep << ',' << report.ks[q]
                << ',' << detail::format_double(report.raw[rep][q]) << '\n';
        }
    }
}

/// model, fraction, k, mean, std: one row per k for plotting.
inline void write_summary(std::ostream& out, const std::vector<EvalReport>& reports) {
    out << "model,fraction,k,mean,std\n";
    for (const auto& r : reports) {
        for (std::size_t q = 0; q < r.ks.size(); ++q) {
            out << r.model << ',' << detail::format_double(r.fraction) << ',' << r.ks[q] << ','
                << detail::format_double(r.mean(q)) << ',' << detail::format_double(r.stddev(q)) << '\n';
        }
    }
}

}  // namespace cgah
