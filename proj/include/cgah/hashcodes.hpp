#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "common.hpp"
#include "grouping.hpp"

namespace cgah {

/// r-bit +-1 codes packed into 64-bit words; bit set encodes +1, clear encodes -1.
/// Unused high bits of the last word stay zero.
class BinaryCodeSet {
public:
    BinaryCodeSet() = default;

    /// All codes start at -1 in every bit.
    BinaryCodeSet(std::size_t count, std::size_t bits)
        : count_(count), bits_(bits), words_((bits + 63) / 64), data_(count * words_, 0) {
        if (bits < 1) throw ValidationError("code length must be >= 1");
    }

    static BinaryCodeSet pack(const std::vector<std::vector<int>>& codes) {
        if (codes.empty()) throw ValidationError("no codes to pack");
        BinaryCodeSet set(codes.size(), codes.front().size());
        for (std::size_t e = 0; e < codes.size(); ++e) {
            if (codes[e].size() != set.bits_) throw ValidationError("codes have different lengths");
            for (std::size_t k = 0; k < set.bits_; ++k) {
                int v = codes[e][k];
                if (v != 1 && v != -1) throw ValidationError("code entries must be +1 or -1");
                set.set(e, k, v);
            }
        }
        return set;
    }

    /// Sign of every entry of an entity-by-bit matrix, with sgn(0) = +1.
    static BinaryCodeSet from_signs(const RowMatrix& m) {
        BinaryCodeSet set(static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols()));
        for (Eigen::Index e = 0; e < m.rows(); ++e) {
            for (Eigen::Index k = 0; k < m.cols(); ++k) {
                set.set(static_cast<std::size_t>(e), static_cast<std::size_t>(k), m(e, k) >= 0.0 ? 1 : -1);
            }
        }
        return set;
    }

    std::size_t count() const { return count_; }
    std::size_t bits() const { return bits_; }
    std::size_t words_per_code() const { return words_; }
    std::span<const std::uint64_t> words() const { return data_; }

    std::span<const std::uint64_t> code(std::size_t e) const { return {data_.data() + e * words_, words_}; }

    int get(std::size_t e, std::size_t k) const {
        return (data_[e * words_ + k / 64] >> (k % 64)) & 1ULL ? 1 : -1;
    }

    void set(std::size_t e, std::size_t k, int sign) {
        auto& w = data_[e * words_ + k / 64];
        auto mask = 1ULL << (k % 64);
        if (sign > 0) {
            w |= mask;
        } else {
            w &= ~mask;
        }
    }

    std::vector<int> unpack(std::size_t e) const {
        if (e >= count_) throw ValidationError("code index out of range");
        std::vector<int> out(bits_);
        for (std::size_t k = 0; k < bits_; ++k) out[k] = get(e, k);
        return out;
    }

    /// Entity-by-bit matrix of +-1 values.
    RowMatrix to_matrix() const {
        RowMatrix m(static_cast<Eigen::Index>(count_), static_cast<Eigen::Index>(bits_));
        for (std::size_t e = 0; e < count_; ++e) {
            for (std::size_t k = 0; k < bits_; ++k) m(static_cast<Eigen::Index>(e), static_cast<Eigen::Index>(k)) = get(e, k);
        }
        return m;
    }

    /// Builds a set from raw words (e.g. loaded from disk); validates padding.
    static BinaryCodeSet from_words(std::size_t count, std::size_t bits, std::vector<std::uint64_t> words) {
        BinaryCodeSet set(count, bits);
        if (words.size() != set.data_.size()) throw ValidationError("packed code size mismatch");
        set.data_ = std::move(words);
        if (bits % 64 != 0) {
            std::uint64_t pad = ~((1ULL << (bits % 64)) - 1);
            for (std::size_t e = 0; e < count; ++e) {
                if (set.data_[e * set.words_ + set.words_ - 1] & pad) throw ValidationError("packed codes have stray high bits");
            }
        }
        return set;
    }

    friend bool operator==(const BinaryCodeSet&, const BinaryCodeSet&) = default;

private:
    std::size_t count_ = 0;
    std::size_t bits_ = 0;
    std::size_t words_ = 0;
    std::vector<std::uint64_t> data_;
};

inline std::size_t hamming_distance(std::span<const std::uint64_t> a, std::span<const std::uint64_t> b) {
    std::size_t d = 0;
    for (std::size_t w = 0; w < a.size(); ++w) d += static_cast<std::size_t>(std::popcount(a[w] ^ b[w]));
    return d;
}

/// b.d for +-1 codes, via r - 2 * hamming.
inline int code_dot(std::span<const std::uint64_t> a, std::span<const std::uint64_t> b, std::size_t bits) {
    return static_cast<int>(bits) - 2 * static_cast<int>(hamming_distance(a, b));
}

/// 1/2 + b.d / (2r), in [0, 1]. Evaluated in exactly that form so it agrees
/// bit for bit with the real-valued inner product formula.
inline double hamming_similarity(std::span<const std::uint64_t> a, std::span<const std::uint64_t> b, std::size_t bits) {
    if (a.size() != b.size()) throw ValidationError("code lengths differ");
    return 0.5 + static_cast<double>(code_dot(a, b, bits)) / (2.0 * static_cast<double>(bits));
}

inline double hamming_similarity(const BinaryCodeSet& users, std::size_t i, const BinaryCodeSet& items, std::size_t j) {
    if (users.bits() != items.bits()) throw ValidationError("code lengths differ");
    return hamming_similarity(users.code(i), items.code(j), users.bits());
}

/// s_ij * sim_H(b_i, d_j).
inline double predict_preference(double affinity, double similarity) {
    if (!(affinity > 0.0 && affinity < 1.0)) throw ValidationError("group affinity must lie in (0, 1)");
    return affinity * similarity;
}

inline double predict_preference(double affinity, const BinaryCodeSet& users, std::size_t i, const BinaryCodeSet& items,
                                 std::size_t j) {
    return predict_preference(affinity, hamming_similarity(users, i, items, j));
}

struct ScoredItem {
    std::uint32_t item;
    double score;
};

namespace detail {

// Higher score first; equal scores by ascending item index.
inline bool ranks_before(const ScoredItem& a, const ScoredItem& b) {
    return a.score != b.score ? a.score > b.score : a.item < b.item;
}

template <typename ScoreFn>
inline void scan_top_k(std::size_t begin, std::size_t end, std::size_t k, std::span<const char> excluded,
                       ScoreFn&& score, std::vector<ScoredItem>& heap) {
    heap.clear();
    heap.reserve(k + 1);
    for (std::size_t j = begin; j < end; ++j) {
        if (!excluded.empty() && excluded[j]) continue;
        ScoredItem cand{static_cast<std::uint32_t>(j), score(j)};
        if (heap.size() < k) {
            heap.push_back(cand);
            std::push_heap(heap.begin(), heap.end(), ranks_before);
        } else if (ranks_before(cand, heap.front())) {
            std::pop_heap(heap.begin(), heap.end(), ranks_before);
            heap.back() = cand;
            std::push_heap(heap.begin(), heap.end(), ranks_before);
        }
    }
}

}  // namespace detail

/// Full-scan top-k over item_count candidates. `excluded` (empty, or one flag
/// per item) removes candidates. Shards are scanned in parallel and merged, so
/// the result does not depend on the thread count.
template <typename ScoreFn>
inline std::vector<ScoredItem> top_k_scan(std::size_t item_count, std::size_t k, ScoreFn&& score,
                                          std::span<const char> excluded = {}, int threads = 1) {
    if (k < 1) throw ValidationError("k must be >= 1");
    std::vector<ScoredItem> merged;
    if (threads <= 1) {
        detail::scan_top_k(0, item_count, k, excluded, score, merged);
    } else {
        std::size_t shards = std::min<std::size_t>(static_cast<std::size_t>(threads), std::max<std::size_t>(item_count, 1));
        std::vector<std::vector<ScoredItem>> partial(shards);
        std::size_t chunk = (item_count + shards - 1) / shards;
        parallel_for(shards, threads, [&](std::size_t b, std::size_t e) {
            for (std::size_t s = b; s < e; ++s) {
                detail::scan_top_k(std::min(item_count, s * chunk), std::min(item_count, (s + 1) * chunk), k, excluded,
                                   score, partial[s]);
            }
        });
        for (auto& p : partial) merged.insert(merged.end(), p.begin(), p.end());
    }
    std::sort(merged.begin(), merged.end(), detail::ranks_before);
    if (merged.size() > k) merged.resize(k);
    return merged;
}

/// Ranks items for one user by s_ij * sim_H(b_i, d_j), never returning excluded items.
inline std::vector<ScoredItem> topk(std::size_t user, const BinaryCodeSet& user_codes, const BinaryCodeSet& item_codes,
                                    const GroupProfile& user_profiles, const GroupProfile& item_profiles, std::size_t k,
                                    std::span<const char> excluded = {}, int threads = 1) {
    if (user_codes.bits() != item_codes.bits()) throw ValidationError("code lengths differ");
    auto b = user_codes.code(user);
    auto p = user_profiles.row(user);
    const auto bits = item_codes.bits();
    return top_k_scan(
        item_codes.count(), k,
        [&](std::size_t j) {
            return group_affinity(p, item_profiles.row(j)) * hamming_similarity(b, item_codes.code(j), bits);
        },
        excluded, threads);
}

/// Flags for the items a user rated in `ratings`, sized to item_count.
inline std::vector<char> rated_mask(const RatingMatrix& ratings, std::size_t user, std::size_t item_count) {
    std::vector<char> mask(item_count, 0);
    if (user < ratings.users()) {
        for (const auto& e : ratings.row(user)) {
            if (e.index < item_count) mask[e.index] = 1;
        }
    }
    return mask;
}

}  // namespace cgah
