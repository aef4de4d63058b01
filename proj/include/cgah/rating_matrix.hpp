#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "common.hpp"

namespace cgah {

struct Rating {
    std::uint32_t user;
    std::uint32_t item;
    double value;
};

/// One entry of a row (item, rating) or column (user, rating) list.
struct IndexedRating {
    std::uint32_t index;
    double value;
};

/// Sparse user-item ratings with row (per-user) and column (per-item) access.
/// Immutable after construction.
class RatingMatrix {
public:
    RatingMatrix() = default;

    /// Builds the matrix from raw entries. Duplicate (user, item) pairs keep the
    /// last occurrence; the number of dropped duplicates is reported through
    /// `duplicates` when non-null.
    RatingMatrix(std::size_t users, std::size_t items, std::vector<Rating> entries,
                 std::size_t* duplicates = nullptr)
        : n_(users), m_(items) {
        for (const auto& r : entries) {
            if (r.user >= n_ || r.item >= m_) {
                throw ValidationError("rating index (" + std::to_string(r.user) + ", " +
                                      std::to_string(r.item) + ") outside " +
                                      std::to_string(n_) + " x " + std::to_string(m_));
            }
        }
        // Stable sort keeps input order within a pair, so the last one wins.
        std::stable_sort(entries.begin(), entries.end(), [](const Rating& a, const Rating& b) {
            return a.user != b.user ? a.user < b.user : a.item < b.item;
        });
        std::size_t dropped = 0;
        entries_.reserve(entries.size());
        for (std::size_t k = 0; k < entries.size(); ++k) {
            if (k + 1 < entries.size() && entries[k + 1].user == entries[k].user &&
                entries[k + 1].item == entries[k].item) {
                ++dropped;
                continue;
            }
            entries_.push_back(entries[k]);
        }
        if (duplicates) *duplicates = dropped;
        build_index();
    }

    std::size_t users() const { return n_; }
    std::size_t items() const { return m_; }
    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }

    /// Entries sorted by (user, item).
    std::span<const Rating> entries() const { return entries_; }

    std::span<const IndexedRating> row(std::size_t user) const {
        return {row_data_.data() + row_ptr_[user], row_ptr_[user + 1] - row_ptr_[user]};
    }

    std::span<const IndexedRating> col(std::size_t item) const {
        return {col_data_.data() + col_ptr_[item], col_ptr_[item + 1] - col_ptr_[item]};
    }

    /// For the column list of `item`, the position of each entry in entries().
    std::span<const std::size_t> col_entry_ids(std::size_t item) const {
        return {col_entry_.data() + col_ptr_[item], col_ptr_[item + 1] - col_ptr_[item]};
    }

    std::size_t user_degree(std::size_t user) const { return row_ptr_[user + 1] - row_ptr_[user]; }
    std::size_t item_degree(std::size_t item) const { return col_ptr_[item + 1] - col_ptr_[item]; }

    /// Offset of entry (user, k-th item of the row) in entries(); rows are contiguous.
    std::size_t row_offset(std::size_t user) const { return row_ptr_[user]; }

    double max_rating() const {
        double best = 0.0;
        for (const auto& r : entries_) best = std::max(best, r.value);
        return best;
    }

    bool contains(std::size_t user, std::size_t item) const {
        auto r = row(user);
        auto it = std::lower_bound(r.begin(), r.end(), item,
                                   [](const IndexedRating& e, std::size_t v) { return e.index < v; });
        return it != r.end() && it->index == item;
    }

private:
    void build_index() {
        row_ptr_.assign(n_ + 1, 0);
        col_ptr_.assign(m_ + 1, 0);
        for (const auto& r : entries_) {
            ++row_ptr_[r.user + 1];
            ++col_ptr_[r.item + 1];
        }
        for (std::size_t i = 0; i < n_; ++i) row_ptr_[i + 1] += row_ptr_[i];
        for (std::size_t j = 0; j < m_; ++j) col_ptr_[j + 1] += col_ptr_[j];
        row_data_.resize(entries_.size());
        col_data_.resize(entries_.size());
        col_entry_.resize(entries_.size());
        std::vector<std::size_t> row_fill(row_ptr_.begin(), row_ptr_.end() - 1);
        std::vector<std::size_t> col_fill(col_ptr_.begin(), col_ptr_.end() - 1);
        // entries_ is sorted by (user, item) so both lists come out sorted.
        for (std::size_t k = 0; k < entries_.size(); ++k) {
            const auto& r = entries_[k];
            row_data_[row_fill[r.user]++] = {r.item, r.value};
            col_entry_[col_fill[r.item]] = k;
            col_data_[col_fill[r.item]++] = {r.user, r.value};
        }
    }

    std::size_t n_ = 0;
    std::size_t m_ = 0;
    std::vector<Rating> entries_;
    std::vector<std::size_t> row_ptr_{0};
    std::vector<std::size_t> col_ptr_{0};
    std::vector<IndexedRating> row_data_;
    std::vector<IndexedRating> col_data_;
    std::vector<std::size_t> col_entry_;
};

}  // namespace cgah
