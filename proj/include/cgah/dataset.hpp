#pragma once

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "common.hpp"
#include "rating_matrix.hpp"

namespace cgah {

enum class RatingFormat { movielens_dat, amazon_csv, tsv };

inline RatingFormat parse_rating_format(std::string_view name) {
    if (name == "movielens-dat") return RatingFormat::movielens_dat;
    if (name == "amazon-csv") return RatingFormat::amazon_csv;
    if (name == "tsv") return RatingFormat::tsv;
    throw ValidationError("unknown rating format '" + std::string(name) +
                          "' (expected movielens-dat, amazon-csv or tsv)");
}

inline std::string_view to_string(RatingFormat f) {
    switch (f) {
        case RatingFormat::movielens_dat: return "movielens-dat";
        case RatingFormat::amazon_csv: return "amazon-csv";
        case RatingFormat::tsv: return "tsv";
    }
    return "?";
}

/// Maps contiguous indices back to the original dataset identifiers.
struct IdMap {
    std::vector<std::string> ids;

    std::size_t size() const { return ids.size(); }

    std::optional<std::size_t> find(std::string_view id) const {
        for (std::size_t k = 0; k < ids.size(); ++k) {
            if (ids[k] == id) return k;
        }
        return std::nullopt;
    }

    /// Keeps only the listed old indices, in order.
    IdMap select(std::span<const std::uint32_t> kept) const {
        IdMap out;
        out.ids.reserve(kept.size());
        for (auto k : kept) out.ids.push_back(ids.at(k));
        return out;
    }
};

struct IngestResult {
    RatingMatrix ratings;
    IdMap users;
    IdMap items;
    std::vector<std::string> warnings;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\r' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\r' || s.back() == '\t' || s.back() == '\n'))
        s.remove_suffix(1);
    return s;
}

inline std::vector<std::string_view> split(std::string_view line, std::string_view sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        auto pos = line.find(sep, start);
        if (pos == std::string_view::npos) {
            out.push_back(line.substr(start));
            return out;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + sep.size();
    }
}

inline std::optional<double> parse_double(std::string_view s) {
    s = trim(s);
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
    return v;
}

inline std::optional<long long> parse_integer(std::string_view s) {
    long long v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
    return v;
}

/// Shortest round-trip decimal form.
inline std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

/// Assigns contiguous indices to raw identifiers: numeric order when every id
/// is an integer, lexicographic otherwise.
inline std::unordered_map<std::string, std::uint32_t> assign_indices(std::vector<std::string> raw,
                                                                     IdMap& map) {
    std::sort(raw.begin(), raw.end());
    raw.erase(std::unique(raw.begin(), raw.end()), raw.end());
    bool numeric = std::all_of(raw.begin(), raw.end(),
                               [](const std::string& s) { return parse_integer(s).has_value(); });
    if (numeric) {
        std::sort(raw.begin(), raw.end(), [](const std::string& a, const std::string& b) {
            return *parse_integer(a) < *parse_integer(b);
        });
    }
    std::unordered_map<std::string, std::uint32_t> index;
    index.reserve(raw.size());
    for (std::size_t k = 0; k < raw.size(); ++k) index.emplace(raw[k], static_cast<std::uint32_t>(k));
    map.ids = std::move(raw);
    return index;
}

}  // namespace detail

/// Parses ratings from a stream. Indices are contiguous after re-indexing.
inline IngestResult ingest_ratings(std::istream& in, RatingFormat format) {
    struct RawRating {
        std::string user;
        std::string item;
        double value;
    };
    std::vector<RawRating> raw;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        auto text = detail::trim(line);
        if (text.empty()) continue;
        std::vector<std::string_view> fields;
        switch (format) {
        case RatingFormat::movielens_dat:
            fields = detail::split(text, "::");
            if (fields.size() != 4) throw ParseError("expected userId::movieId::rating::timestamp", line_no);
            break;
        case RatingFormat::amazon_csv:
            fields = detail::split(text, ",");
            if (fields.size() != 4) throw ParseError("expected user,item,rating,timestamp", line_no);
            break;
        case RatingFormat::tsv:
            fields = detail::split(text, "\t");
            if (fields.size() != 3 && fields.size() != 4) throw ParseError("expected user<TAB>item<TAB>rating", line_no);
            break;
        }
        auto user = detail::trim(fields[0]);
        auto item = detail::trim(fields[1]);
        if (user.empty() || item.empty()) throw ParseError("empty user or item id", line_no);
        auto value = detail::parse_double(fields[2]);
        if (!value) throw ParseError("rating '" + std::string(fields[2]) + "' is not a finite number", line_no);
        raw.push_back({std::string(user), std::string(item), *value});
    }
    if (raw.empty()) throw EmptyDatasetError("rating file contains no ratings");

    IngestResult result;
    std::vector<std::string> user_ids, item_ids;
    user_ids.reserve(raw.size());
    item_ids.reserve(raw.size());
    for (const auto& r : raw) {
        user_ids.push_back(r.user);
        item_ids.push_back(r.item);
    }
    auto user_index = detail::assign_indices(std::move(user_ids), result.users);
    auto item_index = detail::assign_indices(std::move(item_ids), result.items);

    std::vector<Rating> entries;
    entries.reserve(raw.size());
    for (const auto& r : raw) entries.push_back({user_index.at(r.user), item_index.at(r.item), r.value});
    std::size_t duplicates = 0;
    result.ratings = RatingMatrix(result.users.size(), result.items.size(), std::move(entries), &duplicates);
    if (duplicates > 0) {
        result.warnings.push_back(std::to_string(duplicates) +
                                  " duplicate (user, item) ratings; kept the last occurrence");
    }
    return result;
}

inline IngestResult ingest_ratings(const std::string& path, RatingFormat format) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open rating file '" + path + "'");
    return ingest_ratings(in, format);
}

struct FilterResult {
    RatingMatrix ratings;
    std::vector<std::uint32_t> kept_users;  // new index -> old index
    std::vector<std::uint32_t> kept_items;
};

/// Removes users and items with fewer than min_count ratings, repeating until
/// no entity falls below the threshold, then re-indexes.
inline FilterResult filter_min_degree(const RatingMatrix& ratings, std::size_t min_count) {
    if (min_count < 1) throw ValidationError("min_count must be >= 1");
    std::vector<char> user_alive(ratings.users(), 1), item_alive(ratings.items(), 1);
    std::vector<std::size_t> user_deg(ratings.users()), item_deg(ratings.items());
    for (std::size_t i = 0; i < ratings.users(); ++i) user_deg[i] = ratings.user_degree(i);
    for (std::size_t j = 0; j < ratings.items(); ++j) item_deg[j] = ratings.item_degree(j);

    bool changed = true;
    while (changed) {
        changed = false;
        for (std::size_t i = 0; i < ratings.users(); ++i) {
            if (user_alive[i] && user_deg[i] < min_count) {
                user_alive[i] = 0;
                changed = true;
                for (const auto& e : ratings.row(i)) {
                    if (item_alive[e.index]) --item_deg[e.index];
                }
            }
        }
        for (std::size_t j = 0; j < ratings.items(); ++j) {
            if (item_alive[j] && item_deg[j] < min_count) {
                item_alive[j] = 0;
                changed = true;
                for (const auto& e : ratings.col(j)) {
                    if (user_alive[e.index]) --user_deg[e.index];
                }
            }
        }
    }

    FilterResult out;
    std::vector<std::uint32_t> user_new(ratings.users(), UINT32_MAX), item_new(ratings.items(), UINT32_MAX);
    for (std::size_t i = 0; i < ratings.users(); ++i) {
        if (user_alive[i]) {
            user_new[i] = static_cast<std::uint32_t>(out.kept_users.size());
            out.kept_users.push_back(static_cast<std::uint32_t>(i));
        }
    }
    for (std::size_t j = 0; j < ratings.items(); ++j) {
        if (item_alive[j]) {
            item_new[j] = static_cast<std::uint32_t>(out.kept_items.size());
            out.kept_items.push_back(static_cast<std::uint32_t>(j));
        }
    }
    std::vector<Rating> entries;
    for (const auto& r : ratings.entries()) {
        if (user_alive[r.user] && item_alive[r.item]) entries.push_back({user_new[r.user], item_new[r.item], r.value});
    }
    if (entries.empty()) {
        throw EmptyDatasetError("no ratings left after removing entities with fewer than " +
                                std::to_string(min_count) + " ratings");
    }
    out.ratings = RatingMatrix(out.kept_users.size(), out.kept_items.size(), std::move(entries));
    return out;
}

struct SplitSpec {
    double train_fraction = 0.5;
    std::uint64_t seed = 42;
    int repeats = 5;
};

struct Split {
    RatingMatrix train;
    RatingMatrix test;
};

/// Per-user random partition: floor(fraction * degree) ratings (at least one)
/// go to train and the rest to test. Both halves share the input index space.
inline Split split_ratings(const RatingMatrix& ratings, const SplitSpec& spec) {
    if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0)) {
        throw ValidationError("train fraction must lie in (0, 1)");
    }
    std::mt19937_64 rng(spec.seed);
    std::vector<Rating> train, test;
    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < ratings.users(); ++i) {
        auto row = ratings.row(i);
        if (row.empty()) continue;
        if (row.size() < 2) {
            throw ValidationError("user " + std::to_string(i) +
                                  " has a single rating; filter by minimum degree before splitting");
        }
        order.resize(row.size());
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        auto n_train = static_cast<std::size_t>(std::floor(spec.train_fraction * static_cast<double>(row.size())));
        n_train = std::max<std::size_t>(n_train, 1);
        for (std::size_t k = 0; k < order.size(); ++k) {
            const auto& e = row[order[k]];
            Rating r{static_cast<std::uint32_t>(i), e.index, e.value};
            (k < n_train ? train : test).push_back(r);
        }
    }
    return {RatingMatrix(ratings.users(), ratings.items(), std::move(train)),
            RatingMatrix(ratings.users(), ratings.items(), std::move(test))};
}

/// Canonical interchange: one "user<TAB>item<TAB>rating" line per entry.
inline void write_tsv(std::ostream& out, const RatingMatrix& ratings) {
    for (const auto& r : ratings.entries()) {
        out << r.user << '\t' << r.item << '\t' << detail::format_double(r.value) << '\n';
    }
}

inline void write_tsv(const std::string& path, const RatingMatrix& ratings) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write '" + path + "'");
    write_tsv(out, ratings);
}

/// Reads a canonical tsv whose first two columns are already contiguous
/// indices. Dimensions grow to fit unless given explicitly.
inline RatingMatrix read_indexed_tsv(std::istream& in, std::size_t users = 0, std::size_t items = 0) {
    std::vector<Rating> entries;
    std::string line;
    std::size_t line_no = 0;
    std::size_t max_user = 0, max_item = 0;
    while (std::getline(in, line)) {
        ++line_no;
        auto text = detail::trim(line);
        if (text.empty()) continue;
        auto fields = detail::split(text, "\t");
        if (fields.size() < 3) throw ParseError("expected user<TAB>item<TAB>rating", line_no);
        auto u = detail::parse_integer(detail::trim(fields[0]));
        auto it = detail::parse_integer(detail::trim(fields[1]));
        auto v = detail::parse_double(fields[2]);
        if (!u || !it || *u < 0 || *it < 0) throw ParseError("indices must be non-negative integers", line_no);
        if (!v) throw ParseError("rating is not a finite number", line_no);
        entries.push_back({static_cast<std::uint32_t>(*u), static_cast<std::uint32_t>(*it), *v});
        max_user = std::max<std::size_t>(max_user, static_cast<std::size_t>(*u) + 1);
        max_item = std::max<std::size_t>(max_item, static_cast<std::size_t>(*it) + 1);
    }
    if (entries.empty()) throw EmptyDatasetError("rating file contains no ratings");
    return RatingMatrix(std::max(users, max_user), std::max(items, max_item), std::move(entries));
}

inline RatingMatrix read_indexed_tsv(const std::string& path, std::size_t users = 0, std::size_t items = 0) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open rating file '" + path + "'");
    return read_indexed_tsv(in, users, items);
}

/// Id maps are persisted as "original-id<TAB>index" lines.
inline void write_id_map(std::ostream& out, const IdMap& map) {
    for (std::size_t k = 0; k < map.ids.size(); ++k) out << map.ids[k] << '\t' << k << '\n';
}

inline void write_id_map(const std::string& path, const IdMap& map) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write '" + path + "'");
    write_id_map(out, map);
}

inline IdMap read_id_map(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open id map '" + path + "'");
    std::vector<std::pair<std::size_t, std::string>> rows;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        auto text = detail::trim(line);
        if (text.empty()) continue;
        auto fields = detail::split(text, "\t");
        if (fields.size() != 2) throw ParseError("expected id<TAB>index", line_no);
        auto idx = detail::parse_integer(detail::trim(fields[1]));
        if (!idx || *idx < 0) throw ParseError("index must be a non-negative integer", line_no);
        rows.emplace_back(static_cast<std::size_t>(*idx), std::string(fields[0]));
    }
    std::sort(rows.begin(), rows.end());
    IdMap map;
    for (std::size_t k = 0; k < rows.size(); ++k) {
        if (rows[k].first != k) throw ValidationError("id map '" + path + "' indices are not contiguous");
        map.ids.push_back(std::move(rows[k].second));
    }
    return map;
}

/// Bag-of-words content, one dense row per entity, scaled to [0, 1] by the
/// row's maximum count.
struct ContentMatrix {
    RowMatrix rows;
    std::vector<std::string> vocabulary;

    std::size_t entity_count() const { return static_cast<std::size_t>(rows.rows()); }
    std::size_t feature_dim() const { return static_cast<std::size_t>(rows.cols()); }
};

struct ContentResult {
    ContentMatrix content;
    std::vector<std::string> warnings;
};

namespace detail {

inline std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> tokens;
    std::string current;
    for (char ch : text) {
        auto c = static_cast<unsigned char>(ch);
        if (std::isalnum(c)) {
            current.push_back(static_cast<char>(std::tolower(c)));
        } else if (!current.empty()) {
            tokens.push_back(std::move(current));
            current.clear();
        }
    }
    if (!current.empty()) tokens.push_back(std::move(current));
    return tokens;
}

}  // namespace detail

/// Reads "entity-id<TAB>document" lines. Several lines for one id are
/// concatenated. The vocabulary is the vocab_size most frequent tokens (ties
/// broken alphabetically); entities with no document get a zero row.
inline ContentResult ingest_content(std::istream& in, std::size_t vocab_size, const IdMap& entities) {
    if (vocab_size < 1) throw ValidationError("vocab_size must be >= 1");
    std::unordered_map<std::string, std::size_t> entity_index;
    for (std::size_t k = 0; k < entities.size(); ++k) entity_index.emplace(entities.ids[k], k);

    std::vector<std::vector<std::string>> docs(entities.size());
    std::vector<char> has_doc(entities.size(), 0);
    std::map<std::string, std::size_t> frequency;
    ContentResult result;
    std::size_t unknown = 0;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::trim(line).empty()) continue;
        auto tab = line.find('\t');
        if (tab == std::string::npos) throw ParseError("expected entity-id<TAB>document", line_no);
        auto id = std::string(detail::trim(std::string_view(line).substr(0, tab)));
        auto it = entity_index.find(id);
        if (it == entity_index.end()) {
            ++unknown;
            continue;
        }
        has_doc[it->second] = 1;
        for (auto& tok : detail::tokenize(std::string_view(line).substr(tab + 1))) {
            ++frequency[tok];
            docs[it->second].push_back(std::move(tok));
        }
    }

    std::vector<std::pair<std::string, std::size_t>> ranked(frequency.begin(), frequency.end());
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    if (ranked.size() > vocab_size) ranked.resize(vocab_size);
    std::unordered_map<std::string, std::size_t> column;
    for (std::size_t k = 0; k < ranked.size(); ++k) {
        column.emplace(ranked[k].first, k);
        result.content.vocabulary.push_back(ranked[k].first);
    }

    auto& rows = result.content.rows;
    rows = RowMatrix::Zero(static_cast<Eigen::Index>(entities.size()),
                           static_cast<Eigen::Index>(std::max<std::size_t>(ranked.size(), 1)));
    std::size_t missing = 0;
    for (std::size_t e = 0; e < entities.size(); ++e) {
        if (!has_doc[e]) ++missing;
        for (const auto& tok : docs[e]) {
            auto c = column.find(tok);
            if (c != column.end()) rows(static_cast<Eigen::Index>(e), static_cast<Eigen::Index>(c->second)) += 1.0;
        }
        double peak = rows.row(static_cast<Eigen::Index>(e)).maxCoeff();
        if (peak > 0.0) rows.row(static_cast<Eigen::Index>(e)) /= peak;
    }
    if (missing > 0) result.warnings.push_back(std::to_string(missing) + " entities have no document; using zero rows");
    if (unknown > 0) result.warnings.push_back(std::to_string(unknown) + " documents name unknown entity ids");
    return result;
}

inline ContentResult ingest_content(const std::string& path, std::size_t vocab_size, const IdMap& entities) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open content file '" + path + "'");
    return ingest_content(in, vocab_size, entities);
}

}  // namespace cgah
