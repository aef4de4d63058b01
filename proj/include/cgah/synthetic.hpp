#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include "common.hpp"
#include "rating_matrix.hpp"

namespace cgah {

/// Ratings with planted user/item groups. Each user rates density * items
/// items, in_group_share of them inside its own group; a rating is the
/// block mean of (user group, item group) plus Gaussian noise, clipped to
/// [1, 5].
struct SyntheticSpec {
    std::size_t users = 500;
    std::size_t items = 300;
    std::size_t groups = 4;
    double density = 0.1;
    double noise = 0.5;
    double in_group_share = 0.8;
    double in_group_mean = 4.5;
    double off_group_low = 1.5;
    double off_group_high = 3.0;
    std::uint64_t seed = 7;
};

struct SyntheticData {
    std::vector<Rating> ratings;
    std::vector<std::uint32_t> user_group;
    std::vector<std::uint32_t> item_group;
    /// block_mean[g * groups + h]
    std::vector<double> block_mean;
};

inline SyntheticData make_grouped_ratings(const SyntheticSpec& spec) {
    if (spec.groups < 1 || spec.users < spec.groups || spec.items < spec.groups) {
        throw ValidationError("need at least one user and item per group");
    }
    if (!(spec.density > 0.0 && spec.density <= 1.0)) throw ValidationError("density must lie in (0, 1]");
    if (spec.in_group_share < 0.0 || spec.in_group_share > 1.0) throw ValidationError("in_group_share must lie in [0, 1]");
    std::mt19937_64 rng(spec.seed);
    SyntheticData out;
    const auto g = spec.groups;

    out.block_mean.assign(g * g, 0.0);
    std::uniform_real_distribution<double> off(spec.off_group_low, spec.off_group_high);
    for (std::size_t a = 0; a < g; ++a) {
        for (std::size_t b = 0; b < g; ++b) out.block_mean[a * g + b] = a == b ? spec.in_group_mean : off(rng);
    }
    for (std::size_t i = 0; i < spec.users; ++i) out.user_group.push_back(static_cast<std::uint32_t>(i % g));
    for (std::size_t j = 0; j < spec.items; ++j) out.item_group.push_back(static_cast<std::uint32_t>(j % g));
    std::shuffle(out.user_group.begin(), out.user_group.end(), rng);
    std::shuffle(out.item_group.begin(), out.item_group.end(), rng);

    std::vector<std::vector<std::uint32_t>> members(g);
    for (std::size_t j = 0; j < spec.items; ++j) members[out.item_group[j]].push_back(static_cast<std::uint32_t>(j));

    const auto per_user = std::max<std::size_t>(2, static_cast<std::size_t>(std::lround(spec.density * static_cast<double>(spec.items))));
    std::normal_distribution<double> noise(0.0, spec.noise);
    std::vector<std::uint32_t> inside, outside;
    for (std::size_t i = 0; i < spec.users; ++i) {
        const auto ug = out.user_group[i];
        inside = members[ug];
        outside.clear();
        for (std::size_t h = 0; h < g; ++h) {
            if (h != ug) outside.insert(outside.end(), members[h].begin(), members[h].end());
        }
        std::shuffle(inside.begin(), inside.end(), rng);
        std::shuffle(outside.begin(), outside.end(), rng);
        auto want_in = static_cast<std::size_t>(std::lround(spec.in_group_share * static_cast<double>(per_user)));
        want_in = std::min(want_in, inside.size());
        auto want_out = std::min(per_user - want_in, outside.size());
        std::vector<std::uint32_t> picked(inside.begin(), inside.begin() + static_cast<std::ptrdiff_t>(want_in));
        picked.insert(picked.end(), outside.begin(), outside.begin() + static_cast<std::ptrdiff_t>(want_out));
        std::sort(picked.begin(), picked.end());
        for (auto j : picked) {
            double v = out.block_mean[ug * g + out.item_group[j]] + noise(rng);
            out.ratings.push_back({static_cast<std::uint32_t>(i), j, std::clamp(v, 1.0, 5.0)});
        }
    }
    return out;
}

}  // namespace cgah
