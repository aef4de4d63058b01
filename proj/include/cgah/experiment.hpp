#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "common.hpp"
#include "dataset.hpp"
#include "encoder.hpp"
#include "evaluation.hpp"
#include "factorization.hpp"
#include "grouping.hpp"
#include "model_io.hpp"
#include "optimizer.hpp"

namespace cgah {

/// mf, mf-ga, cgah-cf, cgah-cf-flat (s fixed at logistic(1)), cgah.
enum class ModelKind { mf, mf_ga, cgah_cf, cgah_cf_flat, cgah };

inline std::string_view to_string(ModelKind k) {
    switch (k) {
        case ModelKind::mf: return "mf";
        case ModelKind::mf_ga: return "mf-ga";
        case ModelKind::cgah_cf: return "cgah-cf";
        case ModelKind::cgah_cf_flat: return "cgah-cf-flat";
        case ModelKind::cgah: return "cgah";
    }
    return "?";
}

inline ModelKind parse_model_kind(std::string_view name) {
    for (auto k : {ModelKind::mf, ModelKind::mf_ga, ModelKind::cgah_cf, ModelKind::cgah_cf_flat, ModelKind::cgah}) {
        if (to_string(k) == name) return k;
    }
    throw ValidationError("unknown model '" + std::string(name) + "' (expected mf, mf-ga, cgah-cf, cgah-cf-flat or cgah)");
}

struct ExperimentConfig {
    MfConfig mf;
    CgahConfig cgah;
    DaeConfig dae;
    int group_iters = 100;
    std::vector<std::size_t> ks{10, 20, 30, 40, 50};
    int threads = 1;
};

/// Content rows for users and items, aligned with the rating matrix.
struct ContentPair {
    RowMatrix users;
    RowMatrix items;
};

/// Trains one model on `train`; `seed` offsets every stage's seed so repeats
/// differ. Content mode needs `content`.
inline Model train_model(ModelKind kind, const RatingMatrix& train, const ExperimentConfig& cfg, std::uint64_t seed,
                         const ContentPair* content = nullptr) {
    MfConfig mf = cfg.mf;
    mf.seed += seed;
    mf.threads = cfg.threads;
    CgahConfig cc = cfg.cgah;
    cc.seed += seed;
    cc.threads = cfg.threads;
    if (kind == ModelKind::cgah_cf || kind == ModelKind::cgah_cf_flat || kind == ModelKind::cgah) mf.dim = cc.bits;

    Model model;
    model.kind = std::string(to_string(kind));
    auto factors = train_mf(train, mf).factors;
    if (kind == ModelKind::mf) {
        model.factors = std::move(factors);
        return model;
    }
    if (kind == ModelKind::cgah) {
        if (!content) throw ValidationError("the cgah model needs content features");
        cc.mode = CgahMode::content;
        DaeConfig dae = cfg.dae;
        dae.embed_dim = cc.bits;
        dae.seed += seed;
        auto enc_u = pretrain_dae(content->users, dae).params;
        dae.seed += 1;
        auto enc_i = pretrain_dae(content->items, dae).params;
        auto trained = train_cgah(train, factors, content->users, content->items, enc_u, enc_i, cc);
        model.groups = std::move(trained.groups);
        model.user_codes = std::move(trained.state.users);
        model.item_codes = std::move(trained.state.items);
        model.delegates = std::move(trained.state.delegates);
        model.user_encoder = std::move(trained.state.user_encoder);
        model.item_encoder = std::move(trained.state.item_encoder);
        return model;
    }

    GroupModel groups = build_groups(factors, cc.kappa, cc.seed, cfg.group_iters, cfg.threads);
    if (kind == ModelKind::mf_ga) {
        AffinityMap s = affinity_matrix(groups.users, groups.items, train);
        model.factors = train_mf_weighted(train, s.values, mf).factors;
        model.groups = std::move(groups);
        return model;
    }
    cc.mode = CgahMode::cf;
    cc.lambda1 = cc.lambda2 = 0.0;
    if (kind == ModelKind::cgah_cf_flat) {
        cc.constant_affinity = logistic(1.0);
        model.constant_affinity = cc.constant_affinity;
    }
    auto state = train_cgah_cf(train, factors, groups, cc);
    model.user_codes = std::move(state.users);
    model.item_codes = std::move(state.items);
    model.delegates = std::move(state.delegates);
    if (kind == ModelKind::cgah_cf) model.groups = std::move(groups);
    return model;
}

/// Every (fraction, model, repeat) combination. Repeat r splits with seed
/// base + r and trains with the same offset, so a run with fewer repeats
/// reproduces the leading repeats of a longer one.
inline std::vector<EvalReport> sparsity_sweep(const RatingMatrix& ratings, const std::vector<double>& fractions,
                                              const std::vector<ModelKind>& models, int repeats,
                                              const ExperimentConfig& cfg, std::uint64_t base_seed,
                                              const ContentPair* content = nullptr) {
    if (repeats < 1) throw ValidationError("repeats must be >= 1");
    if (fractions.empty() || models.empty()) throw ValidationError("the sweep needs at least one fraction and model");
    std::vector<EvalReport> reports;
    for (double fraction : fractions) {
        std::vector<EvalReport> cell(models.size());
        for (std::size_t m = 0; m < models.size(); ++m) {
            cell[m].model = std::string(to_string(models[m]));
            cell[m].fraction = fraction;
            cell[m].seed = base_seed;
        }
        for (int rep = 0; rep < repeats; ++rep) {
            SplitSpec spec;
            spec.train_fraction = fraction;
            spec.seed = base_seed + static_cast<std::uint64_t>(rep);
            auto split = split_ratings(ratings, spec);
            for (std::size_t m = 0; m < models.size(); ++m) {
                auto model = train_model(models[m], split.train, cfg, static_cast<std::uint64_t>(rep), content);
                cell[m].add_repeat(evaluate_model(ModelRanker(model), split.test, split.train, cfg.ks, cfg.threads));
            }
        }
        reports.insert(reports.end(), cell.begin(), cell.end());
    }
    return reports;
}

}  // namespace cgah
