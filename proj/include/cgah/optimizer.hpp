#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "common.hpp"
#include "delegate.hpp"
#include "encoder.hpp"
#include "factorization.hpp"
#include "grouping.hpp"
#include "hashcodes.hpp"
#include "rating_matrix.hpp"

namespace cgah {

enum class CgahMode { cf, content };

inline std::string_view to_string(CgahMode mode) { return mode == CgahMode::cf ? "cf" : "content"; }

inline CgahMode parse_mode(std::string_view name) {
    if (name == "cf") return CgahMode::cf;
    if (name == "content") return CgahMode::content;
    throw ValidationError("unknown mode '" + std::string(name) + "' (expected cf or content)");
}

struct CgahConfig {
    std::size_t bits = 20;
    std::size_t kappa = 10;
    /// Delegate weights; negative selects 1e-3 * |Omega| / (n r) (resp. m r).
    double alpha = -1.0;
    double beta = -1.0;
    double lambda1 = 0.0;
    double lambda2 = 0.0;
    int max_outer_iters = 30;
    int inner_dcd_sweeps = 10;
    std::uint64_t seed = 42;
    CgahMode mode = CgahMode::cf;
    /// Ratings enter the loss as value / rating_scale; 0 selects the largest
    /// training rating, so targets fall in (0, 1] like s * sim_H.
    double rating_scale = 0.0;
    /// When set, every s_ij is replaced by this constant (no-affinity ablation).
    std::optional<double> constant_affinity;
    /// Encoder fine-tuning per outer iteration (content mode).
    int finetune_epochs = 1;
    double finetune_lr = 0.05;
    /// Fine-tuning epochs toward the initial codes before the first outer
    /// iteration, so the content pull starts from embeddings that agree with
    /// the factors rather than from the reconstruction-only encoder.
    int warmup_epochs = 20;
    /// Throw ConsistencyError if a block update raises the objective.
    bool check_monotone = true;
    double monotone_tolerance = 1e-9;
    int threads = 1;

    static CgahConfig content_defaults() {
        CgahConfig cfg;
        cfg.mode = CgahMode::content;
        cfg.lambda1 = 0.2;
        cfg.lambda2 = 0.1;
        return cfg;
    }

    void validate() const {
        if (bits < 1) throw ValidationError("code length must be >= 1");
        if (kappa < 2) throw ValidationError("kappa must be >= 2");
        if (lambda1 < 0.0 || lambda2 < 0.0) throw ValidationError("lambda1 and lambda2 must be >= 0");
        if (mode == CgahMode::cf && (lambda1 != 0.0 || lambda2 != 0.0)) {
            throw ValidationError("lambda1 and lambda2 must be 0 in cf mode");
        }
        if (max_outer_iters < 1 || inner_dcd_sweeps < 1) throw ValidationError("iteration counts must be >= 1");
        if (finetune_epochs < 0 || warmup_epochs < 0) throw ValidationError("epoch counts must be >= 0");
        if (!(rating_scale >= 0.0)) throw ValidationError("rating_scale must be >= 0 (0 = largest rating)");
        if (constant_affinity && !(*constant_affinity > 0.0 && *constant_affinity < 1.0)) {
            throw ValidationError("constant affinity must lie in (0, 1)");
        }
    }

    /// Copy with concrete delegate weights for the given training data.
    bool is_resolved() const { return alpha >= 0.0 && beta >= 0.0 && rating_scale > 0.0; }

    CgahConfig resolved(const RatingMatrix& train) const {
        CgahConfig out = *this;
        const double omega = static_cast<double>(train.size());
        const double r = static_cast<double>(bits);
        if (out.alpha < 0.0) out.alpha = train.users() ? 1e-3 * omega / (static_cast<double>(train.users()) * r) : 0.0;
        if (out.beta < 0.0) out.beta = train.items() ? 1e-3 * omega / (static_cast<double>(train.items()) * r) : 0.0;
        if (out.rating_scale == 0.0) out.rating_scale = train.max_rating() > 0.0 ? train.max_rating() : 1.0;
        return out;
    }
};

/// Objective value split by term.
struct ObjectiveTerms {
    double rating = 0.0;
    double delegate = 0.0;  // -2 alpha tr(B^T X) - 2 beta tr(D^T Y)
    double content = 0.0;   // lambda1 sum |b_i - xi_i|^2 + lambda2 sum |d_j - zeta_j|^2
    double total = 0.0;
};

struct TrainState {
    BinaryCodeSet users;  // B
    BinaryCodeSet items;  // D
    DelegatePair delegates;
    /// s_ij for observed pairs, aligned with the training entries.
    AffinityMap affinity;
    /// Content embeddings xi (users) and zeta (items); empty in cf mode.
    RowMatrix user_embedding;
    RowMatrix item_embedding;
    std::optional<EncoderParams> user_encoder;
    std::optional<EncoderParams> item_encoder;
    /// Objective at initialization and after every outer iteration.
    std::vector<ObjectiveTerms> trace;
    /// Bits flipped in each outer iteration.
    std::vector<std::size_t> flips;
};

/// Sign rule for one bit: sgn(chi(-coef, current)), chi(x, y) = x if x != 0 else y.
inline int dcd_sign_rule(double coef, int current) {
    if (coef == 0.0) return current;
    return coef < 0.0 ? 1 : -1;
}

/// Evaluates the softened objective from scratch.
inline ObjectiveTerms objective(const TrainState& state, const RatingMatrix& train, const CgahConfig& config) {
    const CgahConfig cfg = config.resolved(train);
    const auto bits = state.users.bits();
    const double r = static_cast<double>(bits);
    ObjectiveTerms t;
    auto entries = train.entries();
    for (std::size_t k = 0; k < entries.size(); ++k) {
        const auto& e = entries[k];
        double s = state.affinity.values[k];
        double dot = code_dot(state.users.code(e.user), state.items.code(e.item), bits);
        double resid = e.value / cfg.rating_scale - 0.5 * s - s / (2.0 * r) * dot;
        t.rating += resid * resid;
    }
    auto trace_term = [](const BinaryCodeSet& codes, const RowMatrix& x) {
        if (x.size() == 0) return 0.0;
        double acc = 0.0;
        for (std::size_t e = 0; e < codes.count(); ++e) {
            for (std::size_t k = 0; k < codes.bits(); ++k) {
                acc += codes.get(e, k) * x(static_cast<Eigen::Index>(e), static_cast<Eigen::Index>(k));
            }
        }
        return acc;
    };
    t.delegate = -2.0 * cfg.alpha * trace_term(state.users, state.delegates.users) -
                 2.0 * cfg.beta * trace_term(state.items, state.delegates.items);
    if (cfg.mode == CgahMode::content) {
        auto fit = [](const BinaryCodeSet& codes, const RowMatrix& emb) {
            if (emb.size() == 0) return 0.0;
            return (codes.to_matrix() - emb).squaredNorm();
        };
        t.content = cfg.lambda1 * fit(state.users, state.user_embedding) +
                    cfg.lambda2 * fit(state.items, state.item_embedding);
    }
    t.total = t.rating + t.delegate + t.content;
    return t;
}

namespace detail {

// Bitwise coordinate descent on one entity's code. `partners` lists the
// entities on the other side with their ratings; affinity_of(k) is s for the
// k-th partner. Returns the number of bit flips.
template <typename AffinityOf>
inline std::size_t dcd_entity(std::size_t entity, BinaryCodeSet& own, const BinaryCodeSet& other,
                              std::span<const IndexedRating> partners, AffinityOf affinity_of,
                              const RowMatrix& delegate, double delegate_weight, const RowMatrix& embedding,
                              double content_weight, double rating_scale, int max_sweeps) {
    const std::size_t bits = own.bits();
    const double r = static_cast<double>(bits);
    const auto n_p = partners.size();
    std::vector<double> dots(n_p), target(n_p), scale(n_p);
    std::vector<int> other_bit(n_p);
    auto code = own.code(entity);
    for (std::size_t l = 0; l < n_p; ++l) {
        double s = affinity_of(l);
        dots[l] = code_dot(code, other.code(partners[l].index), bits);
        target[l] = partners[l].value / rating_scale - 0.5 * s;
        scale[l] = s / (2.0 * r);
    }
    const bool has_delegate = delegate_weight != 0.0 && delegate.size() > 0;
    const bool has_content = content_weight != 0.0 && embedding.size() > 0;
    const auto row = static_cast<Eigen::Index>(entity);

    std::size_t flips = 0;
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        std::size_t changed = 0;
        for (std::size_t k = 0; k < bits; ++k) {
            const int current = own.get(entity, k);
            // The objective restricted to bit k is coef * b_k + const.
            double coef = 0.0;
            for (std::size_t l = 0; l < n_p; ++l) {
                other_bit[l] = other.get(partners[l].index, k);
                double rest = dots[l] - current * other_bit[l];
                coef += 2.0 * scale[l] * (scale[l] * rest - target[l]) * other_bit[l];
            }
            if (has_delegate) coef -= 2.0 * delegate_weight * delegate(row, static_cast<Eigen::Index>(k));
            if (has_content) coef -= 2.0 * content_weight * embedding(row, static_cast<Eigen::Index>(k));
            const int next = dcd_sign_rule(coef, current);
            if (next != current) {
                own.set(entity, k, next);
                for (std::size_t l = 0; l < n_p; ++l) dots[l] += 2.0 * next * other_bit[l];
                ++changed;
            }
        }
        flips += changed;
        if (changed == 0) break;
    }
    return flips;
}

}  // namespace detail

/// Updates b_i with D, X (and xi) fixed. Returns the number of flipped bits.
inline std::size_t dcd_update_user(std::size_t user, TrainState& state, const RatingMatrix& train, const CgahConfig& config) {
    const CgahConfig cfg = config.is_resolved() ? config : config.resolved(train);
    const auto base = train.row_offset(user);
    const double content_weight = cfg.mode == CgahMode::content ? cfg.lambda1 : 0.0;
    return detail::dcd_entity(
        user, state.users, state.items, train.row(user), [&](std::size_t k) { return state.affinity.values[base + k]; },
        state.delegates.users, cfg.alpha, state.user_embedding, content_weight, cfg.rating_scale, cfg.inner_dcd_sweeps);
}

/// Updates d_j with B, Y (and zeta) fixed. Returns the number of flipped bits.
inline std::size_t dcd_update_item(std::size_t item, TrainState& state, const RatingMatrix& train, const CgahConfig& config) {
    const CgahConfig cfg = config.is_resolved() ? config : config.resolved(train);
    auto ids = train.col_entry_ids(item);
    const double content_weight = cfg.mode == CgahMode::content ? cfg.lambda2 : 0.0;
    return detail::dcd_entity(
        item, state.items, state.users, train.col(item), [&](std::size_t k) { return state.affinity.values[ids[k]]; },
        state.delegates.items, cfg.beta, state.item_embedding, content_weight, cfg.rating_scale, cfg.inner_dcd_sweeps);
}

/// Hooks for observing the optimizer; on_block fires after every block update
/// with the block name ("users", "items", "X", "Y", "encoders").
struct TrainCallbacks {
    std::function<void(std::string_view, const TrainState&)> on_block;
};

namespace detail {

inline RowMatrix delegate_or_zero(const BinaryCodeSet& codes, double weight) {
    if (codes.count() > codes.bits()) return update_delegate(codes);
    if (weight != 0.0) {
        throw ValidationError("delegate update needs more entities (" + std::to_string(codes.count()) +
                              ") than bits (" + std::to_string(codes.bits()) + ")");
    }
    return RowMatrix::Zero(static_cast<Eigen::Index>(codes.count()), static_cast<Eigen::Index>(codes.bits()));
}

// B = sgn(X0) where X0 is the delegate projection of sgn(H).
inline BinaryCodeSet initial_codes(const RowMatrix& factors, std::size_t bits, double weight) {
    if (static_cast<std::size_t>(factors.cols()) != bits) {
        throw ValidationError("factor dimension " + std::to_string(factors.cols()) + " differs from code length " +
                              std::to_string(bits));
    }
    auto signs = BinaryCodeSet::from_signs(factors);
    if (signs.count() <= bits) return signs;
    (void)weight;
    return BinaryCodeSet::from_signs(update_delegate(signs));
}

}  // namespace detail

/// Initial state: codes from the MF factors, delegates fitted to those codes.
inline TrainState initialize_state(const RatingMatrix& train, const FactorMatrix& factors, AffinityMap affinity,
                                   const CgahConfig& cfg) {
    if (static_cast<std::size_t>(factors.users.rows()) != train.users() ||
        static_cast<std::size_t>(factors.items.rows()) != train.items()) {
        throw ValidationError("factor rows do not match the rating matrix");
    }
    if (affinity.size() != train.size()) throw ValidationError("affinity map does not match the training ratings");
    TrainState state;
    state.users = detail::initial_codes(factors.users, cfg.bits, cfg.alpha);
    state.items = detail::initial_codes(factors.items, cfg.bits, cfg.beta);
    state.delegates.users = detail::delegate_or_zero(state.users, cfg.alpha);
    state.delegates.items = detail::delegate_or_zero(state.items, cfg.beta);
    state.affinity = std::move(affinity);
    return state;
}

/// Runs the alternating updates (users, items, X, Y, and encoders in content
/// mode) on an initialized state until an outer iteration flips no bit or
/// max_outer_iters is reached.
inline void optimize(TrainState& state, const RatingMatrix& train, const CgahConfig& config,
                     const RowMatrix* user_content = nullptr, const RowMatrix* item_content = nullptr,
                     const TrainCallbacks& callbacks = {}) {
    config.validate();
    const CgahConfig cfg = config.resolved(train);
    const bool content = cfg.mode == CgahMode::content;
    if (content && (!user_content || !item_content || !state.user_encoder || !state.item_encoder)) {
        throw ValidationError("content mode needs content matrices and pretrained encoders");
    }

    auto tune = [&](std::optional<EncoderParams>& enc, const RowMatrix& rows, const BinaryCodeSet& codes,
                    RowMatrix& embedding, int epochs, std::uint64_t seed) {
        if (epochs == 0) return;
        auto tuned = finetune_encoder(*enc, rows, codes, epochs, cfg.finetune_lr, seed);
        double before = embedding_objective(*enc, rows, codes);
        double after = embedding_objective(tuned.params, rows, codes);
        // An SGD pass can overshoot; keep the old encoder in that case.
        if (after <= before) {
            enc = std::move(tuned.params);
            embedding = encode_all(*enc, rows);
        }
    };
    if (content && state.trace.empty() && cfg.warmup_epochs > 0) {
        std::uint64_t seed = cfg.seed ^ 0x5eedULL;
        tune(state.user_encoder, *user_content, state.users, state.user_embedding, cfg.warmup_epochs, seed);
        tune(state.item_encoder, *item_content, state.items, state.item_embedding, cfg.warmup_epochs, seed + 1);
    }

    ObjectiveTerms last = objective(state, train, cfg);
    if (state.trace.empty()) state.trace.push_back(last);
    auto after_block = [&](std::string_view block) {
        if (callbacks.on_block) callbacks.on_block(block, state);
        if (!cfg.check_monotone) return;
        ObjectiveTerms now = objective(state, train, cfg);
        if (!std::isfinite(now.total)) throw DivergenceError("objective is not finite after the " + std::string(block) + " update");
        if (now.total > last.total + cfg.monotone_tolerance * std::max(1.0, std::abs(last.total))) {
            throw ConsistencyError("objective rose from " + std::to_string(last.total) + " to " + std::to_string(now.total) +
                                   " in the " + std::string(block) + " update");
        }
        last = now;
    };

    std::vector<std::size_t> user_flips(train.users()), item_flips(train.items());
    for (int it = 0; it < cfg.max_outer_iters; ++it) {
        parallel_for(train.users(), cfg.threads, [&](std::size_t b, std::size_t e) {
            for (std::size_t i = b; i < e; ++i) user_flips[i] = dcd_update_user(i, state, train, cfg);
        });
        after_block("users");
        parallel_for(train.items(), cfg.threads, [&](std::size_t b, std::size_t e) {
            for (std::size_t j = b; j < e; ++j) item_flips[j] = dcd_update_item(j, state, train, cfg);
        });
        after_block("items");
        if (cfg.alpha != 0.0) {
            state.delegates.users = detail::delegate_or_zero(state.users, cfg.alpha);
            after_block("X");
        }
        if (cfg.beta != 0.0) {
            state.delegates.items = detail::delegate_or_zero(state.items, cfg.beta);
            after_block("Y");
        }
        if (content) {
            std::uint64_t seed = cfg.seed + static_cast<std::uint64_t>(it) * 2;
            tune(state.user_encoder, *user_content, state.users, state.user_embedding, cfg.finetune_epochs, seed);
            tune(state.item_encoder, *item_content, state.items, state.item_embedding, cfg.finetune_epochs, seed + 1);
            after_block("encoders");
        }

        std::size_t flips = 0;
        for (auto f : user_flips) flips += f;
        for (auto f : item_flips) flips += f;
        state.flips.push_back(flips);
        state.trace.push_back(cfg.check_monotone ? last : objective(state, train, cfg));
        if (!cfg.check_monotone) last = state.trace.back();
        if (flips == 0) break;
    }
}

/// Affinities for the observed pairs, or the constant ablation value.
inline AffinityMap observed_affinities(const GroupModel& groups, const RatingMatrix& train, const CgahConfig& cfg) {
    if (cfg.constant_affinity) return AffinityMap{std::vector<double>(train.size(), *cfg.constant_affinity)};
    return affinity_matrix(groups.users, groups.items, train);
}

/// CGAH for collaborative filtering: affinities from the given profiles,
/// frozen before the loop.
inline TrainState train_cgah_cf(const RatingMatrix& train, const FactorMatrix& factors, const GroupModel& groups,
                                const CgahConfig& config, const TrainCallbacks& callbacks = {}) {
    config.validate();
    if (config.mode != CgahMode::cf) throw ValidationError("train_cgah_cf needs cf mode");
    const CgahConfig cfg = config.resolved(train);
    TrainState state = initialize_state(train, factors, observed_affinities(groups, train, cfg), cfg);
    optimize(state, train, cfg, nullptr, nullptr, callbacks);
    return state;
}

struct ContentModel {
    TrainState state;
    GroupModel groups;
};

/// Content-aware CGAH: grouping runs on [h; xi] and [g; zeta], and the encoders
/// are fine-tuned toward the codes after every outer iteration.
inline ContentModel train_cgah(const RatingMatrix& train, const FactorMatrix& factors, const RowMatrix& user_content,
                               const RowMatrix& item_content, const EncoderParams& user_encoder,
                               const EncoderParams& item_encoder, const CgahConfig& config,
                               const TrainCallbacks& callbacks = {}) {
    config.validate();
    if (config.mode != CgahMode::content) throw ValidationError("train_cgah needs content mode");
    if (static_cast<std::size_t>(user_content.rows()) != train.users() ||
        static_cast<std::size_t>(item_content.rows()) != train.items()) {
        throw ValidationError("content rows do not match the rating matrix");
    }
    if (user_encoder.embed_dim() != config.bits || item_encoder.embed_dim() != config.bits) {
        throw ValidationError("encoder embedding dimension must equal the code length");
    }
    const CgahConfig cfg = config.resolved(train);
    RowMatrix xi = encode_all(user_encoder, user_content);
    RowMatrix zeta = encode_all(item_encoder, item_content);
    GroupModel groups = build_groups(concat_columns(factors.users, xi), concat_columns(factors.items, zeta), cfg.kappa,
                                     cfg.seed, 100, cfg.threads);
    TrainState state = initialize_state(train, factors, observed_affinities(groups, train, cfg), cfg);
    state.user_embedding = std::move(xi);
    state.item_embedding = std::move(zeta);
    state.user_encoder = user_encoder;
    state.item_encoder = item_encoder;
    optimize(state, train, cfg, &user_content, &item_content, callbacks);
    return {std::move(state), std::move(groups)};
}

}  // namespace cgah
