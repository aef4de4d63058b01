#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "common.hpp"
#include "dataset.hpp"
#include "encoder.hpp"
#include "evaluation.hpp"
#include "experiment.hpp"
#include "factorization.hpp"
#include "grouping.hpp"
#include "model_io.hpp"
#include "optimizer.hpp"

namespace cgah {

inline const std::vector<std::string>& pipeline_stages() {
    static const std::vector<std::string> stages{"ingest",       "split",      "train-mf", "group",
                                                 "pretrain-dae", "train-cgah", "eval"};
    return stages;
}

/// Every knob of a pipeline run. Empty path fields fall back to files inside
/// `out` (see PipelineConfig::path).
struct PipelineConfig {
    // [data]
    std::string ratings;
    RatingFormat format = RatingFormat::tsv;
    std::size_t min_degree = 10;
    std::string user_content;
    std::string item_content;
    std::size_t vocab_size = 2000;
    // [split]
    SplitSpec split;
    // [mf]
    MfConfig mf;
    // [group]
    std::uint64_t group_seed = 42;
    int group_iters = 100;
    // [dae]
    DaeConfig dae;
    // [cgah]  (lambdas unset = mode default)
    CgahConfig cgah;
    std::optional<double> lambda1;
    std::optional<double> lambda2;
    // [eval]
    std::vector<std::size_t> ks{10, 20, 30, 40, 50};
    // [run]
    std::string out = ".";
    int threads = 1;
    std::vector<std::string> stages = pipeline_stages();
    /// File overrides keyed by artifact name (train, test, factors, ...).
    std::map<std::string, std::string> files;

    std::string path(const std::string& artifact) const {
        if (auto it = files.find(artifact); it != files.end() && !it->second.empty()) return it->second;
        static const std::map<std::string, std::string> names{
            {"ratings", "ratings.tsv"},   {"users", "users.map"},        {"items", "items.map"},
            {"train", "train.tsv"},       {"test", "test.tsv"},          {"factors", "mf.bin"},
            {"groups", "groups.cgah"},    {"encoders", "encoders.cgah"}, {"model", "model.cgah"},
            {"trace", "objective.csv"},   {"report", "report.csv"},      {"snapshot", "config.resolved.ini"}};
        auto it = names.find(artifact);
        if (it == names.end()) throw ValidationError("unknown artifact '" + artifact + "'");
        return (std::filesystem::path(out) / it->second).string();
    }

    bool wants(const std::string& stage) const {
        return std::find(stages.begin(), stages.end(), stage) != stages.end();
    }

    /// CgahConfig with the mode-dependent lambda defaults filled in.
    CgahConfig cgah_config() const {
        CgahConfig c = cgah;
        bool content = c.mode == CgahMode::content;
        c.lambda1 = lambda1.value_or(content ? 0.2 : 0.0);
        c.lambda2 = lambda2.value_or(content ? 0.1 : 0.0);
        c.threads = threads;
        return c;
    }

    void validate() const {
        for (const auto& s : stages) {
            if (std::find(pipeline_stages().begin(), pipeline_stages().end(), s) == pipeline_stages().end()) {
                throw ValidationError("unknown stage '" + s + "'");
            }
        }
        if (threads < 1) throw ValidationError("threads must be >= 1");
        if (min_degree < 1) throw ValidationError("min_degree must be >= 1");
        if (ks.empty()) throw ValidationError("eval needs at least one k");
        if (wants("ingest") && ratings.empty()) throw ValidationError("ingest needs [data] ratings");
        if (!(split.train_fraction > 0.0 && split.train_fraction < 1.0)) {
            throw ValidationError("split fraction must lie in (0, 1)");
        }
        mf.validate();
        dae.validate();
        auto c = cgah_config();
        c.validate();
        if (wants("train-cgah") && mf.dim != c.bits) {
            throw ValidationError("[mf] dim (" + std::to_string(mf.dim) + ") must equal [cgah] dim (" +
                                  std::to_string(c.bits) + "): codes are initialized from the factors");
        }
        if (c.mode == CgahMode::content && (wants("pretrain-dae") || wants("train-cgah"))) {
            if (user_content.empty() || item_content.empty()) {
                throw ValidationError("content mode needs [data] user_content and item_content");
            }
        }
    }
};

namespace detail {

inline std::string join_sizes(const std::vector<std::size_t>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

inline std::string join(const std::vector<std::string>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + v[i];
    return s;
}

inline std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> out;
    for (auto part : split(text, ",")) {
        auto t = trim(part);
        if (!t.empty()) out.emplace_back(t);
    }
    return out;
}

inline std::vector<std::size_t> parse_k_list(const std::string& text) {
    std::vector<std::size_t> ks;
    for (const auto& p : split_list(text)) {
        auto v = parse_integer(p);
        if (!v || *v < 1) throw ValidationError("bad k value '" + p + "'");
        ks.push_back(static_cast<std::size_t>(*v));
    }
    if (ks.empty()) throw ValidationError("empty k list");
    return ks;
}

inline double parse_real(const std::string& key, const std::string& v) {
    auto d = parse_double(v);
    if (!d) throw ValidationError(key + ": expected a number, got '" + v + "'");
    return *d;
}

inline long long parse_int(const std::string& key, const std::string& v) {
    auto d = parse_integer(v);
    if (!d) throw ValidationError(key + ": expected an integer, got '" + v + "'");
    return *d;
}

inline std::size_t parse_count(const std::string& key, const std::string& v) {
    auto d = parse_int(key, v);
    if (d < 0) throw ValidationError(key + ": must be >= 0");
    return static_cast<std::size_t>(d);
}

// "auto" or a number; auto maps to `fallback`.
inline double parse_auto(const std::string& key, const std::string& v, double fallback) {
    return v == "auto" ? fallback : parse_real(key, v);
}

inline std::string auto_or(double v, double sentinel_max) {
    return v <= sentinel_max ? "auto" : format_double(v);
}

}  // namespace detail

/// Applies one "section.key = value" setting. Used for both the config file
/// and command-line overrides.
inline void apply_setting(PipelineConfig& c, const std::string& key, const std::string& value) {
    using namespace detail;
    static const std::map<std::string, std::function<void(PipelineConfig&, const std::string&)>> setters{
        {"data.ratings", [](auto& c, auto& v) { c.ratings = v; }},
        {"data.format", [](auto& c, auto& v) { c.format = parse_rating_format(v); }},
        {"data.min_degree", [](auto& c, auto& v) { c.min_degree = parse_count("data.min_degree", v); }},
        {"data.user_content", [](auto& c, auto& v) { c.user_content = v; }},
        {"data.item_content", [](auto& c, auto& v) { c.item_content = v; }},
        {"data.vocab_size", [](auto& c, auto& v) { c.vocab_size = parse_count("data.vocab_size", v); }},
        {"split.fraction", [](auto& c, auto& v) { c.split.train_fraction = parse_real("split.fraction", v); }},
        {"split.seed", [](auto& c, auto& v) { c.split.seed = parse_count("split.seed", v); }},
        {"split.repeats", [](auto& c, auto& v) { c.split.repeats = static_cast<int>(parse_int("split.repeats", v)); }},
        {"mf.dim", [](auto& c, auto& v) { c.mf.dim = parse_count("mf.dim", v); }},
        {"mf.reg", [](auto& c, auto& v) { c.mf.reg = parse_real("mf.reg", v); }},
        {"mf.iters", [](auto& c, auto& v) { c.mf.iterations = static_cast<int>(parse_int("mf.iters", v)); }},
        {"mf.seed", [](auto& c, auto& v) { c.mf.seed = parse_count("mf.seed", v); }},
        {"mf.init_scale", [](auto& c, auto& v) { c.mf.init_scale = parse_auto("mf.init_scale", v, 0.0); }},
        {"group.kappa", [](auto& c, auto& v) { c.cgah.kappa = parse_count("group.kappa", v); }},
        {"group.seed", [](auto& c, auto& v) { c.group_seed = parse_count("group.seed", v); }},
        {"group.max_iters", [](auto& c, auto& v) { c.group_iters = static_cast<int>(parse_int("group.max_iters", v)); }},
        {"dae.corruption", [](auto& c, auto& v) { c.dae.corruption = parse_real("dae.corruption", v); }},
        {"dae.epochs", [](auto& c, auto& v) { c.dae.epochs = static_cast<int>(parse_int("dae.epochs", v)); }},
        {"dae.lr", [](auto& c, auto& v) { c.dae.lr = parse_real("dae.lr", v); }},
        {"dae.seed", [](auto& c, auto& v) { c.dae.seed = parse_count("dae.seed", v); }},
        {"cgah.mode", [](auto& c, auto& v) { c.cgah.mode = parse_mode(v); }},
        {"cgah.dim", [](auto& c, auto& v) { c.cgah.bits = parse_count("cgah.dim", v); }},
        {"cgah.alpha", [](auto& c, auto& v) { c.cgah.alpha = parse_auto("cgah.alpha", v, -1.0); }},
        {"cgah.beta", [](auto& c, auto& v) { c.cgah.beta = parse_auto("cgah.beta", v, -1.0); }},
        {"cgah.lambda1", [](auto& c, auto& v) { c.lambda1 = parse_real("cgah.lambda1", v); }},
        {"cgah.lambda2", [](auto& c, auto& v) { c.lambda2 = parse_real("cgah.lambda2", v); }},
        {"cgah.outer_iters", [](auto& c, auto& v) { c.cgah.max_outer_iters = static_cast<int>(parse_int("cgah.outer_iters", v)); }},
        {"cgah.inner_sweeps", [](auto& c, auto& v) { c.cgah.inner_dcd_sweeps = static_cast<int>(parse_int("cgah.inner_sweeps", v)); }},
        {"cgah.seed", [](auto& c, auto& v) { c.cgah.seed = parse_count("cgah.seed", v); }},
        {"cgah.rating_scale", [](auto& c, auto& v) { c.cgah.rating_scale = parse_auto("cgah.rating_scale", v, 0.0); }},
        {"cgah.finetune_epochs", [](auto& c, auto& v) { c.cgah.finetune_epochs = static_cast<int>(parse_int("cgah.finetune_epochs", v)); }},
        {"cgah.warmup_epochs", [](auto& c, auto& v) { c.cgah.warmup_epochs = static_cast<int>(parse_int("cgah.warmup_epochs", v)); }},
        {"cgah.finetune_lr", [](auto& c, auto& v) { c.cgah.finetune_lr = parse_real("cgah.finetune_lr", v); }},
        {"eval.k", [](auto& c, auto& v) { c.ks = parse_k_list(v); }},
        {"run.out", [](auto& c, auto& v) { c.out = v; }},
        {"run.threads", [](auto& c, auto& v) { c.threads = static_cast<int>(parse_int("run.threads", v)); }},
        {"run.stages", [](auto& c, auto& v) { c.stages = split_list(v); }},
    };
    if (key.rfind("files.", 0) == 0) {
        c.files[key.substr(6)] = value;
        return;
    }
    auto it = setters.find(key);
    if (it == setters.end()) throw ValidationError("unknown config key '" + key + "'");
    it->second(c, value);
}

inline void apply_ini(PipelineConfig& c, std::istream& in) {
    boost::property_tree::ptree tree;
    try {
        boost::property_tree::ini_parser::read_ini(in, tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw ParseError(e.message(), e.line());
    }
    for (const auto& [section, body] : tree) {
        if (body.empty()) throw ValidationError("config key '" + section + "' is outside any section");
        for (const auto& [key, value] : body) apply_setting(c, section + "." + key, value.data());
    }
}

inline PipelineConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open config '" + path + "'");
    PipelineConfig c;
    apply_ini(c, in);
    return c;
}

/// Fully resolved config as INI. With include_paths = false, paths and the
/// [run] section are left out; that text feeds the config hash, which then
/// depends only on settings that change results (threads do not).
inline std::string to_ini(const PipelineConfig& c, bool include_paths = true) {
    using detail::format_double;
    auto cg = c.cgah_config();
    std::ostringstream o;
    o << "[data]\n";
    if (include_paths) o << "ratings = " << c.ratings << "\n";
    o << "format = " << to_string(c.format) << "\nmin_degree = " << c.min_degree << "\n";
    if (include_paths) o << "user_content = " << c.user_content << "\nitem_content = " << c.item_content << "\n";
    o << "vocab_size = " << c.vocab_size << "\n\n";
    o << "[split]\nfraction = " << format_double(c.split.train_fraction) << "\nseed = " << c.split.seed
      << "\nrepeats = " << c.split.repeats << "\n\n";
    o << "[mf]\ndim = " << c.mf.dim << "\nreg = " << format_double(c.mf.reg) << "\niters = " << c.mf.iterations
      << "\nseed = " << c.mf.seed << "\ninit_scale = " << detail::auto_or(c.mf.init_scale, 0.0) << "\n\n";
    o << "[group]\nkappa = " << cg.kappa << "\nseed = " << c.group_seed << "\nmax_iters = " << c.group_iters << "\n\n";
    o << "[dae]\ncorruption = " << format_double(c.dae.corruption) << "\nepochs = " << c.dae.epochs
      << "\nlr = " << format_double(c.dae.lr) << "\nseed = " << c.dae.seed << "\n\n";
    o << "[cgah]\nmode = " << to_string(cg.mode) << "\ndim = " << cg.bits << "\nalpha = " << detail::auto_or(cg.alpha, -0.5)
      << "\nbeta = " << detail::auto_or(cg.beta, -0.5) << "\nlambda1 = " << format_double(cg.lambda1)
      << "\nlambda2 = " << format_double(cg.lambda2) << "\nouter_iters = " << cg.max_outer_iters
      << "\ninner_sweeps = " << cg.inner_dcd_sweeps << "\nseed = " << cg.seed
      << "\nrating_scale = " << detail::auto_or(cg.rating_scale, 0.0) << "\nfinetune_epochs = " << cg.finetune_epochs
      << "\nfinetune_lr = " << format_double(cg.finetune_lr) << "\nwarmup_epochs = " << cg.warmup_epochs << "\n\n";
    o << "[eval]\nk = " << detail::join_sizes(c.ks) << "\n\n";
    if (!include_paths) return o.str();
    o << "[run]\nout = " << c.out << "\nthreads = " << c.threads << "\nstages = " << detail::join(c.stages) << "\n";
    if (!c.files.empty()) {
        o << "\n[files]\n";
        for (const auto& [k, v] : c.files) o << k << " = " << v << "\n";
    }
    return o.str();
}

inline std::string config_hash(const PipelineConfig& c) {
    Fnv1a h;
    h.update(to_ini(c, false));
    return hex64(h.digest());
}

/// Bumped when a stage's output format or algorithm changes.
inline const std::map<std::string, int>& stage_versions() {
    static const std::map<std::string, int> v{{"ingest", 1},       {"split", 1},      {"train-mf", 1}, {"group", 1},
                                              {"pretrain-dae", 1}, {"train-cgah", 1}, {"eval", 1}};
    return v;
}

struct StageLog {
    std::ostream* out = &std::cerr;
    void operator()(const std::string& stage, const std::string& msg) const {
        if (out) *out << "[" << stage << "] " << msg << "\n";
    }
};

namespace detail {

inline std::string file_digest(const std::string& path) {
    Fnv1a h;
    h.update(read_file(path));
    return hex64(h.digest());
}

inline RatingMatrix load_split(const PipelineConfig& c, const std::string& which) {
    auto users = read_id_map(c.path("users")).size();
    auto items = read_id_map(c.path("items")).size();
    return read_indexed_tsv(c.path(which), users, items);
}

inline std::map<std::string, std::string> manifest_for(const PipelineConfig& c, const std::string& kind) {
    auto cg = c.cgah_config();
    std::map<std::string, std::string> m{{"kind", kind},
                                         {"r", std::to_string(cg.bits)},
                                         {"kappa", std::to_string(cg.kappa)},
                                         {"config_hash", config_hash(c)}};
    for (const auto& [stage, v] : stage_versions()) m["version." + stage] = std::to_string(v);
    return m;
}

inline void write_split(const PipelineConfig& c, const RatingMatrix& ratings) {
    auto s = split_ratings(ratings, c.split);
    write_tsv(c.path("train"), s.train);
    write_tsv(c.path("test"), s.test);
}

inline ContentPair load_content(const PipelineConfig& c, const StageLog& log) {
    auto users = read_id_map(c.path("users"));
    auto items = read_id_map(c.path("items"));
    auto u = ingest_content(c.user_content, c.vocab_size, users);
    auto i = ingest_content(c.item_content, c.vocab_size, items);
    for (const auto& w : u.warnings) log("content", "users: " + w);
    for (const auto& w : i.warnings) log("content", "items: " + w);
    return {std::move(u.content.rows), std::move(i.content.rows)};
}

}  // namespace detail

// Stages. Each reads and writes the artifacts named in the config.

inline void stage_ingest(const PipelineConfig& c, const StageLog& log) {
    auto raw = ingest_ratings(c.ratings, c.format);
    for (const auto& w : raw.warnings) log("ingest", w);
    auto filtered = filter_min_degree(raw.ratings, c.min_degree);
    log("ingest", std::to_string(filtered.ratings.size()) + " ratings, " + std::to_string(filtered.ratings.users()) +
                      " users, " + std::to_string(filtered.ratings.items()) + " items after min-degree " +
                      std::to_string(c.min_degree));
    std::filesystem::create_directories(c.out);
    write_tsv(c.path("ratings"), filtered.ratings);
    write_id_map(c.path("users"), raw.users.select(filtered.kept_users));
    write_id_map(c.path("items"), raw.items.select(filtered.kept_items));
    detail::write_split(c, filtered.ratings);
}

inline void stage_split(const PipelineConfig& c, const StageLog& log) {
    auto ratings = detail::load_split(c, "ratings");
    detail::write_split(c, ratings);
    log("split", "fraction " + detail::format_double(c.split.train_fraction) + ", seed " + std::to_string(c.split.seed));
}

inline void stage_train_mf(const PipelineConfig& c, const StageLog& log) {
    auto train = detail::load_split(c, "train");
    MfConfig mf = c.mf;
    mf.threads = c.threads;
    auto result = train_mf(train, mf);
    log("train-mf", "objective " + detail::format_double(result.objective_trace.front()) + " -> " +
                        detail::format_double(result.objective_trace.back()));
    save_factors(c.path("factors"), result.factors);
}

inline void stage_group(const PipelineConfig& c, const StageLog& log) {
    auto factors = load_factors(c.path("factors"));
    auto cg = c.cgah_config();
    RowMatrix user_vecs = factors.users, item_vecs = factors.items;
    if (cg.mode == CgahMode::content) {
        auto enc = ModelFile::load(c.path("encoders"));
        auto content = detail::load_content(c, log);
        user_vecs = concat_columns(user_vecs, encode_all(decode_encoder(enc.get("ENC_U")), content.users));
        item_vecs = concat_columns(item_vecs, encode_all(decode_encoder(enc.get("ENC_I")), content.items));
    }
    auto groups = build_groups(user_vecs, item_vecs, cg.kappa, c.group_seed, c.group_iters, c.threads);
    if (groups.zero_rows) log("group", std::to_string(groups.zero_rows) + " zero factor rows get zero profiles");
    Model m;
    m.kind = "groups";
    m.groups = std::move(groups);
    m.manifest = detail::manifest_for(c, "groups");
    save_model(c.path("groups"), m);
    log("group", "kappa " + std::to_string(cg.kappa));
}

inline void stage_pretrain_dae(const PipelineConfig& c, const StageLog& log) {
    auto content = detail::load_content(c, log);
    DaeConfig dae = c.dae;
    dae.embed_dim = c.cgah_config().bits;
    auto u = pretrain_dae(content.users, dae);
    dae.seed += 1;
    auto i = pretrain_dae(content.items, dae);
    auto last = [](const EncoderTrainResult& r) { return r.epoch_loss.empty() ? 0.0 : r.epoch_loss.back(); };
    log("pretrain-dae", "reconstruction loss users " + detail::format_double(last(u)) + ", items " +
                            detail::format_double(last(i)));
    ModelFile f;
    f.put("MANIFEST", encode_manifest(detail::manifest_for(c, "encoders")));
    f.put("ENC_U", encode_encoder(u.params));
    f.put("ENC_I", encode_encoder(i.params));
    f.save(c.path("encoders"));
}

inline void write_trace_csv(std::ostream& out, const std::vector<ObjectiveTerms>& trace) {
    out << "iteration,rating_loss,delegate_terms,content_terms,total\n";
    for (std::size_t t = 0; t < trace.size(); ++t) {
        out << t << ',' << detail::format_double(trace[t].rating) << ',' << detail::format_double(trace[t].delegate) << ','
            << detail::format_double(trace[t].content) << ',' << detail::format_double(trace[t].total) << '\n';
    }
}

inline void stage_train_cgah(const PipelineConfig& c, const StageLog& log) {
    auto train = detail::load_split(c, "train");
    auto factors = load_factors(c.path("factors"));
    auto stored = load_model(c.path("groups"));
    if (!stored.groups) throw ValidationError("'" + c.path("groups") + "' holds no group profiles");
    auto cg = c.cgah_config();

    Model m;
    m.manifest = detail::manifest_for(c, cg.mode == CgahMode::cf ? "cgah-cf" : "cgah");
    m.kind = m.manifest["kind"];
    TrainState state;
    if (cg.mode == CgahMode::cf) {
        state = train_cgah_cf(train, factors, *stored.groups, cg);
    } else {
        auto enc = ModelFile::load(c.path("encoders"));
        auto content = detail::load_content(c, log);
        auto resolved = cg.resolved(train);
        state = initialize_state(train, factors, observed_affinities(*stored.groups, train, resolved), resolved);
        state.user_encoder = decode_encoder(enc.get("ENC_U"));
        state.item_encoder = decode_encoder(enc.get("ENC_I"));
        state.user_embedding = encode_all(*state.user_encoder, content.users);
        state.item_embedding = encode_all(*state.item_encoder, content.items);
        optimize(state, train, resolved, &content.users, &content.items);
        m.user_encoder = state.user_encoder;
        m.item_encoder = state.item_encoder;
    }
    log("train-cgah", std::to_string(state.flips.size()) + " outer iterations, objective " +
                          detail::format_double(state.trace.front().total) + " -> " +
                          detail::format_double(state.trace.back().total));
    m.factors = std::move(factors);
    m.groups = std::move(stored.groups);
    m.user_codes = std::move(state.users);
    m.item_codes = std::move(state.items);
    m.delegates = std::move(state.delegates);
    save_model(c.path("model"), m);
    std::ofstream trace(c.path("trace"));
    if (!trace) throw Error("cannot write '" + c.path("trace") + "'");
    write_trace_csv(trace, state.trace);
}

inline void stage_eval(const PipelineConfig& c, const StageLog& log) {
    auto model = load_model(c.path("model"));
    auto train = detail::load_split(c, "train");
    auto test = detail::load_split(c, "test");
    auto result = evaluate_model(ModelRanker(model), test, train, c.ks, c.threads);
    if (result.users_skipped) log("eval", std::to_string(result.users_skipped) + " test users not covered by the model");
    EvalReport report;
    report.model = model.kind;
    report.fraction = c.split.train_fraction;
    report.seed = c.split.seed;
    report.add_repeat(result);
    std::ofstream out(c.path("report"));
    if (!out) throw Error("cannot write '" + c.path("report") + "'");
    write_report_header(out);
    write_report_rows(out, report);
    log("eval", "NDCG@" + std::to_string(c.ks.front()) + " = " + detail::format_double(result.ndcg.front()) + " over " +
                    std::to_string(result.users_evaluated) + " users");
}

namespace detail {

struct StageSpec {
    std::string name;
    std::vector<std::string> inputs;
    std::vector<std::string> outputs;
    std::function<void(const PipelineConfig&, const StageLog&)> run;
};

inline std::vector<StageSpec> stage_specs(const PipelineConfig& c) {
    bool content = c.cgah_config().mode == CgahMode::content;
    std::vector<std::string> group_in{"factors"};
    std::vector<std::string> cgah_in{"train", "factors", "groups"};
    if (content) {
        group_in.push_back("encoders");
        cgah_in.push_back("encoders");
    }
    return {
        {"ingest", {}, {"ratings", "users", "items", "train", "test"}, stage_ingest},
        {"split", {"ratings", "users", "items"}, {"train", "test"}, stage_split},
        {"train-mf", {"train"}, {"factors"}, stage_train_mf},
        {"pretrain-dae", {"users", "items"}, {"encoders"}, stage_pretrain_dae},
        {"group", group_in, {"groups"}, stage_group},
        {"train-cgah", cgah_in, {"model", "trace"}, stage_train_cgah},
        {"eval", {"model", "train", "test"}, {"report"}, stage_eval},
    };
}

// Fingerprint of everything a stage depends on: its version, the config and
// the bytes of its inputs (and of external data files for ingest/content).
inline std::string stage_stamp(const PipelineConfig& c, const StageSpec& s) {
    Fnv1a h;
    h.update(s.name + "#" + std::to_string(stage_versions().at(s.name)) + "\n");
    h.update(to_ini(c, false));
    std::vector<std::string> files;
    for (const auto& in : s.inputs) files.push_back(c.path(in));
    if (s.name == "ingest") files.push_back(c.ratings);
    if (s.name == "pretrain-dae" || (c.cgah_config().mode == CgahMode::content && (s.name == "group" || s.name == "train-cgah"))) {
        files.push_back(c.user_content);
        files.push_back(c.item_content);
    }
    for (const auto& f : files) h.update(f + "=" + file_digest(f) + "\n");
    return hex64(h.digest());
}

}  // namespace detail

struct PipelineResult {
    std::vector<std::string> ran;
    std::vector<std::string> skipped;
};

/// Runs the requested stages in dependency order. A stage is skipped when its
/// outputs exist and its stamp (config, version and input hashes) matches the
/// previous run. Artifacts of finished stages are kept if a later one fails.
inline PipelineResult run_pipeline(const PipelineConfig& c, const StageLog& log = {}) {
    c.validate();
    std::filesystem::create_directories(c.out);
    {
        std::ofstream snap(c.path("snapshot"));
        if (!snap) throw Error("cannot write '" + c.path("snapshot") + "'");
        snap << to_ini(c);
    }
    const bool content = c.cgah_config().mode == CgahMode::content;
    auto stamp_dir = std::filesystem::path(c.out) / ".stamps";
    std::filesystem::create_directories(stamp_dir);
    PipelineResult result;
    for (const auto& spec : detail::stage_specs(c)) {
        if (!c.wants(spec.name)) continue;
        if (spec.name == "pretrain-dae" && !content) {
            log(spec.name, "skipped (cf mode)");
            continue;
        }
        for (const auto& in : spec.inputs) {
            if (!std::filesystem::exists(c.path(in))) {
                throw ValidationError("stage " + spec.name + " needs '" + c.path(in) + "'; run the earlier stages first");
            }
        }
        auto stamp = detail::stage_stamp(c, spec);
        auto stamp_file = stamp_dir / spec.name;
        bool outputs_exist = std::all_of(spec.outputs.begin(), spec.outputs.end(),
                                         [&](const std::string& o) { return std::filesystem::exists(c.path(o)); });
        if (outputs_exist && std::filesystem::exists(stamp_file) && detail::read_file(stamp_file.string()) == stamp) {
            log(spec.name, "up to date");
            result.skipped.push_back(spec.name);
            continue;
        }
        std::filesystem::remove(stamp_file);
        spec.run(c, log);
        detail::write_file(stamp_file.string(), stamp);
        result.ran.push_back(spec.name);
    }
    return result;
}

}  // namespace cgah
