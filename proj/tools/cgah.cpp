// cgah: command-line front end for the group-aware hashing pipeline.

#include <cgah/bench.hpp>
#include <cgah/experiment.hpp>
#include <cgah/pipeline.hpp>
#include <cgah/synthetic.hpp>

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitRuntime = 3;

using Overrides = std::vector<std::pair<std::string, std::string>>;

// Registers --flag as an override of a config key.
void bind_flag(CLI::App* sub, Overrides& ov, const std::string& flag, const std::string& key, const std::string& help) {
    sub->add_option_function<std::string>(
        flag, [&ov, key](const std::string& v) { ov.emplace_back(key, v); }, help);
}

struct Globals {
    std::string config;
    int threads = 0;
    bool quiet = false;
};

cgah::PipelineConfig build_config(const Globals& g, const Overrides& ov, std::vector<std::string> stages) {
    cgah::PipelineConfig c;
    if (!g.config.empty()) c = cgah::load_config(g.config);
    for (const auto& [k, v] : ov) cgah::apply_setting(c, k, v);
    if (g.threads > 0) c.threads = g.threads;
    if (!stages.empty()) c.stages = std::move(stages);
    c.validate();
    return c;
}

cgah::StageLog make_log(const Globals& g) {
    cgah::StageLog log;
    if (g.quiet) log.out = nullptr;
    return log;
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path);
    if (!out) throw cgah::Error("cannot write '" + path + "'");
    return out;
}

// Synthetic dataset on disk: ratings.tsv with string ids, plus optional
// bag-of-words documents whose words depend on the planted group.
void write_synthetic(const std::string& dir, const cgah::SyntheticSpec& spec, bool content) {
    std::filesystem::create_directories(dir);
    auto data = cgah::make_grouped_ratings(spec);
    auto out = open_out((std::filesystem::path(dir) / "ratings.tsv").string());
    for (const auto& r : data.ratings) {
        out << 'u' << r.user << "\ti" << r.item << '\t' << cgah::detail::format_double(r.value) << '\n';
    }
    if (!content) return;
    std::mt19937_64 rng(spec.seed + 1);
    auto docs = [&](const std::string& name, char prefix, const std::vector<std::uint32_t>& group) {
        auto f = open_out((std::filesystem::path(dir) / name).string());
        std::uniform_int_distribution<int> word(0, 9);
        std::bernoulli_distribution own(0.7);
        std::uniform_int_distribution<std::uint32_t> any(0, static_cast<std::uint32_t>(spec.groups - 1));
        for (std::size_t e = 0; e < group.size(); ++e) {
            f << prefix << e << '\t';
            for (int w = 0; w < 20; ++w) {
                auto g = own(rng) ? group[e] : any(rng);
                f << (w ? " " : "") << "g" << g << "w" << word(rng);
            }
            f << '\n';
        }
    };
    docs("users.txt", 'u', data.user_group);
    docs("items.txt", 'i', data.item_group);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Collaborative group-aware hashing: train binary user/item codes and rank items by Hamming similarity"};
    app.require_subcommand(1);
    app.fallthrough();
    Globals g;
    app.add_option("--config", g.config, "key = value config file (flags override it)");
    app.add_option("--threads", g.threads, "worker threads (1 = deterministic)")->check(CLI::PositiveNumber);
    app.add_flag("-q,--quiet", g.quiet, "no progress messages");

    Overrides ov;
    std::function<int()> action;

    auto* ingest = app.add_subcommand("ingest", "parse, filter and split a rating file");
    bind_flag(ingest, ov, "--ratings", "data.ratings", "rating file");
    bind_flag(ingest, ov, "--format", "data.format", "movielens-dat | amazon-csv | tsv");
    bind_flag(ingest, ov, "--min-degree", "data.min_degree", "drop users/items with fewer ratings");
    bind_flag(ingest, ov, "--fraction", "split.fraction", "training share per user");
    bind_flag(ingest, ov, "--seed", "split.seed", "split seed");
    bind_flag(ingest, ov, "--out", "run.out", "output directory");
    ingest->callback([&] {
        action = [&] {
            auto c = build_config(g, ov, {"ingest"});
            cgah::stage_ingest(c, make_log(g));
            return 0;
        };
    });

    auto* split = app.add_subcommand("split", "re-split ratings.tsv into train.tsv and test.tsv");
    bind_flag(split, ov, "--fraction", "split.fraction", "training share per user");
    bind_flag(split, ov, "--seed", "split.seed", "split seed");
    bind_flag(split, ov, "--out", "run.out", "directory holding ratings.tsv and the id maps");
    split->callback([&] {
        action = [&] {
            cgah::stage_split(build_config(g, ov, {"split"}), make_log(g));
            return 0;
        };
    });

    auto* mf = app.add_subcommand("train-mf", "alternating least squares factorization");
    bind_flag(mf, ov, "--dim", "mf.dim", "latent dimension");
    bind_flag(mf, ov, "--reg", "mf.reg", "ridge weight");
    bind_flag(mf, ov, "--iters", "mf.iters", "ALS sweeps");
    bind_flag(mf, ov, "--seed", "mf.seed", "init seed");
    bind_flag(mf, ov, "--dir", "run.out", "working directory");
    bind_flag(mf, ov, "--train", "files.train", "training tsv");
    bind_flag(mf, ov, "--out", "files.factors", "factor file");
    mf->callback([&] {
        action = [&] {
            cgah::stage_train_mf(build_config(g, ov, {"train-mf"}), make_log(g));
            return 0;
        };
    });

    auto* group = app.add_subcommand("group", "k-means codebook and group profiles");
    bind_flag(group, ov, "--kappa", "group.kappa", "number of groups");
    bind_flag(group, ov, "--seed", "group.seed", "k-means seed");
    bind_flag(group, ov, "--mode", "cgah.mode", "cf | content (content appends encoder embeddings)");
    bind_flag(group, ov, "--dir", "run.out", "working directory");
    bind_flag(group, ov, "--factors", "files.factors", "factor file");
    bind_flag(group, ov, "--out", "files.groups", "output model file");
    group->callback([&] {
        action = [&] {
            cgah::stage_group(build_config(g, ov, {"group"}), make_log(g));
            return 0;
        };
    });

    auto* dae = app.add_subcommand("pretrain-dae", "pretrain the user and item content autoencoders");
    bind_flag(dae, ov, "--embed-dim", "cgah.dim", "embedding size (equals the code length)");
    bind_flag(dae, ov, "--corruption", "dae.corruption", "share of inputs zeroed");
    bind_flag(dae, ov, "--epochs", "dae.epochs", "SGD epochs");
    bind_flag(dae, ov, "--lr", "dae.lr", "learning rate");
    bind_flag(dae, ov, "--seed", "dae.seed", "seed");
    bind_flag(dae, ov, "--user-content", "data.user_content", "user documents (id<TAB>text)");
    bind_flag(dae, ov, "--item-content", "data.item_content", "item documents (id<TAB>text)");
    bind_flag(dae, ov, "--vocab-size", "data.vocab_size", "vocabulary size");
    bind_flag(dae, ov, "--dir", "run.out", "working directory");
    bind_flag(dae, ov, "--out", "files.encoders", "output model file");
    dae->callback([&] {
        action = [&] {
            auto ov2 = ov;
            ov2.emplace_back("cgah.mode", "content");
            cgah::stage_pretrain_dae(build_config(g, ov2, {"pretrain-dae"}), make_log(g));
            return 0;
        };
    });

    auto* cg = app.add_subcommand("train-cgah", "learn binary codes");
    bind_flag(cg, ov, "--mode", "cgah.mode", "cf | content");
    cg->add_option_function<std::string>(
        "--dim",
        [&](const std::string& v) {
            ov.emplace_back("cgah.dim", v);
            ov.emplace_back("mf.dim", v);
        },
        "code length r");
    bind_flag(cg, ov, "--kappa", "group.kappa", "number of groups (recorded in the manifest)");
    bind_flag(cg, ov, "--alpha", "cgah.alpha", "user delegate weight or auto");
    bind_flag(cg, ov, "--beta", "cgah.beta", "item delegate weight or auto");
    bind_flag(cg, ov, "--lambda1", "cgah.lambda1", "user content weight");
    bind_flag(cg, ov, "--lambda2", "cgah.lambda2", "item content weight");
    bind_flag(cg, ov, "--outer-iters", "cgah.outer_iters", "maximum outer iterations");
    bind_flag(cg, ov, "--inner-sweeps", "cgah.inner_sweeps", "maximum DCD sweeps per code");
    bind_flag(cg, ov, "--rating-scale", "cgah.rating_scale", "divide ratings by this (auto = largest rating)");
    bind_flag(cg, ov, "--seed", "cgah.seed", "seed");
    bind_flag(cg, ov, "--user-content", "data.user_content", "user documents (content mode)");
    bind_flag(cg, ov, "--item-content", "data.item_content", "item documents (content mode)");
    bind_flag(cg, ov, "--dir", "run.out", "working directory");
    bind_flag(cg, ov, "--train", "files.train", "training tsv");
    bind_flag(cg, ov, "--factors", "files.factors", "factor file");
    bind_flag(cg, ov, "--groups", "files.groups", "group model file");
    bind_flag(cg, ov, "--encoders", "files.encoders", "encoder model file (content mode)");
    bind_flag(cg, ov, "--trace", "files.trace", "objective trace csv");
    bind_flag(cg, ov, "--out", "files.model", "output model file");
    cg->callback([&] {
        action = [&] {
            cgah::stage_train_cgah(build_config(g, ov, {"train-cgah"}), make_log(g));
            return 0;
        };
    });

    auto* ev = app.add_subcommand("eval", "NDCG@k on held-out ratings");
    bind_flag(ev, ov, "--model", "files.model", "model file");
    bind_flag(ev, ov, "--train", "files.train", "training tsv (items excluded from ranking)");
    bind_flag(ev, ov, "--test", "files.test", "test tsv");
    bind_flag(ev, ov, "--k", "eval.k", "comma-separated cutoffs");
    bind_flag(ev, ov, "--fraction", "split.fraction", "split fraction recorded in the report");
    bind_flag(ev, ov, "--dir", "run.out", "working directory");
    bind_flag(ev, ov, "--out", "files.report", "report csv");
    ev->callback([&] {
        action = [&] {
            cgah::stage_eval(build_config(g, ov, {"eval"}), make_log(g));
            return 0;
        };
    });

    auto* rec = app.add_subcommand("recommend", "top-k items for one user");
    std::string rec_user;
    std::size_t rec_k = 10;
    rec->add_option("--user", rec_user, "user id as in the source data")->required();
    rec->add_option("--k", rec_k, "list length")->check(CLI::PositiveNumber);
    bind_flag(rec, ov, "--model", "files.model", "model file");
    bind_flag(rec, ov, "--dir", "run.out", "working directory (id maps, train.tsv)");
    rec->callback([&] {
        action = [&] {
            auto c = build_config(g, ov, {});
            auto model = cgah::load_model(c.path("model"));
            auto users = cgah::read_id_map(c.path("users"));
            auto items = cgah::read_id_map(c.path("items"));
            auto idx = users.find(rec_user);
            if (!idx) throw cgah::ValidationError("unknown user '" + rec_user + "'");
            cgah::ModelRanker ranker(model);
            if (*idx >= ranker.users()) throw cgah::ValidationError("user '" + rec_user + "' is not in the model");
            std::vector<char> excluded;
            if (std::filesystem::exists(c.path("train"))) {
                auto train = cgah::read_indexed_tsv(c.path("train"), users.size(), items.size());
                excluded = cgah::rated_mask(train, *idx, ranker.items());
            }
            auto top = cgah::top_k_scan(
                ranker.items(), rec_k, [&](std::size_t j) { return ranker.score(*idx, j); }, excluded, c.threads);
            for (std::size_t p = 0; p < top.size(); ++p) {
                std::cout << p + 1 << '\t' << items.ids.at(top[p].item) << '\t'
                          << cgah::detail::format_double(top[p].score) << '\n';
            }
            return 0;
        };
    });

    auto* bench = app.add_subcommand("bench", "top-k scan latency: popcount vs float dot products");
    cgah::BenchSpec bspec;
    std::string bench_out;
    bench->add_option("--items", bspec.items, "catalogue size")->check(CLI::Range(1000, 100000000));
    bench->add_option("--dim", bspec.bits, "code length / vector dimension")->check(CLI::PositiveNumber);
    bench->add_option("--queries", bspec.queries, "timed queries per mode")->check(CLI::PositiveNumber);
    bench->add_option("--k", bspec.k, "list length")->check(CLI::PositiveNumber);
    bench->add_option("--kappa", bspec.kappa, "groups for the affinity-weighted mode")->check(CLI::PositiveNumber);
    bench->add_option("--seed", bspec.seed, "data seed");
    bench->add_option("--out", bench_out, "also write the table as csv");
    bench->callback([&] {
        action = [&] {
            auto report = cgah::bench_retrieval(bspec);
            auto print = [&](std::ostream& o) {
                o << "mode,items,r,mean_us,median_us,p99_us,speedup,bytes_per_entity\n";
                for (const auto& t : report.modes) {
                    o << to_string(t.mode) << ',' << report.items << ',' << report.bits << ','
                      << cgah::detail::format_double(t.mean_seconds * 1e6) << ','
                      << cgah::detail::format_double(t.median_seconds * 1e6) << ','
                      << cgah::detail::format_double(t.p99_seconds * 1e6) << ','
                      << cgah::detail::format_double(t.speedup) << ',' << t.bytes_per_entity << '\n';
                }
            };
            print(std::cout);
            if (!bench_out.empty()) {
                auto f = open_out(bench_out);
                print(f);
            }
            if (!report.rankings_match) {
                std::cerr << "popcount ranking disagrees with the arithmetic ranking\n";
                return kExitRuntime;
            }
            return 0;
        };
    });

    auto* sweep = app.add_subcommand("sweep", "sparsity sweep over models and split fractions");
    std::string fractions = "0.1,0.5,0.9";
    std::string models = "mf,mf-ga,cgah-cf";
    int repeats = 5;
    std::uint64_t sweep_seed = 42;
    std::string sweep_out, summary_out;
    sweep->add_option("--fractions", fractions, "training fractions");
    sweep->add_option("--models", models, "mf, mf-ga, cgah-cf, cgah-cf-flat, cgah");
    sweep->add_option("--repeats", repeats, "random splits per fraction")->check(CLI::PositiveNumber);
    sweep->add_option("--seed", sweep_seed, "base seed");
    sweep->add_option("--out", sweep_out, "raw csv (model,fraction,repeat,k,ndcg)");
    sweep->add_option("--summary", summary_out, "mean/std csv per model, fraction and k");
    bind_flag(sweep, ov, "--dir", "run.out", "directory with ratings.tsv and id maps");
    bind_flag(sweep, ov, "--k", "eval.k", "comma-separated cutoffs");
    sweep->callback([&] {
        action = [&] {
            auto c = build_config(g, ov, {});
            std::vector<double> fr;
            for (const auto& f : cgah::detail::split_list(fractions)) fr.push_back(cgah::detail::parse_real("fractions", f));
            std::vector<cgah::ModelKind> kinds;
            bool content = false;
            for (const auto& m : cgah::detail::split_list(models)) {
                kinds.push_back(cgah::parse_model_kind(m));
                content = content || kinds.back() == cgah::ModelKind::cgah;
            }
            if (content && (c.user_content.empty() || c.item_content.empty())) {
                throw cgah::ValidationError("the cgah model needs [data] user_content and item_content");
            }
            cgah::ExperimentConfig ex;
            ex.mf = c.mf;
            ex.cgah = c.cgah_config();
            ex.dae = c.dae;
            ex.group_iters = c.group_iters;
            ex.ks = c.ks;
            ex.threads = c.threads;
            auto ratings = cgah::detail::load_split(c, "ratings");
            std::optional<cgah::ContentPair> cp;
            if (content) cp = cgah::detail::load_content(c, make_log(g));
            auto reports = cgah::sparsity_sweep(ratings, fr, kinds, repeats, ex, sweep_seed, cp ? &*cp : nullptr);
            auto emit = [&](std::ostream& o) {
                cgah::write_report_header(o);
                for (const auto& r : reports) cgah::write_report_rows(o, r);
            };
            if (sweep_out.empty()) {
                emit(std::cout);
            } else {
                auto f = open_out(sweep_out);
                emit(f);
            }
            if (!summary_out.empty()) {
                auto f = open_out(summary_out);
                cgah::write_summary(f, reports);
            }
            return 0;
        };
    });

    auto* run = app.add_subcommand("run", "run the configured stages in order, skipping up-to-date ones");
    bind_flag(run, ov, "--out", "run.out", "output directory");
    bind_flag(run, ov, "--stages", "run.stages", "comma-separated stage list");
    run->callback([&] {
        action = [&] {
            auto c = build_config(g, ov, {});
            auto result = cgah::run_pipeline(c, make_log(g));
            if (!g.quiet) {
                std::cerr << "ran " << result.ran.size() << " stage(s), " << result.skipped.size() << " up to date\n";
            }
            return 0;
        };
    });

    auto* synth = app.add_subcommand("synth", "write a synthetic rating set with planted groups");
    cgah::SyntheticSpec sspec;
    std::string synth_out;
    bool synth_content = false;
    synth->add_option("--out", synth_out, "output directory")->required();
    synth->add_option("--users", sspec.users, "users")->check(CLI::PositiveNumber);
    synth->add_option("--items", sspec.items, "items")->check(CLI::PositiveNumber);
    synth->add_option("--groups", sspec.groups, "planted groups")->check(CLI::PositiveNumber);
    synth->add_option("--density", sspec.density, "share of items each user rates");
    synth->add_option("--noise", sspec.noise, "rating noise standard deviation");
    synth->add_option("--seed", sspec.seed, "seed");
    synth->add_flag("--content", synth_content, "also write users.txt and items.txt documents");
    synth->callback([&] {
        action = [&] {
            write_synthetic(synth_out, sspec, synth_content);
            return 0;
        };
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitValidation;
    }

    try {
        return action ? action() : 0;
    } catch (const cgah::ValidationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitValidation;
    } catch (const cgah::ParseError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitValidation;
    } catch (const cgah::EmptyDatasetError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitValidation;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
}
