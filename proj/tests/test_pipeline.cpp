#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cgah/pipeline.hpp"
#include "cgah/synthetic.hpp"

using namespace cgah;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    auto dir = fs::temp_directory_path() / "cgah_pipeline_test" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string write_synthetic(const fs::path& dir, std::size_t users, std::uint64_t seed) {
    SyntheticSpec spec;
    spec.users = users;
    spec.items = 80;
    spec.density = 0.25;
    spec.seed = seed;
    auto path = (dir / "src.tsv").string();
    std::ofstream out(path);
    for (const auto& r : make_grouped_ratings(spec).ratings) {
        out << 'u' << r.user << "\ti" << r.item << '\t' << detail::format_double(r.value) << '\n';
    }
    return path;
}

PipelineConfig small_config(const fs::path& dir, const std::string& ratings) {
    PipelineConfig c;
    c.ratings = ratings;
    c.min_degree = 3;
    c.out = (dir / "out").string();
    c.mf.dim = 8;
    c.mf.iterations = 10;
    c.cgah.bits = 8;
    c.cgah.kappa = 4;
    c.cgah.max_outer_iters = 5;
    c.ks = {5, 10};
    return c;
}

int run_cli(const std::string& args) {
    const char* cli = std::getenv("CGAH_CLI");
    if (!cli) return -1;
    int status = std::system((std::string(cli) + " -q " + args + " >/dev/null 2>&1").c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

}  // namespace

TEST(Config, UnknownKeyAndBadValues) {
    PipelineConfig c;
    EXPECT_THROW(apply_setting(c, "mf.rank", "10"), ValidationError);
    EXPECT_THROW(apply_setting(c, "mf.dim", "ten"), ValidationError);
    EXPECT_THROW(apply_setting(c, "data.format", "xml"), ValidationError);
    apply_setting(c, "files.train", "/tmp/t.tsv");
    EXPECT_EQ(c.path("train"), "/tmp/t.tsv");
    EXPECT_THROW(c.path("weights"), ValidationError);
}

TEST(Config, IniThenOverride) {
    std::istringstream ini("[mf]\ndim = 16\nreg = 0.5\n[cgah]\ndim = 16\nalpha = auto\n[eval]\nk = 5,10\n");
    PipelineConfig c;
    apply_ini(c, ini);
    EXPECT_EQ(c.mf.dim, 16u);
    EXPECT_EQ(c.mf.reg, 0.5);
    EXPECT_EQ(c.ks, (std::vector<std::size_t>{5, 10}));
    apply_setting(c, "mf.reg", "0.25");
    EXPECT_EQ(c.mf.reg, 0.25);
    std::istringstream orphan("dim = 3\n");
    PipelineConfig d;
    EXPECT_THROW(apply_ini(d, orphan), ValidationError);
}

TEST(Config, ResolvedIniReparsesToSameText) {
    PipelineConfig c;
    c.ratings = "r.tsv";
    c.mf.reg = 0.123;
    c.cgah.alpha = 0.01;
    c.lambda1 = 0.3;
    c.stages = {"split", "eval"};
    c.files["model"] = "m.cgah";
    auto text = to_ini(c);
    std::istringstream in(text);
    PipelineConfig back;
    apply_ini(back, in);
    EXPECT_EQ(to_ini(back), text);
    EXPECT_EQ(config_hash(back), config_hash(c));
}

TEST(Config, HashIgnoresPathsAndThreads) {
    PipelineConfig a, b;
    b.ratings = "elsewhere.tsv";
    b.out = "/somewhere";
    b.threads = 8;
    b.stages = {"eval"};
    EXPECT_EQ(config_hash(a), config_hash(b));
    b.mf.reg = 0.2;
    EXPECT_NE(config_hash(a), config_hash(b));
}

TEST(Config, Validation) {
    PipelineConfig c;
    c.ratings = "r.tsv";
    EXPECT_NO_THROW(c.validate());
    c.cgah.bits = 16;
    EXPECT_THROW(c.validate(), ValidationError);
    c.cgah.bits = 20;
    c.stages = {"train-everything"};
    EXPECT_THROW(c.validate(), ValidationError);
    c.stages = pipeline_stages();
    c.split.train_fraction = 1.0;
    EXPECT_THROW(c.validate(), ValidationError);
    c.split.train_fraction = 0.5;
    c.threads = 0;
    EXPECT_THROW(c.validate(), ValidationError);
}

TEST(Pipeline, ContentModeWithoutDocumentsFailsBeforeWriting) {
    auto dir = fresh_dir("content_missing");
    auto c = small_config(dir, write_synthetic(dir, 60, 1));
    c.cgah.mode = CgahMode::content;
    EXPECT_THROW(run_pipeline(c, StageLog{nullptr}), ValidationError);
    EXPECT_FALSE(fs::exists(c.out));
}

TEST(Pipeline, MissingInputsNameTheStage) {
    auto dir = fresh_dir("missing");
    auto c = small_config(dir, write_synthetic(dir, 60, 1));
    c.stages = {"eval"};
    EXPECT_THROW(run_pipeline(c, StageLog{nullptr}), ValidationError);
}

TEST(Pipeline, IngestWritesSplit) {
    auto dir = fresh_dir("ingest");
    auto c = small_config(dir, write_synthetic(dir, 60, 2));
    c.stages = {"ingest"};
    auto res = run_pipeline(c, StageLog{nullptr});
    EXPECT_EQ(res.ran, (std::vector<std::string>{"ingest"}));
    for (const char* a : {"ratings", "users", "items", "train", "test", "snapshot"}) EXPECT_TRUE(fs::exists(c.path(a))) << a;
    auto train = detail::load_split(c, "train");
    auto test = detail::load_split(c, "test");
    auto all = detail::read_file(c.path("ratings"));
    EXPECT_EQ(train.size() + test.size(), static_cast<std::size_t>(std::count(all.begin(), all.end(), '\n')));
}

TEST(Pipeline, FullCfRunThenSkipAndRerunOnChange) {
    auto dir = fresh_dir("full");
    auto c = small_config(dir, write_synthetic(dir, 100, 3));
    auto first = run_pipeline(c, StageLog{nullptr});
    EXPECT_EQ(first.ran, (std::vector<std::string>{"ingest", "split", "train-mf", "group", "train-cgah", "eval"}));
    for (const char* a : {"factors", "groups", "model", "trace", "report"}) EXPECT_TRUE(fs::exists(c.path(a))) << a;
    auto model = load_model(c.path("model"));
    EXPECT_EQ(model.kind, "cgah-cf");
    EXPECT_EQ(model.manifest.at("config_hash"), config_hash(c));
    auto report = slurp(c.path("report"));
    EXPECT_NE(report.find(",10,"), std::string::npos);

    auto before = slurp(c.path("model"));
    c.threads = 2;
    auto second = run_pipeline(c, StageLog{nullptr});
    EXPECT_TRUE(second.ran.empty());
    EXPECT_EQ(second.skipped.size(), 6u);
    EXPECT_EQ(slurp(c.path("model")), before);

    c.cgah.max_outer_iters = 2;
    auto third = run_pipeline(c, StageLog{nullptr});
    EXPECT_EQ(third.ran.size(), 6u);
}

TEST(Cli, ExitCodes) {
    if (!std::getenv("CGAH_CLI")) GTEST_SKIP() << "CGAH_CLI not set";
    auto dir = fresh_dir("cli");
    EXPECT_EQ(run_cli("synth --out " + dir.string() + " --users 60 --items 40"), 0);
    EXPECT_TRUE(fs::exists(dir / "ratings.tsv"));
    EXPECT_EQ(run_cli("train-mf --no-such-flag 3"), 2);
    EXPECT_EQ(run_cli("frobnicate"), 2);
    EXPECT_EQ(run_cli("bench --items 10"), 2);
    {
        std::ofstream bad((dir / "bad.ini").string());
        bad << "[mf]\nrank = 3\n";
    }
    EXPECT_EQ(run_cli("--config " + (dir / "bad.ini").string() + " run --out " + (dir / "o").string()), 2);
    EXPECT_EQ(run_cli("eval --dir " + (dir / "empty").string()), 2);

    std::ofstream((dir / "plain").string()) << "x";
    EXPECT_EQ(run_cli("ingest --ratings " + (dir / "ratings.tsv").string() + " --min-degree 2 --out " +
                      (dir / "plain" / "sub").string()),
              3);

    auto out = (dir / "run").string();
    EXPECT_EQ(run_cli("ingest --ratings " + (dir / "ratings.tsv").string() + " --min-degree 2 --out " + out), 0);
    EXPECT_TRUE(fs::exists(fs::path(out) / "train.tsv"));
}
