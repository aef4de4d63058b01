#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "cgah/model_io.hpp"

using namespace cgah;

namespace {

RowMatrix random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g;
    RowMatrix m(r, c);
    for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = g(rng);
    return m;
}

BinaryCodeSet codes(std::size_t n, std::size_t r, std::uint64_t seed) {
    return BinaryCodeSet::from_signs(random_matrix(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(r), seed));
}

GroupModel groups(std::size_t n, std::size_t m, std::size_t kappa, std::size_t dim) {
    return build_groups(random_matrix(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim), 1),
                        random_matrix(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(dim), 2), kappa, 3);
}

std::string temp_path(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / "cgah_model_io_test";
    std::filesystem::create_directories(dir);
    return (dir / name).string();
}

}  // namespace

TEST(Factors, RoundTripAndHeader) {
    FactorMatrix f{random_matrix(5, 3, 1), random_matrix(4, 3, 2)};
    auto bytes = encode_factors(f);
    EXPECT_EQ(bytes.substr(0, 7), "CGAHMF1");
    EXPECT_EQ(bytes.size(), 8 + 3 * 8 + (5 + 4) * 3 * 8u);
    auto back = decode_factors(bytes);
    EXPECT_EQ(back.users, f.users);
    EXPECT_EQ(back.items, f.items);
    auto path = temp_path("mf.bin");
    save_factors(path, f);
    EXPECT_EQ(load_factors(path).items, f.items);
}

TEST(Factors, RejectsBadInput) {
    FactorMatrix f{random_matrix(2, 2, 1), random_matrix(2, 2, 2)};
    auto bytes = encode_factors(f);
    auto bad = bytes;
    bad[0] = 'X';
    EXPECT_THROW(decode_factors(bad), ValidationError);
    EXPECT_THROW(decode_factors(bytes.substr(0, bytes.size() - 1)), ValidationError);
    EXPECT_THROW(decode_factors(bytes + "x"), ValidationError);
}

TEST(Blocks, MatrixCodesEncoderManifest) {
    auto m = random_matrix(3, 7, 4);
    EXPECT_EQ(decode_matrix(encode_matrix(m)), m);
    for (std::size_t r : {5, 64, 70}) {
        auto c = codes(9, r, r);
        EXPECT_EQ(decode_codes(encode_codes(c)), c);
    }
    auto e = EncoderParams::random(6, 4, 5);
    e.b_enc.setConstant(0.25);
    e.corruption = 0.3;
    EXPECT_EQ(decode_encoder(encode_encoder(e)), e);
    std::map<std::string, std::string> man{{"kind", "cgah-cf"}, {"r", "20"}};
    EXPECT_EQ(decode_manifest(encode_manifest(man)), man);
}

TEST(ModelFile, BlocksInKeyOrderAndDeterministic) {
    ModelFile f;
    f.put("Q", "qq");
    f.put("B", "bbb");
    f.put("MANIFEST", "");
    EXPECT_EQ(f.keys(), (std::vector<std::string>{"B", "MANIFEST", "Q"}));
    auto s = f.serialize();
    EXPECT_EQ(s.substr(0, 8), "CGAHMOD1");
    auto g = ModelFile::parse(s);
    EXPECT_EQ(g.get("B"), "bbb");
    EXPECT_EQ(g.serialize(), s);
    EXPECT_THROW(g.get("X"), ValidationError);
    EXPECT_THROW(ModelFile::parse(s.substr(0, s.size() - 1)), ValidationError);
    EXPECT_THROW(ModelFile::parse("CGAHMOD2" + s.substr(8)), ValidationError);
}

TEST(Model, CgahRoundTripAndRanking) {
    Model m;
    m.kind = "cgah-cf";
    m.groups = groups(12, 10, 3, 4);
    m.user_codes = codes(12, 8, 6);
    m.item_codes = codes(10, 8, 7);
    m.delegates = DelegatePair{update_delegate(*m.user_codes), RowMatrix::Zero(10, 8)};
    m.manifest = {{"kind", "cgah-cf"}, {"config_hash", "abc"}};
    auto path = temp_path("model.cgah");
    save_model(path, m);
    auto back = load_model(path);
    EXPECT_EQ(back.kind, "cgah-cf");
    EXPECT_EQ(*back.user_codes, *m.user_codes);
    EXPECT_EQ(back.delegates->users, m.delegates->users);
    EXPECT_EQ(back.groups->users.rows, m.groups->users.rows);
    EXPECT_EQ(back.groups->codebook.centroids(), m.groups->codebook.centroids());
    EXPECT_EQ(to_model_file(back).serialize(), to_model_file(m).serialize());
    ModelRanker a(m), b(back);
    HashRanker direct{&*m.user_codes, &*m.item_codes, &*m.groups, std::nullopt};
    for (std::size_t i = 0; i < 12; ++i) {
        for (std::size_t j = 0; j < 10; ++j) {
            EXPECT_EQ(a.score(i, j), direct.score(i, j));
            EXPECT_EQ(b.score(i, j), direct.score(i, j));
        }
    }
}

TEST(Model, OtherKinds) {
    Model mf;
    mf.kind = "mf";
    mf.factors = FactorMatrix{random_matrix(4, 3, 8), random_matrix(5, 3, 9)};
    auto back = from_model_file(ModelFile::parse(to_model_file(mf).serialize()));
    ModelRanker r(back);
    EXPECT_EQ(r.users(), 4u);
    EXPECT_EQ(r.items(), 5u);
    EXPECT_EQ(r.score(1, 2), predict_mf(*mf.factors, 1, 2));

    Model ga = mf;
    ga.kind = "mf-ga";
    ga.groups = groups(4, 5, 2, 3);
    ModelRanker g(ga);
    EXPECT_EQ(g.score(1, 2), ga.groups->affinity(1, 2) * predict_mf(*mf.factors, 1, 2));

    Model flat;
    flat.kind = "cgah-cf-flat";
    flat.user_codes = codes(3, 8, 1);
    flat.item_codes = codes(4, 8, 2);
    flat.constant_affinity = logistic(1.0);
    auto fb = from_model_file(ModelFile::parse(to_model_file(flat).serialize()));
    ASSERT_TRUE(fb.constant_affinity.has_value());
    EXPECT_EQ(*fb.constant_affinity, logistic(1.0));
    EXPECT_EQ(ModelRanker(fb).score(0, 1), logistic(1.0) * hamming_similarity(*flat.user_codes, 0, *flat.item_codes, 1));

    Model content;
    content.kind = "cgah";
    content.groups = groups(3, 4, 2, 5);
    content.user_codes = flat.user_codes;
    content.item_codes = flat.item_codes;
    content.user_encoder = EncoderParams::random(6, 8, 1);
    content.item_encoder = EncoderParams::random(7, 8, 2);
    auto cb = from_model_file(ModelFile::parse(to_model_file(content).serialize()));
    EXPECT_EQ(*cb.item_encoder, *content.item_encoder);

    Model broken;
    broken.kind = "cgah-cf";
    EXPECT_THROW(ModelRanker{broken}, ValidationError);
    broken.kind = "lsh";
    EXPECT_THROW(ModelRanker{broken}, ValidationError);
}
