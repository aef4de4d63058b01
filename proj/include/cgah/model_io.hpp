#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "common.hpp"
#include "delegate.hpp"
#include "encoder.hpp"
#include "evaluation.hpp"
#include "factorization.hpp"
#include "grouping.hpp"
#include "hashcodes.hpp"

namespace cgah {

static_assert(std::endian::native == std::endian::little, "model files are written in host order");

namespace detail {

class Writer {
public:
    template <typename T>
    void put(T v) {
        char buf[sizeof(T)];
        std::memcpy(buf, &v, sizeof(T));
        out_.append(buf, sizeof(T));
    }
    void bytes(const void* p, std::size_t n) { out_.append(static_cast<const char*>(p), n); }
    void doubles(const double* p, std::size_t n) { bytes(p, n * sizeof(double)); }
    std::string& str() { return out_; }

private:
    std::string out_;
};

class Reader {
public:
    Reader(std::string_view data, std::string what) : data_(data), what_(std::move(what)) {}

    template <typename T>
    T get() {
        T v;
        need(sizeof(T));
        std::memcpy(&v, data_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    void bytes(void* p, std::size_t n) {
        need(n);
        std::memcpy(p, data_.data() + pos_, n);
        pos_ += n;
    }
    void doubles(double* p, std::size_t n) {
        if (n > (data_.size() - pos_) / sizeof(double)) fail();
        bytes(p, n * sizeof(double));
    }
    bool done() const { return pos_ == data_.size(); }
    void expect_done() const {
        if (!done()) throw ValidationError(what_ + ": trailing bytes");
    }

private:
    void need(std::size_t n) const {
        if (n > data_.size() - pos_) fail();
    }
    [[noreturn]] void fail() const { throw ValidationError(what_ + ": truncated data"); }

    std::string_view data_;
    std::string what_;
    std::size_t pos_ = 0;
};

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::string& path, const std::string& data) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write '" + path + "'");
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    if (!out) throw Error("write to '" + path + "' failed");
}

inline void put_matrix_data(Writer& w, const RowMatrix& m) {
    w.doubles(m.data(), static_cast<std::size_t>(m.size()));
}

}  // namespace detail

// Factor file: "CGAHMF1\0", u64 n, u64 m, u64 r, then H and G as row-major float64.

inline constexpr char kFactorMagic[8] = {'C', 'G', 'A', 'H', 'M', 'F', '1', '\0'};

inline std::string encode_factors(const FactorMatrix& f) {
    detail::Writer w;
    w.bytes(kFactorMagic, sizeof(kFactorMagic));
    w.put<std::uint64_t>(static_cast<std::uint64_t>(f.users.rows()));
    w.put<std::uint64_t>(static_cast<std::uint64_t>(f.items.rows()));
    w.put<std::uint64_t>(f.dim());
    detail::put_matrix_data(w, f.users);
    detail::put_matrix_data(w, f.items);
    return std::move(w.str());
}

inline FactorMatrix decode_factors(std::string_view data) {
    detail::Reader r(data, "factor file");
    char magic[8];
    r.bytes(magic, sizeof(magic));
    if (std::memcmp(magic, kFactorMagic, sizeof(magic)) != 0) throw ValidationError("not a factor file (bad magic)");
    auto n = r.get<std::uint64_t>();
    auto m = r.get<std::uint64_t>();
    auto dim = r.get<std::uint64_t>();
    FactorMatrix f;
    f.users.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
    f.items.resize(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(dim));
    r.doubles(f.users.data(), static_cast<std::size_t>(n * dim));
    r.doubles(f.items.data(), static_cast<std::size_t>(m * dim));
    r.expect_done();
    return f;
}

inline void save_factors(const std::string& path, const FactorMatrix& f) { detail::write_file(path, encode_factors(f)); }
inline FactorMatrix load_factors(const std::string& path) { return decode_factors(detail::read_file(path)); }

// Block codecs.

inline std::string encode_matrix(const RowMatrix& m) {
    detail::Writer w;
    w.put<std::uint64_t>(static_cast<std::uint64_t>(m.rows()));
    w.put<std::uint64_t>(static_cast<std::uint64_t>(m.cols()));
    detail::put_matrix_data(w, m);
    return std::move(w.str());
}

inline RowMatrix decode_matrix(std::string_view data, const std::string& what = "matrix block") {
    detail::Reader r(data, what);
    auto rows = r.get<std::uint64_t>();
    auto cols = r.get<std::uint64_t>();
    RowMatrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    r.doubles(m.data(), static_cast<std::size_t>(rows * cols));
    r.expect_done();
    return m;
}

inline std::string encode_codes(const BinaryCodeSet& c) {
    detail::Writer w;
    w.put<std::uint64_t>(c.count());
    w.put<std::uint64_t>(c.bits());
    for (auto word : c.words()) w.put<std::uint64_t>(word);
    return std::move(w.str());
}

inline BinaryCodeSet decode_codes(std::string_view data, const std::string& what = "code block") {
    detail::Reader r(data, what);
    auto count = r.get<std::uint64_t>();
    auto bits = r.get<std::uint64_t>();
    if (bits < 1) throw ValidationError(what + ": code length is 0");
    std::vector<std::uint64_t> words(static_cast<std::size_t>(count * ((bits + 63) / 64)));
    r.bytes(words.data(), words.size() * sizeof(std::uint64_t));
    r.expect_done();
    return BinaryCodeSet::from_words(count, bits, std::move(words));
}

/// u64 input-dim, u64 embed-dim, f64 corruption, then w_enc, b_enc, w_dec,
/// b_dec (matrices row-major).
inline std::string encode_encoder(const EncoderParams& p) {
    detail::Writer w;
    w.put<std::uint64_t>(p.input_dim());
    w.put<std::uint64_t>(p.embed_dim());
    w.put<double>(p.corruption);
    RowMatrix enc = p.w_enc;
    RowMatrix dec = p.w_dec;
    detail::put_matrix_data(w, enc);
    w.doubles(p.b_enc.data(), static_cast<std::size_t>(p.b_enc.size()));
    detail::put_matrix_data(w, dec);
    w.doubles(p.b_dec.data(), static_cast<std::size_t>(p.b_dec.size()));
    return std::move(w.str());
}

inline EncoderParams decode_encoder(std::string_view data, const std::string& what = "encoder block") {
    detail::Reader r(data, what);
    auto in = r.get<std::uint64_t>();
    auto em = r.get<std::uint64_t>();
    auto p = EncoderParams::zeros(in, em);
    p.corruption = r.get<double>();
    RowMatrix enc(static_cast<Eigen::Index>(em), static_cast<Eigen::Index>(in));
    RowMatrix dec(static_cast<Eigen::Index>(in), static_cast<Eigen::Index>(em));
    r.doubles(enc.data(), static_cast<std::size_t>(enc.size()));
    r.doubles(p.b_enc.data(), static_cast<std::size_t>(em));
    r.doubles(dec.data(), static_cast<std::size_t>(dec.size()));
    r.doubles(p.b_dec.data(), static_cast<std::size_t>(in));
    r.expect_done();
    p.w_enc = enc;
    p.w_dec = dec;
    return p;
}

/// Manifest: sorted "key=value" lines.
inline std::string encode_manifest(const std::map<std::string, std::string>& m) {
    std::string out;
    for (const auto& [k, v] : m) {
        if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos) {
            throw ValidationError("manifest entry '" + k + "' contains a reserved character");
        }
        out += k + "=" + v + "\n";
    }
    return out;
}

inline std::map<std::string, std::string> decode_manifest(std::string_view data) {
    std::map<std::string, std::string> m;
    std::size_t pos = 0;
    while (pos < data.size()) {
        auto nl = data.find('\n', pos);
        if (nl == std::string_view::npos) nl = data.size();
        auto line = data.substr(pos, nl - pos);
        pos = nl + 1;
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string_view::npos) throw ValidationError("malformed manifest line");
        m.emplace(std::string(line.substr(0, eq)), std::string(line.substr(eq + 1)));
    }
    return m;
}

/// Named binary blocks, written in key order:
/// "CGAHMOD1", u32 block count, then per block u32 key length, key,
/// u64 payload length, payload.
class ModelFile {
public:
    void put(const std::string& key, std::string payload) {
        if (key.empty()) throw ValidationError("block key is empty");
        blocks_[key] = std::move(payload);
    }
    bool has(const std::string& key) const { return blocks_.count(key) != 0; }
    const std::string& get(const std::string& key) const {
        auto it = blocks_.find(key);
        if (it == blocks_.end()) throw ValidationError("model file has no block '" + key + "'");
        return it->second;
    }
    std::vector<std::string> keys() const {
        std::vector<std::string> out;
        for (const auto& [k, v] : blocks_) out.push_back(k);
        return out;
    }

    std::string serialize() const {
        detail::Writer w;
        w.bytes(kMagic, sizeof(kMagic));
        w.put<std::uint32_t>(static_cast<std::uint32_t>(blocks_.size()));
        for (const auto& [k, v] : blocks_) {
            w.put<std::uint32_t>(static_cast<std::uint32_t>(k.size()));
            w.bytes(k.data(), k.size());
            w.put<std::uint64_t>(v.size());
            w.bytes(v.data(), v.size());
        }
        return std::move(w.str());
    }

    static ModelFile parse(std::string_view data) {
        detail::Reader r(data, "model file");
        char magic[8];
        r.bytes(magic, sizeof(magic));
        if (std::memcmp(magic, kMagic, sizeof(magic)) != 0) throw ValidationError("not a model file (bad magic)");
        ModelFile f;
        auto count = r.get<std::uint32_t>();
        for (std::uint32_t b = 0; b < count; ++b) {
            std::string key(r.get<std::uint32_t>(), '\0');
            r.bytes(key.data(), key.size());
            auto len = r.get<std::uint64_t>();
            if (len > data.size()) throw ValidationError("model file: truncated data");
            std::string payload(static_cast<std::size_t>(len), '\0');
            r.bytes(payload.data(), payload.size());
            f.blocks_[key] = std::move(payload);
        }
        r.expect_done();
        return f;
    }

    void save(const std::string& path) const { detail::write_file(path, serialize()); }
    static ModelFile load(const std::string& path) { return parse(detail::read_file(path)); }

private:
    static constexpr char kMagic[8] = {'C', 'G', 'A', 'H', 'M', 'O', 'D', '1'};
    std::map<std::string, std::string> blocks_;
};

/// Everything a trained model may carry. `kind` is one of mf, mf-ga,
/// cgah-cf, cgah.
struct Model {
    std::string kind;
    std::optional<FactorMatrix> factors;
    std::optional<GroupModel> groups;
    std::optional<BinaryCodeSet> user_codes;
    std::optional<BinaryCodeSet> item_codes;
    std::optional<DelegatePair> delegates;
    std::optional<EncoderParams> user_encoder;
    std::optional<EncoderParams> item_encoder;
    std::optional<double> constant_affinity;
    std::map<std::string, std::string> manifest;
};

inline ModelFile to_model_file(const Model& model) {
    ModelFile f;
    auto manifest = model.manifest;
    manifest["kind"] = model.kind;
    if (model.constant_affinity) manifest["constant_affinity"] = detail::format_double(*model.constant_affinity);
    f.put("MANIFEST", encode_manifest(manifest));
    if (model.factors) {
        f.put("H", encode_matrix(model.factors->users));
        f.put("G", encode_matrix(model.factors->items));
    }
    if (model.groups) {
        f.put("K", encode_matrix(model.groups->codebook.centroids()));
        f.put("P", encode_matrix(model.groups->users.rows));
        f.put("Q", encode_matrix(model.groups->items.rows));
    }
    if (model.user_codes) f.put("B", encode_codes(*model.user_codes));
    if (model.item_codes) f.put("D", encode_codes(*model.item_codes));
    if (model.delegates) {
        f.put("X", encode_matrix(model.delegates->users));
        f.put("Y", encode_matrix(model.delegates->items));
    }
    if (model.user_encoder) f.put("ENC_U", encode_encoder(*model.user_encoder));
    if (model.item_encoder) f.put("ENC_I", encode_encoder(*model.item_encoder));
    return f;
}

inline Model from_model_file(const ModelFile& f) {
    Model model;
    model.manifest = decode_manifest(f.get("MANIFEST"));
    auto kind = model.manifest.find("kind");
    if (kind == model.manifest.end()) throw ValidationError("model manifest has no kind");
    model.kind = kind->second;
    if (auto c = model.manifest.find("constant_affinity"); c != model.manifest.end()) {
        auto v = detail::parse_double(c->second);
        if (!v) throw ValidationError("bad constant_affinity in manifest");
        model.constant_affinity = *v;
    }
    if (f.has("H")) model.factors = FactorMatrix{decode_matrix(f.get("H"), "block H"), decode_matrix(f.get("G"), "block G")};
    if (f.has("K")) {
        GroupModel g;
        g.codebook = Codebook(decode_matrix(f.get("K"), "block K"));
        g.users.rows = decode_matrix(f.get("P"), "block P");
        g.items.rows = decode_matrix(f.get("Q"), "block Q");
        model.groups = std::move(g);
    }
    if (f.has("B")) model.user_codes = decode_codes(f.get("B"), "block B");
    if (f.has("D")) model.item_codes = decode_codes(f.get("D"), "block D");
    if (f.has("X")) model.delegates = DelegatePair{decode_matrix(f.get("X"), "block X"), decode_matrix(f.get("Y"), "block Y")};
    if (f.has("ENC_U")) model.user_encoder = decode_encoder(f.get("ENC_U"), "block ENC_U");
    if (f.has("ENC_I")) model.item_encoder = decode_encoder(f.get("ENC_I"), "block ENC_I");
    return model;
}

inline void save_model(const std::string& path, const Model& model) { to_model_file(model).save(path); }
inline Model load_model(const std::string& path) { return from_model_file(ModelFile::load(path)); }

/// Scores with whatever the model kind calls for.
class ModelRanker {
public:
    explicit ModelRanker(const Model& model) : model_(&model) {
        const auto& k = model.kind;
        if (k == "mf") {
            require(model.factors.has_value(), "factors");
        } else if (k == "mf-ga") {
            require(model.factors && model.groups, "factors and groups");
        } else if (k == "cgah-cf" || k == "cgah-cf-flat" || k == "cgah") {
            require(model.user_codes && model.item_codes, "codes");
            require(model.groups || model.constant_affinity, "groups");
        } else {
            throw ValidationError("unknown model kind '" + k + "'");
        }
    }

    std::size_t users() const {
        return model_->user_codes ? model_->user_codes->count() : static_cast<std::size_t>(model_->factors->users.rows());
    }
    std::size_t items() const {
        return model_->item_codes ? model_->item_codes->count() : static_cast<std::size_t>(model_->factors->items.rows());
    }

    double score(std::size_t i, std::size_t j) const {
        const auto& k = model_->kind;
        if (k == "mf") return MfRanker{&*model_->factors}.score(i, j);
        if (k == "mf-ga") return MfGaRanker{&*model_->factors, &*model_->groups}.score(i, j);
        const GroupModel* g = model_->groups ? &*model_->groups : nullptr;
        return HashRanker{&*model_->user_codes, &*model_->item_codes, g, model_->constant_affinity}.score(i, j);
    }

private:
    void require(bool ok, const char* what) const {
        if (!ok) throw ValidationError("model of kind '" + model_->kind + "' lacks " + what);
    }
    const Model* model_;
};

}  // namespace cgah
