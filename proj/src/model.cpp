#include "mata/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>

#include "config_kv.hpp"
#include "mata/errors.hpp"

namespace mata {

void ModelConfig::validate() const {
    auto require = [](bool ok, const char* what) {
        if (!ok) throw ConfigError(std::string("invalid model config: ") + what);
    };
    require(n_layers >= 1, "n_layers must be >= 1");
    require(n_heads >= 1, "n_heads must be >= 1");
    require(d_model >= 1, "d_model must be >= 1");
    require(d_ff >= 1, "d_ff must be >= 1");
    require(max_seq_len >= 1, "max_seq_len must be >= 1");
    require(vocab_size >= 4, "vocab_size must be >= 4");
    require(d_model % n_heads == 0, "d_model must equal n_heads * d_head");
    require(d_head() % 2 == 0, "d_head must be even for rotary embedding");
    require(std::isfinite(norm_eps) && norm_eps > 0.0, "norm_eps must be finite and > 0");
}

namespace {

void check_matrix(const Matrix& m, std::size_t rows, std::size_t cols, const std::string& name) {
    if (m.rows() != rows || m.cols() != cols) {
        throw ConfigError(name + " has shape " + m.shape_string() + ", expected " +
                          std::to_string(rows) + "x" + std::to_string(cols));
    }
    for (double v : m.data()) {
        if (!std::isfinite(v)) throw ConfigError(name + " holds a non-finite value");
    }
}

void check_vector(const std::vector<double>& v, std::size_t n, const std::string& name) {
    if (v.size() != n) {
        throw ConfigError(name + " has length " + std::to_string(v.size()) + ", expected " +
                          std::to_string(n));
    }
    for (double x : v) {
        if (!std::isfinite(x)) throw ConfigError(name + " holds a non-finite value");
    }
}

// Visits every tensor in file order. Fn receives a span over the tensor storage.
template <typename W, typename Fn>
void for_each_tensor(W& w, Fn&& fn) {
    fn(w.token_embedding.data());
    for (auto& layer : w.layers) {
        fn(layer.wq.data());
        fn(layer.wk.data());
        fn(layer.wv.data());
        fn(layer.wo.data());
        fn(std::span(layer.attn_norm_gain));
        fn(std::span(layer.mlp_norm_gain));
        fn(layer.w_up.data());
        fn(layer.w_down.data());
    }
    fn(std::span(w.final_norm_gain));
    fn(w.lm_head.data());
}

ModelWeights allocate(const ModelConfig& c) {
    ModelWeights w;
    w.config = c;
    w.token_embedding = Matrix(c.vocab_size, c.d_model);
    w.layers.resize(c.n_layers);
    for (auto& l : w.layers) {
        l.wq = Matrix(c.d_model, c.d_model);
        l.wk = Matrix(c.d_model, c.d_model);
        l.wv = Matrix(c.d_model, c.d_model);
        l.wo = Matrix(c.d_model, c.d_model);
        l.attn_norm_gain.assign(c.d_model, 0.0);
        l.mlp_norm_gain.assign(c.d_model, 0.0);
        l.w_up = Matrix(c.d_model, 2 * c.d_ff);
        l.w_down = Matrix(c.d_ff, c.d_model);
    }
    w.final_norm_gain.assign(c.d_model, 0.0);
    w.lm_head = Matrix(c.d_model, c.vocab_size);
    return w;
}

}  // namespace

void ModelWeights::validate() const {
    config.validate();
    const auto& c = config;
    check_matrix(token_embedding, c.vocab_size, c.d_model, "token_embedding");
    if (layers.size() != c.n_layers) {
        throw ConfigError("model has " + std::to_string(layers.size()) + " layers, config says " +
                          std::to_string(c.n_layers));
    }
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto& l = layers[i];
        const std::string p = "layer " + std::to_string(i) + " ";
        check_matrix(l.wq, c.d_model, c.d_model, p + "wq");
        check_matrix(l.wk, c.d_model, c.d_model, p + "wk");
        check_matrix(l.wv, c.d_model, c.d_model, p + "wv");
        check_matrix(l.wo, c.d_model, c.d_model, p + "wo");
        check_vector(l.attn_norm_gain, c.d_model, p + "attn_norm_gain");
        check_vector(l.mlp_norm_gain, c.d_model, p + "mlp_norm_gain");
        check_matrix(l.w_up, c.d_model, 2 * c.d_ff, p + "w_up");
        check_matrix(l.w_down, c.d_ff, c.d_model, p + "w_down");
    }
    check_vector(final_norm_gain, c.d_model, "final_norm_gain");
    check_matrix(lm_head, c.d_model, c.vocab_size, "lm_head");
}

Xorshift64Star::Xorshift64Star(std::uint64_t seed) noexcept {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    z = z ^ (z >> 31);
    state_ = z == 0 ? 0x9E3779B97F4A7C15ULL : z;
}

std::uint64_t Xorshift64Star::next() noexcept {
    state_ ^= state_ >> 12;
    state_ ^= state_ << 25;
    state_ ^= state_ >> 27;
    return state_ * 0x2545F4914F6CDD1DULL;
}

double Xorshift64Star::uniform01() noexcept {
    return static_cast<double>(next() >> 11) * 0x1.0p-53;
}

double Xorshift64Star::uniform_symmetric(double bound) noexcept {
    return bound * (2.0 * uniform01() - 1.0);
}

ModelWeights gen_synthetic_weights(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    ModelWeights w = allocate(config);
    Xorshift64Star rng(seed);
    const double bound = 1.0 / std::sqrt(static_cast<double>(config.d_model));
    for_each_tensor(w, [&](std::span<double> t) {
        for (double& v : t) v = rng.uniform_symmetric(bound);
    });
    return w;
}

namespace {

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f64(std::vector<std::uint8_t>& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    std::uint64_t u64(const char* what) {
        need(8, what);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
        pos_ += 8;
        return v;
    }

    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }

    double f64(const char* what) { return std::bit_cast<double>(u64(what)); }

    std::size_t pos() const noexcept { return pos_; }
    std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

    void need(std::size_t n, const char* what) const {
        if (bytes_.size() - pos_ < n) {
            throw FormatError(std::string("truncated weight file while reading ") + what, pos_);
        }
    }

    std::span<const std::uint8_t> take(std::size_t n, const char* what) {
        need(n, what);
        auto s = bytes_.subspan(pos_, n);
        pos_ += n;
        return s;
    }

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> serialize_weights(const ModelWeights& w) {
    w.validate();
    std::vector<std::uint8_t> out{'M', 'A', 'T', 'A'};
    put_u32(out, kWeightFormatVersion);
    const auto& c = w.config;
    for (std::uint64_t v : {c.n_layers, c.n_heads, c.d_model, c.d_ff, c.vocab_size, c.max_seq_len}) {
        put_u64(out, v);
    }
    put_f64(out, c.norm_eps);
    for_each_tensor(w, [&](std::span<const double> t) {
        for (double v : t) put_f64(out, v);
    });
    return out;
}

ModelWeights deserialize_weights(std::span<const std::uint8_t> bytes) {
    Reader in(bytes);
    auto magic = in.take(4, "magic");
    if (std::memcmp(magic.data(), "MATA", 4) != 0) {
        throw FormatError("bad magic, expected \"MATA\"", 0);
    }
    const std::size_t version_at = in.pos();
    const auto version = in.u32("version");
    if (version != kWeightFormatVersion) {
        throw FormatError("unsupported weight format version " + std::to_string(version) +
                              ", expected " + std::to_string(kWeightFormatVersion),
                          version_at);
    }
    const std::size_t config_at = in.pos();
    ModelConfig c;
    c.n_layers = in.u64("n_layers");
    c.n_heads = in.u64("n_heads");
    c.d_model = in.u64("d_model");
    c.d_ff = in.u64("d_ff");
    c.vocab_size = in.u64("vocab_size");
    c.max_seq_len = in.u64("max_seq_len");
    c.norm_eps = in.f64("norm_eps");
    try {
        c.validate();
    } catch (const ConfigError& e) {
        throw FormatError(e.what(), config_at);
    }

    // Bound the allocation by what the file can actually hold.
    // Estimated in floating point first so corrupt dimensions cannot overflow the count.
    const auto dim = [](std::size_t v) { return static_cast<double>(v); };
    const double estimate =
        2 * dim(c.vocab_size) * dim(c.d_model) + dim(c.d_model) +
        dim(c.n_layers) * (4 * dim(c.d_model) * dim(c.d_model) + 2 * dim(c.d_model) +
                           3 * dim(c.d_model) * dim(c.d_ff));
    const std::uint64_t expected_values =
        estimate > static_cast<double>(in.remaining())
            ? std::numeric_limits<std::uint64_t>::max()
            : 2 * c.vocab_size * c.d_model + c.d_model +
                  c.n_layers * (4 * c.d_model * c.d_model + 2 * c.d_model + 3 * c.d_model * c.d_ff);
    if (in.remaining() / 8 < expected_values) {
        throw FormatError("truncated weight file: payload needs " +
                              (expected_values == std::numeric_limits<std::uint64_t>::max()
                                   ? "more than " + std::to_string(in.remaining())
                                   : std::to_string(expected_values * 8)) +
                              " bytes, " +
                              std::to_string(in.remaining()) + " available",
                          bytes.size());
    }
    ModelWeights w = allocate(c);
    for_each_tensor(w, [&](std::span<double> t) {
        for (double& v : t) v = in.f64("payload");
    });
    if (in.remaining() != 0) {
        throw FormatError("trailing bytes after weight payload", in.pos());
    }
    try {
        w.validate();
    } catch (const ConfigError& e) {
        throw FormatError(e.what(), config_at);
    }
    return w;
}

void save_weights(const ModelWeights& w, const std::filesystem::path& path) {
    const auto bytes = serialize_weights(w);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing " + path.string());
}

ModelWeights load_weights(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open model file " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return deserialize_weights(bytes);
}

namespace detail {

bool apply_config_entry(ModelConfig& c, const KvEntry& e, const std::string& source) {
    if (e.key == "n_layers") c.n_layers = parse_count(e, source);
    else if (e.key == "n_heads") c.n_heads = parse_count(e, source);
    else if (e.key == "d_model") c.d_model = parse_count(e, source);
    else if (e.key == "d_ff") c.d_ff = parse_count(e, source);
    else if (e.key == "vocab_size") c.vocab_size = parse_count(e, source);
    else if (e.key == "max_seq_len") c.max_seq_len = parse_count(e, source);
    else if (e.key == "norm_eps") c.norm_eps = parse_double(e, source);
    else return false;
    return true;
}

}  // namespace detail

ModelConfig parse_config_text(std::string_view text, const std::string& source_name) {
    ModelConfig c;
    for (const auto& e : detail::parse_kv(text, source_name)) {
        if (!detail::apply_config_entry(c, e, source_name)) {
            throw ParseError(source_name, e.line, e.key, "unknown config key");
        }
    }
    return c;
}

ModelConfig load_config_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str(), path.string());
}

std::string format_config_text(const ModelConfig& c) {
    std::ostringstream out;
    out << "n_layers = " << c.n_layers << "\n"
        << "n_heads = " << c.n_heads << "\n"
        << "d_model = " << c.d_model << "\n"
        << "d_ff = " << c.d_ff << "\n"
        << "vocab_size = " << c.vocab_size << "\n"
        << "max_seq_len = " << c.max_seq_len << "\n";
    out.precision(17);
    out << "norm_eps = " << c.norm_eps << "\n";
    return out.str();
}

}  // namespace mata
