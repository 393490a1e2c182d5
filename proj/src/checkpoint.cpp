#include "bet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "bet/errors.hpp"

namespace bet {

namespace {

constexpr std::string_view kMagic = "BETCKPT";
constexpr std::string_view kTrailer = "END\n";

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename T>
void put_le(std::string& out, T value) {
    static_assert(std::is_integral_v<T>);
    for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((value >> (8 * i)) & 0xFF));
}

void put_block(std::string& out, const std::string& name, const Shape& shape, std::span<const double> values) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(shape.size()));
    for (auto dim : shape) put_le<std::uint64_t>(out, dim);
    put_le<std::uint64_t>(out, values.size());
    for (double v : values) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
}

class Reader {
public:
    explicit Reader(std::string_view bytes) : bytes_(bytes) {}

    std::string_view line(const std::string& field) {
        const auto nl = bytes_.find('\n', pos_);
        if (nl == std::string_view::npos) throw LoadError(field, "truncated header");
        auto out = bytes_.substr(pos_, nl - pos_);
        pos_ = nl + 1;
        return out;
    }

    std::string_view take(std::size_t n, const std::string& field) {
        if (bytes_.size() - pos_ < n) throw LoadError(field, "truncated data");
        auto out = bytes_.substr(pos_, n);
        pos_ += n;
        return out;
    }

    template <typename T>
    T le(const std::string& field) {
        const auto raw = take(sizeof(T), field);
        T value = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i)
            value |= static_cast<T>(static_cast<unsigned char>(raw[i])) << (8 * i);
        return value;
    }

    bool at_end() const { return pos_ == bytes_.size(); }

private:
    std::string_view bytes_;
    std::size_t pos_ = 0;
};

void read_block(Reader& r, const std::string& expected, const Shape& shape, std::span<double> out) {
    const auto name_len = r.le<std::uint32_t>(expected);
    if (name_len > 4096) throw LoadError(expected, "implausible name length");
    const auto name = r.take(name_len, expected);
    if (name != expected) throw LoadError(expected, "found block '" + std::string(name) + "' instead");
    const auto rank = r.le<std::uint32_t>(expected);
    if (rank != shape.size()) throw LoadError(expected, "rank mismatch");
    for (std::size_t i = 0; i < rank; ++i) {
        if (r.le<std::uint64_t>(expected) != shape[i]) throw LoadError(expected, "shape mismatch, expected " + to_string(shape));
    }
    const auto count = r.le<std::uint64_t>(expected);
    if (count != out.size()) throw LoadError(expected, "element count mismatch");
    for (auto& v : out) v = std::bit_cast<double>(r.le<std::uint64_t>(expected));
}

std::size_t parse_size(std::string_view text, const std::string& field) {
    std::size_t value = 0;
    if (text.empty()) throw LoadError(field, "missing value");
    for (char c : text) {
        if (c < '0' || c > '9') throw LoadError(field, "not a number: '" + std::string(text) + "'");
        value = value * 10 + static_cast<std::size_t>(c - '0');
    }
    return value;
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& cp) {
    const auto named = cp.model.named_parameters();
    if (cp.optimizer.m.size() != named.size() || cp.optimizer.v.size() != named.size()) {
        throw DimensionError("checkpoint optimizer state does not match the model parameters");
    }
    nlohmann::json header;
    header["format_version"] = kCheckpointFormatVersion;
    header["config"] = to_json(cp.model.config(), cp.train_config);
    header["step"] = cp.optimizer.step;
    header["vocab"] = {{"mode", to_string(cp.vocab.mode())}, {"tokens", cp.vocab.tokens()}};
    auto& dir = header["tensors"] = nlohmann::json::array();
    for (const auto& [name, t] : named) dir.push_back({{"name", name}, {"shape", t.shape()}});
    const std::string header_text = header.dump();

    std::string out;
    out += kMagic;
    out += "\nformat_version " + std::to_string(kCheckpointFormatVersion) + "\n";
    out += "header_bytes " + std::to_string(header_text.size()) + "\n";
    out += header_text;
    out += '\n';
    for (const auto& [name, t] : named) put_block(out, name, t.shape(), t.data());
    for (std::size_t i = 0; i < named.size(); ++i) {
        put_block(out, "adam.m/" + named[i].first, named[i].second.shape(), cp.optimizer.m[i]);
        put_block(out, "adam.v/" + named[i].first, named[i].second.shape(), cp.optimizer.v[i]);
    }
    out += kTrailer;
    return out;
}

Checkpoint deserialize_checkpoint(std::string_view bytes) {
    Reader r(bytes);
    if (r.line("magic") != kMagic) throw LoadError("magic", "not a checkpoint file");

    const auto version_line = r.line("format_version");
    constexpr std::string_view kVersionKey = "format_version ";
    if (version_line.substr(0, kVersionKey.size()) != kVersionKey) throw LoadError("format_version", "missing");
    const auto version = parse_size(version_line.substr(kVersionKey.size()), "format_version");
    if (version != static_cast<std::size_t>(kCheckpointFormatVersion)) {
        throw LoadError("format_version", "unsupported version " + std::to_string(version) + " (expected " +
                                              std::to_string(kCheckpointFormatVersion) + ")");
    }
    const auto size_line = r.line("header_bytes");
    constexpr std::string_view kSizeKey = "header_bytes ";
    if (size_line.substr(0, kSizeKey.size()) != kSizeKey) throw LoadError("header_bytes", "missing");
    const auto header_size = parse_size(size_line.substr(kSizeKey.size()), "header_bytes");
    const auto header_text = r.take(header_size, "header");
    if (r.take(1, "header") != "\n") throw LoadError("header", "missing terminator");

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(header_text);
    } catch (const nlohmann::json::parse_error& e) {
        throw LoadError("header", e.what());
    }

    Checkpoint cp;
    ModelConfig model_config;
    try {
        auto rc = run_config_from_json(header.at("config"));
        model_config = rc.model;
        cp.train_config = rc.train;
        std::vector<std::string> tokens = header.at("vocab").at("tokens").get<std::vector<std::string>>();
        cp.vocab = Vocabulary::from_tokens(parse_tokenization(header.at("vocab").at("mode").get<std::string>()),
                                           std::move(tokens));
        cp.optimizer.step = header.at("step").get<long>();
    } catch (const LoadError&) {
        throw;
    } catch (const std::exception& e) {
        throw LoadError("config", e.what());
    }
    if (model_config.vocab_size != cp.vocab.size()) throw LoadError("vocab", "size disagrees with config.vocab_size");

    Rng scratch(0);
    cp.model = Model(model_config, scratch);
    auto named = cp.model.named_parameters();
    for (auto& [name, t] : named) read_block(r, name, t.shape(), t.mutable_data());
    for (auto& [name, t] : named) {
        cp.optimizer.m.emplace_back(t.size());
        cp.optimizer.v.emplace_back(t.size());
        read_block(r, "adam.m/" + name, t.shape(), cp.optimizer.m.back());
        read_block(r, "adam.v/" + name, t.shape(), cp.optimizer.v.back());
    }
    if (r.take(kTrailer.size(), "trailer") != kTrailer) throw LoadError("trailer", "missing end marker");
    if (!r.at_end()) throw LoadError("trailer", "unexpected bytes after end marker");
    return cp;
}

void save_checkpoint(const Checkpoint& cp, const std::string& path) {
    const auto bytes = serialize_checkpoint(cp);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write checkpoint '" + path + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ValidationError("failed writing checkpoint '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError("file", "cannot open '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return deserialize_checkpoint(buf.str());
}

}  // namespace bet
