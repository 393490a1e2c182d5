#include "bet/vocab.hpp"

#include <algorithm>
#include <map>

#include "bet/errors.hpp"

namespace bet {

namespace {

const std::string kReplacement = "\xEF\xBF\xBD";

bool is_cont(unsigned char c) { return (c & 0xC0) == 0x80; }

// Length of a well-formed UTF-8 sequence at text[i], or 0.
std::size_t utf8_length(std::string_view text, std::size_t i) {
    const auto byte = [&](std::size_t k) { return static_cast<unsigned char>(text[i + k]); };
    const unsigned char c = byte(0);
    const std::size_t left = text.size() - i;
    if (c < 0x80) return 1;
    if (c >= 0xC2 && c <= 0xDF) return left >= 2 && is_cont(byte(1)) ? 2 : 0;
    if (c >= 0xE0 && c <= 0xEF) {
        if (left < 3 || !is_cont(byte(1)) || !is_cont(byte(2))) return 0;
        if (c == 0xE0 && byte(1) < 0xA0) return 0;  // overlong
        if (c == 0xED && byte(1) > 0x9F) return 0;  // surrogate
        return 3;
    }
    if (c >= 0xF0 && c <= 0xF4) {
        if (left < 4 || !is_cont(byte(1)) || !is_cont(byte(2)) || !is_cont(byte(3))) return 0;
        if (c == 0xF0 && byte(1) < 0x90) return 0;
        if (c == 0xF4 && byte(1) > 0x8F) return 0;
        return 4;
    }
    return 0;
}

bool is_space(char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

}  // namespace

std::string to_string(Tokenization mode) { return mode == Tokenization::Char ? "char" : "word"; }

Tokenization parse_tokenization(const std::string& text) {
    if (text == "char") return Tokenization::Char;
    if (text == "word") return Tokenization::Word;
    throw ConfigError("unknown tokenization '" + text + "' (expected char or word)");
}

std::vector<std::string> split_units(std::string_view text, Tokenization mode) {
    std::vector<std::string> units;
    if (mode == Tokenization::Char) {
        for (std::size_t i = 0; i < text.size();) {
            const auto len = utf8_length(text, i);
            if (len == 0) {
                units.push_back(kReplacement);
                ++i;
            } else {
                units.emplace_back(text.substr(i, len));
                i += len;
            }
        }
        return units;
    }
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && is_space(text[i])) ++i;
        const std::size_t start = i;
        while (i < text.size() && !is_space(text[i])) ++i;
        if (i > start) units.emplace_back(text.substr(start, i - start));
    }
    return units;
}

Vocabulary Vocabulary::build(std::string_view corpus, Tokenization mode, std::size_t min_freq) {
    const auto units = split_units(corpus, mode);
    if (units.empty()) throw ValidationError("cannot build a vocabulary from an empty corpus");
    std::map<std::string, std::size_t> counts;
    for (const auto& u : units)
        if (u != kUnkToken) ++counts[u];
    std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    std::vector<std::string> tokens{kUnkToken};
    for (auto& [unit, count] : ranked)
        if (count >= min_freq) tokens.push_back(unit);
    return from_tokens(mode, std::move(tokens));
}

Vocabulary Vocabulary::from_tokens(Tokenization mode, std::vector<std::string> tokens) {
    if (tokens.empty() || tokens.front() != kUnkToken) throw ValidationError("vocabulary must start with <unk>");
    Vocabulary v;
    v.mode_ = mode;
    v.tokens_ = std::move(tokens);
    for (std::size_t i = 0; i < v.tokens_.size(); ++i) {
        if (!v.index_.emplace(v.tokens_[i], static_cast<int>(i)).second) {
            throw ValidationError("duplicate vocabulary entry '" + v.tokens_[i] + "'");
        }
    }
    return v;
}

int Vocabulary::id(const std::string& unit) const {
    const auto it = index_.find(unit);
    return it == index_.end() ? kUnk : it->second;
}

std::vector<int> Vocabulary::encode(std::string_view text) const {
    std::vector<int> ids;
    for (const auto& u : split_units(text, mode_)) ids.push_back(id(u));
    return ids;
}

std::string Vocabulary::decode(std::span<const int> ids) const {
    std::string out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (mode_ == Tokenization::Word && i) out += ' ';
        out += token(ids[i]);
    }
    return out;
}

}  // namespace bet
