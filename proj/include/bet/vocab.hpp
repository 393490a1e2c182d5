#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace bet {

enum class Tokenization { Char, Word };

std::string to_string(Tokenization mode);
Tokenization parse_tokenization(const std::string& text);

// Code points for Char mode (invalid UTF-8 bytes become U+FFFD), whitespace
// separated words for Word mode.
std::vector<std::string> split_units(std::string_view text, Tokenization mode);

class Vocabulary {
public:
    static constexpr int kUnk = 0;
    static inline const std::string kUnkToken = "<unk>";

    Vocabulary() = default;

    // Units ordered by frequency (descending) then lexicographically, after
    // <unk> at id 0. Word mode keeps types seen at least min_freq times.
    static Vocabulary build(std::string_view corpus, Tokenization mode, std::size_t min_freq = 1);
    // tokens[0] must be <unk>.
    static Vocabulary from_tokens(Tokenization mode, std::vector<std::string> tokens);

    Tokenization mode() const { return mode_; }
    std::size_t size() const { return tokens_.size(); }
    const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
    const std::vector<std::string>& tokens() const { return tokens_; }
    int id(const std::string& unit) const;

    std::vector<int> encode(std::string_view text) const;
    std::string decode(std::span<const int> ids) const;

    bool operator==(const Vocabulary& other) const { return mode_ == other.mode_ && tokens_ == other.tokens_; }

private:
    Tokenization mode_ = Tokenization::Char;
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> index_;
};

}  // namespace bet
