#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace uqg {

enum class TokenType : int { Answer = 0, Paragraph = 1, Question = 2 };
inline constexpr std::size_t kNumTokenTypes = 3;

struct TokenSpan {
  std::string text;   // normalized, lowercased
  std::size_t begin;  // byte offsets into the original text
  std::size_t end;
};

// Lowercases, splits on whitespace, detaches leading/trailing punctuation and
// splits English contractions (n't 's 're 've 'll 'd 'm). Typographic quotes
// and dashes are folded to their ASCII forms first.
std::vector<TokenSpan> tokenize_with_offsets(std::string_view text);
std::vector<std::string> tokenize(std::string_view text);

std::string join_tokens(const std::vector<std::string>& tokens);

// Character ids: 0 padding, 1 unknown, 2..96 printable ASCII 0x20..0x7E.
inline constexpr int kCharPad = 0;
inline constexpr int kCharUnknown = 1;
inline constexpr std::size_t kCharVocabSize = 97;
inline constexpr std::size_t kMaxTokenChars = 16;

std::vector<int> char_ids(std::string_view token);

class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kBos = 2;
  static constexpr int kEos = 3;
  static constexpr int kSep = 4;
  static constexpr std::size_t kNumSpecials = 5;
  static const std::vector<std::string>& specials();

  Vocab();
  explicit Vocab(const std::vector<std::string>& ordinary_tokens, int min_frequency = 1);

  std::size_t size() const { return id_to_token_.size(); }
  int min_frequency() const { return min_frequency_; }
  bool contains(const std::string& token) const { return token_to_id_.count(token) != 0; }
  // Unknown tokens map to kUnk.
  int id(const std::string& token) const;
  const std::string& token(int id) const;

  std::vector<int> encode(const std::vector<std::string>& tokens) const;
  std::vector<std::string> decode(const std::vector<int>& ids) const;

  // FNV-1a over the id-ordered token list, as 16 hex digits.
  std::string fingerprint() const;

  // One token per line in id order; the first five lines are the specials.
  void save(const std::string& path) const;
  static Vocab load(const std::string& path);

 private:
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, int> token_to_id_;
  int min_frequency_ = 1;
};

// Keeps tokens with count >= min_frequency; ids by descending count, ties
// lexicographic.
Vocab build_vocab(const std::vector<std::vector<std::string>>& corpora, int min_frequency);

}  // namespace uqg
