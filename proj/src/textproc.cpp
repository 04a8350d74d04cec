#include "uqg/textproc.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <fstream>
#include <map>
#include <stdexcept>

namespace uqg {

namespace {

bool is_space(unsigned char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

bool is_punct(char c) {
  auto u = static_cast<unsigned char>(c);
  return u < 0x80 && ((u >= 0x21 && u <= 0x2F) || (u >= 0x3A && u <= 0x40) || (u >= 0x5B && u <= 0x60) ||
                      (u >= 0x7B && u <= 0x7E));
}

// Multi-byte sequences folded to ASCII before splitting.
struct Fold {
  std::string_view from;
  char to;
};
constexpr std::array<Fold, 8> kFolds{{
    {"\xE2\x80\x98", '\''},  // left single quote
    {"\xE2\x80\x99", '\''},  // right single quote
    {"\xE2\x80\x9C", '"'},
    {"\xE2\x80\x9D", '"'},
    {"\xE2\x80\x93", '-'},  // en dash
    {"\xE2\x80\x94", '-'},  // em dash
    {"\xC2\xA0", ' '},      // no-break space
    {"\xE2\x80\x89", ' '},  // thin space
}};

// Normalized text with a map from each normalized byte back to its source offset.
struct Normalized {
  std::string text;
  std::vector<std::size_t> source;  // size text.size() + 1
};

Normalized normalize(std::string_view in) {
  Normalized n;
  n.text.reserve(in.size());
  n.source.reserve(in.size() + 1);
  std::size_t i = 0;
  while (i < in.size()) {
    bool folded = false;
    if (static_cast<unsigned char>(in[i]) >= 0x80) {
      for (const auto& f : kFolds) {
        if (in.substr(i, f.from.size()) == f.from) {
          n.text.push_back(f.to);
          n.source.push_back(i);
          i += f.from.size();
          folded = true;
          break;
        }
      }
    }
    if (folded) continue;
    char c = in[i];
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    n.text.push_back(c);
    n.source.push_back(i);
    ++i;
  }
  n.source.push_back(in.size());
  return n;
}

constexpr std::array<std::string_view, 6> kApostropheSuffixes{"'s", "'re", "'ve", "'ll", "'d", "'m"};

bool is_contraction_suffix(std::string_view w) {
  if (w == "n't") return true;
  return std::find(kApostropheSuffixes.begin(), kApostropheSuffixes.end(), w) != kApostropheSuffixes.end();
}

// Position where a trailing contraction starts inside w, or npos.
std::size_t contraction_split(std::string_view w) {
  if (w.size() > 3 && w.ends_with("n't")) return w.size() - 3;
  for (auto suffix : kApostropheSuffixes)
    if (w.size() > suffix.size() && w.ends_with(suffix)) return w.size() - suffix.size();
  return std::string_view::npos;
}

}  // namespace

std::vector<TokenSpan> tokenize_with_offsets(std::string_view text) {
  Normalized norm = normalize(text);
  const std::string& s = norm.text;
  std::vector<TokenSpan> out;
  auto emit = [&](std::size_t b, std::size_t e) {
    if (b < e) out.push_back({s.substr(b, e - b), norm.source[b], norm.source[e]});
  };

  // Trailing punctuation peels before leading so that "'s." keeps its suffix.
  auto word = [&](auto&& self, std::size_t b, std::size_t e) -> void {
    if (b >= e) return;
    std::string_view w(s.data() + b, e - b);
    if (is_contraction_suffix(w)) {
      emit(b, e);
    } else if (is_punct(s[e - 1])) {
      self(self, b, e - 1);
      emit(e - 1, e);
    } else if (is_punct(s[b])) {
      emit(b, b + 1);
      self(self, b + 1, e);
    } else if (auto split = contraction_split(w); split != std::string_view::npos) {
      self(self, b, b + split);
      emit(b + split, e);
    } else {
      emit(b, e);
    }
  };

  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && is_space(static_cast<unsigned char>(s[i]))) ++i;
    std::size_t j = i;
    while (j < s.size() && !is_space(static_cast<unsigned char>(s[j]))) ++j;
    word(word, i, j);
    i = j;
  }
  return out;
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  for (auto& t : tokenize_with_offsets(text)) out.push_back(std::move(t.text));
  return out;
}

std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

std::vector<int> char_ids(std::string_view token) {
  std::vector<int> ids;
  for (std::size_t i = 0; i < token.size() && ids.size() < kMaxTokenChars; ++i) {
    auto c = static_cast<unsigned char>(token[i]);
    ids.push_back(c >= 0x20 && c <= 0x7E ? 2 + (c - 0x20) : kCharUnknown);
  }
  return ids;
}

// ---------------------------------------------------------------------------
// Vocab

const std::vector<std::string>& Vocab::specials() {
  static const std::vector<std::string> s{"<pad>", "<unk>", "<s>", "</s>", "<sep>"};
  return s;
}

Vocab::Vocab() : Vocab(std::vector<std::string>{}) {}

Vocab::Vocab(const std::vector<std::string>& ordinary_tokens, int min_frequency)
    : min_frequency_(min_frequency) {
  id_to_token_ = specials();
  id_to_token_.insert(id_to_token_.end(), ordinary_tokens.begin(), ordinary_tokens.end());
  for (std::size_t i = 0; i < id_to_token_.size(); ++i) {
    auto [it, inserted] = token_to_id_.emplace(id_to_token_[i], static_cast<int>(i));
    if (!inserted) throw std::invalid_argument("vocab: duplicate token '" + id_to_token_[i] + "'");
  }
}

int Vocab::id(const std::string& token) const {
  auto it = token_to_id_.find(token);
  return it == token_to_id_.end() ? kUnk : it->second;
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= id_to_token_.size())
    throw std::out_of_range("vocab: id " + std::to_string(id) + " out of range");
  return id_to_token_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocab::encode(const std::vector<std::string>& tokens) const {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id(t));
  return ids;
}

std::vector<std::string> Vocab::decode(const std::vector<int>& ids) const {
  std::vector<std::string> tokens;
  tokens.reserve(ids.size());
  for (int i : ids) tokens.push_back(token(i));
  return tokens;
}

std::string Vocab::fingerprint() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& t : id_to_token_) {
    for (unsigned char c : t) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    h ^= '\n';
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void Vocab::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  for (const auto& t : id_to_token_) out << t << '\n';
  if (!out) throw std::runtime_error("failed writing " + path);
}

Vocab Vocab::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open vocabulary " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  const auto& sp = specials();
  if (lines.size() < sp.size() || !std::equal(sp.begin(), sp.end(), lines.begin()))
    throw std::runtime_error(path + ": missing special-token header");
  return Vocab(std::vector<std::string>(lines.begin() + static_cast<long>(sp.size()), lines.end()));
}

Vocab build_vocab(const std::vector<std::vector<std::string>>& corpora, int min_frequency) {
  if (min_frequency < 1) throw std::invalid_argument("build_vocab: min_frequency must be >= 1");
  std::map<std::string, long> counts;
  for (const auto& tokens : corpora)
    for (const auto& t : tokens) ++counts[t];
  const auto& sp = Vocab::specials();
  std::vector<std::pair<std::string, long>> kept;
  for (auto& [t, c] : counts)
    if (c >= min_frequency && std::find(sp.begin(), sp.end(), t) == sp.end()) kept.emplace_back(t, c);
  std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> tokens;
  tokens.reserve(kept.size());
  for (auto& [t, c] : kept) tokens.push_back(t);
  return Vocab(tokens, min_frequency);
}

}  // namespace uqg
