#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace uqg {

// char_start counts Unicode code points, as in the SQuAD JSON files.
struct AnswerSpan {
  std::string text;
  std::size_t char_start = 0;

  bool operator==(const AnswerSpan&) const = default;
};

struct QuestionRecord {
  std::string id;
  std::string question;
  bool is_impossible = false;
  // Answers for answerable questions, plausible answers for unanswerable ones.
  std::vector<AnswerSpan> answers;

  bool operator==(const QuestionRecord&) const = default;
};

struct ParagraphRecord {
  std::string article_title;
  std::string context;
  std::vector<QuestionRecord> qas;

  bool operator==(const ParagraphRecord&) const = default;
};

struct ParseStats {
  std::size_t questions = 0;
  std::size_t dropped = 0;  // span verification failures
};

// Throws std::runtime_error naming the origin and the failing location.
std::vector<ParagraphRecord> parse_squad(const std::string& path, ParseStats* stats = nullptr);
std::vector<ParagraphRecord> parse_squad_json(const nlohmann::json& doc, const std::string& origin,
                                              ParseStats* stats = nullptr);

std::size_t count_answerable(const std::vector<ParagraphRecord>& records);

// Unit-cost token edit distance.
std::size_t levenshtein(const std::vector<std::string>& a, const std::vector<std::string>& b);

struct AlignedPair {
  std::string title;
  std::vector<std::string> paragraph;
  std::size_t answer_start = 0;  // token range [start, end)
  std::size_t answer_end = 0;
  std::vector<std::string> answerable;
  std::vector<std::string> unanswerable;
  AnswerSpan pivot;
  std::string answerable_id;
  std::string unanswerable_id;
  std::size_t distance = 0;
};

struct AlignStats {
  std::size_t candidates = 0;
  std::size_t expanded_spans = 0;  // pivots not on token boundaries
  std::size_t unmappable = 0;      // pivots covering no token
  double mean_distance() const { return pairs ? static_cast<double>(total_distance) / pairs : 0.0; }
  std::size_t pairs = 0;
  std::size_t total_distance = 0;
};

// Byte range of a code-point span, or false if it falls outside the text.
bool char_span_to_bytes(const std::string& text, std::size_t char_start, std::size_t char_len,
                        std::size_t& byte_begin, std::size_t& byte_end);

std::size_t utf8_length(const std::string& s);

std::vector<AlignedPair> align_pairs(const std::vector<ParagraphRecord>& records, AlignStats* stats = nullptr);

struct HoldoutSplit {
  std::vector<AlignedPair> train;
  std::vector<AlignedPair> holdout;
  std::vector<std::string> holdout_titles;
};

// Whole articles move to the holdout side until it reaches about `fraction`
// of the pairs.
HoldoutSplit split_holdout(const std::vector<AlignedPair>& pairs, std::uint64_t seed, double fraction = 0.1);

// Tab-separated: title, paragraph, answer_start_token, answer_end_token,
// answerable_question, unanswerable_question. Tokens are space-joined.
void write_pairs(const std::string& path, const std::vector<AlignedPair>& pairs);
std::vector<AlignedPair> read_pairs(const std::string& path);

struct Generation {
  std::string title;
  std::string context;
  QuestionRecord source;
  std::vector<std::string> tokens;
};

struct AugmentStats {
  std::size_t emitted = 0;
  std::size_t skipped_identical = 0;
  std::size_t skipped_empty = 0;
};

// SQuAD 2.0 document with one unanswerable record per usable generation.
nlohmann::json build_augmentation(const std::vector<Generation>& generated, AugmentStats* stats = nullptr);

}  // namespace uqg
