#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace uqg {

using Tokens = std::vector<std::string>;

struct EvalTriple {
  Tokens source;
  Tokens hypothesis;
  Tokens reference;
};

using NgramCounts = std::map<Tokens, std::size_t>;

NgramCounts ngram_counts(const Tokens& tokens, std::size_t n);

// Corpus BLEU with clipped precisions pooled over the corpus, uniform
// geometric mean and brevity penalty exp(1 - r/c) when c < r.
double bleu(const std::vector<std::pair<Tokens, Tokens>>& corpus, std::size_t max_n);

// BLEU whose per-sentence numerator subtracts hypothesis n-grams found in the
// source beyond what the reference accounts for, floored at zero.
double gleu(const std::vector<EvalTriple>& corpus, std::size_t max_n);

struct Rouge {
  double recall = 0.0;
  double precision = 0.0;
  double f1 = 0.0;
};

Rouge rouge_n(const Tokens& hypothesis, const Tokens& reference, std::size_t n);
Rouge rouge_l(const Tokens& hypothesis, const Tokens& reference);
std::size_t lcs_length(const Tokens& a, const Tokens& b);

// Arithmetic means over pairs.
Rouge corpus_rouge_n(const std::vector<std::pair<Tokens, Tokens>>& corpus, std::size_t n);
Rouge corpus_rouge_l(const std::vector<std::pair<Tokens, Tokens>>& corpus);

// BLEU-3/4, GLEU-3/4, ROUGE-2/3/L (recall, precision, f1), keyed by name.
std::map<std::string, double> evaluate_corpus(const std::vector<EvalTriple>& corpus);

// One "name=value" line per metric, 4 decimals, in the fixed report order.
std::string format_report(const std::map<std::string, double>& metrics);

}  // namespace uqg
