#include "uqg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace uqg {

namespace {

struct Pooled {
  std::vector<double> matches;
  std::vector<double> totals;
  double hyp_len = 0.0;
  double ref_len = 0.0;
};

double combine(const Pooled& p) {
  for (std::size_t n = 0; n < p.matches.size(); ++n)
    if (p.totals[n] == 0.0 || p.matches[n] <= 0.0) return 0.0;
  double log_sum = 0.0;
  for (std::size_t n = 0; n < p.matches.size(); ++n) log_sum += std::log(p.matches[n] / p.totals[n]);
  double bp = p.hyp_len < p.ref_len ? std::exp(1.0 - p.ref_len / p.hyp_len) : 1.0;
  return bp * std::exp(log_sum / static_cast<double>(p.matches.size()));
}

std::size_t clipped_matches(const NgramCounts& hyp, const NgramCounts& ref) {
  std::size_t m = 0;
  for (const auto& [g, c] : hyp) {
    auto it = ref.find(g);
    if (it != ref.end()) m += std::min(c, it->second);
  }
  return m;
}

std::size_t count_of(const NgramCounts& counts, const Tokens& g) {
  auto it = counts.find(g);
  return it == counts.end() ? 0 : it->second;
}

std::size_t total(const NgramCounts& counts) {
  std::size_t t = 0;
  for (const auto& [g, c] : counts) t += c;
  return t;
}

Rouge from_overlap(double overlap, double ref_total, double hyp_total) {
  Rouge r;
  r.recall = ref_total > 0 ? overlap / ref_total : 0.0;
  r.precision = hyp_total > 0 ? overlap / hyp_total : 0.0;
  r.f1 = r.recall + r.precision > 0 ? 2 * r.recall * r.precision / (r.recall + r.precision) : 0.0;
  return r;
}

void check_order(std::size_t max_n) {
  if (max_n < 1) throw std::invalid_argument("n-gram order must be >= 1");
}

}  // namespace

NgramCounts ngram_counts(const Tokens& tokens, std::size_t n) {
  NgramCounts counts;
  if (n == 0 || tokens.size() < n) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i)
    ++counts[Tokens(tokens.begin() + static_cast<long>(i), tokens.begin() + static_cast<long>(i + n))];
  return counts;
}

double bleu(const std::vector<std::pair<Tokens, Tokens>>& corpus, std::size_t max_n) {
  if (corpus.empty()) throw std::invalid_argument("bleu: empty corpus");
  check_order(max_n);
  Pooled p{std::vector<double>(max_n), std::vector<double>(max_n)};
  for (const auto& [hyp, ref] : corpus) {
    p.hyp_len += static_cast<double>(hyp.size());
    p.ref_len += static_cast<double>(ref.size());
    for (std::size_t n = 1; n <= max_n; ++n) {
      auto h = ngram_counts(hyp, n);
      p.matches[n - 1] += static_cast<double>(clipped_matches(h, ngram_counts(ref, n)));
      p.totals[n - 1] += static_cast<double>(total(h));
    }
  }
  return combine(p);
}

double gleu(const std::vector<EvalTriple>& corpus, std::size_t max_n) {
  if (corpus.empty()) throw std::invalid_argument("gleu: empty corpus");
  check_order(max_n);
  Pooled p{std::vector<double>(max_n), std::vector<double>(max_n)};
  for (const auto& t : corpus) {
    p.hyp_len += static_cast<double>(t.hypothesis.size());
    p.ref_len += static_cast<double>(t.reference.size());
    for (std::size_t n = 1; n <= max_n; ++n) {
      auto h = ngram_counts(t.hypothesis, n);
      auto r = ngram_counts(t.reference, n);
      auto s = ngram_counts(t.source, n);
      std::size_t penalty = 0;
      for (const auto& [g, c] : h) {
        std::size_t from_source = std::min(c, count_of(s, g));
        std::size_t in_ref = count_of(r, g);
        if (from_source > in_ref) penalty += from_source - in_ref;
      }
      double matched = static_cast<double>(clipped_matches(h, r)) - static_cast<double>(penalty);
      p.matches[n - 1] += std::max(0.0, matched);
      p.totals[n - 1] += static_cast<double>(total(h));
    }
  }
  return combine(p);
}

Rouge rouge_n(const Tokens& hypothesis, const Tokens& reference, std::size_t n) {
  check_order(n);
  auto h = ngram_counts(hypothesis, n);
  auto r = ngram_counts(reference, n);
  return from_overlap(static_cast<double>(clipped_matches(h, r)), static_cast<double>(total(r)),
                      static_cast<double>(total(h)));
}

std::size_t lcs_length(const Tokens& a, const Tokens& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

Rouge rouge_l(const Tokens& hypothesis, const Tokens& reference) {
  return from_overlap(static_cast<double>(lcs_length(hypothesis, reference)), static_cast<double>(reference.size()),
                      static_cast<double>(hypothesis.size()));
}

Rouge corpus_rouge_n(const std::vector<std::pair<Tokens, Tokens>>& corpus, std::size_t n) {
  if (corpus.empty()) throw std::invalid_argument("rouge: empty corpus");
  Rouge mean;
  for (const auto& [hyp, ref] : corpus) {
    Rouge r = rouge_n(hyp, ref, n);
    mean.recall += r.recall;
    mean.precision += r.precision;
    mean.f1 += r.f1;
  }
  auto k = static_cast<double>(corpus.size());
  return {mean.recall / k, mean.precision / k, mean.f1 / k};
}

Rouge corpus_rouge_l(const std::vector<std::pair<Tokens, Tokens>>& corpus) {
  if (corpus.empty()) throw std::invalid_argument("rouge: empty corpus");
  Rouge mean;
  for (const auto& [hyp, ref] : corpus) {
    Rouge r = rouge_l(hyp, ref);
    mean.recall += r.recall;
    mean.precision += r.precision;
    mean.f1 += r.f1;
  }
  auto k = static_cast<double>(corpus.size());
  return {mean.recall / k, mean.precision / k, mean.f1 / k};
}

std::map<std::string, double> evaluate_corpus(const std::vector<EvalTriple>& corpus) {
  std::vector<std::pair<Tokens, Tokens>> pairs;
  for (const auto& t : corpus) pairs.emplace_back(t.hypothesis, t.reference);
  std::map<std::string, double> m;
  m["bleu3"] = bleu(pairs, 3);
  m["bleu4"] = bleu(pairs, 4);
  m["gleu3"] = gleu(corpus, 3);
  m["gleu4"] = gleu(corpus, 4);
  auto put = [&](const std::string& name, const Rouge& r) {
    m[name + "_r"] = r.recall;
    m[name + "_p"] = r.precision;
    m[name + "_f"] = r.f1;
  };
  put("rouge2", corpus_rouge_n(pairs, 2));
  put("rouge3", corpus_rouge_n(pairs, 3));
  put("rougeL", corpus_rouge_l(pairs));
  return m;
}

std::string format_report(const std::map<std::string, double>& metrics) {
  static const char* order[] = {"bleu3",    "bleu4",    "gleu3",    "gleu4",    "rouge2_r", "rouge2_p",
                                "rouge2_f", "rouge3_r", "rouge3_p", "rouge3_f", "rougeL_r", "rougeL_p",
                                "rougeL_f"};
  std::string out;
  char buf[64];
  for (const char* key : order) {
    auto it = metrics.find(key);
    if (it == metrics.end()) continue;
    std::snprintf(buf, sizeof(buf), "%s=%.4f\n", key, it->second);
    out += buf;
  }
  for (const auto& [k, v] : metrics) {
    if (std::find_if(std::begin(order), std::end(order), [&](const char* o) { return k == o; }) != std::end(order))
      continue;
    std::snprintf(buf, sizeof(buf), "=%.4f\n", v);
    out += k + buf;
  }
  return out;
}

}  // namespace uqg
