#include "uqg/dataset.hpp"

#include "uqg/textproc.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <stdexcept>
#include <tuple>

namespace uqg {

namespace {

using nlohmann::json;

const json& field(const json& obj, const char* key, const std::string& where) {
  if (!obj.is_object()) throw std::runtime_error(where + ": expected an object");
  auto it = obj.find(key);
  if (it == obj.end()) throw std::runtime_error(where + ": missing '" + key + "'");
  return *it;
}

std::string string_field(const json& obj, const char* key, const std::string& where) {
  const auto& v = field(obj, key, where);
  if (!v.is_string()) throw std::runtime_error(where + ": '" + key + "' is not a string");
  return v.get<std::string>();
}

const json& array_field(const json& obj, const char* key, const std::string& where) {
  const auto& v = field(obj, key, where);
  if (!v.is_array()) throw std::runtime_error(where + ": '" + key + "' is not an array");
  return v;
}

std::vector<AnswerSpan> parse_answers(const json& arr, const std::string& where) {
  std::vector<AnswerSpan> out;
  for (std::size_t k = 0; k < arr.size(); ++k) {
    std::string loc = where + "[" + std::to_string(k) + "]";
    const auto& start = field(arr[k], "answer_start", loc);
    if (!start.is_number_integer() || start.get<long long>() < 0)
      throw std::runtime_error(loc + ": 'answer_start' is not a non-negative integer");
    out.push_back({string_field(arr[k], "text", loc), start.get<std::size_t>()});
  }
  return out;
}

bool span_matches(const std::string& context, const AnswerSpan& a) {
  std::size_t b = 0, e = 0;
  if (!char_span_to_bytes(context, a.char_start, utf8_length(a.text), b, e)) return false;
  return context.compare(b, e - b, a.text) == 0;
}

std::string sanitize_field(std::string s) {
  for (auto& c : s)
    if (c == '\t' || c == '\n' || c == '\r') c = ' ';
  return s;
}

std::vector<std::string> split_tokens(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  std::string t;
  while (in >> t) out.push_back(t);
  return out;
}

}  // namespace

std::size_t utf8_length(const std::string& s) {
  std::size_t n = 0;
  for (unsigned char c : s)
    if ((c & 0xC0) != 0x80) ++n;
  return n;
}

bool char_span_to_bytes(const std::string& text, std::size_t char_start, std::size_t char_len,
                        std::size_t& byte_begin, std::size_t& byte_end) {
  std::size_t cp = 0;
  std::size_t i = 0;
  auto advance = [&](std::size_t target) {
    while (i < text.size() && cp < target) {
      ++i;
      while (i < text.size() && (static_cast<unsigned char>(text[i]) & 0xC0) == 0x80) ++i;
      ++cp;
    }
    return cp == target;
  };
  if (!advance(char_start)) return false;
  byte_begin = i;
  if (!advance(char_start + char_len)) return false;
  byte_end = i;
  return true;
}

std::vector<ParagraphRecord> parse_squad_json(const json& doc, const std::string& origin, ParseStats* stats) {
  ParseStats local;
  std::vector<ParagraphRecord> out;
  const auto& data = array_field(doc, "data", origin);
  for (std::size_t a = 0; a < data.size(); ++a) {
    std::string aloc = origin + ": data[" + std::to_string(a) + "]";
    std::string title = string_field(data[a], "title", aloc);
    const auto& paragraphs = array_field(data[a], "paragraphs", aloc);
    for (std::size_t p = 0; p < paragraphs.size(); ++p) {
      std::string ploc = aloc + ".paragraphs[" + std::to_string(p) + "]";
      ParagraphRecord rec{title, string_field(paragraphs[p], "context", ploc), {}};
      const auto& qas = array_field(paragraphs[p], "qas", ploc);
      for (std::size_t q = 0; q < qas.size(); ++q) {
        std::string qloc = ploc + ".qas[" + std::to_string(q) + "]";
        const auto& qa = qas[q];
        QuestionRecord qr;
        qr.id = string_field(qa, "id", qloc);
        qr.question = string_field(qa, "question", qloc);
        if (auto it = qa.find("is_impossible"); it != qa.end()) {
          if (!it->is_boolean()) throw std::runtime_error(qloc + ": 'is_impossible' is not a boolean");
          qr.is_impossible = it->get<bool>();
        }
        if (qr.is_impossible) {
          if (qa.contains("plausible_answers"))
            qr.answers = parse_answers(array_field(qa, "plausible_answers", qloc), qloc + ".plausible_answers");
        } else {
          qr.answers = parse_answers(array_field(qa, "answers", qloc), qloc + ".answers");
        }
        ++local.questions;
        bool ok = !rec.context.empty() && (qr.is_impossible || !qr.answers.empty()) &&
                  std::all_of(qr.answers.begin(), qr.answers.end(),
                              [&](const AnswerSpan& s) { return span_matches(rec.context, s); });
        if (!ok) {
          ++local.dropped;
          continue;
        }
        rec.qas.push_back(std::move(qr));
      }
      if (!rec.context.empty()) out.push_back(std::move(rec));
    }
  }
  if (stats) *stats = local;
  return out;
}

std::vector<ParagraphRecord> parse_squad(const std::string& path, ParseStats* stats) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::runtime_error(path + ": malformed JSON at byte " + std::to_string(e.byte));
  }
  return parse_squad_json(doc, path, stats);
}

std::size_t count_answerable(const std::vector<ParagraphRecord>& records) {
  std::size_t n = 0;
  for (const auto& p : records)
    for (const auto& q : p.qas) n += q.is_impossible ? 0 : 1;
  return n;
}

std::size_t levenshtein(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

std::vector<AlignedPair> align_pairs(const std::vector<ParagraphRecord>& records, AlignStats* stats) {
  AlignStats local;

  struct Candidate {
    std::size_t distance;
    std::size_t answerable_order;
    std::size_t unanswerable_order;
    std::size_t paragraph;
    std::size_t answerable_index;
    std::size_t unanswerable_index;
    AnswerSpan pivot;
    std::size_t tok_begin, tok_end;
    bool expanded;
  };

  std::vector<std::vector<TokenSpan>> paragraph_tokens(records.size());
  std::vector<Candidate> candidates;
  std::size_t order = 0;
  std::vector<std::vector<std::size_t>> question_order(records.size());

  for (std::size_t p = 0; p < records.size(); ++p) {
    const auto& rec = records[p];
    for (std::size_t q = 0; q < rec.qas.size(); ++q) question_order[p].push_back(order++);
    bool any_pair = false;
    std::vector<std::vector<std::string>> qtokens(rec.qas.size());
    for (std::size_t q = 0; q < rec.qas.size(); ++q) qtokens[q] = tokenize(rec.qas[q].question);

    for (std::size_t i = 0; i < rec.qas.size(); ++i) {
      const auto& aq = rec.qas[i];
      if (aq.is_impossible) continue;
      for (std::size_t j = 0; j < rec.qas.size(); ++j) {
        const auto& uq = rec.qas[j];
        if (!uq.is_impossible) continue;
        const AnswerSpan* pivot = nullptr;
        for (const auto& ans : aq.answers) {
          if (std::find(uq.answers.begin(), uq.answers.end(), ans) != uq.answers.end()) {
            pivot = &ans;
            break;
          }
        }
        if (!pivot) continue;
        if (!any_pair) {
          paragraph_tokens[p] = tokenize_with_offsets(rec.context);
          any_pair = true;
        }
        const auto& toks = paragraph_tokens[p];
        std::size_t bb = 0, be = 0;
        char_span_to_bytes(rec.context, pivot->char_start, utf8_length(pivot->text), bb, be);
        std::size_t tb = toks.size(), te = 0;
        for (std::size_t t = 0; t < toks.size(); ++t) {
          if (toks[t].end > bb && toks[t].begin < be) {
            tb = std::min(tb, t);
            te = t + 1;
          }
        }
        ++local.candidates;
        if (tb >= te) {
          ++local.unmappable;
          continue;
        }
        bool expanded = toks[tb].begin != bb || toks[te - 1].end != be;
        candidates.push_back({levenshtein(qtokens[i], qtokens[j]), question_order[p][i], question_order[p][j], p, i,
                              j, *pivot, tb, te, expanded});
      }
    }
  }

  std::sort(candidates.begin(), candidates.end(), [](const Candidate& x, const Candidate& y) {
    return std::tie(x.distance, x.answerable_order, x.unanswerable_order) <
           std::tie(y.distance, y.answerable_order, y.unanswerable_order);
  });

  std::vector<bool> paired(order, false);
  std::vector<std::pair<std::size_t, AlignedPair>> accepted;
  for (const auto& c : candidates) {
    if (paired[c.answerable_order] || paired[c.unanswerable_order]) continue;
    paired[c.answerable_order] = paired[c.unanswerable_order] = true;
    const auto& rec = records[c.paragraph];
    AlignedPair pair;
    pair.title = rec.article_title;
    for (const auto& t : paragraph_tokens[c.paragraph]) pair.paragraph.push_back(t.text);
    pair.answer_start = c.tok_begin;
    pair.answer_end = c.tok_end;
    pair.answerable = tokenize(rec.qas[c.answerable_index].question);
    pair.unanswerable = tokenize(rec.qas[c.unanswerable_index].question);
    pair.pivot = c.pivot;
    pair.answerable_id = rec.qas[c.answerable_index].id;
    pair.unanswerable_id = rec.qas[c.unanswerable_index].id;
    pair.distance = c.distance;
    if (c.expanded) ++local.expanded_spans;
    local.total_distance += c.distance;
    accepted.emplace_back(c.answerable_order, std::move(pair));
  }
  local.pairs = accepted.size();

  // Emit in dataset order of the answerable question.
  std::sort(accepted.begin(), accepted.end(), [](const auto& x, const auto& y) { return x.first < y.first; });
  std::vector<AlignedPair> out;
  out.reserve(accepted.size());
  for (auto& [k, pair] : accepted) out.push_back(std::move(pair));
  if (stats) *stats = local;
  return out;
}

HoldoutSplit split_holdout(const std::vector<AlignedPair>& pairs, std::uint64_t seed, double fraction) {
  std::vector<std::string> titles;
  std::map<std::string, std::size_t> counts;
  for (const auto& p : pairs)
    if (counts[p.title]++ == 0) titles.push_back(p.title);

  std::mt19937_64 gen(seed);
  for (std::size_t i = titles.size(); i > 1; --i) {
    auto j = static_cast<std::size_t>(gen() % i);
    std::swap(titles[i - 1], titles[j]);
  }

  auto target = static_cast<std::size_t>(fraction * static_cast<double>(pairs.size()) + 0.5);
  std::size_t taken = 0;
  std::map<std::string, bool> held;
  HoldoutSplit split;
  for (const auto& t : titles) {
    auto gap = [&](std::size_t n) { return n > target ? n - target : target - n; };
    if (gap(taken + counts[t]) < gap(taken)) {
      taken += counts[t];
      held[t] = true;
      split.holdout_titles.push_back(t);
    }
  }
  for (const auto& p : pairs) (held.count(p.title) ? split.holdout : split.train).push_back(p);
  return split;
}

void write_pairs(const std::string& path, const std::vector<AlignedPair>& pairs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  for (const auto& p : pairs) {
    out << sanitize_field(p.title) << '\t' << join_tokens(p.paragraph) << '\t' << p.answer_start << '\t'
        << p.answer_end << '\t' << join_tokens(p.answerable) << '\t' << join_tokens(p.unanswerable) << '\n';
  }
  if (!out) throw std::runtime_error("failed writing " + path);
}

std::vector<AlignedPair> read_pairs(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open pair file " + path);
  std::vector<AlignedPair> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      auto tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    auto where = path + ":" + std::to_string(lineno);
    if (fields.size() != 6) throw std::runtime_error(where + ": expected 6 tab-separated fields");
    AlignedPair p;
    p.title = fields[0];
    p.paragraph = split_tokens(fields[1]);
    try {
      p.answer_start = std::stoul(fields[2]);
      p.answer_end = std::stoul(fields[3]);
    } catch (const std::exception&) {
      throw std::runtime_error(where + ": bad answer token offsets");
    }
    p.answerable = split_tokens(fields[4]);
    p.unanswerable = split_tokens(fields[5]);
    if (!(p.answer_start < p.answer_end && p.answer_end <= p.paragraph.size()))
      throw std::runtime_error(where + ": answer span outside paragraph");
    if (p.answerable.empty() || p.unanswerable.empty()) throw std::runtime_error(where + ": empty question");
    p.distance = levenshtein(p.answerable, p.unanswerable);
    out.push_back(std::move(p));
  }
  return out;
}

json build_augmentation(const std::vector<Generation>& generated, AugmentStats* stats) {
  AugmentStats local;
  json data = json::array();
  std::map<std::string, std::size_t> article_index;
  std::map<std::pair<std::size_t, std::string>, std::size_t> paragraph_index;
  std::map<std::string, std::size_t> per_source;

  for (const auto& g : generated) {
    if (g.tokens.empty()) {
      ++local.skipped_empty;
      continue;
    }
    if (g.tokens == tokenize(g.source.question)) {
      ++local.skipped_identical;
      continue;
    }
    auto [ait, new_article] = article_index.emplace(g.title, data.size());
    if (new_article) data.push_back({{"title", g.title}, {"paragraphs", json::array()}});
    auto& paragraphs = data[ait->second]["paragraphs"];
    auto [pit, new_paragraph] = paragraph_index.emplace(std::make_pair(ait->second, g.context), paragraphs.size());
    if (new_paragraph) paragraphs.push_back({{"context", g.context}, {"qas", json::array()}});

    json plausible = json::array();
    for (const auto& a : g.source.answers) plausible.push_back({{"text", a.text}, {"answer_start", a.char_start}});
    std::size_t k = per_source[g.source.id]++;
    paragraphs[pit->second]["qas"].push_back({{"id", g.source.id + "-unansq-" + std::to_string(k)},
                                              {"question", join_tokens(g.tokens)},
                                              {"answers", json::array()},
                                              {"is_impossible", true},
                                              {"plausible_answers", plausible}});
    ++local.emitted;
  }
  if (stats) *stats = local;
  return {{"version", "v2.0"}, {"data", data}};
}

}  // namespace uqg
