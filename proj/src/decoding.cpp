#include "uqg/decoding.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace uqg {

namespace {

struct Step {
  DecoderState state;
  std::vector<double> dist;
};

Step advance(const ModelParams& params, const EncodedInput& enc, const DecoderState& state, int prev) {
  Tape tape(false);
  Dropout off;
  StepOutput out = decode_step(tape, params, enc, state, prev, off);
  return {out.state, final_distribution(out, enc)};
}

DecoderState initial_state(const ModelParams& params, const EncodedInput& enc) {
  Tape tape(false);
  return init_decoder(tape, params, enc);
}

double rank_key(const Hypothesis& h, bool length_penalty) {
  if (!length_penalty || h.ids.empty()) return h.logprob;
  return h.logprob / static_cast<double>(h.ids.size());
}

struct Candidate {
  double score;
  std::size_t parent;
  int id;
};

bool better(const Candidate& a, const Candidate& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.parent != b.parent) return a.parent < b.parent;
  return a.id < b.id;
}

Hypothesis extend(const Hypothesis& parent, const DecoderState& state, int id, double score, const EncodedInput& enc,
                  const Vocab& vocab) {
  Hypothesis h;
  h.ids = parent.ids;
  h.ids.push_back(id);
  h.tokens = parent.tokens;
  h.logprob = score;
  h.state = state;
  h.finished = id == Vocab::kEos;
  if (!h.finished) h.tokens.push_back(enc.extended_token(id, vocab));
  return h;
}

std::vector<std::string> split_ws(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  std::string t;
  while (in >> t) out.push_back(t);
  return out;
}

}  // namespace

bool suppressed(int id) {
  return id == Vocab::kPad || id == Vocab::kUnk || id == Vocab::kBos || id == Vocab::kSep;
}

std::vector<double> suppress(std::vector<double> dist) {
  for (std::size_t w = 0; w < dist.size(); ++w)
    if (suppressed(static_cast<int>(w))) dist[w] = 0.0;
  return dist;
}

EncodedInput encode_for_inference(const ModelParams& params, const Vocab& vocab, const ModelInput& input) {
  Tape tape(false);
  Dropout off;
  return encode(tape, params, vocab, input, off);
}

std::vector<Hypothesis> beam_search(const ModelParams& params, const Vocab& vocab, const EncodedInput& enc,
                                    const BeamConfig& config) {
  if (config.beam_size < 1) throw std::invalid_argument("beam_search: beam size must be >= 1");
  if (config.max_len < 1) throw std::invalid_argument("beam_search: max_len must be >= 1");

  std::vector<Hypothesis> live(1);
  live[0].state = initial_state(params, enc);
  std::vector<Hypothesis> finished;

  for (std::size_t t = 0; t < config.max_len && !live.empty(); ++t) {
    std::vector<Step> steps;
    std::vector<Candidate> candidates;
    for (std::size_t i = 0; i < live.size(); ++i) {
      int prev = live[i].ids.empty() ? Vocab::kBos : live[i].ids.back();
      steps.push_back(advance(params, enc, live[i].state, prev));
      const auto dist = suppress(steps.back().dist);
      for (std::size_t w = 0; w < dist.size(); ++w) {
        int id = static_cast<int>(w);
        if (!(dist[w] > 0.0)) continue;
        candidates.push_back({live[i].logprob + std::log(dist[w]), i, id});
      }
    }
    std::size_t keep = std::min(config.beam_size, candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<long>(keep), candidates.end(), better);

    std::vector<Hypothesis> next;
    for (std::size_t k = 0; k < keep; ++k) {
      const auto& c = candidates[k];
      Hypothesis h = extend(live[c.parent], steps[c.parent].state, c.id, c.score, enc, vocab);
      (h.finished ? finished : next).push_back(std::move(h));
    }
    live = std::move(next);
    if (finished.size() >= config.beam_size) break;
  }

  std::vector<Hypothesis> out = finished.empty() ? std::move(live) : std::move(finished);
  std::stable_sort(out.begin(), out.end(), [&](const Hypothesis& a, const Hypothesis& b) {
    return rank_key(a, config.length_penalty) > rank_key(b, config.length_penalty);
  });
  return out;
}

Hypothesis greedy_decode(const ModelParams& params, const Vocab& vocab, const EncodedInput& enc, std::size_t max_len) {
  Hypothesis h;
  h.state = initial_state(params, enc);
  for (std::size_t t = 0; t < max_len; ++t) {
    int prev = h.ids.empty() ? Vocab::kBos : h.ids.back();
    Step step = advance(params, enc, h.state, prev);
    const auto dist = suppress(step.dist);
    int best = -1;
    double best_score = -std::numeric_limits<double>::infinity();
    for (std::size_t w = 0; w < dist.size(); ++w) {
      int id = static_cast<int>(w);
      if (!(dist[w] > 0.0)) continue;
      double score = h.logprob + std::log(dist[w]);
      if (best < 0 || score > best_score) {
        best = id;
        best_score = score;
      }
    }
    if (best < 0) break;
    h = extend(h, step.state, best, best_score, enc, vocab);
    if (h.finished) break;
  }
  return h;
}

double score_sequence(const ModelParams& params, const Vocab& vocab, const EncodedInput& enc,
                      const std::vector<std::string>& tokens, bool finished) {
  std::vector<int> ids;
  for (const auto& tok : tokens) ids.push_back(enc.extended_id(tok, vocab));
  if (finished) ids.push_back(Vocab::kEos);
  DecoderState state = initial_state(params, enc);
  int prev = Vocab::kBos;
  double total = 0.0;
  for (int id : ids) {
    Step step = advance(params, enc, state, prev);
    double p = id >= 0 ? step.dist[static_cast<std::size_t>(id)] : 0.0;
    total += std::log(p);
    state = step.state;
    prev = id;
  }
  return total;
}

std::vector<Hypothesis> filter_outputs(const std::vector<Hypothesis>& hyps, const std::vector<std::string>& source) {
  std::vector<Hypothesis> out;
  for (const auto& h : hyps)
    if (h.tokens != source) out.push_back(h);
  return out;
}

void write_generations(const std::string& path, const std::vector<GenerationRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  char buf[64];
  for (const auto& r : records) {
    std::snprintf(buf, sizeof(buf), "%.6f", r.logprob);
    out << r.id << '\t' << join_tokens(r.tokens) << '\t' << buf << '\n';
  }
  if (!out) throw std::runtime_error("failed writing " + path);
}

std::vector<GenerationRecord> read_generations(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open generation file " + path);
  std::vector<GenerationRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto where = path + ":" + std::to_string(lineno);
    auto a = line.find('\t');
    auto b = a == std::string::npos ? a : line.find('\t', a + 1);
    if (b == std::string::npos || line.find('\t', b + 1) != std::string::npos)
      throw std::runtime_error(where + ": expected 3 tab-separated fields");
    GenerationRecord r;
    r.id = line.substr(0, a);
    r.tokens = split_ws(line.substr(a + 1, b - a - 1));
    try {
      r.logprob = std::stod(line.substr(b + 1));
    } catch (const std::exception&) {
      throw std::runtime_error(where + ": bad log-probability");
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace uqg
