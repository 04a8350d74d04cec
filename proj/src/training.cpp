#include "uqg/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>

namespace uqg {

namespace {

constexpr double kProbabilityFloor = 1e-12;

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

template <typename T>
T parse_number(const std::map<std::string, std::string>& kv, const std::string& key, T fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  try {
    std::size_t used = 0;
    T v;
    if constexpr (std::is_floating_point_v<T>) v = static_cast<T>(std::stod(it->second, &used));
    else v = static_cast<T>(std::stoull(it->second, &used));
    if (used != it->second.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw std::invalid_argument("config key '" + key + "': bad value '" + it->second + "'");
  }
}

void shuffle(std::vector<std::size_t>& v, std::mt19937_64& gen) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[gen() % i]);
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

void TrainConfig::validate() const {
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (!(learning_rate >= 0.0)) throw std::invalid_argument("learning_rate must be >= 0");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("dropout must be in [0, 1)");
  if (!(clip > 0.0)) throw std::invalid_argument("clip must be > 0");
  if (dims.embed < 1 || dims.hidden < 1) throw std::invalid_argument("dimensions must be >= 1");
  if (max_target < 1) throw std::invalid_argument("max_target must be >= 1");
  if (caps.paragraph < 1 || caps.question < 1) throw std::invalid_argument("input caps must be >= 1");
  if (!(adagrad_init > 0.0)) throw std::invalid_argument("adagrad_init must be > 0");
  if (bucket_window < 1) throw std::invalid_argument("bucket_window must be >= 1");
}

std::map<std::string, std::string> TrainConfig::to_map() const {
  return {
      {"batch_size", std::to_string(batch_size)},
      {"learning_rate", format_double(learning_rate)},
      {"dropout", format_double(dropout)},
      {"epochs", std::to_string(epochs)},
      {"clip", format_double(clip)},
      {"seed", std::to_string(seed)},
      {"mode", mode_name(mode)},
      {"embed", std::to_string(dims.embed)},
      {"hidden", std::to_string(dims.hidden)},
      {"paragraph_cap", std::to_string(caps.paragraph)},
      {"question_cap", std::to_string(caps.question)},
      {"max_target", std::to_string(max_target)},
      {"adagrad_init", format_double(adagrad_init)},
      {"bucket_window", std::to_string(bucket_window)},
      {"pretrained", pretrained},
  };
}

TrainConfig TrainConfig::from_map(const std::map<std::string, std::string>& kv) {
  TrainConfig c;
  c.batch_size = parse_number(kv, "batch_size", c.batch_size);
  c.learning_rate = parse_number(kv, "learning_rate", c.learning_rate);
  c.dropout = parse_number(kv, "dropout", c.dropout);
  c.epochs = parse_number(kv, "epochs", c.epochs);
  c.clip = parse_number(kv, "clip", c.clip);
  c.seed = parse_number(kv, "seed", c.seed);
  if (auto it = kv.find("mode"); it != kv.end()) c.mode = parse_mode(it->second);
  c.dims.embed = parse_number(kv, "embed", c.dims.embed);
  c.dims.hidden = parse_number(kv, "hidden", c.dims.hidden);
  c.caps.paragraph = parse_number(kv, "paragraph_cap", c.caps.paragraph);
  c.caps.question = parse_number(kv, "question_cap", c.caps.question);
  c.max_target = parse_number(kv, "max_target", c.max_target);
  c.adagrad_init = parse_number(kv, "adagrad_init", c.adagrad_init);
  c.bucket_window = parse_number(kv, "bucket_window", c.bucket_window);
  if (auto it = kv.find("pretrained"); it != kv.end()) c.pretrained = it->second;
  return c;
}

std::uint64_t sub_seed(std::uint64_t root, const std::string& purpose, std::uint64_t index) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : purpose) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::uint64_t z = root ^ h ^ (index * 0x9E3779B97F4A7C15ULL);
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// ---------------------------------------------------------------------------
// Objective

Target make_target(const std::vector<std::string>& question, std::size_t max_steps) {
  Target t;
  std::size_t keep = std::min(question.size(), max_steps - 1);
  t.truncated = keep < question.size();
  t.tokens.assign(question.begin(), question.begin() + static_cast<long>(keep));
  t.tokens.push_back(Vocab::specials()[Vocab::kEos]);
  return t;
}

SequenceLoss sequence_loss(Tape& tape, const ModelParams& params, const Vocab& vocab, const EncodedInput& enc,
                           const std::vector<std::string>& target, Dropout& dropout) {
  if (target.empty()) throw std::invalid_argument("sequence_loss: empty target");
  DecoderState state = init_decoder(tape, params, enc);
  int prev = Vocab::kBos;
  std::vector<Tensor> logs;
  logs.reserve(target.size());
  Tensor floor = Tensor::scalar(kProbabilityFloor);
  for (const auto& token : target) {
    StepOutput step = decode_step(tape, params, enc, state, prev, dropout);
    int ext = enc.extended_id(token, vocab);
    logs.push_back(tape.log(tape.add(token_probability(tape, step, enc, ext), floor)));
    prev = ext >= 0 && static_cast<std::size_t>(ext) < params.vocab_size ? ext : Vocab::kUnk;
    state = step.state;
  }
  return {tape.scale(tape.sum(tape.stack_rows(logs)), -1.0), target.size()};
}

double sequence_nll(std::span<const std::vector<double>> step_distributions, std::span<const int> targets) {
  if (step_distributions.size() != targets.size())
    throw std::invalid_argument("sequence_nll: one distribution per target step required");
  double nll = 0.0;
  for (std::size_t t = 0; t < targets.size(); ++t) {
    double p = targets[t] >= 0 ? step_distributions[t].at(static_cast<std::size_t>(targets[t])) : 0.0;
    nll -= std::log(p + kProbabilityFloor);
  }
  return nll;
}

// ---------------------------------------------------------------------------
// Optimizer

const std::vector<double>* AdagradState::accumulator(const Tensor& t) const {
  auto it = accumulators.find(t.id());
  return it == accumulators.end() ? nullptr : &it->second;
}

bool adagrad_step(std::span<Tensor> params, const GradientMap& grads, AdagradState& state, double lr, double clip) {
  double sq = 0.0;
  bool finite = true;
  for (const auto& p : params) {
    const auto* g = grads.find(p);
    if (!g) continue;
    for (double x : *g) {
      finite = finite && std::isfinite(x);
      sq += x * x;
    }
  }
  if (!finite || !std::isfinite(sq)) {
    ++state.skipped_steps;
    return false;
  }
  double norm = std::sqrt(sq);
  double factor = norm > clip ? clip / norm : 1.0;
  for (auto& p : params) {
    const auto* g = grads.find(p);
    if (!g) continue;
    auto& acc = state.accumulators[p.id()];
    if (acc.empty()) acc.assign(p.size(), state.initial);
    auto theta = p.mutable_values();
    for (std::size_t i = 0; i < theta.size(); ++i) {
      double gi = (*g)[i] * factor;
      acc[i] += gi * gi;
      theta[i] -= lr * gi / std::sqrt(acc[i]);
    }
  }
  return true;
}

// ---------------------------------------------------------------------------
// Training loop

std::string format_epoch_log(const EpochLog& log) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "epoch=%zu train_loss=%.6f holdout_ppl=%.6f seconds=%.1f skipped=%zu truncated=%zu",
                log.epoch, log.train_loss, log.holdout_perplexity, log.seconds, log.skipped_steps,
                log.truncated_targets);
  return buf;
}

double perplexity(const ModelParams& params, const Vocab& vocab, const std::vector<AlignedPair>& pairs,
                  const InputCaps& caps, std::size_t max_target) {
  if (pairs.empty()) throw std::invalid_argument("perplexity: empty pair list");
  double nll = 0.0;
  std::size_t tokens = 0;
  Dropout off;
  for (const auto& pair : pairs) {
    Tape tape(false);
    EncodedInput enc = encode(tape, params, vocab, make_input(pair, caps), off);
    SequenceLoss l = sequence_loss(tape, params, vocab, enc, make_target(pair.unanswerable, max_target).tokens, off);
    nll += l.loss.item();
    tokens += l.tokens;
  }
  return std::exp(nll / static_cast<double>(tokens));
}

TrainResult train(const TrainConfig& config, const Vocab& vocab, const std::vector<AlignedPair>& train_pairs,
                  const std::vector<AlignedPair>& holdout_pairs, const std::function<void(const EpochLog&)>& on_epoch) {
  config.validate();
  if (train_pairs.empty()) throw std::invalid_argument("train: no training pairs");
  if (holdout_pairs.empty()) throw std::invalid_argument("train: no holdout pairs");

  ModelParams params = ModelParams::init(config.mode, config.dims, vocab.size(), sub_seed(config.seed, "init"));
  if (!config.pretrained.empty()) load_pretrained_vectors(params, vocab, config.pretrained);
  std::vector<Tensor> tensors = params.tensors();

  TrainResult result;
  result.initial_perplexity = perplexity(params, vocab, holdout_pairs, config.caps, config.max_target);
  result.best_perplexity = std::numeric_limits<double>::infinity();

  std::vector<ModelInput> inputs;
  std::vector<Target> targets;
  for (const auto& p : train_pairs) {
    inputs.push_back(make_input(p, config.caps));
    targets.push_back(make_target(p.unanswerable, config.max_target));
  }

  AdagradState opt;
  opt.initial = config.adagrad_init;
  double keep = 1.0 - config.dropout;
  std::uint64_t example_counter = 0;
  std::size_t batch_counter = 0;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    auto started = std::chrono::steady_clock::now();
    std::mt19937_64 gen(sub_seed(config.seed, "shuffle", epoch));
    std::vector<std::size_t> order(train_pairs.size());
    std::iota(order.begin(), order.end(), 0);
    shuffle(order, gen);

    std::size_t window = config.bucket_window * config.batch_size;
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t w = 0; w < order.size(); w += window) {
      auto first = order.begin() + static_cast<long>(w);
      auto last = order.begin() + static_cast<long>(std::min(order.size(), w + window));
      std::stable_sort(first, last, [&](std::size_t a, std::size_t b) {
        return inputs[a].paragraph.size() + inputs[a].question.size() <
               inputs[b].paragraph.size() + inputs[b].question.size();
      });
      for (auto it = first; it < last; it += static_cast<long>(std::min<std::size_t>(config.batch_size, last - it)))
        batches.emplace_back(it, it + static_cast<long>(std::min<std::size_t>(config.batch_size, last - it)));
    }
    std::vector<std::size_t> batch_order(batches.size());
    std::iota(batch_order.begin(), batch_order.end(), 0);
    shuffle(batch_order, gen);

    EpochLog log;
    log.epoch = epoch;
    double epoch_nll = 0.0;
    std::size_t epoch_tokens = 0;
    std::size_t skipped_before = opt.skipped_steps;

    for (std::size_t b : batch_order) {
      GradientMap batch_grads;
      for (std::size_t idx : batches[b]) {
        Tape tape;
        Dropout dropout(keep, sub_seed(config.seed, "dropout", example_counter++));
        SequenceLoss l;
        try {
          EncodedInput enc = encode(tape, params, vocab, inputs[idx], dropout);
          l = sequence_loss(tape, params, vocab, enc, targets[idx].tokens, dropout);
        } catch (const std::invalid_argument& e) {
          // Primitives reject non-finite values, so a NaN surfaces here.
          throw std::runtime_error("train: batch " + std::to_string(batch_counter) + ": " + e.what());
        }
        double value = l.loss.item();
        if (!std::isfinite(value))
          throw std::runtime_error("train: batch " + std::to_string(batch_counter) + ": non-finite loss");
        epoch_nll += value;
        epoch_tokens += l.tokens;
        log.truncated_targets += targets[idx].truncated ? 1 : 0;
        batch_grads.accumulate(tape.backward(l.loss));
      }
      batch_grads.scale(1.0 / static_cast<double>(batches[b].size()));
      adagrad_step(tensors, batch_grads, opt, config.learning_rate, config.clip);
      ++batch_counter;
    }

    log.train_loss = epoch_nll / static_cast<double>(std::max<std::size_t>(epoch_tokens, 1));
    log.holdout_perplexity = perplexity(params, vocab, holdout_pairs, config.caps, config.max_target);
    log.skipped_steps = opt.skipped_steps - skipped_before;
    log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    if (log.holdout_perplexity < result.best_perplexity) {
      result.best_perplexity = log.holdout_perplexity;
      result.best_epoch = epoch;
      result.best = params.clone();
    }
    result.epochs.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  if (config.epochs == 0) {
    result.best = params.clone();
    result.best_perplexity = result.initial_perplexity;
  }
  return result;
}

// ---------------------------------------------------------------------------
// Persistence

std::map<std::string, std::string> read_key_values(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected key=value");
    auto trim = [](std::string s) {
      auto b = s.find_first_not_of(" \t");
      auto e = s.find_last_not_of(" \t");
      return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
    };
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

void write_key_values(const std::string& path, const std::map<std::string, std::string>& kv) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  for (const auto& [k, v] : kv) out << k << '=' << v << '\n';
  if (!out) throw std::runtime_error("failed writing " + path);
}

void save_model(const std::string& path, const ModelParams& params, const TrainConfig& config, const Vocab& vocab) {
  auto named = params.named();
  save_checkpoint(path, named);
  auto kv = config.to_map();
  kv["mode"] = mode_name(params.mode);
  kv["embed"] = std::to_string(params.dims.embed);
  kv["hidden"] = std::to_string(params.dims.hidden);
  kv["vocab_size"] = std::to_string(vocab.size());
  kv["vocab_fingerprint"] = vocab.fingerprint();
  kv["checkpoint_version"] = std::to_string(kCheckpointVersion);
  write_key_values(path + ".config", kv);
}

LoadedModel load_model(const std::string& path, const Vocab& vocab) {
  auto kv = read_key_values(path + ".config");
  auto fp = kv.find("vocab_fingerprint");
  if (fp == kv.end()) throw std::runtime_error(path + ".config: missing vocab_fingerprint");
  if (fp->second != vocab.fingerprint())
    throw std::runtime_error("vocabulary mismatch: checkpoint was trained with vocab " + fp->second +
                             " but the supplied vocab is " + vocab.fingerprint());
  if (auto v = kv.find("checkpoint_version"); v != kv.end() && v->second != std::to_string(kCheckpointVersion))
    throw std::runtime_error("checkpoint version mismatch: file is version " + v->second + ", this build reads " +
                             std::to_string(kCheckpointVersion));
  LoadedModel m;
  m.config = TrainConfig::from_map(kv);
  m.params = ModelParams::from_named(load_checkpoint(path), m.config.mode, m.config.dims, vocab.size());
  return m;
}

}  // namespace uqg
