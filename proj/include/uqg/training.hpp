#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "uqg/dataset.hpp"
#include "uqg/model.hpp"
#include "uqg/tensor.hpp"
#include "uqg/textproc.hpp"

namespace uqg {

struct TrainConfig {
  std::size_t batch_size = 32;
  double learning_rate = 0.15;
  double dropout = 0.2;
  std::size_t epochs = 10;
  double clip = 5.0;
  std::uint64_t seed = 13;
  Mode mode = Mode::Pair2Seq;
  Dims dims;
  InputCaps caps;
  std::size_t max_target = 50;  // decode steps, EOS included
  double adagrad_init = 0.1;
  std::size_t bucket_window = 50;  // batches per length-sorted window
  std::string pretrained;

  void validate() const;
  std::map<std::string, std::string> to_map() const;
  static TrainConfig from_map(const std::map<std::string, std::string>& kv);
};

// Gold question truncated to max_steps - 1 tokens, then EOS.
struct Target {
  std::vector<std::string> tokens;
  bool truncated = false;
};
Target make_target(const std::vector<std::string>& question, std::size_t max_steps);

struct SequenceLoss {
  Tensor loss;  // -sum_t log(P(q_t) + 1e-12)
  std::size_t tokens = 0;
};

// Teacher-forced negative log-likelihood of target (EOS already appended).
SequenceLoss sequence_loss(Tape& tape, const ModelParams& params, const Vocab& vocab, const EncodedInput& enc,
                           const std::vector<std::string>& target, Dropout& dropout);

// Same objective over precomputed mixture distributions (extended ids, -1 = unreachable).
double sequence_nll(std::span<const std::vector<double>> step_distributions, std::span<const int> targets);

struct AdagradState {
  double initial = 0.1;
  std::unordered_map<const TensorData*, std::vector<double>> accumulators;
  std::size_t skipped_steps = 0;

  const std::vector<double>* accumulator(const Tensor& t) const;
};

// Clips the global gradient norm to `clip`, then acc += g^2 and
// theta -= lr * g / sqrt(acc). Non-finite gradients skip the step.
bool adagrad_step(std::span<Tensor> params, const GradientMap& grads, AdagradState& state, double lr, double clip);

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;  // mean per-token NLL
  double holdout_perplexity = 0.0;
  double seconds = 0.0;
  std::size_t skipped_steps = 0;
  std::size_t truncated_targets = 0;
};

std::string format_epoch_log(const EpochLog& log);

// exp(total NLL / total target tokens), dropout disabled.
double perplexity(const ModelParams& params, const Vocab& vocab, const std::vector<AlignedPair>& pairs,
                  const InputCaps& caps = {}, std::size_t max_target = 50);

struct TrainResult {
  ModelParams best;
  double initial_perplexity = 0.0;
  double best_perplexity = 0.0;
  std::size_t best_epoch = 0;
  std::vector<EpochLog> epochs;
};

// Per epoch: seeded shuffle, length-bucketed batches, Adagrad on batch-mean
// gradients; keeps the parameters with the lowest holdout perplexity.
TrainResult train(const TrainConfig& config, const Vocab& vocab, const std::vector<AlignedPair>& train_pairs,
                  const std::vector<AlignedPair>& holdout_pairs,
                  const std::function<void(const EpochLog&)>& on_epoch = {});

// Derives the named sub-seed used for one purpose from the root seed.
std::uint64_t sub_seed(std::uint64_t root, const std::string& purpose, std::uint64_t index = 0);

// Checkpoint plus "<path>.config" sidecar (key=value lines: the training
// configuration, vocabulary size and fingerprint).
void save_model(const std::string& path, const ModelParams& params, const TrainConfig& config, const Vocab& vocab);

struct LoadedModel {
  ModelParams params;
  TrainConfig config;
};

// Rejects a vocabulary whose fingerprint differs from the one recorded at
// training time, naming both.
LoadedModel load_model(const std::string& path, const Vocab& vocab);

std::map<std::string, std::string> read_key_values(const std::string& path);
void write_key_values(const std::string& path, const std::map<std::string, std::string>& kv);

}  // namespace uqg
