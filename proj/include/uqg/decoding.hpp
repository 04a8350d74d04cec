#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "uqg/model.hpp"
#include "uqg/textproc.hpp"

namespace uqg {

struct BeamConfig {
  std::size_t beam_size = 5;
  std::size_t max_len = 50;     // decode steps, EOS included
  bool length_penalty = false;  // rank by log-probability per emitted step
};

struct Hypothesis {
  std::vector<int> ids;             // extended ids, EOS included when finished
  std::vector<std::string> tokens;  // surface forms, EOS excluded
  double logprob = 0.0;
  bool finished = false;
  DecoderState state;
};

// Ids never emitted by a decoder: PAD, UNK, BOS and SEP.
bool suppressed(int extended_id);

// The distribution decoders choose from: suppressed ids set to 0, the rest
// left as is (scores stay log mixture probabilities).
std::vector<double> suppress(std::vector<double> dist);

// Ranked hypotheses. Finished ones when any exist; otherwise the live beam
// at max_len.
std::vector<Hypothesis> beam_search(const ModelParams& params, const Vocab& vocab, const EncodedInput& enc,
                                    const BeamConfig& config = {});

// Argmax each step after suppression, ties to the lowest id.
Hypothesis greedy_decode(const ModelParams& params, const Vocab& vocab, const EncodedInput& enc,
                         std::size_t max_len = 50);

// Sum of per-step log mixture probabilities when teacher-forcing `tokens`
// followed by EOS (EOS omitted when `finished` is false).
double score_sequence(const ModelParams& params, const Vocab& vocab, const EncodedInput& enc,
                      const std::vector<std::string>& tokens, bool finished = true);

// Drops hypotheses whose tokens equal the source question; keeps order.
std::vector<Hypothesis> filter_outputs(const std::vector<Hypothesis>& hyps, const std::vector<std::string>& source);

// Inference-mode encoding (no dropout, nothing recorded).
EncodedInput encode_for_inference(const ModelParams& params, const Vocab& vocab, const ModelInput& input);

struct GenerationRecord {
  std::string id;
  std::vector<std::string> tokens;
  double logprob = 0.0;
};

// id \t space-joined question \t log-probability
void write_generations(const std::string& path, const std::vector<GenerationRecord>& records);
std::vector<GenerationRecord> read_generations(const std::string& path);

}  // namespace uqg
