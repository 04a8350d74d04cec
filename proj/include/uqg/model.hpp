#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "uqg/dataset.hpp"
#include "uqg/tensor.hpp"
#include "uqg/textproc.hpp"

namespace uqg {

enum class Mode { Seq2Seq, Pair2Seq };

std::string mode_name(Mode mode);
Mode parse_mode(const std::string& name);

// Embedding width and per-direction encoder width. The decoder state and the
// encoder output are both 2 * hidden wide.
struct Dims {
  std::size_t embed = 300;
  std::size_t hidden = 150;

  std::size_t state() const { return 2 * hidden; }
  bool operator==(const Dims&) const = default;
};

// Gate order: input, forget, output, candidate.
struct LstmCell {
  std::array<Tensor, 4> w;  // input -> hidden
  std::array<Tensor, 4> u;  // hidden -> hidden
  std::array<Tensor, 4> b;
};

struct ModelParams {
  Mode mode = Mode::Seq2Seq;
  Dims dims;
  std::size_t vocab_size = 0;

  Tensor word_embedding;  // |V| x embed, shared by encoder and decoder
  Tensor char_embedding;  // 97 x embed
  Tensor type_embedding;  // 3 x embed
  LstmCell encoder_forward;
  LstmCell encoder_backward;
  LstmCell decoder;
  Tensor attention;  // state x state bilinear
  Tensor copy_attention;
  Tensor output_weight;  // features x |V|
  Tensor output_bias;
  Tensor gate_weight;  // features x 1
  Tensor gate_bias;
  Tensor init_weight;  // state x state
  Tensor init_bias;
  // Pair-to-sequence interaction layer.
  Tensor interaction;
  Tensor paragraph_proj_weight;  // 2*state x state
  Tensor paragraph_proj_bias;
  Tensor question_proj_weight;
  Tensor question_proj_bias;

  // Width of the context fed back into the decoder and into the output layer.
  std::size_t context_width() const { return mode == Mode::Pair2Seq ? 2 * dims.state() : dims.state(); }

  // Stable order; this is the checkpoint layout.
  std::vector<NamedTensor> named() const;
  std::vector<Tensor> tensors() const;

  // Uniform(-0.1, 0.1).
  static ModelParams init(Mode mode, Dims dims, std::size_t vocab_size, std::uint64_t seed);
  // Validates every expected name and shape.
  static ModelParams from_named(const std::vector<NamedTensor>& tensors, Mode mode, Dims dims,
                                std::size_t vocab_size);
  ModelParams clone() const;
};

// Replaces word-embedding rows for tokens found in a "token v1 ... vd" text
// file. Returns the number of rows replaced; malformed lines are skipped.
std::size_t load_pretrained_vectors(ModelParams& params, const Vocab& vocab, const std::string& path);

// Seeded inverted dropout applied in call order; keep >= 1 disables it.
class Dropout {
 public:
  Dropout() = default;
  Dropout(double keep, std::uint64_t seed) : keep_(keep), seed_(seed) {}
  Tensor operator()(Tape& tape, const Tensor& x);
  bool active() const { return keep_ < 1.0; }

 private:
  double keep_ = 1.0;
  std::uint64_t seed_ = 0;
  std::uint64_t calls_ = 0;
};

struct InputCaps {
  std::size_t paragraph = 300;
  std::size_t question = 50;
};

struct ModelInput {
  std::vector<std::string> paragraph;
  std::size_t answer_start = 0;
  std::size_t answer_end = 0;
  std::vector<std::string> question;
};

// Truncates the question and windows the paragraph so the answer stays inside.
ModelInput make_input(const std::vector<std::string>& paragraph, std::size_t answer_start, std::size_t answer_end,
                      const std::vector<std::string>& question, const InputCaps& caps = {});
ModelInput make_input(const AlignedPair& pair, const InputCaps& caps = {});

struct SourceSequence {
  std::vector<std::string> tokens;
  std::vector<int> ids;
  std::vector<std::vector<int>> chars;
  std::vector<TokenType> types;
};

SourceSequence packed_sequence(const ModelInput& input, const Vocab& vocab);
SourceSequence paragraph_sequence(const ModelInput& input, const Vocab& vocab);
SourceSequence question_sequence(const ModelInput& input, const Vocab& vocab);

struct EncodedInput {
  Mode mode = Mode::Seq2Seq;
  std::size_t vocab_size = 0;
  Tensor memory;         // seq2seq attention states, L x state
  Tensor paragraph;      // pair2seq question-aware paragraph states
  Tensor question;       // pair2seq paragraph-aware question states
  Tensor copy_memory;    // states the copy scores run over
  Tensor init_summary;   // [last forward; first backward] encoder state
  std::vector<std::string> copy_tokens;
  std::vector<int> copy_ids;  // extended ids, one per copy position
  std::vector<std::string> oov;  // extended id vocab_size + k is oov[k]

  std::size_t extended_size() const { return vocab_size + oov.size(); }
  // Extended id of a target token, or -1 when neither vocabulary nor source has it.
  int extended_id(const std::string& token, const Vocab& vocab) const;
  std::string extended_token(int id, const Vocab& vocab) const;
};

// e_i = word[w_i] + maxpool(char[chars_i]) + type[t_i]; empty char lists pool to zero.
Tensor embed_inputs(Tape& tape, const ModelParams& params, const SourceSequence& seq);

struct BiLstmOutput {
  Tensor states;   // L x state
  Tensor summary;  // 1 x state
};

BiLstmOutput run_encoder(Tape& tape, const ModelParams& params, const Tensor& embedded);

struct Interaction {
  Tensor paragraph;  // tanh(W_p [h^p; attended question] + b_p)
  Tensor question;
  Tensor alpha;  // |p| x |q|, rows normalize over question positions
  Tensor beta;   // |q| x |p|, rows normalize over paragraph positions
};

Interaction interact(Tape& tape, const ModelParams& params, const Tensor& paragraph_states,
                     const Tensor& question_states);

EncodedInput encode(Tape& tape, const ModelParams& params, const Vocab& vocab, const ModelInput& input,
                    Dropout& dropout);

struct DecoderState {
  Tensor hidden;
  Tensor cell;
  Tensor context;           // seq2seq context, or paragraph context in pair2seq
  Tensor question_context;  // pair2seq only
};

DecoderState init_decoder(Tape& tape, const ModelParams& params, const EncodedInput& enc);

struct StepOutput {
  DecoderState state;
  Tensor vocab_dist;  // 1 x |V|
  Tensor copy_dist;   // 1 x copy positions
  Tensor gate;        // 1 x 1, weight of the vocabulary distribution
  Tensor attention;   // over memory (seq2seq) or paragraph (pair2seq)
  Tensor question_attention;
};

StepOutput decode_step(Tape& tape, const ModelParams& params, const EncodedInput& enc, const DecoderState& prev,
                       int prev_token, Dropout& dropout);

// P(w) = gate * P_v(w) + (1 - gate) * sum of copy mass on positions holding w,
// over the extended vocabulary.
std::vector<double> mix_distribution(std::span<const double> vocab_dist, std::span<const double> copy_dist,
                                     double gate, std::span<const int> copy_ids, std::size_t extended_size);
std::vector<double> final_distribution(const StepOutput& step, const EncodedInput& enc);

// The mixture probability of one extended id, recorded on the tape (1 x 1).
Tensor token_probability(Tape& tape, const StepOutput& step, const EncodedInput& enc, int extended_id);

}  // namespace uqg
