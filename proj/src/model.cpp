#include "uqg/model.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <stdexcept>

namespace uqg {

namespace {

constexpr std::array<const char*, 4> kGateNames{"i", "f", "o", "g"};

double unit_draw(std::mt19937_64& gen) { return static_cast<double>(gen() >> 11) * 0x1.0p-53; }

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t k) {
  // splitmix64 finalizer
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (k + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

struct Layout {
  std::string name;
  Tensor ModelParams::*member = nullptr;
  LstmCell ModelParams::*cell = nullptr;
  int kind = 0;  // 0 w, 1 u, 2 b (cells only)
  int gate = 0;
  Shape shape;
};

std::vector<Layout> layout(Mode mode, Dims d, std::size_t vocab) {
  std::size_t e = d.embed, h = d.hidden, s = d.state();
  std::size_t ctx = mode == Mode::Pair2Seq ? 2 * s : s;
  std::vector<Layout> out;
  out.push_back({"embedding.word", &ModelParams::word_embedding, nullptr, 0, 0, {vocab, e}});
  out.push_back({"embedding.char", &ModelParams::char_embedding, nullptr, 0, 0, {kCharVocabSize, e}});
  out.push_back({"embedding.type", &ModelParams::type_embedding, nullptr, 0, 0, {kNumTokenTypes, e}});
  auto add_cell = [&](const std::string& prefix, LstmCell ModelParams::*cell, std::size_t in, std::size_t hid) {
    for (int g = 0; g < 4; ++g) {
      out.push_back({prefix + ".w_" + kGateNames[g], nullptr, cell, 0, g, {in, hid}});
      out.push_back({prefix + ".u_" + kGateNames[g], nullptr, cell, 1, g, {hid, hid}});
      out.push_back({prefix + ".b_" + kGateNames[g], nullptr, cell, 2, g, {hid}});
    }
  };
  add_cell("encoder.forward", &ModelParams::encoder_forward, e, h);
  add_cell("encoder.backward", &ModelParams::encoder_backward, e, h);
  add_cell("decoder", &ModelParams::decoder, e + ctx, s);
  out.push_back({"attention.bilinear", &ModelParams::attention, nullptr, 0, 0, {s, s}});
  out.push_back({"copy.bilinear", &ModelParams::copy_attention, nullptr, 0, 0, {s, s}});
  out.push_back({"output.weight", &ModelParams::output_weight, nullptr, 0, 0, {s + ctx, vocab}});
  out.push_back({"output.bias", &ModelParams::output_bias, nullptr, 0, 0, {vocab}});
  out.push_back({"gate.weight", &ModelParams::gate_weight, nullptr, 0, 0, {s + ctx, 1}});
  out.push_back({"gate.bias", &ModelParams::gate_bias, nullptr, 0, 0, {1}});
  out.push_back({"init.weight", &ModelParams::init_weight, nullptr, 0, 0, {s, s}});
  out.push_back({"init.bias", &ModelParams::init_bias, nullptr, 0, 0, {s}});
  if (mode == Mode::Pair2Seq) {
    out.push_back({"interaction.bilinear", &ModelParams::interaction, nullptr, 0, 0, {s, s}});
    out.push_back({"interaction.paragraph.weight", &ModelParams::paragraph_proj_weight, nullptr, 0, 0, {2 * s, s}});
    out.push_back({"interaction.paragraph.bias", &ModelParams::paragraph_proj_bias, nullptr, 0, 0, {s}});
    out.push_back({"interaction.question.weight", &ModelParams::question_proj_weight, nullptr, 0, 0, {2 * s, s}});
    out.push_back({"interaction.question.bias", &ModelParams::question_proj_bias, nullptr, 0, 0, {s}});
  }
  return out;
}

Tensor& slot(ModelParams& p, const Layout& l) {
  if (l.member) return p.*(l.member);
  auto& cell = p.*(l.cell);
  return l.kind == 0 ? cell.w[l.gate] : l.kind == 1 ? cell.u[l.gate] : cell.b[l.gate];
}

const Tensor& slot(const ModelParams& p, const Layout& l) { return slot(const_cast<ModelParams&>(p), l); }

// input_proj[k] is x W_k + b_k for one step; h and c are undefined on the
// first step (zero state).
std::pair<Tensor, Tensor> lstm_step(Tape& t, const LstmCell& cell, const std::array<Tensor, 4>& input_proj,
                                    const Tensor& h, const Tensor& c) {
  std::array<Tensor, 4> pre;
  for (int k = 0; k < 4; ++k) pre[k] = h.defined() ? t.add(input_proj[k], t.matmul(h, cell.u[k])) : input_proj[k];
  Tensor i = t.sigmoid(pre[0]);
  Tensor f = t.sigmoid(pre[1]);
  Tensor o = t.sigmoid(pre[2]);
  Tensor g = t.tanh(pre[3]);
  Tensor c_new = c.defined() ? t.add(t.mul(f, c), t.mul(i, g)) : t.mul(i, g);
  Tensor h_new = t.mul(o, t.tanh(c_new));
  return {h_new, c_new};
}

std::vector<Tensor> run_direction(Tape& t, const LstmCell& cell, const Tensor& embedded, bool reverse) {
  std::size_t n = embedded.rows();
  std::array<Tensor, 4> proj;
  for (int k = 0; k < 4; ++k) proj[k] = t.add(t.matmul(embedded, cell.w[k]), cell.b[k]);
  std::vector<Tensor> states(n);
  Tensor h, c;
  for (std::size_t step = 0; step < n; ++step) {
    std::size_t pos = reverse ? n - 1 - step : step;
    std::array<Tensor, 4> x;
    for (int k = 0; k < 4; ++k) x[k] = t.slice_rows(proj[k], pos, pos + 1);
    std::tie(h, c) = lstm_step(t, cell, x, h, c);
    states[pos] = h;
  }
  return states;
}

// softmax_i(h_i^T W s) over the rows of memory, and the weighted sum.
std::pair<Tensor, Tensor> attend(Tape& t, const Tensor& memory, const Tensor& bilinear, const Tensor& query) {
  Tensor projected = t.matmul(query, bilinear, false, true);
  Tensor weights = t.softmax(t.matmul(projected, memory, false, true));
  return {weights, t.matmul(weights, memory)};
}

}  // namespace

std::string mode_name(Mode mode) { return mode == Mode::Pair2Seq ? "pair2seq" : "seq2seq"; }

Mode parse_mode(const std::string& name) {
  if (name == "seq2seq") return Mode::Seq2Seq;
  if (name == "pair2seq") return Mode::Pair2Seq;
  throw std::invalid_argument("unknown mode '" + name + "' (expected seq2seq or pair2seq)");
}

// ---------------------------------------------------------------------------
// Parameters

std::vector<NamedTensor> ModelParams::named() const {
  std::vector<NamedTensor> out;
  for (const auto& l : layout(mode, dims, vocab_size)) out.push_back({l.name, slot(*this, l)});
  return out;
}

std::vector<Tensor> ModelParams::tensors() const {
  std::vector<Tensor> out;
  for (auto& n : named()) out.push_back(n.tensor);
  return out;
}

ModelParams ModelParams::init(Mode mode, Dims dims, std::size_t vocab_size, std::uint64_t seed) {
  if (vocab_size <= Vocab::kNumSpecials) throw std::invalid_argument("model: vocabulary has no ordinary tokens");
  ModelParams p;
  p.mode = mode;
  p.dims = dims;
  p.vocab_size = vocab_size;
  std::mt19937_64 gen(seed);
  for (const auto& l : layout(mode, dims, vocab_size)) {
    std::size_t n = 1;
    for (auto d : l.shape) n *= d;
    std::vector<double> v(n);
    for (auto& x : v) x = 0.2 * unit_draw(gen) - 0.1;
    slot(p, l) = Tensor::from(l.shape, std::move(v), true);
  }
  return p;
}

ModelParams ModelParams::from_named(const std::vector<NamedTensor>& tensors, Mode mode, Dims dims,
                                    std::size_t vocab_size) {
  std::map<std::string, Tensor> by_name;
  for (const auto& n : tensors) by_name[n.name] = n.tensor;
  ModelParams p;
  p.mode = mode;
  p.dims = dims;
  p.vocab_size = vocab_size;
  auto expected = layout(mode, dims, vocab_size);
  for (const auto& l : expected) {
    auto it = by_name.find(l.name);
    if (it == by_name.end()) throw std::runtime_error("checkpoint is missing tensor '" + l.name + "'");
    if (it->second.shape() != l.shape)
      throw std::runtime_error("checkpoint tensor '" + l.name + "' has shape " + shape_string(it->second.shape()) +
                               ", expected " + shape_string(l.shape));
    slot(p, l) = Tensor::from(l.shape, {it->second.values().begin(), it->second.values().end()}, true);
  }
  if (by_name.size() != expected.size())
    throw std::runtime_error("checkpoint has " + std::to_string(by_name.size()) + " tensors, expected " +
                             std::to_string(expected.size()) + " for " + mode_name(mode));
  return p;
}

ModelParams ModelParams::clone() const { return from_named(named(), mode, dims, vocab_size); }

std::size_t load_pretrained_vectors(ModelParams& params, const Vocab& vocab, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open pretrained vectors " + path);
  std::size_t d = params.dims.embed;
  auto table = params.word_embedding.mutable_values();
  std::vector<bool> done(vocab.size(), false);
  std::size_t replaced = 0;
  std::string line;
  std::vector<double> row;
  while (std::getline(in, line)) {
    std::istringstream fields(line);
    std::string token;
    if (!(fields >> token) || !vocab.contains(token)) continue;
    int id = vocab.id(token);
    if (id < static_cast<int>(Vocab::kNumSpecials) || done[static_cast<std::size_t>(id)]) continue;
    row.clear();
    double x;
    while (fields >> x) row.push_back(x);
    if (row.size() != d || !fields.eof()) continue;
    std::copy(row.begin(), row.end(), table.begin() + static_cast<long>(static_cast<std::size_t>(id) * d));
    done[static_cast<std::size_t>(id)] = true;
    ++replaced;
  }
  return replaced;
}

Tensor Dropout::operator()(Tape& tape, const Tensor& x) {
  if (!active()) return x;
  return tape.dropout(x, keep_, mix_seed(seed_, calls_++));
}

// ---------------------------------------------------------------------------
// Inputs

ModelInput make_input(const std::vector<std::string>& paragraph, std::size_t answer_start, std::size_t answer_end,
                      const std::vector<std::string>& question, const InputCaps& caps) {
  ModelInput in;
  std::size_t n = paragraph.size();
  std::size_t begin = 0, end = n;
  if (n > caps.paragraph) {
    std::size_t answer_len = std::min(answer_end - answer_start, caps.paragraph);
    std::size_t slack = caps.paragraph - answer_len;
    begin = answer_start > slack / 2 ? answer_start - slack / 2 : 0;
    begin = std::min(begin, n - caps.paragraph);
    end = begin + caps.paragraph;
  }
  in.paragraph.assign(paragraph.begin() + static_cast<long>(begin), paragraph.begin() + static_cast<long>(end));
  in.answer_start = answer_start - begin;
  in.answer_end = std::min(answer_end, end) - begin;
  std::size_t qn = std::min(question.size(), caps.question);
  in.question.assign(question.begin(), question.begin() + static_cast<long>(qn));
  return in;
}

ModelInput make_input(const AlignedPair& pair, const InputCaps& caps) {
  return make_input(pair.paragraph, pair.answer_start, pair.answer_end, pair.answerable, caps);
}

namespace {

void append(SourceSequence& seq, const std::string& token, const Vocab& vocab, TokenType type, bool special) {
  seq.tokens.push_back(token);
  seq.ids.push_back(vocab.id(token));
  seq.chars.push_back(special ? std::vector<int>{} : char_ids(token));
  seq.types.push_back(type);
}

}  // namespace

SourceSequence paragraph_sequence(const ModelInput& input, const Vocab& vocab) {
  SourceSequence seq;
  for (std::size_t i = 0; i < input.paragraph.size(); ++i) {
    bool in_answer = i >= input.answer_start && i < input.answer_end;
    append(seq, input.paragraph[i], vocab, in_answer ? TokenType::Answer : TokenType::Paragraph, false);
  }
  return seq;
}

SourceSequence question_sequence(const ModelInput& input, const Vocab& vocab) {
  SourceSequence seq;
  for (const auto& t : input.question) append(seq, t, vocab, TokenType::Question, false);
  return seq;
}

SourceSequence packed_sequence(const ModelInput& input, const Vocab& vocab) {
  SourceSequence seq = paragraph_sequence(input, vocab);
  append(seq, Vocab::specials()[Vocab::kSep], vocab, TokenType::Paragraph, true);
  SourceSequence q = question_sequence(input, vocab);
  for (std::size_t i = 0; i < q.tokens.size(); ++i) {
    seq.tokens.push_back(q.tokens[i]);
    seq.ids.push_back(q.ids[i]);
    seq.chars.push_back(q.chars[i]);
    seq.types.push_back(q.types[i]);
  }
  return seq;
}

int EncodedInput::extended_id(const std::string& token, const Vocab& vocab) const {
  if (vocab.contains(token)) return vocab.id(token);
  auto it = std::find(oov.begin(), oov.end(), token);
  if (it == oov.end()) return -1;
  return static_cast<int>(vocab_size + static_cast<std::size_t>(it - oov.begin()));
}

std::string EncodedInput::extended_token(int id, const Vocab& vocab) const {
  if (id < 0) throw std::out_of_range("extended id " + std::to_string(id));
  if (static_cast<std::size_t>(id) < vocab_size) return vocab.token(id);
  return oov.at(static_cast<std::size_t>(id) - vocab_size);
}

// ---------------------------------------------------------------------------
// Encoder

Tensor embed_inputs(Tape& tape, const ModelParams& params, const SourceSequence& seq) {
  std::size_t n = seq.ids.size();
  if (n == 0) throw std::invalid_argument("embed_inputs: empty sequence");
  if (seq.chars.size() != n || seq.types.size() != n)
    throw std::invalid_argument("embed_inputs: id, char and type sequences differ in length");
  std::vector<int> types;
  for (auto t : seq.types) {
    auto v = static_cast<int>(t);
    if (v < 0 || v >= static_cast<int>(kNumTokenTypes)) throw std::invalid_argument("embed_inputs: bad token type");
    types.push_back(v);
  }
  Tensor words = tape.embedding(params.word_embedding, seq.ids);
  Tensor kinds = tape.embedding(params.type_embedding, types);
  std::vector<Tensor> pooled;
  pooled.reserve(n);
  Tensor zero;
  for (const auto& chars : seq.chars) {
    if (chars.empty()) {
      if (!zero.defined()) zero = Tensor::zeros({1, params.dims.embed});
      pooled.push_back(zero);
    } else {
      pooled.push_back(tape.max_pool_rows(tape.embedding(params.char_embedding, chars)));
    }
  }
  return tape.add(tape.add(words, tape.stack_rows(pooled)), kinds);
}

BiLstmOutput run_encoder(Tape& tape, const ModelParams& params, const Tensor& embedded) {
  auto fwd = run_direction(tape, params.encoder_forward, embedded, false);
  auto bwd = run_direction(tape, params.encoder_backward, embedded, true);
  BiLstmOutput out;
  out.states = tape.concat({tape.stack_rows(fwd), tape.stack_rows(bwd)});
  out.summary = tape.concat({fwd.back(), bwd.front()});
  return out;
}

Interaction interact(Tape& t, const ModelParams& params, const Tensor& hp, const Tensor& hq) {
  Interaction out;
  Tensor projected = t.matmul(hp, params.interaction);    // |p| x s
  out.alpha = t.softmax(t.matmul(projected, hq, false, true));  // |p| x |q|
  out.beta = t.softmax(t.matmul(hq, projected, false, true));   // |q| x |p|
  Tensor attended_q = t.matmul(out.alpha, hq);
  Tensor attended_p = t.matmul(out.beta, hp);
  out.paragraph = t.tanh(t.add(t.matmul(t.concat({hp, attended_q}), params.paragraph_proj_weight),
                               params.paragraph_proj_bias));
  out.question = t.tanh(t.add(t.matmul(t.concat({hq, attended_p}), params.question_proj_weight),
                              params.question_proj_bias));
  return out;
}

EncodedInput encode(Tape& tape, const ModelParams& params, const Vocab& vocab, const ModelInput& input,
                    Dropout& dropout) {
  if (input.question.empty() || input.paragraph.empty()) throw std::invalid_argument("encode: empty sequence");
  EncodedInput enc;
  enc.mode = params.mode;
  enc.vocab_size = params.vocab_size;

  auto run = [&](const SourceSequence& seq) {
    BiLstmOutput o = run_encoder(tape, params, dropout(tape, embed_inputs(tape, params, seq)));
    o.states = dropout(tape, o.states);
    return o;
  };

  if (params.mode == Mode::Seq2Seq) {
    SourceSequence seq = packed_sequence(input, vocab);
    BiLstmOutput o = run(seq);
    enc.memory = o.states;
    enc.copy_memory = o.states;
    enc.init_summary = o.summary;
    enc.copy_tokens = seq.tokens;
  } else {
    SourceSequence p = paragraph_sequence(input, vocab);
    SourceSequence q = question_sequence(input, vocab);
    BiLstmOutput po = run(p);
    BiLstmOutput qo = run(q);
    Interaction inter = interact(tape, params, po.states, qo.states);
    enc.paragraph = inter.paragraph;
    enc.question = inter.question;
    enc.copy_memory = tape.stack_rows(std::array<Tensor, 2>{inter.question, inter.paragraph});
    enc.init_summary = qo.summary;
    enc.copy_tokens = q.tokens;
    enc.copy_tokens.insert(enc.copy_tokens.end(), p.tokens.begin(), p.tokens.end());
  }

  for (const auto& tok : enc.copy_tokens) {
    if (vocab.contains(tok)) {
      enc.copy_ids.push_back(vocab.id(tok));
      continue;
    }
    auto it = std::find(enc.oov.begin(), enc.oov.end(), tok);
    if (it == enc.oov.end()) it = enc.oov.insert(enc.oov.end(), tok);
    enc.copy_ids.push_back(static_cast<int>(enc.vocab_size + static_cast<std::size_t>(it - enc.oov.begin())));
  }
  return enc;
}

// ---------------------------------------------------------------------------
// Decoder

DecoderState init_decoder(Tape& tape, const ModelParams& params, const EncodedInput& enc) {
  DecoderState s;
  std::size_t width = params.dims.state();
  s.hidden = tape.tanh(tape.add(tape.matmul(enc.init_summary, params.init_weight), params.init_bias));
  s.cell = Tensor::zeros({1, width});
  s.context = Tensor::zeros({1, width});
  if (params.mode == Mode::Pair2Seq) s.question_context = Tensor::zeros({1, width});
  return s;
}

StepOutput decode_step(Tape& t, const ModelParams& params, const EncodedInput& enc, const DecoderState& prev,
                       int prev_token, Dropout& dropout) {
  if (prev_token < 0 || static_cast<std::size_t>(prev_token) >= params.vocab_size) prev_token = Vocab::kUnk;
  bool pair = params.mode == Mode::Pair2Seq;
  std::array<int, 1> ids{prev_token};
  Tensor y = t.embedding(params.word_embedding, ids);
  Tensor x = pair ? t.concat({y, prev.context, prev.question_context}) : t.concat({y, prev.context});

  std::array<Tensor, 4> proj;
  for (int k = 0; k < 4; ++k) proj[k] = t.add(t.matmul(x, params.decoder.w[k]), params.decoder.b[k]);

  StepOutput out;
  std::tie(out.state.hidden, out.state.cell) = lstm_step(t, params.decoder, proj, prev.hidden, prev.cell);
  Tensor s = dropout(t, out.state.hidden);

  Tensor features;
  if (pair) {
    std::tie(out.attention, out.state.context) = attend(t, enc.paragraph, params.attention, s);
    std::tie(out.question_attention, out.state.question_context) = attend(t, enc.question, params.attention, s);
    features = t.concat({s, out.state.context, out.state.question_context});
  } else {
    std::tie(out.attention, out.state.context) = attend(t, enc.memory, params.attention, s);
    features = t.concat({s, out.state.context});
  }
  out.vocab_dist = t.softmax(t.add(t.matmul(features, params.output_weight), params.output_bias));
  out.gate = t.sigmoid(t.add(t.matmul(features, params.gate_weight), params.gate_bias));
  Tensor projected = t.matmul(s, params.copy_attention, false, true);
  out.copy_dist = t.softmax(t.matmul(projected, enc.copy_memory, false, true));
  return out;
}

std::vector<double> mix_distribution(std::span<const double> vocab_dist, std::span<const double> copy_dist,
                                     double gate, std::span<const int> copy_ids, std::size_t extended_size) {
  if (copy_dist.size() != copy_ids.size())
    throw std::invalid_argument("mix_distribution: copy distribution and source positions differ in length");
  std::vector<double> p(extended_size, 0.0);
  for (std::size_t w = 0; w < vocab_dist.size(); ++w) p[w] = gate * vocab_dist[w];
  for (std::size_t i = 0; i < copy_dist.size(); ++i)
    p[static_cast<std::size_t>(copy_ids[i])] += (1.0 - gate) * copy_dist[i];
  return p;
}

std::vector<double> final_distribution(const StepOutput& step, const EncodedInput& enc) {
  return mix_distribution(step.vocab_dist.values(), step.copy_dist.values(), step.gate.item(), enc.copy_ids,
                          enc.extended_size());
}

Tensor token_probability(Tape& t, const StepOutput& step, const EncodedInput& enc, int extended_id) {
  std::vector<double> occurrences(enc.copy_ids.size(), 0.0);
  bool copyable = false;
  for (std::size_t i = 0; i < enc.copy_ids.size(); ++i) {
    if (enc.copy_ids[i] == extended_id) {
      occurrences[i] = 1.0;
      copyable = true;
    }
  }
  bool in_vocab = extended_id >= 0 && static_cast<std::size_t>(extended_id) < enc.vocab_size;
  Tensor result;
  if (in_vocab) {
    Tensor pick = Tensor::zeros({enc.vocab_size, 1});
    pick.mutable_values()[static_cast<std::size_t>(extended_id)] = 1.0;
    result = t.mul(step.gate, t.matmul(step.vocab_dist, pick));
  }
  if (copyable) {
    std::size_t positions = occurrences.size();
    Tensor copy_mass = t.matmul(step.copy_dist, Tensor::from({positions, 1}, std::move(occurrences)));
    Tensor closed = t.add(t.scale(step.gate, -1.0), Tensor::scalar(1.0));
    Tensor part = t.mul(closed, copy_mass);
    result = result.defined() ? t.add(result, part) : part;
  }
  return result.defined() ? result : Tensor::zeros({1, 1});
}

}  // namespace uqg
