#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <limits>

#include "support.hpp"
#include "uqg/decoding.hpp"

using namespace uqg;
using test_support::words;

namespace {

Vocab toy_vocab() { return build_vocab({words("the king built a tower in 1800 who what ? when")}, 1); }

ModelInput toy_input() {
  return make_input(words("in 1800 the king built a zebra tower"), 1, 2, words("who built the zebra tower ?"));
}

// Teacher-forced log-probability of an id sequence, straight from decode_step.
double forced_score(const ModelParams& p, const EncodedInput& enc, const std::vector<int>& ids) {
  Tape tape(false);
  Dropout off;
  auto state = init_decoder(tape, p, enc);
  int prev = Vocab::kBos;
  double total = 0;
  for (int id : ids) {
    auto step = decode_step(tape, p, enc, state, prev, off);
    total += std::log(final_distribution(step, enc)[static_cast<std::size_t>(id)]);
    state = step.state;
    prev = id;
  }
  return total;
}

// Best finished sequence of at most max_len steps (EOS step included), by
// enumerating every id sequence over the given emitting ids.
std::pair<std::vector<int>, double> exhaustive_best(const ModelParams& p, const EncodedInput& enc,
                                                    const std::vector<int>& emit, std::size_t max_len) {
  std::vector<int> best;
  double best_score = -std::numeric_limits<double>::infinity();
  std::function<void(std::vector<int>&)> walk = [&](std::vector<int>& prefix) {
    prefix.push_back(Vocab::kEos);
    double s = forced_score(p, enc, prefix);
    if (s > best_score) {
      best_score = s;
      best = prefix;
    }
    prefix.pop_back();
    if (prefix.size() + 1 >= max_len) return;
    for (int id : emit) {
      prefix.push_back(id);
      walk(prefix);
      prefix.pop_back();
    }
  };
  std::vector<int> start;
  walk(start);
  return {best, best_score};
}

}  // namespace

TEST_CASE("suppressed ids") {
  CHECK(suppressed(Vocab::kPad));
  CHECK(suppressed(Vocab::kUnk));
  CHECK(suppressed(Vocab::kBos));
  CHECK(suppressed(Vocab::kSep));
  CHECK_FALSE(suppressed(Vocab::kEos));
  CHECK_FALSE(suppressed(5));
}

TEST_CASE("beam of one is greedy") {
  Vocab vocab = toy_vocab();
  std::mt19937_64 gen(1);
  for (Mode mode : {Mode::Seq2Seq, Mode::Pair2Seq}) {
    for (int trial = 0; trial < 15; ++trial) {
      auto p = test_support::random_model(mode, Dims{5, 3}, vocab.size(), gen(), 1.0);
      auto enc = encode_for_inference(p, vocab, toy_input());
      auto greedy = greedy_decode(p, vocab, enc, 8);
      auto beam = beam_search(p, vocab, enc, BeamConfig{1, 8});
      REQUIRE(beam.size() == 1);
      CHECK(beam[0].ids == greedy.ids);
      CHECK(beam[0].tokens == greedy.tokens);
      CHECK(beam[0].logprob == greedy.logprob);
      CHECK(greedy.ids.size() <= 8);
    }
  }
}

TEST_CASE("full-width beam finds the exhaustive argmax") {
  for (const char* alphabet : {"a b", "a b c"}) {
    Vocab vocab = build_vocab({words(alphabet)}, 1);
    std::vector<int> emit;
    for (const auto& t : words(alphabet)) emit.push_back(vocab.id(t));
    std::size_t width = emit.size() + 1;
    std::size_t full = width * width * width;
    ModelInput in = make_input(words("a b a c b"), 1, 2, words("b a"));
    std::mt19937_64 gen(2);
    for (Mode mode : {Mode::Seq2Seq, Mode::Pair2Seq}) {
      for (int trial = 0; trial < 25; ++trial) {
        auto p = test_support::random_model(mode, Dims{4, 3}, vocab.size(), gen(), 1.5);
        auto enc = encode_for_inference(p, vocab, in);
        auto [ids, score] = exhaustive_best(p, enc, emit, 3);
        auto beams = beam_search(p, vocab, enc, BeamConfig{full, 3});
        REQUIRE_FALSE(beams.empty());
        CAPTURE(alphabet);
        CHECK(beams[0].finished);
        CHECK(beams[0].ids == ids);
        CHECK(beams[0].logprob == doctest::Approx(score).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("hypothesis scores match teacher-forced rescoring; UNK never emitted") {
  Vocab vocab = toy_vocab();
  std::mt19937_64 gen(3);
  for (Mode mode : {Mode::Seq2Seq, Mode::Pair2Seq}) {
    for (int trial = 0; trial < 10; ++trial) {
      auto p = test_support::random_model(mode, Dims{5, 3}, vocab.size(), gen(), 1.0);
      // Push vocabulary mass toward UNK so suppression has something to do.
      Tensor bias = p.output_bias;
      bias.mutable_values()[Vocab::kUnk] += 6.0;
      auto enc = encode_for_inference(p, vocab, toy_input());
      auto hyps = beam_search(p, vocab, enc, BeamConfig{5, 7});
      REQUIRE_FALSE(hyps.empty());
      for (std::size_t i = 0; i < hyps.size(); ++i) {
        const auto& h = hyps[i];
        for (int id : h.ids) CHECK_FALSE(suppressed(id));
        for (const auto& t : h.tokens) CHECK(t != "<unk>");
        CHECK(h.finished == (h.ids.back() == Vocab::kEos));
        CHECK(std::abs(h.logprob - score_sequence(p, vocab, enc, h.tokens, h.finished)) <= 1e-9);
        CHECK(std::abs(h.logprob - forced_score(p, enc, h.ids)) <= 1e-9);
        if (i > 0) CHECK(hyps[i - 1].logprob >= h.logprob);
      }
    }
  }
}

TEST_CASE("copied out-of-vocabulary words appear as surface forms") {
  Vocab vocab = toy_vocab();
  auto p = test_support::random_model(Mode::Pair2Seq, Dims{5, 3}, vocab.size(), 4, 1.0);
  // Gate closed: everything comes from the copy distribution.
  for (double& w : Tensor(p.gate_weight).mutable_values()) w = 0;
  Tensor(p.gate_bias).mutable_values()[0] = -40;
  auto enc = encode_for_inference(p, vocab, toy_input());
  auto hyps = beam_search(p, vocab, enc, BeamConfig{5, 4});
  bool saw_zebra = false;
  for (const auto& h : hyps)
    for (std::size_t k = 0; k < h.tokens.size(); ++k) {
      CHECK(std::find(enc.copy_tokens.begin(), enc.copy_tokens.end(), h.tokens[k]) != enc.copy_tokens.end());
      if (h.tokens[k] == "zebra") {
        saw_zebra = true;
        CHECK(h.ids[k] == static_cast<int>(vocab.size()));
      }
    }
  CHECK(saw_zebra);
}

// Freshly initialized models. Beam pruning is not admissible, so with much
// sharper parameters (uniform +-1 and beyond) both properties do fail on a
// few percent of models.
TEST_CASE("wider beams score at least as well as greedy and as narrower beams") {
  Vocab vocab = toy_vocab();
  std::mt19937_64 gen(5);
  int checked = 0;
  for (Mode mode : {Mode::Seq2Seq, Mode::Pair2Seq}) {
    for (int trial = 0; trial < 50; ++trial) {
      auto p = ModelParams::init(mode, Dims{5, 3}, vocab.size(), gen());
      auto enc = encode_for_inference(p, vocab, toy_input());
      double greedy = greedy_decode(p, vocab, enc, 10).logprob;
      double prev = -std::numeric_limits<double>::infinity();
      for (std::size_t b : {1, 2, 3, 5, 8}) {
        double top = beam_search(p, vocab, enc, BeamConfig{b, 10})[0].logprob;
        CHECK(top >= greedy - 1e-12);
        CHECK(top >= prev - 1e-12);
        prev = top;
      }
      ++checked;
    }
  }
  CHECK(checked == 100);
}

TEST_CASE("decoding is deterministic and bounded by max_len") {
  Vocab vocab = toy_vocab();
  auto p = test_support::random_model(Mode::Seq2Seq, Dims{5, 3}, vocab.size(), 6, 1.0);
  auto enc = encode_for_inference(p, vocab, toy_input());
  for (std::size_t len : {1, 2, 5}) {
    auto a = beam_search(p, vocab, enc, BeamConfig{4, len});
    auto b = beam_search(p, vocab, enc, BeamConfig{4, len});
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].ids == b[i].ids);
      CHECK(a[i].ids.size() <= len);
    }
    CHECK(greedy_decode(p, vocab, enc, len).ids.size() <= len);
  }
  CHECK_THROWS_AS(beam_search(p, vocab, enc, BeamConfig{0, 5}), std::invalid_argument);
}

TEST_CASE("filter_outputs removes only exact copies of the source question") {
  std::vector<Hypothesis> hyps(4);
  hyps[0].tokens = words("who built the tower ?");
  hyps[1].tokens = words("who built the bridge ?");
  hyps[2].tokens = words("who built the bridge ?");
  hyps[3].tokens = words("who built the tower");
  auto kept = filter_outputs(hyps, words("who built the tower ?"));
  REQUIRE(kept.size() == 3);
  CHECK(kept[0].tokens == words("who built the bridge ?"));
  CHECK(kept[1].tokens == words("who built the bridge ?"));
  CHECK(kept[2].tokens == words("who built the tower"));
  CHECK(filter_outputs({hyps[0]}, hyps[0].tokens).empty());
}

TEST_CASE("generation files round-trip and report bad lines") {
  test_support::TempDir dir("gen");
  std::vector<GenerationRecord> recs{{"pair-0", words("who closed it ?"), -1.25}, {"pair-1", {}, -3.5}};
  write_generations(dir.file("g.tsv"), recs);
  CHECK(test_support::read_file(dir.file("g.tsv")) == "pair-0\twho closed it ?\t-1.250000\npair-1\t\t-3.500000\n");
  auto back = read_generations(dir.file("g.tsv"));
  REQUIRE(back.size() == 2);
  CHECK(back[0].id == "pair-0");
  CHECK(back[0].tokens == recs[0].tokens);
  CHECK(back[0].logprob == -1.25);
  CHECK(back[1].tokens.empty());
  test_support::write_file(dir.file("bad.tsv"), "a\tb\t-1\nonly-one-field\n");
  CHECK_THROWS_WITH(read_generations(dir.file("bad.tsv")), doctest::Contains("bad.tsv:2"));
  test_support::write_file(dir.file("bad2.tsv"), "a\tb\tnot-a-number\n");
  CHECK_THROWS_WITH(read_generations(dir.file("bad2.tsv")), doctest::Contains("bad2.tsv:1"));
}

TEST_CASE("suppress zeroes exactly the suppressed ids") {
  std::vector<double> dist{0.1, 0.2, 0.05, 0.3, 0.15, 0.2};
  auto out = suppress(dist);
  CHECK(out == std::vector<double>{0.0, 0.0, 0.0, 0.3, 0.0, 0.2});
}
