#pragma once

#include <cstddef>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "uqg/decoding.hpp"
#include "uqg/model.hpp"
#include "uqg/training.hpp"

namespace uqg {

// Writes go to "<path>.tmp" and are renamed into place by commit(); anything
// not committed is deleted when the set goes out of scope.
class OutputSet {
 public:
  OutputSet() = default;
  OutputSet(const OutputSet&) = delete;
  OutputSet& operator=(const OutputSet&) = delete;
  ~OutputSet();

  std::string add(const std::string& final_path);
  void commit();

 private:
  std::vector<std::string> finals_;
  bool committed_ = false;
};

struct AlignOptions {
  std::string train_file;
  std::string dev_file;  // optional
  std::string out_dir;
  std::uint64_t seed = 13;
  int min_frequency = 9;
};

struct AlignSummary {
  AlignStats train_stats;
  AlignStats dev_stats;
  std::size_t train_pairs = 0;
  std::size_t holdout_pairs = 0;
  std::size_t dev_pairs = 0;
  std::size_t holdout_articles = 0;
  std::size_t dropped_questions = 0;
  std::size_t vocab_size = 0;

  std::size_t total_pairs() const { return train_pairs + holdout_pairs + dev_pairs; }
  double mean_distance() const;
  double holdout_fraction() const;
};

// train_pairs.tsv, holdout_pairs.tsv, dev_pairs.tsv (with a dev file) and
// vocab.txt in out_dir.
AlignSummary cmd_align(const AlignOptions& options, std::ostream& log);

struct TrainOptions {
  std::string train_pairs;
  std::string holdout_pairs;
  std::string vocab;
  std::string out;  // checkpoint path; "<out>.config" is written next to it
  TrainConfig config;
};

TrainResult cmd_train(const TrainOptions& options, std::ostream& log);

struct GenerateOptions {
  std::string checkpoint;
  std::string vocab;
  std::string input;  // pair file, or SQuAD JSON (answerable questions)
  std::string out;
  std::size_t beam = 5;
  std::size_t nbest = 1;
  std::size_t max_len = 50;
};

struct GenerateSummary {
  std::size_t inputs = 0;
  std::size_t generations = 0;
  std::size_t skipped = 0;  // every hypothesis filtered out
};

struct GenerationInput {
  std::string id;
  ModelInput input;
  std::vector<std::string> source;  // full tokenized source question
};

// Pair-file inputs get ids "pair-<line index>"; SQuAD inputs keep question ids.
std::vector<GenerationInput> generation_inputs(const std::string& path, const InputCaps& caps);

GenerateSummary cmd_generate(const GenerateOptions& options, std::ostream& log);

struct EvalOptions {
  std::string generations;
  std::string references;  // pair file the generations were produced from
  std::string out;         // optional report copy
};

std::map<std::string, double> cmd_eval(const EvalOptions& options, std::ostream& report);

struct AugmentOptions {
  std::string generations;
  std::string squad;
  std::string out;
};

AugmentStats cmd_augment(const AugmentOptions& options, std::ostream& log);

struct GradcheckOptions {
  Mode mode = Mode::Seq2Seq;
  Dims dims{8, 4};
  std::size_t vocab_size = 20;
  std::uint64_t seed = 13;
  double step = 1e-5;
};

struct GradcheckResult {
  double max_relative_error = 0.0;
  std::size_t coordinates = 0;
  double seconds = 0.0;
};

// Full sequence loss of a miniature model against central differences.
GradcheckResult cmd_gradcheck(const GradcheckOptions& options, std::ostream& log);

// "8/4" -> {8, 4}
Dims parse_dims(const std::string& text);

}  // namespace uqg
