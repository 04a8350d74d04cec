// Command-line driver: align -> train -> generate -> evaluate -> augment,
// plus gradcheck.

#include <CLI11.hpp>

#include <algorithm>
#include <cstring>
#include <iostream>
#include <string>
#include <vector>

#include "uqg/pipeline.hpp"

namespace {

// "--config FILE" lines become "--key=value" arguments placed before the
// user's own flags, so flags given on the command line win.
std::vector<std::string> expand_config(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  std::vector<std::string> rest;
  std::string config;
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      config = args[++i];
    } else if (args[i].rfind("--config=", 0) == 0) {
      config = args[i].substr(9);
    } else {
      rest.push_back(args[i]);
    }
  }
  std::vector<std::string> out{args[0]};
  if (config.empty()) {
    out.insert(out.end(), rest.begin(), rest.end());
    return out;
  }
  if (rest.empty()) throw std::runtime_error("--config needs a sub-command");
  out.push_back(rest.front());
  for (const auto& [name, value] : uqg::read_key_values(config)) {
    std::string key = name;
    std::replace(key.begin(), key.end(), '_', '-');
    out.push_back("--" + key + "=" + value);
  }
  out.insert(out.end(), rest.begin() + 1, rest.end());
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Unanswerable question generation pipeline"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.add_option("--config", "key=value file; command-line flags override it");

  std::uint64_t seed = 13;
  std::string mode = "pair2seq";
  std::string dims_override;
  auto mode_check = CLI::IsMember({"seq2seq", "pair2seq"});

  uqg::AlignOptions align;
  auto* align_cmd = app.add_subcommand("align", "Align answerable/unanswerable pairs and build the vocabulary");
  align_cmd->add_option("--train", align.train_file, "SQuAD 2.0 training JSON")->required();
  align_cmd->add_option("--dev", align.dev_file, "SQuAD 2.0 dev JSON");
  align_cmd->add_option("--out-dir", align.out_dir, "Output directory")->required();
  align_cmd->add_option("--min-freq", align.min_frequency, "Vocabulary frequency threshold")->capture_default_str();
  align_cmd->add_option("--seed", seed, "Root seed")->capture_default_str();

  uqg::TrainOptions train;
  auto* train_cmd = app.add_subcommand("train", "Train a generator, keeping the best holdout checkpoint");
  train_cmd->add_option("--train-pairs", train.train_pairs, "Training pair file")->required();
  train_cmd->add_option("--holdout-pairs", train.holdout_pairs, "Holdout pair file")->required();
  train_cmd->add_option("--vocab", train.vocab, "Vocabulary file")->required();
  train_cmd->add_option("--out", train.out, "Checkpoint path")->required();
  train_cmd->add_option("--mode", mode, "seq2seq or pair2seq")->check(mode_check)->capture_default_str();
  train_cmd->add_option("--epochs", train.config.epochs)->capture_default_str();
  train_cmd->add_option("--batch-size", train.config.batch_size)->capture_default_str();
  train_cmd->add_option("--lr", train.config.learning_rate)->capture_default_str();
  train_cmd->add_option("--dropout", train.config.dropout)->capture_default_str();
  train_cmd->add_option("--clip", train.config.clip)->capture_default_str();
  train_cmd->add_option("--max-target", train.config.max_target)->capture_default_str();
  train_cmd->add_option("--paragraph-cap", train.config.caps.paragraph)->capture_default_str();
  train_cmd->add_option("--question-cap", train.config.caps.question)->capture_default_str();
  train_cmd->add_option("--bucket-window", train.config.bucket_window)->capture_default_str();
  train_cmd->add_option("--pretrained", train.config.pretrained, "Pretrained word vectors (text)");
  train_cmd->add_option("--dims-override", dims_override, "EMBED/HIDDEN, test-sized models only");
  train_cmd->add_option("--seed", seed, "Root seed")->capture_default_str();

  uqg::GenerateOptions generate;
  auto* generate_cmd = app.add_subcommand("generate", "Beam-search unanswerable questions");
  generate_cmd->add_option("--checkpoint", generate.checkpoint)->required();
  generate_cmd->add_option("--vocab", generate.vocab)->required();
  generate_cmd->add_option("--input", generate.input, "Pair file or SQuAD JSON")->required();
  generate_cmd->add_option("--out", generate.out)->required();
  generate_cmd->add_option("--beam", generate.beam)->capture_default_str();
  generate_cmd->add_option("--nbest", generate.nbest)->capture_default_str();
  generate_cmd->add_option("--max-len", generate.max_len)->capture_default_str();
  generate_cmd->add_option("--seed", seed, "Root seed (decoding is deterministic)");

  uqg::EvalOptions eval;
  auto* eval_cmd = app.add_subcommand("evaluate", "BLEU, GLEU and ROUGE against the reference pairs");
  eval_cmd->add_option("--generations", eval.generations)->required();
  eval_cmd->add_option("--references", eval.references, "Pair file the generations came from")->required();
  eval_cmd->add_option("--out", eval.out, "Also write the report here");

  uqg::AugmentOptions augment;
  auto* augment_cmd = app.add_subcommand("augment", "Write generated questions as SQuAD 2.0 unanswerable records");
  augment_cmd->add_option("--generations", augment.generations)->required();
  augment_cmd->add_option("--squad", augment.squad, "SQuAD file the generations were produced from")->required();
  augment_cmd->add_option("--out", augment.out)->required();

  uqg::GradcheckOptions gradcheck;
  std::string gradcheck_dims = "8/4";
  auto* gradcheck_cmd = app.add_subcommand("gradcheck", "Finite-difference check of a miniature model");
  gradcheck_cmd->add_option("--mode", mode, "seq2seq or pair2seq")->check(mode_check)->capture_default_str();
  gradcheck_cmd->add_option("--dims-override", gradcheck_dims)->capture_default_str();
  gradcheck_cmd->add_option("--vocab-size", gradcheck.vocab_size)->capture_default_str();
  gradcheck_cmd->add_option("--step", gradcheck.step, "Central-difference step")->capture_default_str();
  gradcheck_cmd->add_option("--seed", seed, "Root seed")->capture_default_str();

  std::vector<std::string> args;
  try {
    args = expand_config(argc, argv);
  } catch (const std::exception& e) {
    std::cerr << "uqg: error: " << e.what() << '\n';
    return 2;
  }
  std::vector<char*> cargs;
  for (auto& a : args) cargs.push_back(a.data());
  try {
    app.parse(static_cast<int>(cargs.size()), cargs.data());
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "uqg: error: " << e.what() << '\n';
    return e.get_exit_code();
  }

  const std::string name = app.get_subcommands().front()->get_name();
  try {
    if (name == "align") {
      align.seed = seed;
      uqg::cmd_align(align, std::cout);
    } else if (name == "train") {
      train.config.mode = uqg::parse_mode(mode);
      train.config.seed = seed;
      if (!dims_override.empty()) train.config.dims = uqg::parse_dims(dims_override);
      uqg::cmd_train(train, std::cout);
    } else if (name == "generate") {
      uqg::cmd_generate(generate, std::cout);
    } else if (name == "evaluate") {
      uqg::cmd_eval(eval, std::cout);
    } else if (name == "augment") {
      uqg::cmd_augment(augment, std::cout);
    } else if (name == "gradcheck") {
      gradcheck.mode = uqg::parse_mode(mode);
      gradcheck.dims = uqg::parse_dims(gradcheck_dims);
      gradcheck.seed = seed;
      auto r = uqg::cmd_gradcheck(gradcheck, std::cout);
      if (!(r.max_relative_error < 1e-4)) {
        std::cerr << "uqg gradcheck: error: max relative error " << r.max_relative_error << " exceeds 1e-4\n";
        return 1;
      }
    }
  } catch (const std::exception& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    std::cerr << "uqg " << name << ": error: " << msg << '\n';
    return 1;
  }
  return 0;
}
