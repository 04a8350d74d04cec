#include "uqg/pipeline.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>

#include "uqg/metrics.hpp"

namespace uqg {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// OutputSet

OutputSet::~OutputSet() {
  if (committed_) return;
  std::error_code ec;
  for (const auto& f : finals_) fs::remove(f + ".tmp", ec);
}

std::string OutputSet::add(const std::string& final_path) {
  finals_.push_back(final_path);
  return final_path + ".tmp";
}

void OutputSet::commit() {
  for (const auto& f : finals_) fs::rename(f + ".tmp", f);
  committed_ = true;
}

namespace {

void require_file(const std::string& path, const char* what) {
  if (path.empty()) throw std::runtime_error(std::string("missing ") + what + " path");
  if (!fs::is_regular_file(path)) throw std::runtime_error(std::string(what) + " not found: " + path);
}

bool looks_like_json(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  char c = 0;
  while (in.get(c))
    if (!std::isspace(static_cast<unsigned char>(c))) return c == '{';
  return false;
}

}  // namespace

Dims parse_dims(const std::string& text) {
  auto slash = text.find('/');
  try {
    if (slash == std::string::npos) throw std::invalid_argument("no slash");
    std::size_t a = 0, b = 0;
    auto embed = std::stoul(text.substr(0, slash), &a);
    auto hidden = std::stoul(text.substr(slash + 1), &b);
    if (a != slash || b != text.size() - slash - 1 || embed == 0 || hidden == 0) throw std::invalid_argument("bad");
    return {embed, hidden};
  } catch (const std::exception&) {
    throw std::invalid_argument("dims override must look like EMBED/HIDDEN, got '" + text + "'");
  }
}

// ---------------------------------------------------------------------------
// align

double AlignSummary::mean_distance() const {
  std::size_t n = train_stats.pairs + dev_stats.pairs;
  return n ? static_cast<double>(train_stats.total_distance + dev_stats.total_distance) / static_cast<double>(n)
           : 0.0;
}

double AlignSummary::holdout_fraction() const {
  std::size_t n = train_pairs + holdout_pairs;
  return n ? static_cast<double>(holdout_pairs) / static_cast<double>(n) : 0.0;
}

AlignSummary cmd_align(const AlignOptions& options, std::ostream& log) {
  require_file(options.train_file, "training file");
  if (!options.dev_file.empty()) require_file(options.dev_file, "dev file");
  if (options.out_dir.empty()) throw std::runtime_error("missing output directory");
  fs::create_directories(options.out_dir);

  AlignSummary summary;
  ParseStats parse_stats;
  auto train_records = parse_squad(options.train_file, &parse_stats);
  summary.dropped_questions += parse_stats.dropped;
  auto train_aligned = align_pairs(train_records, &summary.train_stats);
  HoldoutSplit split = split_holdout(train_aligned, sub_seed(options.seed, "holdout"));
  summary.train_pairs = split.train.size();
  summary.holdout_pairs = split.holdout.size();
  summary.holdout_articles = split.holdout_titles.size();

  std::vector<std::vector<std::string>> corpus;
  for (const auto& rec : train_records) {
    corpus.push_back(tokenize(rec.context));
    for (const auto& q : rec.qas) corpus.push_back(tokenize(q.question));
  }
  Vocab vocab = build_vocab(corpus, options.min_frequency);
  summary.vocab_size = vocab.size();

  OutputSet outputs;
  fs::path dir(options.out_dir);
  write_pairs(outputs.add((dir / "train_pairs.tsv").string()), split.train);
  write_pairs(outputs.add((dir / "holdout_pairs.tsv").string()), split.holdout);
  vocab.save(outputs.add((dir / "vocab.txt").string()));
  if (!options.dev_file.empty()) {
    auto dev_records = parse_squad(options.dev_file, &parse_stats);
    summary.dropped_questions += parse_stats.dropped;
    auto dev_aligned = align_pairs(dev_records, &summary.dev_stats);
    summary.dev_pairs = dev_aligned.size();
    write_pairs(outputs.add((dir / "dev_pairs.tsv").string()), dev_aligned);
  }
  outputs.commit();

  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "pairs=%zu train=%zu holdout=%zu dev=%zu holdout_articles=%zu holdout_fraction=%.4f "
                "mean_distance=%.4f expanded_spans=%zu unmappable=%zu dropped_questions=%zu vocab=%zu\n",
                summary.total_pairs(), summary.train_pairs, summary.holdout_pairs, summary.dev_pairs,
                summary.holdout_articles, summary.holdout_fraction(), summary.mean_distance(),
                summary.train_stats.expanded_spans + summary.dev_stats.expanded_spans,
                summary.train_stats.unmappable + summary.dev_stats.unmappable, summary.dropped_questions,
                summary.vocab_size);
  log << buf;
  return summary;
}

// ---------------------------------------------------------------------------
// train

TrainResult cmd_train(const TrainOptions& options, std::ostream& log) {
  require_file(options.train_pairs, "training pair file");
  require_file(options.holdout_pairs, "holdout pair file");
  require_file(options.vocab, "vocabulary");
  if (options.out.empty()) throw std::runtime_error("missing checkpoint output path");
  options.config.validate();

  Vocab vocab = Vocab::load(options.vocab);
  auto train_pairs = read_pairs(options.train_pairs);
  auto holdout_pairs = read_pairs(options.holdout_pairs);
  log << "train_pairs=" << train_pairs.size() << " holdout_pairs=" << holdout_pairs.size()
      << " vocab=" << vocab.size() << " mode=" << mode_name(options.config.mode) << '\n';

  TrainResult result = train(options.config, vocab, train_pairs, holdout_pairs,
                             [&](const EpochLog& e) { log << format_epoch_log(e) << std::endl; });

  OutputSet outputs;
  std::string tmp = outputs.add(options.out);
  outputs.add(options.out + ".config");
  save_model(tmp, result.best, options.config, vocab);
  fs::rename(tmp + ".config", options.out + ".config.tmp");
  outputs.commit();

  char buf[160];
  std::snprintf(buf, sizeof(buf), "initial_perplexity=%.6f best_perplexity=%.6f best_epoch=%zu\n",
                result.initial_perplexity, result.best_perplexity, result.best_epoch);
  log << buf;
  return result;
}

// ---------------------------------------------------------------------------
// generate

std::vector<GenerationInput> generation_inputs(const std::string& path, const InputCaps& caps) {
  std::vector<GenerationInput> out;
  if (!looks_like_json(path)) {
    auto pairs = read_pairs(path);
    for (std::size_t i = 0; i < pairs.size(); ++i)
      out.push_back({"pair-" + std::to_string(i), make_input(pairs[i], caps), pairs[i].answerable});
    return out;
  }
  for (const auto& rec : parse_squad(path)) {
    std::vector<TokenSpan> spans;
    std::vector<std::string> paragraph;
    for (const auto& q : rec.qas) {
      if (q.is_impossible || q.answers.empty()) continue;
      if (spans.empty()) {
        spans = tokenize_with_offsets(rec.context);
        for (const auto& s : spans) paragraph.push_back(s.text);
      }
      const auto& a = q.answers.front();
      std::size_t bb = 0, be = 0;
      char_span_to_bytes(rec.context, a.char_start, utf8_length(a.text), bb, be);
      std::size_t tb = spans.size(), te = 0;
      for (std::size_t t = 0; t < spans.size(); ++t) {
        if (spans[t].end > bb && spans[t].begin < be) {
          tb = std::min(tb, t);
          te = t + 1;
        }
      }
      auto question = tokenize(q.question);
      if (tb >= te || question.empty()) continue;
      out.push_back({q.id, make_input(paragraph, tb, te, question, caps), question});
    }
  }
  return out;
}

GenerateSummary cmd_generate(const GenerateOptions& options, std::ostream& log) {
  require_file(options.checkpoint, "checkpoint");
  require_file(options.checkpoint + ".config", "checkpoint config");
  require_file(options.vocab, "vocabulary");
  require_file(options.input, "generation input");
  if (options.out.empty()) throw std::runtime_error("missing generation output path");
  if (options.beam < 1) throw std::runtime_error("beam size must be >= 1");
  if (options.nbest < 1 || options.nbest > options.beam)
    throw std::runtime_error("nbest must be between 1 and the beam size");

  Vocab vocab = Vocab::load(options.vocab);
  LoadedModel model = load_model(options.checkpoint, vocab);
  auto inputs = generation_inputs(options.input, model.config.caps);

  GenerateSummary summary;
  std::vector<GenerationRecord> records;
  BeamConfig beam{options.beam, options.max_len, false};
  for (const auto& in : inputs) {
    ++summary.inputs;
    EncodedInput enc = encode_for_inference(model.params, vocab, in.input);
    auto hyps = filter_outputs(beam_search(model.params, vocab, enc, beam), in.source);
    if (hyps.empty()) {
      ++summary.skipped;
      continue;
    }
    for (std::size_t k = 0; k < std::min(options.nbest, hyps.size()); ++k)
      records.push_back({in.id, hyps[k].tokens, hyps[k].logprob});
  }
  summary.generations = records.size();

  OutputSet outputs;
  write_generations(outputs.add(options.out), records);
  outputs.commit();
  log << "inputs=" << summary.inputs << " generations=" << summary.generations << " skipped=" << summary.skipped
      << '\n';
  return summary;
}

// ---------------------------------------------------------------------------
// evaluate

std::map<std::string, double> cmd_eval(const EvalOptions& options, std::ostream& report) {
  require_file(options.generations, "generation file");
  require_file(options.references, "reference pair file");
  auto generations = read_generations(options.generations);
  auto pairs = read_pairs(options.references);

  std::vector<EvalTriple> corpus;
  std::set<std::string> seen;
  for (const auto& g : generations) {
    if (!seen.insert(g.id).second) continue;  // top-ranked generation per input
    if (g.id.rfind("pair-", 0) != 0) throw std::runtime_error("generation id '" + g.id + "' is not a pair id");
    std::size_t index = 0;
    try {
      index = std::stoul(g.id.substr(5));
    } catch (const std::exception&) {
      throw std::runtime_error("generation id '" + g.id + "' is not a pair id");
    }
    if (index >= pairs.size())
      throw std::runtime_error("generation id '" + g.id + "' beyond the " + std::to_string(pairs.size()) +
                               " reference pairs");
    corpus.push_back({pairs[index].answerable, g.tokens, pairs[index].unanswerable});
  }
  if (corpus.empty()) throw std::runtime_error("no generations to evaluate");

  auto metrics = evaluate_corpus(corpus);
  std::string text = format_report(metrics);
  text += "evaluated=" + std::to_string(corpus.size()) + "\n";
  text += "missing=" + std::to_string(pairs.size() - corpus.size()) + "\n";
  if (!options.out.empty()) {
    OutputSet outputs;
    std::ofstream out(outputs.add(options.out), std::ios::binary);
    out << text;
    out.close();
    if (!out) throw std::runtime_error("failed writing " + options.out);
    outputs.commit();
  }
  report << text;
  return metrics;
}

// ---------------------------------------------------------------------------
// augment

AugmentStats cmd_augment(const AugmentOptions& options, std::ostream& log) {
  require_file(options.generations, "generation file");
  require_file(options.squad, "SQuAD file");
  if (options.out.empty()) throw std::runtime_error("missing augmentation output path");

  auto records = parse_squad(options.squad);
  struct Source {
    const ParagraphRecord* paragraph;
    const QuestionRecord* question;
  };
  std::map<std::string, Source> by_id;
  for (const auto& p : records)
    for (const auto& q : p.qas) by_id.emplace(q.id, Source{&p, &q});

  std::vector<Generation> generated;
  for (const auto& g : read_generations(options.generations)) {
    auto it = by_id.find(g.id);
    if (it == by_id.end()) throw std::runtime_error("generation id '" + g.id + "' not found in " + options.squad);
    const auto& src = it->second;
    if (src.question->is_impossible)
      throw std::runtime_error("generation id '" + g.id + "' refers to an unanswerable question");
    generated.push_back({src.paragraph->article_title, src.paragraph->context, *src.question, g.tokens});
  }

  AugmentStats stats;
  auto doc = build_augmentation(generated, &stats);
  OutputSet outputs;
  {
    std::ofstream out(outputs.add(options.out), std::ios::binary);
    out << doc.dump() << '\n';
    if (!out) throw std::runtime_error("failed writing " + options.out);
  }
  outputs.commit();
  log << "emitted=" << stats.emitted << " skipped_identical=" << stats.skipped_identical
      << " skipped_empty=" << stats.skipped_empty << '\n';
  return stats;
}

// ---------------------------------------------------------------------------
// gradcheck

GradcheckResult cmd_gradcheck(const GradcheckOptions& options, std::ostream& log) {
  std::size_t specials = Vocab::specials().size();
  if (options.vocab_size <= specials + 4) throw std::runtime_error("gradcheck vocabulary too small");
  std::vector<std::string> words;
  for (std::size_t i = 0; i + specials < options.vocab_size; ++i) words.push_back("w" + std::to_string(i));
  Vocab vocab(words);

  ModelInput input = make_input({"w0", "w1", "zeta", "w2", "w3", "w4", "w1"}, 2, 4, {"w5", "w6", "zeta", "w7"});
  std::vector<std::string> target = {"w5", "zeta", "w3", "omega", "</s>"};

  ModelParams params = ModelParams::init(options.mode, options.dims, vocab.size(), sub_seed(options.seed, "init"));
  std::vector<Tensor> tensors = params.tensors();
  // Evaluate at a point drawn from uniform(-1, 1): at the +-0.1 training init
  // many coordinates carry gradients near 1e-9, below finite-difference
  // rounding noise.
  for (auto& t : tensors)
    for (double& v : t.mutable_values()) v *= 10.0;
  std::uint64_t dropout_seed = sub_seed(options.seed, "dropout");
  auto build = [&](Tape& tape) {
    Dropout dropout(0.8, dropout_seed);
    EncodedInput enc = encode(tape, params, vocab, input, dropout);
    return sequence_loss(tape, params, vocab, enc, target, dropout).loss;
  };

  auto started = std::chrono::steady_clock::now();
  GradcheckResult r;
  r.max_relative_error = grad_check(build, tensors, options.step);
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  for (const auto& t : tensors) r.coordinates += t.size();

  char buf[200];
  std::snprintf(buf, sizeof(buf), "mode=%s coordinates=%zu max_relative_error=%.3e seconds=%.2f\n",
                mode_name(options.mode).c_str(), r.coordinates, r.max_relative_error, r.seconds);
  log << buf;
  return r;
}

}  // namespace uqg
