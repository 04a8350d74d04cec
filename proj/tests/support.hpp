#pragma once

#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "uqg/dataset.hpp"
#include "uqg/model.hpp"
#include "uqg/textproc.hpp"

namespace test_support {

inline uqg::Tensor random_tensor(uqg::Shape shape, std::mt19937_64& gen, double lo = -2.0, double hi = 2.0,
                                 bool requires_grad = true) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  std::vector<double> v(n);
  for (auto& x : v) x = dist(gen);
  return uqg::Tensor::from(std::move(shape), std::move(v), requires_grad);
}

inline std::vector<std::string> words(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string t;
  while (in >> t) out.push_back(t);
  return out;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("uqg-" + tag + "-" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

// A small closed world: question templates over a handful of subjects.
inline std::vector<uqg::AlignedPair> synthetic_pairs(std::size_t n, std::uint64_t seed = 1) {
  static const std::vector<std::string> subjects = {"victoria", "paris", "the river", "the museum", "the king",
                                                    "the school", "the bridge", "the army"};
  static const std::vector<std::string> verbs = {"built", "founded", "runs", "closed", "opened", "funds"};
  static const std::vector<std::string> objects = {"the public schools", "the waste management", "the old tower",
                                                   "the city hall", "the new library", "the harbor"};
  std::mt19937_64 gen(seed);
  std::vector<uqg::AlignedPair> out;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = subjects[gen() % subjects.size()];
    const auto& v = verbs[gen() % verbs.size()];
    const auto& o = objects[gen() % objects.size()];
    const auto& o2 = objects[gen() % objects.size()];
    uqg::AlignedPair p;
    p.title = "article-" + std::to_string(i % 7);
    p.paragraph = uqg::tokenize("In " + std::to_string(1800 + i) + " " + s + " " + v + " " + o +
                                " , which later grew . Nobody " + v + " " + o2 + " there .");
    p.answer_start = 1;
    p.answer_end = 2;
    p.answerable = uqg::tokenize("When was " + o + " " + v + " by " + s + " ?");
    p.unanswerable = uqg::tokenize("When was " + o2 + " " + v + " by " + s + " ?");
    p.distance = uqg::levenshtein(p.answerable, p.unanswerable);
    out.push_back(std::move(p));
  }
  return out;
}

inline uqg::Vocab vocab_for(const std::vector<uqg::AlignedPair>& pairs, int min_frequency = 1) {
  std::vector<std::vector<std::string>> corpus;
  for (const auto& p : pairs) {
    corpus.push_back(p.paragraph);
    corpus.push_back(p.answerable);
    corpus.push_back(p.unanswerable);
  }
  return uqg::build_vocab(corpus, min_frequency);
}

// Random parameters drawn from uniform(-scale, scale).
inline uqg::ModelParams random_model(uqg::Mode mode, uqg::Dims dims, std::size_t vocab_size, std::uint64_t seed,
                                     double scale = 1.0) {
  auto params = uqg::ModelParams::init(mode, dims, vocab_size, seed);
  for (auto& t : params.tensors())
    for (double& v : uqg::Tensor(t).mutable_values()) v *= scale / 0.1;
  return params;
}

// SQuAD 2.0 JSON text for hand-built records.
inline std::string squad_json(const std::vector<uqg::ParagraphRecord>& records) {
  nlohmann::json data = nlohmann::json::array();
  for (const auto& rec : records) {
    nlohmann::json qas = nlohmann::json::array();
    for (const auto& q : rec.qas) {
      nlohmann::json answers = nlohmann::json::array();
      for (const auto& a : q.answers) answers.push_back({{"text", a.text}, {"answer_start", a.char_start}});
      nlohmann::json item = {{"id", q.id}, {"question", q.question}, {"is_impossible", q.is_impossible}};
      if (q.is_impossible) {
        item["answers"] = nlohmann::json::array();
        item["plausible_answers"] = answers;
      } else {
        item["answers"] = answers;
      }
      qas.push_back(item);
    }
    nlohmann::json paragraph = {{"context", rec.context}, {"qas", qas}};
    if (!data.empty() && data.back()["title"] == rec.article_title) {
      data.back()["paragraphs"].push_back(paragraph);
    } else {
      data.push_back({{"title", rec.article_title}, {"paragraphs", nlohmann::json::array({paragraph})}});
    }
  }
  return nlohmann::json{{"version", "v2.0"}, {"data", data}}.dump();
}

// Answerable/unanswerable questions sharing the year as (plausible) answer.
inline std::string synthetic_squad(std::size_t paragraphs) {
  static const char* subjects[] = {"Victoria", "Paris", "the river", "the museum", "the king", "the bridge"};
  static const char* verbs[] = {"built", "founded", "closed", "opened"};
  static const char* objects[] = {"the tower", "the school", "the city hall", "the library", "the harbor"};
  std::vector<uqg::ParagraphRecord> recs;
  for (std::size_t i = 0; i < paragraphs; ++i) {
    std::string s = subjects[i % 6], v = verbs[(i / 6) % 4], o = objects[i % 5], o2 = objects[(i + 2) % 5];
    std::string year = std::to_string(1800 + i);
    uqg::ParagraphRecord p;
    p.article_title = "Article " + std::to_string(i % 10);
    p.context = "In " + year + " " + s + " " + v + " " + o + " near the square.";
    uqg::QuestionRecord a{"q" + std::to_string(i) + "a", "When was " + o + " " + v + " by " + s + "?", false, {{year, 3}}};
    uqg::QuestionRecord u{"q" + std::to_string(i) + "u", "When was " + o2 + " never " + v + " by " + s + "?", true,
                     {{year, 3}}};
    p.qas = {a, u};
    recs.push_back(p);
  }
  return squad_json(recs);
}

}  // namespace test_support
