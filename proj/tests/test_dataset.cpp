#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <functional>
#include <set>

#include "support.hpp"
#include "uqg/dataset.hpp"
#include "uqg/textproc.hpp"

using namespace uqg;
using test_support::words;

namespace {

// Plain recursive definition, no table.
std::size_t edit_oracle(const std::vector<std::string>& a, std::size_t i, const std::vector<std::string>& b,
                        std::size_t j) {
  if (i == a.size()) return b.size() - j;
  if (j == b.size()) return a.size() - i;
  std::size_t best = edit_oracle(a, i + 1, b, j + 1) + (a[i] == b[j] ? 0 : 1);
  best = std::min(best, edit_oracle(a, i + 1, b, j) + 1);
  best = std::min(best, edit_oracle(a, i, b, j + 1) + 1);
  return best;
}

std::vector<std::vector<std::string>> all_sequences(std::size_t max_len) {
  std::vector<std::vector<std::string>> out{{}};
  std::vector<std::vector<std::string>> frontier{{}};
  for (std::size_t len = 1; len <= max_len; ++len) {
    std::vector<std::vector<std::string>> next;
    for (const auto& s : frontier)
      for (const char* t : {"x", "y", "z"}) {
        auto e = s;
        e.push_back(t);
        next.push_back(e);
      }
    out.insert(out.end(), next.begin(), next.end());
    frontier = std::move(next);
  }
  return out;
}

QuestionRecord answerable(std::string id, std::string q, std::string text, std::size_t start) {
  return {std::move(id), std::move(q), false, {{std::move(text), start}}};
}

QuestionRecord unanswerable(std::string id, std::string q, std::string text, std::size_t start) {
  return {std::move(id), std::move(q), true, {{std::move(text), start}}};
}

const std::string kContext = "The Victoria government runs the public schools in Victoria.";

}  // namespace

TEST_CASE("levenshtein examples") {
  CHECK(levenshtein(words("a b c"), words("a b c")) == 0);
  CHECK(levenshtein(words("what organization runs the public schools in victoria ?"),
                    words("what organization runs the waste management in victoria ?")) == 2);
  CHECK(levenshtein({}, words("a b")) == 2);
  CHECK(levenshtein(words("a b"), {}) == 2);
}

TEST_CASE("levenshtein matches the recursive oracle on every short sequence") {
  auto seqs = all_sequences(4);
  REQUIRE(seqs.size() == 121);
  for (const auto& a : seqs)
    for (const auto& b : seqs) {
      auto d = levenshtein(a, b);
      REQUIRE(d == edit_oracle(a, 0, b, 0));
      REQUIRE(d == levenshtein(b, a));
      REQUIRE((d == 0) == (a == b));
    }
}

TEST_CASE("levenshtein triangle inequality") {
  auto seqs = all_sequences(3);
  for (const auto& a : seqs)
    for (const auto& b : seqs)
      for (const auto& c : seqs) REQUIRE(levenshtein(a, c) <= levenshtein(a, b) + levenshtein(b, c));
}

TEST_CASE("parse_squad reads answers and plausible answers") {
  test_support::TempDir dir("parse");
  ParagraphRecord rec{"Victoria", kContext,
                      {answerable("q1", "What organization runs the public schools in Victoria?", "Victoria government", 4),
                       unanswerable("q2", "What organization runs the waste management in Victoria?",
                                    "Victoria government", 4)}};
  test_support::write_file(dir.file("s.json"), test_support::squad_json({rec}));
  ParseStats stats;
  auto parsed = parse_squad(dir.file("s.json"), &stats);
  REQUIRE(parsed.size() == 1);
  CHECK(parsed[0] == rec);
  CHECK(stats.questions == 2);
  CHECK(stats.dropped == 0);
  CHECK(count_answerable(parsed) == 1);
}

TEST_CASE("parse_squad empty data") {
  test_support::TempDir dir("parse-empty");
  test_support::write_file(dir.file("s.json"), R"({"version": "v2.0", "data": []})");
  ParseStats stats;
  CHECK(parse_squad(dir.file("s.json"), &stats).empty());
  CHECK(stats.dropped == 0);
}

TEST_CASE("parse_squad drops a record whose answer does not match its offset") {
  test_support::TempDir dir("parse-drop");
  ParagraphRecord rec{"T", kContext,
                      {answerable("good", "Who runs schools?", "Victoria government", 4),
                       answerable("bad", "Who runs schools?", "Victoria government", 5)}};
  test_support::write_file(dir.file("s.json"), test_support::squad_json({rec}));
  ParseStats stats;
  auto parsed = parse_squad(dir.file("s.json"), &stats);
  CHECK(stats.dropped == 1);
  REQUIRE(parsed.size() == 1);
  REQUIRE(parsed[0].qas.size() == 1);
  CHECK(parsed[0].qas[0].id == "good");
}

TEST_CASE("answer offsets count code points, not bytes") {
  test_support::TempDir dir("parse-utf8");
  std::string context = "Caf\xC3\xA9 Nero opened in 1990.";
  ParagraphRecord rec{"T", context, {answerable("a", "When did it open?", "1990", 20)}};
  test_support::write_file(dir.file("s.json"), test_support::squad_json({rec}));
  ParseStats stats;
  auto parsed = parse_squad(dir.file("s.json"), &stats);
  CHECK(stats.dropped == 0);
  REQUIRE(parsed.size() == 1);
  CHECK(parsed[0].qas.size() == 1);
}

TEST_CASE("malformed files are rejected with path and location") {
  test_support::TempDir dir("parse-bad");
  test_support::write_file(dir.file("broken.json"), R"({"data": [)");
  try {
    parse_squad(dir.file("broken.json"));
    FAIL("expected rejection");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("broken.json") != std::string::npos);
    CHECK(std::string(e.what()).find("byte") != std::string::npos);
  }
  test_support::write_file(dir.file("shape.json"),
                           R"({"data": [{"title": "A", "paragraphs": [{"context": "x", "qas": [{"id": 3}]}]}]})");
  try {
    parse_squad(dir.file("shape.json"));
    FAIL("expected rejection");
  } catch (const std::runtime_error& e) {
    std::string msg = e.what();
    CHECK(msg.find("shape.json") != std::string::npos);
    CHECK(msg.find("data[0].paragraphs[0].qas[0]") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_squad(dir.file("nope.json")), std::runtime_error);
}

TEST_CASE("align_pairs: one answerable and one unanswerable sharing a pivot") {
  std::vector<ParagraphRecord> recs{
      {"Victoria", kContext,
       {answerable("q1", "What organization runs the public schools in Victoria?", "Victoria government", 4),
        unanswerable("q2", "What organization runs the waste management in Victoria?", "Victoria government", 4)}}};
  AlignStats stats;
  auto pairs = align_pairs(recs, &stats);
  REQUIRE(pairs.size() == 1);
  const auto& p = pairs[0];
  CHECK(p.distance == 2);
  CHECK(p.answerable_id == "q1");
  CHECK(p.unanswerable_id == "q2");
  CHECK(p.pivot == AnswerSpan{"Victoria government", 4});
  CHECK(p.answer_start == 1);
  CHECK(p.answer_end == 3);
  CHECK(std::vector<std::string>(p.paragraph.begin() + 1, p.paragraph.begin() + 3) == words("victoria government"));
  CHECK(stats.expanded_spans == 0);
  CHECK(stats.mean_distance() == 2.0);
}

TEST_CASE("align_pairs keeps the minimum-distance candidate") {
  std::vector<ParagraphRecord> recs{
      {"Victoria", kContext,
       {answerable("far", "Which body is in charge of teaching in the state?", "Victoria government", 4),
        answerable("near", "What organization runs the public schools in Victoria?", "Victoria government", 4),
        unanswerable("u", "What organization runs the waste management in Victoria?", "Victoria government", 4)}}};
  auto pairs = align_pairs(recs);
  REQUIRE(pairs.size() == 1);
  CHECK(pairs[0].answerable_id == "near");
}

TEST_CASE("align_pairs requires the same offset, not just the same text") {
  std::vector<ParagraphRecord> recs{
      {"Victoria", kContext,
       {answerable("a", "Where are the schools?", "Victoria", 51),
        unanswerable("u", "Where is the dump?", "Victoria", 4)}}};
  CHECK(align_pairs(recs).empty());
}

TEST_CASE("align_pairs ties go to dataset order") {
  std::vector<ParagraphRecord> recs{
      {"T", kContext,
       {answerable("a1", "who runs it ?", "Victoria government", 4),
        answerable("a2", "who runs it ?", "Victoria government", 4),
        unanswerable("u1", "who ran it ?", "Victoria government", 4),
        unanswerable("u2", "who ran it ?", "Victoria government", 4)}}};
  auto pairs = align_pairs(recs);
  REQUIRE(pairs.size() == 2);
  CHECK(pairs[0].answerable_id == "a1");
  CHECK(pairs[0].unanswerable_id == "u1");
  CHECK(pairs[1].answerable_id == "a2");
  CHECK(pairs[1].unanswerable_id == "u2");
}

TEST_CASE("align_pairs expands a pivot that cuts through a token") {
  std::vector<ParagraphRecord> recs{
      {"T", kContext,
       {answerable("a", "Who?", "ictoria gov", 5), unanswerable("u", "Who not?", "ictoria gov", 5)}}};
  AlignStats stats;
  auto pairs = align_pairs(recs, &stats);
  REQUIRE(pairs.size() == 1);
  CHECK(stats.expanded_spans == 1);
  CHECK(pairs[0].answer_start == 1);
  CHECK(pairs[0].answer_end == 3);
}

TEST_CASE("align_pairs never pairs a question twice") {
  // Every answerable matches every unanswerable; the matching must stay one-to-one.
  std::vector<QuestionRecord> qas;
  for (int i = 0; i < 5; ++i)
    qas.push_back(answerable("a" + std::to_string(i), "who runs the thing number " + std::to_string(i) + " ?",
                             "Victoria government", 4));
  for (int i = 0; i < 3; ++i)
    qas.push_back(unanswerable("u" + std::to_string(i), "who ran the thing number " + std::to_string(i + 2) + " ?",
                               "Victoria government", 4));
  auto pairs = align_pairs({{"T", kContext, qas}});
  CHECK(pairs.size() == 3);
  std::set<std::string> ids;
  for (const auto& p : pairs) {
    CHECK(ids.insert(p.answerable_id).second);
    CHECK(ids.insert(p.unanswerable_id).second);
    CHECK(p.distance == 1);
  }
}

TEST_CASE("split_holdout partitions by article, deterministically") {
  auto pairs = test_support::synthetic_pairs(70);
  auto a = split_holdout(pairs, 42);
  auto b = split_holdout(pairs, 42);
  CHECK(a.holdout_titles == b.holdout_titles);
  CHECK(a.train.size() + a.holdout.size() == pairs.size());
  std::set<std::string> held(a.holdout_titles.begin(), a.holdout_titles.end());
  for (const auto& p : a.train) CHECK(held.count(p.title) == 0);
  for (const auto& p : a.holdout) CHECK(held.count(p.title) == 1);
  // 7 articles of 10 pairs, target 7: one article is closer than none.
  CHECK(a.holdout.size() == 10);
  CHECK(a.holdout_titles.size() == 1);
}

TEST_CASE("split_holdout lands near ten percent across many articles") {
  std::vector<AlignedPair> pairs;
  std::mt19937_64 gen(3);
  for (int art = 0; art < 400; ++art) {
    auto n = 1 + gen() % 80;
    for (std::size_t i = 0; i < n; ++i) {
      AlignedPair p;
      p.title = "article-" + std::to_string(art);
      pairs.push_back(p);
    }
  }
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto split = split_holdout(pairs, seed);
    double fraction = static_cast<double>(split.holdout.size()) / static_cast<double>(pairs.size());
    CHECK(fraction >= 0.08);
    CHECK(fraction <= 0.12);
  }
}

TEST_CASE("pair files round-trip") {
  test_support::TempDir dir("pairs");
  auto pairs = test_support::synthetic_pairs(12);
  write_pairs(dir.file("p.tsv"), pairs);
  auto back = read_pairs(dir.file("p.tsv"));
  REQUIRE(back.size() == pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    CHECK(back[i].title == pairs[i].title);
    CHECK(back[i].paragraph == pairs[i].paragraph);
    CHECK(back[i].answer_start == pairs[i].answer_start);
    CHECK(back[i].answer_end == pairs[i].answer_end);
    CHECK(back[i].answerable == pairs[i].answerable);
    CHECK(back[i].unanswerable == pairs[i].unanswerable);
    CHECK(back[i].distance == pairs[i].distance);
  }
}

TEST_CASE("pair file errors name the line") {
  test_support::TempDir dir("pairs-bad");
  test_support::write_file(dir.file("p.tsv"), "t\ta b c\t0\t1\tq ?\tr ?\nt\ta b\t1\t5\tq\tr\n");
  try {
    read_pairs(dir.file("p.tsv"));
    FAIL("expected rejection");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("p.tsv:2") != std::string::npos);
  }
  test_support::write_file(dir.file("q.tsv"), "only\tthree\tfields\n");
  CHECK_THROWS_WITH(read_pairs(dir.file("q.tsv")), doctest::Contains("6 tab-separated"));
}

TEST_CASE("augmentation records re-parse with nothing dropped") {
  std::string context = "Caf\xC3\xA9 Nero opened in 1990 in Victoria.";
  QuestionRecord src = answerable("s1", "When did Caf\xC3\xA9 Nero open?", "1990", 20);
  std::vector<Generation> gens{
      {"Cafes", context, src, words("when did caf\xC3\xA9 nero close ?")},
      {"Cafes", context, src, tokenize(src.question)},
      {"Cafes", context, src, {}},
      {"Cafes", context, src, words("when did the bakery open ?")},
      {"Other", "Another paragraph about 1990.", answerable("s2", "Which year?", "1990", 24), words("which month ?")}};
  AugmentStats stats;
  auto doc = build_augmentation(gens, &stats);
  CHECK(stats.emitted == 3);
  CHECK(stats.skipped_identical == 1);
  CHECK(stats.skipped_empty == 1);

  ParseStats ps;
  auto recs = parse_squad_json(doc, "augment", &ps);
  CHECK(ps.dropped == 0);
  CHECK(ps.questions == 3);
  REQUIRE(recs.size() == 2);
  CHECK(recs[0].article_title == "Cafes");
  CHECK(recs[0].context == context);
  REQUIRE(recs[0].qas.size() == 2);
  CHECK(recs[0].qas[0].id == "s1-unansq-0");
  CHECK(recs[0].qas[1].id == "s1-unansq-1");
  CHECK(recs[0].qas[0].question == "when did caf\xC3\xA9 nero close ?");
  CHECK(recs[0].qas[0].is_impossible);
  CHECK(recs[0].qas[0].answers == src.answers);
  CHECK(recs[1].qas[0].id == "s2-unansq-0");

  // Emitting the re-parsed records again gives the same document.
  std::vector<Generation> again;
  for (const auto& r : recs)
    for (const auto& q : r.qas) {
      QuestionRecord s = q;
      s.is_impossible = false;
      s.id = q.id.substr(0, q.id.find("-unansq-"));
      s.question = "x";
      again.push_back({r.article_title, r.context, s, tokenize(q.question)});
    }
  CHECK(build_augmentation(again) == doc);
}

TEST_CASE("empty augmentation is a valid file") {
  auto doc = build_augmentation({});
  ParseStats ps;
  CHECK(parse_squad_json(doc, "empty", &ps).empty());
  CHECK(ps.dropped == 0);
}
