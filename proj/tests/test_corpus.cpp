#include <gtest/gtest.h>

#include <fstream>

#include "rot/corpus.hpp"
#include "rot/log.hpp"
#include "support.hpp"

using namespace rot;
using rot_test::TempDir;

namespace {
void write(const std::filesystem::path& p, const std::string& body) { std::ofstream(p) << body; }
}  // namespace

TEST(Corpus, LoadsFixtureTemplates) {
  const auto corpus = load_templates(rot_test::fixture("templates.jsonl"));
  ASSERT_EQ(corpus.size(), 6u);
  EXPECT_EQ(corpus[0].template_id, "log-linearize");
  EXPECT_EQ(corpus[0].steps.size(), 4u);
  EXPECT_TRUE(corpus[0].knowledge_tags.count("logarithms"));
  EXPECT_EQ(total_steps(corpus), 19u);
}

TEST(Corpus, EmptyStepsNamesTemplateAndLine) {
  TempDir dir("corpus");
  write(dir / "t.jsonl",
        "{\"template_id\":\"a\",\"template_type\":\"x\",\"knowledge_tags\":[],\"steps\":[\"s\"]}\n"
        "{\"template_id\":\"b\",\"template_type\":\"x\",\"knowledge_tags\":[],\"steps\":[]}\n");
  try {
    load_templates(dir / "t.jsonl");
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("line 2"), std::string::npos) << msg;
    EXPECT_NE(msg.find("template b"), std::string::npos) << msg;
  }
}

TEST(Corpus, MalformedLineReportsLineNumber) {
  TempDir dir("corpus");
  write(dir / "t.jsonl",
        "{\"template_id\":\"a\",\"template_type\":\"x\",\"knowledge_tags\":[],\"steps\":[\"s\"]}\n\n{oops\n");
  try {
    load_templates(dir / "t.jsonl");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
}

TEST(Corpus, DuplicateTemplateIdRejected) {
  TempDir dir("corpus");
  const std::string line = "{\"template_id\":\"a\",\"template_type\":\"x\",\"knowledge_tags\":[],\"steps\":[\"s\"]}\n";
  write(dir / "t.jsonl", line + line);
  EXPECT_THROW(load_templates(dir / "t.jsonl"), ValidationError);
}

TEST(Corpus, SaveLoadRoundTrip) {
  TempDir dir("corpus");
  auto corpus = load_templates(rot_test::fixture("templates.jsonl"));
  corpus[1].steps[0] = "contains <xml> & \"quotes\" and unicode \xce\xb1";
  save_templates(corpus, dir / "out.jsonl");
  EXPECT_EQ(load_templates(dir / "out.jsonl"), corpus);
  EXPECT_EQ(corpus_fingerprint(load_templates(dir / "out.jsonl")), corpus_fingerprint(corpus));
}

TEST(Corpus, FingerprintSeesEveryField) {
  auto corpus = load_templates(rot_test::fixture("templates.jsonl"));
  const auto base = corpus_fingerprint(corpus);
  auto a = corpus;
  a[0].template_type = "geometry";
  auto b = corpus;
  b[0].knowledge_tags.insert("extra");
  auto c = corpus;
  c[0].steps[1] += ".";
  EXPECT_NE(corpus_fingerprint(a), base);
  EXPECT_NE(corpus_fingerprint(b), base);
  EXPECT_NE(corpus_fingerprint(c), base);
}

TEST(Problems, LoadsFixtureWithDatasetFromStem) {
  const auto problems = load_problems(rot_test::fixture("problems.jsonl"));
  ASSERT_EQ(problems.size(), 3u);
  EXPECT_EQ(problems[0].gold_answer, "25");
  EXPECT_EQ(problems[0].dataset, "problems");
}

TEST(Problems, MissingGoldAnswerNamesProblem) {
  try {
    problem_from_json(nlohmann::json{{"problem_id", "p7"}, {"statement", "x"}});
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("p7"), std::string::npos);
  }
}

TEST(Problems, MissingTagsWarnsAndDefaultsEmpty) {
  log::ScopedCapture cap;
  const auto p = problem_from_json(
      nlohmann::json{{"problem_id", "p"}, {"statement", "x"}, {"gold_answer", 3}, {"template_type", "algebra"}});
  EXPECT_TRUE(p.knowledge_tags.empty());
  EXPECT_EQ(p.gold_answer, "3");
  ASSERT_EQ(cap.warnings.size(), 1u);
  EXPECT_NE(cap.warnings[0].find("knowledge_tags"), std::string::npos);
}
