#include <gtest/gtest.h>

#include <sstream>
#include <thread>

#include "reviewlens/cli/app.hpp"
#include "support/fixture.hpp"
#include "support/tempdir.hpp"

using namespace reviewlens;
using reviewlens::testing::read_file;
using reviewlens::testing::TempDir;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code = -1;
  std::string out, err;
};

Outcome invoke(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  Outcome o;
  o.code = cli::run(args, out, err);
  o.out = out.str();
  o.err = err.str();
  return o;
}

cli::Json read_json(const fs::path& p) { return cli::Json::parse(read_file(p)); }

const std::vector<Category> kTwo{Category::Method, Category::Positive};

/// sentences.jsonl, annotations.jsonl, gold.jsonl and a TOML config pointing at the fixture encoder.
struct Workspace {
  TempDir dir{"cli"};
  fs::path sentences, annotations, gold, config;

  explicit Workspace(std::size_t n = 150) {
    const auto ds = synthetic::annotated_dataset(n, 3, kTwo, 0.4, 0.0, 5);
    sentences = dir / "sentences.jsonl";
    annotations = dir / "annotations.jsonl";
    gold = dir / "gold.jsonl";
    corpus::write_jsonl(sentences, ds.sentences);
    corpus::write_jsonl(annotations, ds.annotations);
    corpus::write_jsonl(gold, corpus::aggregate_majority(ds.annotations));
    config = dir.write("run.toml", "seed = 42\n"
                                   "[paths]\n"
                                   "models_dir = \"" + reviewlens::testing::ensure_fixture_encoder().string() + "\"\n"
                                   "[encoder]\n"
                                   "ids = [\"" + reviewlens::testing::kFixtureModelId + "\"]\n"
                                   "[train]\n"
                                   "learning_rate = 2e-4\n");
  }

  std::vector<std::string> data_args() const {
    return {"--config", config.string(), "--gold", gold.string(), "--sentences", sentences.string()};
  }
};

std::vector<std::string> operator+(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace

TEST(Cli, UnknownSubcommandPrintsUsage) {
  const auto r = invoke({"frobnicate"});
  EXPECT_EQ(r.code, cli::kExitValidation);
  EXPECT_NE(r.err.find("unknown subcommand"), std::string::npos);
  EXPECT_NE(r.err.find("Usage:"), std::string::npos);
  EXPECT_EQ(invoke({}).code, cli::kExitValidation);
  EXPECT_EQ(invoke({"cv", "--no-such-flag"}).code, cli::kExitValidation);
  EXPECT_EQ(invoke({"--help"}).code, cli::kExitOk);
}

TEST(Cli, AggregateWritesMajorityGoldAndManifest) {
  Workspace ws(40);
  const auto out = ws.dir / "gold_out.jsonl";
  const auto r = invoke({"aggregate", "--annotations", ws.annotations.string(), "--quorum", "2", "--out", out.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto expected = corpus::aggregate_majority(corpus::ingest_annotations(ws.annotations), 2);
  EXPECT_EQ(corpus::ingest_gold(out), expected);

  const auto m = read_json(fs::path(out.string() + ".manifest.json"));
  EXPECT_EQ(m["kind"], "aggregate");
  EXPECT_EQ(m["seed"], 42);
  EXPECT_EQ(m["inputs"][0]["sha256"], util::sha256_file(ws.annotations));
  EXPECT_EQ(m["quorum"], 2);
}

TEST(Cli, AggregateDirectoryAddsAgreement) {
  Workspace ws(40);
  const auto out = ws.dir / "agg";
  ASSERT_EQ(invoke({"aggregate", "--annotations", ws.annotations.string(), "--out", out.string()}).code, 0);
  EXPECT_TRUE(fs::exists(out / "gold.jsonl"));
  EXPECT_TRUE(fs::exists(out / "agreement.csv"));
  EXPECT_TRUE(fs::exists(out / "manifest.json"));
}

TEST(Cli, InvalidInputsExitOne) {
  TempDir dir("cli-bad");
  // Rationale without Positive or Negative breaks the gating rule.
  cli::Json labels;
  for (Category c : kAllCategories) labels[std::string(codebook_name(c))] = c == Category::Rationale ? 1 : 0;
  const auto bad = dir.write("a.jsonl", cli::Json{{"sentence_id", "r:0"}, {"annotator_id", "a"}, {"round_id", "r1"},
                                                  {"labels", labels}}.dump() + "\n");
  auto r = invoke({"aggregate", "--annotations", bad.string(), "--out", (dir / "g.jsonl").string()});
  EXPECT_EQ(r.code, cli::kExitValidation);
  EXPECT_NE(r.err.find("GatingViolation"), std::string::npos);

  r = invoke({"aggregate", "--annotations", (dir / "missing.jsonl").string(), "--out", (dir / "g.jsonl").string()});
  EXPECT_EQ(r.code, cli::kExitValidation);
  r = invoke({"split", "--gold", (dir / "missing.jsonl").string(), "--category", "positive", "--out", (dir / "s").string()});
  EXPECT_EQ(r.code, cli::kExitValidation);
  r = invoke({"serve", "--db", (dir / "db.jsonl").string(), "--bind", "localhost:notaport"});
  EXPECT_EQ(r.code, cli::kExitValidation);
}

TEST(Cli, FlagsOverrideConfigFile) {
  Workspace ws(40);
  const auto cfg = ws.dir.write("c.toml", "seed = 7\n[train]\nepochs = 1\n");
  const auto out = ws.dir / "split";
  auto r = invoke({"split", "--config", cfg.string(), "--seed", "9", "--gold", ws.gold.string(), "--category",
                   "proposal_method", "--k", "3", "--out", out.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto m = read_json(out / "manifest.json");
  EXPECT_EQ(m["seed"], 9);
  EXPECT_EQ(m["config"]["train"]["epochs"], 1);
  const auto split = read_json(out / "split.json");
  EXPECT_EQ(split["seed"], 9);
  EXPECT_EQ(split["folds"].size(), 3u);
  EXPECT_EQ(split["train_ids"].size() + split["test_ids"].size(), 40u);

  // Without the flag the file's seed applies.
  r = invoke({"split", "--config", cfg.string(), "--gold", ws.gold.string(), "--category", "proposal_method", "--out",
              (ws.dir / "split2").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_json(ws.dir / "split2" / "manifest.json")["seed"], 7);

  const auto broken = ws.dir.write("bad.toml", "[train]\nlearning_rat = 1\n");
  r = invoke({"split", "--config", broken.string(), "--gold", ws.gold.string(), "--category", "positive", "--out",
              (ws.dir / "split3").string()});
  EXPECT_EQ(r.code, cli::kExitValidation);
}

TEST(Cli, CrossValidationIsDeterministicAndReportable) {
  Workspace ws;
  auto args = std::vector<std::string>{"cv", "--approach", "binary", "--k", "3", "--seed", "42", "--categories",
                                       "proposal_method", "--epochs", "2"} +
              ws.data_args();
  const auto a = ws.dir / "cv_a", b = ws.dir / "cv_b";
  ASSERT_EQ(invoke(args + std::vector<std::string>{"--out", a.string()}).code, 0);
  ASSERT_EQ(invoke(args + std::vector<std::string>{"--out", b.string(), "--threads", "2"}).code, 0);
  EXPECT_EQ(read_file(a / "results.csv"), read_file(b / "results.csv"));
  const auto m = read_json(a / "manifest.json");
  EXPECT_EQ(m["kind"], "cv");
  EXPECT_EQ(m["seed"], 42);
  EXPECT_EQ(m["inputs"].size(), 3u);  // gold, sentences, encoder

  const auto r = invoke({"report", "--run", a.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream summary(read_file(a / "report" / "summary.csv"));
  std::string header, row, extra;
  std::getline(summary, header);
  std::getline(summary, row);
  EXPECT_FALSE(std::getline(summary, extra));
  EXPECT_EQ(header.rfind("variant,category,folds,F1 min,F1 mean,F1 max,Share Label,Acc.,Bal. Acc.", 0), 0u);
  EXPECT_EQ(row.rfind("binary,proposal_method,3,", 0), 0u);
  EXPECT_NE(read_file(a / "report" / "f1_ranges.svg").find("<svg"), std::string::npos);
}

TEST(Cli, AblationCurveHasOneRowPerPoint) {
  Workspace ws;
  const auto out = ws.dir / "abl";
  const auto r = invoke(std::vector<std::string>{"ablate", "--chunk", "40", "--test-fraction", "0.2", "--categories",
                                              "proposal_method", "--epochs", "1", "--out", out.string()} +
                     ws.data_args());
  ASSERT_EQ(r.code, 0) << r.err;
  ASSERT_EQ(invoke({"report", "--run", out.string(), "--out", (ws.dir / "abl_report").string()}).code, 0);
  std::istringstream curve(read_file(ws.dir / "abl_report" / "learning_curve.csv"));
  std::vector<std::string> lines;
  for (std::string line; std::getline(curve, line);) lines.push_back(line);
  // 120 training sentences in chunks of 40.
  ASSERT_EQ(lines.size(), 4u);
  EXPECT_EQ(lines[0], "train_size,proposal_method,average");
  EXPECT_EQ(lines[1].rfind("40,", 0), 0u);
  EXPECT_EQ(lines[3].rfind("120,", 0), 0u);
}

TEST(Cli, ReportOnEmptyDirectoryFails) {
  TempDir dir("cli-empty");
  EXPECT_EQ(invoke({"report", "--run", dir.path().string()}).code, cli::kExitValidation);
  EXPECT_EQ(invoke({"report", "--run", (dir / "nope").string()}).code, cli::kExitValidation);
}

TEST(Cli, TrainClassifyAnalyzePipeline) {
  Workspace ws;
  const auto models = ws.dir / "models";
  auto r = invoke(std::vector<std::string>{"train", "--approach", "multilabel", "--epochs", "2", "--out", models.string()} +
               ws.data_args());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_json(models / "manifest.json")["models"], cli::Json::array({"multilabel"}));

  const auto eval = ws.dir / "eval";
  r = invoke(std::vector<std::string>{"evaluate", "--model", models.string(), "--categories", "proposal_method,positive",
                                   "--out", eval.string()} +
          ws.data_args());
  ASSERT_EQ(r.code, 0) << r.err;
  const auto report = read_json(eval / "report.json");
  ASSERT_EQ(report.size(), 2u);
  EXPECT_EQ(report[0]["Category"], "proposal_method");

  const auto preds = ws.dir / "pred" / "predictions.jsonl";
  r = invoke({"classify", "--model", models.string(), "--sentences", ws.sentences.string(), "--out", preds.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto set = classify::read_predictions(preds);
  ASSERT_EQ(set.size(), 150u);
  for (const auto& p : set) EXPECT_TRUE(p.by_category[Category::Suggestion].has_value());

  r = invoke({"keyness", "--predictions", preds.string(), "--sentences", ws.sentences.string(), "--category",
           "proposal_method", "--k", "5", "--out", (ws.dir / "key").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto csv = read_file(ws.dir / "key" / "keyness.csv");
  EXPECT_EQ(csv.rfind("category,rank,term,chi2,freq_target,freq_reference\n", 0), 0u);

  const auto prev = ws.dir / "prev";
  r = invoke({"prevalence", "--predictions", preds.string(), "--sentences", ws.sentences.string(), "--gold",
           ws.gold.string(), "--out", prev.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto summary = read_json(prev / "summary.json");
  EXPECT_EQ(summary["n_reviews"], 30);
  EXPECT_TRUE(summary.contains("annotated_vs_predicted_r"));
  ASSERT_EQ(invoke({"report", "--run", prev.string()}).code, 0);
  EXPECT_TRUE(fs::exists(prev / "report" / "hist_proposal_method.svg"));
  EXPECT_TRUE(fs::exists(prev / "report" / "prevalence_means.csv"));
}

TEST(Cli, IngestNumbersBoxesOfAReviewInSequence) {
  TempDir dir("cli-ingest");
  const auto in = dir.write("reviews.jsonl",
                            R"({"review_id":"r1","text_box":"Relevance","research_domain":"SSH","text":"<p>First point. Second point.</p>"})"
                            "\n"
                            R"({"review_id":"r1","text_box":"OverallComment","research_domain":"SSH","text":"Third &amp; last."})"
                            "\n");
  const auto r = invoke({"ingest", "--input", in.string(), "--out", (dir / "s.jsonl").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto sentences = corpus::ingest_sentences(dir / "s.jsonl");
  ASSERT_EQ(sentences.size(), 3u);
  EXPECT_EQ(sentences[2].position, 2);
  EXPECT_EQ(sentences[2].text, "Third & last.");
  EXPECT_EQ(sentences[2].text_box, corpus::TextBox::OverallComment);
}

TEST(Cli, FewshotAgainstStubServer) {
  Workspace ws(60);
  httplib::Server stub;
  stub.Post("/generate", [](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"text":"1"})", "application/json");
  });
  const int port = stub.bind_to_any_port("127.0.0.1");
  std::thread server([&] { stub.listen_after_bind(); });
  stub.wait_until_ready();

  const auto out = ws.dir / "fs";
  const auto r = invoke({"fewshot", "--gold", ws.gold.string(), "--sentences", ws.sentences.string(), "--categories",
                      "proposal_method", "--llm-url", "http://127.0.0.1:" + std::to_string(port) + "/generate", "--out",
                      out.string()});
  stub.stop();
  server.join();
  ASSERT_EQ(r.code, 0) << r.err;
  const auto report = read_json(out / "report.json");
  ASSERT_EQ(report.size(), 1u);
  EXPECT_DOUBLE_EQ(report[0]["Recall Lab=1"].get<double>(), 1.0);
  EXPECT_EQ(invoke({"report", "--run", out.string()}).code, 0);
}

TEST(Cli, FewshotWithoutEndpointIsRuntimeFailure) {
  Workspace ws(60);
  ::unsetenv(fewshot::kLlmUrlEnv);
  const auto r = invoke({"fewshot", "--gold", ws.gold.string(), "--sentences", ws.sentences.string(), "--categories",
                      "proposal_method", "--out", (ws.dir / "fs").string()});
  EXPECT_EQ(r.code, cli::kExitRuntime);
  EXPECT_NE(r.err.find("ClientUnavailable"), std::string::npos);
}
