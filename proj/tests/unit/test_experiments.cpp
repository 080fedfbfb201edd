#include <gtest/gtest.h>

#include <fstream>
#include <set>
#include <sstream>

#include "reviewlens/corpus/aggregate.hpp"
#include "reviewlens/experiments.hpp"
#include "support/fixture.hpp"
#include "support/tempdir.hpp"

using namespace reviewlens;
using namespace reviewlens::experiments;
using reviewlens::testing::fixture_encoder;
using reviewlens::testing::TempDir;

namespace {

const std::vector<Category> kTwo{Category::Method, Category::Positive};

RunOptions two_categories(int threads = 1) { return {kTwo, threads}; }

std::vector<LabeledText> corpus_of(std::size_t n, std::uint64_t seed = 5) { return synthetic::keyword_corpus(n, seed, kTwo); }

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void expect_partition(const corpus::Split& split, std::span<const LabeledText> data) {
  std::multiset<std::string> seen;
  for (const auto& f : split.folds) seen.insert(f.begin(), f.end());
  std::multiset<std::string> all;
  for (const auto& d : data) all.insert(d.id);
  EXPECT_EQ(seen, all);
}

}  // namespace

// ---- plumbing

TEST(ParallelFor, ThreadCountDoesNotChangeResults) {
  for (int threads : {1, 2, 4, 0}) {
    std::vector<int> out(50, 0);
    detail::parallel_for(out.size(), threads, [&](std::size_t i) { out[i] = static_cast<int>(i * i); });
    for (std::size_t i = 0; i < out.size(); ++i) ASSERT_EQ(out[i], static_cast<int>(i * i));
  }
}

TEST(ParallelFor, RethrowsLowestFailingJob) {
  for (int threads : {1, 3}) {
    try {
      detail::parallel_for(20, threads, [](std::size_t i) {
        if (i == 7 || i == 13) fail(ErrorKind::InvalidArgument, "job " + std::to_string(i));
      });
      FAIL();
    } catch (const Error& e) {
      EXPECT_NE(std::string(e.what()).find("job 7"), std::string::npos);
    }
  }
}

TEST(CvSplit, FiveFoldsOf500On2500) {
  const auto data = corpus_of(2500);
  for (Approach a : {Approach::Binary, Approach::MultiLabel}) {
    const auto split = cv_split(a, data, Category::Method, 5, 42);
    ASSERT_EQ(split.folds.size(), 5U);
    for (const auto& f : split.folds) {
      EXPECT_EQ(f.size(), 500U);
      EXPECT_EQ(detail::select(data, f, false).size(), 2000U);
    }
    expect_partition(split, data);
  }
}

TEST(Ablation, Sizes) {
  EXPECT_EQ(ablation_sizes(2500, 500), (std::vector<std::size_t>{500, 1000, 1500, 2000, 2500}));
  EXPECT_EQ(ablation_sizes(1200, 500), (std::vector<std::size_t>{500, 1000, 1200}));
  EXPECT_EQ(ablation_sizes(300, 500), (std::vector<std::size_t>{300}));
  EXPECT_THROW(ablation_sizes(300, 0), Error);
}

TEST(Summary, MinMeanMaxOrdering) {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<EvalReport> folds(1 + rng.below(6));
    for (auto& f : folds) {
      f.f1_macro = rng.uniform();
      f.accuracy = rng.uniform();
      f.n = 10;
    }
    const auto s = summarize(Category::Method, folds);
    ASSERT_LE(s.min_f1, s.mean_f1);
    ASSERT_LE(s.mean_f1, s.max_f1);
    ASSERT_EQ(s.mean.n, 10 * static_cast<long long>(folds.size()));
    double acc = 0;
    for (const auto& f : folds) acc += f.accuracy;
    ASSERT_NEAR(s.mean.accuracy, acc / static_cast<double>(folds.size()), 1e-12);
  }
}

TEST(MakeDataset, JoinsInputsAndRejectsUnknownIds) {
  const auto ds = synthetic::annotated_dataset(10, 1, kTwo, 0.5, 0.0, 5);
  const auto golds = corpus::aggregate_majority(ds.annotations);
  const auto plain = make_dataset(golds, ds.sentences);
  ASSERT_EQ(plain.size(), 10U);
  EXPECT_EQ(plain[0].text, ds.sentences[0].text);
  EXPECT_EQ(plain[3].labels, ds.truth[3].labels);
  const auto ctx = make_dataset(golds, ds.sentences, 1);
  EXPECT_EQ(ctx[0].text, ds.sentences[0].text + " [SEP] " + ds.sentences[1].text);
  auto stray = golds;
  stray[0].sentence_id = "nowhere:0";
  EXPECT_THROW(make_dataset(stray, ds.sentences), Error);
}

// ---- cross-validation

TEST(RunCv, BinarySeparableCorpus) {
  const auto data = corpus_of(400);
  const auto cv = run_cv(Approach::Binary, data, fixture_encoder(), synthetic::tiny_train_config(), 5, two_categories());
  ASSERT_EQ(cv.categories.size(), 2U);
  ASSERT_EQ(cv.splits.size(), 2U);
  for (const auto& c : cv.categories) {
    ASSERT_EQ(c.folds.size(), 5U);
    for (const auto& f : c.folds) {
      EXPECT_GE(f.f1_macro, 0.9) << codebook_name(c.category);
      EXPECT_EQ(f.n, 80);
    }
    EXPECT_LE(c.max_f1 - c.min_f1, 0.1);
    EXPECT_LE(c.min_f1, c.mean_f1);
    EXPECT_LE(c.mean_f1, c.max_f1);
  }
  for (const auto& s : cv.splits) expect_partition(s, data);
  EXPECT_EQ(cv.splits[0].strat_category, Category::Method);
}

TEST(RunCv, DeterministicAcrossRerunsAndThreads) {
  const auto data = corpus_of(200, 9);
  const auto cfg = synthetic::tiny_train_config(17);
  const auto a = run_cv(Approach::Binary, data, fixture_encoder(), cfg, 3, two_categories(1));
  const auto b = run_cv(Approach::Binary, data, fixture_encoder(), cfg, 3, two_categories(1));
  const auto c = run_cv(Approach::Binary, data, fixture_encoder(), cfg, 3, two_categories(3));
  EXPECT_EQ(a, b);
  EXPECT_EQ(a, c);
}

TEST(RunCv, MultiLabelUsesOneSharedSplit) {
  const auto data = corpus_of(400);
  const auto cv = run_cv(Approach::MultiLabel, data, fixture_encoder(), synthetic::tiny_train_config(), 5, two_categories(2));
  ASSERT_EQ(cv.splits.size(), 1U);
  expect_partition(cv.splits[0], data);
  for (const auto& c : cv.categories)
    for (const auto& f : c.folds) EXPECT_GE(f.f1_macro, 0.9) << codebook_name(c.category);
  EXPECT_GE(cv.average_f1(), 0.9);
  EXPECT_EQ(cv.at(Category::Positive).category, Category::Positive);
  EXPECT_THROW(cv.at(Category::Negative), Error);
}

TEST(RunCv, PropagatesTrainingErrors) {
  auto data = corpus_of(100);
  for (auto& d : data) d.labels[Category::Method] = 0;
  try {
    run_cv(Approach::Binary, data, fixture_encoder(), synthetic::tiny_train_config(), 5, two_categories());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::DegenerateStratum);
  }
}

// ---- ablation

TEST(RunAblation, CumulativePointsOnFixedTestSet) {
  const auto data = corpus_of(750, 21);
  const std::span<const LabeledText> all(data);
  const auto train = all.first(600), test = all.subspan(600);
  AblationOptions opt;
  opt.chunk = 200;
  opt.run = two_categories(2);
  const auto curve = run_ablation(train, test, fixture_encoder(), synthetic::tiny_train_config(), opt);
  ASSERT_EQ(curve.points.size(), 3U);
  EXPECT_EQ(curve.points[0].train_size, 200U);
  EXPECT_EQ(curve.points[2].train_size, 600U);
  const std::set<std::string> first(curve.points[0].test_ids.begin(), curve.points[0].test_ids.end());
  for (const auto& p : curve.points) {
    EXPECT_EQ(std::set<std::string>(p.test_ids.begin(), p.test_ids.end()), first);
    ASSERT_EQ(p.reports.size(), 2U);
  }
  for (std::size_t c = 0; c < 2; ++c)
    EXPECT_GE(curve.points.back().reports[c].report.f1_macro, curve.points.front().reports[c].report.f1_macro - 0.05);
  // prefixes of one shuffle
  EXPECT_EQ(curve.train_order.size(), 600U);
  EXPECT_EQ(std::set<std::string>(curve.train_order.begin(), curve.train_order.end()).size(), 600U);
}

TEST(RunAblation, ChunkLargerThanTrainGivesOnePoint) {
  const auto data = corpus_of(300, 4);
  const std::span<const LabeledText> all(data);
  AblationOptions opt;
  opt.chunk = 1000;
  opt.run = two_categories();
  const auto curve = run_ablation(all.first(240), all.subspan(240), fixture_encoder(), synthetic::tiny_train_config(), opt);
  ASSERT_EQ(curve.points.size(), 1U);
  EXPECT_EQ(curve.points[0].train_size, 240U);
}

TEST(RunAblation, ContinuationMode) {
  const auto data = corpus_of(500, 8);
  const std::span<const LabeledText> all(data);
  AblationOptions opt;
  opt.chunk = 200;
  opt.continue_training = true;
  opt.run = two_categories();
  const auto curve = run_ablation(all.first(400), all.subspan(400), fixture_encoder(), synthetic::tiny_train_config(), opt);
  ASSERT_EQ(curve.points.size(), 2U);
  EXPECT_TRUE(curve.continued);
  for (const auto& p : curve.points) ASSERT_EQ(p.reports.size(), 2U);
  EXPECT_GE(curve.points.back().reports[0].report.f1_macro, 0.9);

  // the first point of a continued curve is the same model as a fresh one
  AblationOptions fresh = opt;
  fresh.continue_training = false;
  const auto fresh_curve = run_ablation(all.first(400), all.subspan(400), fixture_encoder(), synthetic::tiny_train_config(), fresh);
  EXPECT_EQ(curve.points[0].reports[0].report, fresh_curve.points[0].reports[0].report);

  opt.approach = Approach::MultiTask;
  EXPECT_THROW(run_ablation(all.first(400), all.subspan(400), fixture_encoder(), synthetic::tiny_train_config(), opt), Error);
}

// ---- encoder comparison

TEST(CompareEncoders, SameEncoderTwiceGivesIdenticalColumns) {
  const auto data = corpus_of(300, 12);
  const std::vector<classify::EncoderModel> encoders{fixture_encoder(), fixture_encoder()};
  RunOptions opt;  // all twelve categories; only the joint model can train on categories without positives
  const auto cmp = compare_encoders(data, encoders, synthetic::tiny_train_config(), Approach::MultiLabel, 0.2,
                                    Category::Method, opt);
  ASSERT_EQ(cmp.reports.size(), 2U);
  ASSERT_EQ(cmp.reports[0].size(), 12U);
  EXPECT_EQ(cmp.reports[0], cmp.reports[1]);
  EXPECT_EQ(cmp.split.test_ids.size(), 60U);

  std::ostringstream table;
  write_encoder_table(table, cmp);
  std::vector<std::string> lines;
  std::istringstream in(table.str());
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  ASSERT_EQ(lines.size(), 14U);  // header, 12 categories, average
  EXPECT_EQ(lines[0], "category,fixture/tiny-bert,fixture/tiny-bert");
  EXPECT_EQ(lines.back().substr(0, 8), "average,");
  const auto cols = lines.back().substr(8);
  EXPECT_EQ(cols.substr(0, cols.find(',')), cols.substr(cols.find(',') + 1));
}

TEST(CompareEncoders, LoadsByIdOffline) {
  const auto encoders = load_encoders(reviewlens::testing::ensure_fixture_encoder(), {reviewlens::testing::kFixtureModelId});
  ASSERT_EQ(encoders.size(), 1U);
  EXPECT_EQ(encoders[0].model_id, reviewlens::testing::kFixtureModelId);
  try {
    load_encoders(reviewlens::testing::ensure_fixture_encoder(), {"nobody/missing"});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::ModelNotFound);
  }
}

// ---- majority vs full agreement

TEST(CompareTrainingSets, UnanimousCorpusGivesIdenticalReports) {
  const auto ds = synthetic::annotated_dataset(250, 31, kTwo, 0.5, 0.0);
  const auto golds = corpus::aggregate_majority(ds.annotations);
  const auto data = make_dataset(golds, ds.sentences);
  const auto cmp = compare_training_sets(golds, data, Category::Method, fixture_encoder(), synthetic::tiny_train_config(), 5, 2);
  EXPECT_EQ(cmp.majority, cmp.full_agreement);
  for (std::size_t f = 0; f < 5; ++f) EXPECT_EQ(cmp.full_train_sizes[f], 200U);
}

TEST(CompareTrainingSets, NoisyMinorityAnnotator) {
  auto ds = synthetic::annotated_dataset(300, 32, kTwo, 0.5, 0.0);
  Rng rng(99);
  for (auto& r : ds.annotations)
    if (r.annotator_id == "ann3" && rng.uniform() < 0.3) r.labels[Category::Method] = 1 - r.labels[Category::Method];
  const auto golds = corpus::aggregate_majority(ds.annotations);
  const auto data = make_dataset(golds, ds.sentences);
  for (std::size_t i = 0; i < data.size(); ++i) ASSERT_EQ(data[i].labels[Category::Method], ds.truth[i].labels[Category::Method]);
  const auto cmp = compare_training_sets(golds, data, Category::Method, fixture_encoder(), synthetic::tiny_train_config());
  for (std::size_t f = 0; f < 5; ++f) EXPECT_LT(cmp.full_train_sizes[f], 240U);
  EXPECT_NEAR(cmp.majority.mean_f1, cmp.full_agreement.mean_f1, 0.05);
  EXPECT_GE(cmp.majority.mean_f1, 0.9);
}

TEST(CompareTrainingSets, DegenerateFullSubset) {
  auto ds = synthetic::annotated_dataset(50, 33, kTwo, 0.5, 0.0);
  for (auto& r : ds.annotations)
    if (r.annotator_id == "ann3") r.labels[Category::Method] = 1;
  const auto golds = corpus::aggregate_majority(ds.annotations);
  try {
    compare_training_sets(golds, make_dataset(golds, ds.sentences), Category::Method, fixture_encoder(),
                          synthetic::tiny_train_config());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::DegenerateStratum);
  }
}

// ---- context

TEST(CompareContext, CombinedLabelIsOr) {
  corpus::GoldLabel g;
  g.sentence_id = "a:0";
  for (int target : {0, 1})
    for (int context : {0, 1}) {
      g.labels[Category::Rationale] = target;
      g.rationale_context = context;
      EXPECT_EQ(combined_rationale(g), target | context);
    }
  g.rationale_context.reset();
  EXPECT_THROW(combined_rationale(g), Error);
}

TEST(CompareContext, SingleSentenceReviewsDegenerate) {
  const auto ds = synthetic::annotated_dataset(200, 41, {Category::Positive, Category::Rationale}, 0.5, 0.0, 1);
  const auto golds = corpus::aggregate_majority(ds.annotations);
  const auto cmp = compare_context(golds, ds.sentences, fixture_encoder(), synthetic::tiny_train_config(), 4, 1, 2);
  EXPECT_EQ(cmp.sentence_only, cmp.with_context);
  EXPECT_EQ(cmp.sentence_only.folds.size(), 4U);
}

TEST(CompareContext, WindowedInputsTrain) {
  auto ds = synthetic::annotated_dataset(200, 42, {Category::Positive, Category::Rationale}, 0.5, 0.0, 4);
  // neighbours of a rationale sentence also carry the context flag
  std::set<std::string> flagged;
  for (const auto& r : ds.annotations)
    if (r.labels[Category::Rationale]) {
      const auto colon = r.sentence_id.find(':');
      const int pos = std::stoi(r.sentence_id.substr(colon + 1));
      for (int d : {-1, 1}) flagged.insert(r.sentence_id.substr(0, colon + 1) + std::to_string(pos + d));
    }
  for (auto& r : ds.annotations) r.rationale_context = r.labels[Category::Rationale] || flagged.contains(r.sentence_id);
  const auto golds = corpus::aggregate_majority(ds.annotations);
  const auto cmp = compare_context(golds, ds.sentences, fixture_encoder(), synthetic::tiny_train_config(), 4, 1, 2);
  EXPECT_NE(cmp.sentence_only, cmp.with_context);
  long long combined = 0, plain = 0;
  for (const auto& g : golds) {
    combined += combined_rationale(g);
    plain += g.labels[Category::Rationale];
  }
  EXPECT_GT(combined, plain);
  EXPECT_DOUBLE_EQ(cmp.with_context.mean.share_label, static_cast<double>(combined) / static_cast<double>(golds.size()));
  EXPECT_THROW(compare_context(golds, ds.sentences, fixture_encoder(), synthetic::tiny_train_config(), 4, 0), Error);
}

// ---- run records

TEST(RunRecord, WritesManifestResultsAndFoldReports) {
  const auto data = corpus_of(200, 9);
  const auto cfg = synthetic::tiny_train_config(17);
  const auto cv = run_cv(Approach::Binary, data, fixture_encoder(), cfg, 3, two_categories());
  const auto rec = record(cv, data, fixture_encoder().model_id, cfg);
  EXPECT_EQ(rec.manifest["seed"].get<std::uint64_t>(), 17U);
  EXPECT_EQ(rec.manifest["data"]["sha256"].get<std::string>(), data_hash(data));
  EXPECT_EQ(rec.manifest["splits"].size(), 2U);

  TempDir tmp("exp");
  const auto dir = write_run(tmp.path(), rec);
  EXPECT_EQ(dir.filename().string().substr(0, 3), "cv-");
  ASSERT_TRUE(std::filesystem::exists(dir / "manifest.json"));
  ASSERT_TRUE(std::filesystem::exists(dir / "fold_2" / "report.json"));
  const auto csv = slurp(dir / "results.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')),
            "variant,category,fold,n,Share Label,Acc.,Bal. Acc.,F1 (Macro),F1 (Micro),F1 Lab=1,F1 Lab=0,"
            "Prec. (Macro),Prec. (Micro),Prec. Lab=1,Prec. Lab=0,Recall (Macro),Recall (Micro),Recall Lab=1,Recall Lab=0");
  EXPECT_NE(csv.find("binary,proposal_method,mean,200,"), std::string::npos);

  // a rerun from the manifest's inputs reproduces every file
  const auto again = run_cv(Approach::Binary, data, fixture_encoder(), classify::detail::config_from_json(rec.manifest["config"]),
                            rec.manifest["k"].get<int>(), two_categories(2));
  const auto dir2 = write_run(tmp.path() / "second", record(again, data, fixture_encoder().model_id, cfg));
  EXPECT_EQ(dir.filename(), dir2.filename());
  for (const char* f : {"manifest.json", "results.csv", "fold_0/report.json", "fold_1/report.json"})
    EXPECT_EQ(slurp(dir / f), slurp(dir2 / f)) << f;
}

TEST(RunRecord, DataHashIsOrderAndLabelSensitive) {
  auto data = corpus_of(5);
  const auto h = data_hash(data);
  EXPECT_EQ(h.size(), 64U);
  std::swap(data[0], data[1]);
  EXPECT_NE(data_hash(data), h);
  std::swap(data[0], data[1]);
  data[2].labels[Category::Suggestion] ^= 1;
  EXPECT_NE(data_hash(data), h);
}
