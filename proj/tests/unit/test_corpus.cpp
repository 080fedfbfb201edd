#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <set>

#include "reviewlens/corpus/aggregate.hpp"
#include "reviewlens/corpus/io.hpp"
#include "reviewlens/corpus/split.hpp"
#include "reviewlens/corpus/text.hpp"
#include "reviewlens/synthetic.hpp"
#include "support/tempdir.hpp"

using namespace reviewlens;
using namespace reviewlens::corpus;
using reviewlens::testing::TempDir;

namespace {

template <typename F>
ErrorKind error_kind_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected an Error";
  return ErrorKind::Io;
}

std::string non_space(std::string_view s) {
  std::string out;
  for (char c : s)
    if (!std::isspace(static_cast<unsigned char>(c))) out.push_back(c);
  return out;
}

AnnotationRecord record(const std::string& sid, const std::string& ann, const LabelVector& labels,
                        std::optional<int> context = std::nullopt, const std::string& round = "r1") {
  return AnnotationRecord{sid, ann, round, labels, context};
}

}  // namespace

// ---- normalize_text

TEST(NormalizeText, StripsTagsAndCollapsesWhitespace) { EXPECT_EQ(normalize_text("<p>Good  plan.</p>"), "Good plan."); }

TEST(NormalizeText, KeepsPlaceholders) {
  EXPECT_EQ(normalize_text("Dr [UNK] has an h-index of 19"), "Dr [UNK] has an h-index of 19");
  EXPECT_EQ(normalize_text("REMOVE_DISCIPLINE and REMOVE_INSTITUTION"), "REMOVE_DISCIPLINE and REMOVE_INSTITUTION");
}

TEST(NormalizeText, EmptyStaysEmpty) { EXPECT_EQ(normalize_text(""), ""); }

TEST(NormalizeText, EntitiesAndComparisons) {
  EXPECT_EQ(normalize_text("p &lt; 0.05&nbsp;&amp; n&gt;3"), "p < 0.05 & n>3");
  EXPECT_EQ(normalize_text("a < b and c > d"), "a < b and c > d");
  EXPECT_EQ(normalize_text("line one<br/>line\ttwo\r\n"), "line one line two");
}

TEST(NormalizeText, IdempotentOnRandomMarkup) {
  const std::vector<std::string> pieces{"<p>", "</p>", "<br/>", "&amp;", "&lt;p&gt;", "&nbsp;", " ", "  ", "\t", "\n",
                                        "word", "[UNK]", "REMOVE_DISCIPLINE", "<", ">", "&", "x", ".", "&amp;lt;"};
  Rng rng(5);
  for (int trial = 0; trial < 2000; ++trial) {
    std::string raw;
    const auto len = rng.below(12);
    for (std::uint64_t k = 0; k < len; ++k) raw += pieces[rng.below(pieces.size())];
    const auto once = normalize_text(raw);
    ASSERT_EQ(normalize_text(once), once) << "input: " << raw;
    ASSERT_EQ(once.find("  "), std::string::npos);
  }
}

// ---- segmentation

TEST(SegmentReview, TwoSimpleSentences) {
  const auto s = segment_review("The plan is solid. The team is strong.", "r1", TextBox::OverallComment);
  ASSERT_EQ(s.size(), 2U);
  EXPECT_EQ(s[0].text, "The plan is solid.");
  EXPECT_EQ(s[1].text, "The team is strong.");
  EXPECT_EQ(s[0].position, 0);
  EXPECT_EQ(s[1].position, 1);
  EXPECT_EQ(s[1].sentence_id, "r1:1");
  EXPECT_EQ(s[1].text_box, TextBox::OverallComment);
}

TEST(SegmentReview, AbbreviationInsideParentheses) {
  const auto s = segment_review("The PI (e.g. Dr [UNK]) excels.", "r1", TextBox::TrackRecord);
  ASSERT_EQ(s.size(), 1U);
  EXPECT_EQ(s[0].text, "The PI (e.g. Dr [UNK]) excels.");
}

TEST(SegmentReview, EmptyInput) { EXPECT_TRUE(segment_review("", "r1", TextBox::Relevance).empty()); }

TEST(SegmentReview, FirstPositionOffset) {
  const auto s = segment_review("One. Two.", "r9", TextBox::Feasibility, 3);
  ASSERT_EQ(s.size(), 2U);
  EXPECT_EQ(s[0].sentence_id, "r9:3");
  EXPECT_EQ(s[1].position, 4);
}

namespace {

std::vector<std::vector<std::string>> load_segmentation_fixture() {
  std::ifstream in(std::string(REVIEWLENS_TEST_DATA) + "/segmentation.txt");
  std::vector<std::vector<std::string>> reviews(1);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line[0] == '#') continue;
    if (line.empty()) {
      if (!reviews.back().empty()) reviews.emplace_back();
      continue;
    }
    reviews.back().push_back(line);
  }
  if (reviews.back().empty()) reviews.pop_back();
  return reviews;
}

}  // namespace

TEST(SegmentReview, HandSegmentedFixture) {
  const auto reviews = load_segmentation_fixture();
  std::size_t total = 0;
  for (const auto& expected : reviews) {
    std::string joined;
    for (const auto& s : expected) joined += (joined.empty() ? "" : " ") + s;
    const auto got = split_sentences(joined);
    EXPECT_EQ(got, expected) << "review: " << joined;
    total += expected.size();
  }
  EXPECT_EQ(total, 50U);
}

TEST(SegmentReview, PreservesNonWhitespaceContent) {
  const auto reviews = load_segmentation_fixture();
  Rng rng(17);
  for (int trial = 0; trial < 300; ++trial) {
    std::string text;
    const auto n = 1 + rng.below(6);
    for (std::uint64_t k = 0; k < n; ++k) {
      const auto& review = reviews[rng.below(reviews.size())];
      text += (text.empty() ? "" : (rng.below(2) ? " " : "  ")) + review[rng.below(review.size())];
    }
    const auto sentences = segment_review(text, "r", TextBox::OverallComment);
    std::string rebuilt;
    for (std::size_t i = 0; i < sentences.size(); ++i) {
      EXPECT_EQ(sentences[i].position, static_cast<int>(i));
      rebuilt += sentences[i].text;
    }
    ASSERT_EQ(non_space(rebuilt), non_space(text));
  }
}

// ---- ingestion

TEST(IngestAnnotations, ValidFile) {
  TempDir dir("ingest");
  LabelVector pos;
  pos[Category::Positive] = 1;
  pos[Category::Rationale] = 1;
  std::string content;
  for (const auto& ann : {"a1", "a2", "a3"})
    content += to_json(record("s1", ann, pos, 1)).dump() + "\n";
  const auto records = ingest_annotations(dir.write("a.jsonl", content));
  ASSERT_EQ(records.size(), 3U);
  EXPECT_EQ(records[1].annotator_id, "a2");
  EXPECT_EQ(records[2].labels, pos);
  EXPECT_EQ(records[0].rationale_context, 1);
}

TEST(IngestAnnotations, GatingViolation) {
  TempDir dir("ingest");
  LabelVector bad;
  bad[Category::Rationale] = 1;
  const auto path = dir.write("a.jsonl", to_json(record("s1", "a1", bad)).dump() + "\n");
  EXPECT_EQ(error_kind_of([&] { ingest_annotations(path); }), ErrorKind::GatingViolation);
}

TEST(IngestAnnotations, DuplicateRecord) {
  TempDir dir("ingest");
  const auto line = to_json(record("s1", "a1", LabelVector{})).dump() + "\n";
  const auto path = dir.write("a.jsonl", line + line);
  EXPECT_EQ(error_kind_of([&] { ingest_annotations(path); }), ErrorKind::DuplicateRecord);
  // Same pair in a different round is a distinct record.
  const auto other = to_json(record("s1", "a1", LabelVector{}, std::nullopt, "r2")).dump() + "\n";
  EXPECT_EQ(ingest_annotations(dir.write("b.jsonl", line + other)).size(), 2U);
}

TEST(IngestAnnotations, MalformedRecordReportsLine) {
  TempDir dir("ingest");
  const auto good = to_json(record("s1", "a1", LabelVector{})).dump() + "\n";
  auto missing = to_json(record("s2", "a1", LabelVector{}));
  missing["labels"].erase("positive");
  const auto path = dir.write("a.jsonl", good + "\n" + missing.dump() + "\n");
  try {
    ingest_annotations(path);
    FAIL() << "expected MalformedRecord";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::MalformedRecord);
    EXPECT_NE(std::string(e.what()).find(":3:"), std::string::npos) << e.what();
  }
  const auto broken = dir.write("b.jsonl", "{not json\n");
  EXPECT_EQ(error_kind_of([&] { ingest_annotations(broken); }), ErrorKind::MalformedRecord);
  auto wrong_value = to_json(record("s3", "a1", LabelVector{}));
  wrong_value["labels"]["positive"] = 2;
  const auto p2 = dir.write("c.jsonl", wrong_value.dump() + "\n");
  EXPECT_EQ(error_kind_of([&] { ingest_annotations(p2); }), ErrorKind::MalformedRecord);
}

TEST(IngestSentences, RoundTripAndUniqueness) {
  TempDir dir("sent");
  const auto ds = synthetic::annotated_dataset(20, 3, {Category::Method});
  write_jsonl(dir / "s.jsonl", ds.sentences);
  EXPECT_EQ(ingest_sentences(dir / "s.jsonl"), ds.sentences);
  auto dup = ds.sentences;
  dup.push_back(dup.front());
  write_jsonl(dir / "d.jsonl", dup);
  EXPECT_EQ(error_kind_of([&] { ingest_sentences(dir / "d.jsonl"); }), ErrorKind::DuplicateRecord);
  auto same_position = ds.sentences;
  same_position[1].position = same_position[0].position;
  write_jsonl(dir / "p.jsonl", same_position);
  EXPECT_EQ(error_kind_of([&] { ingest_sentences(dir / "p.jsonl"); }), ErrorKind::DuplicateRecord);
}

TEST(IngestGold, RoundTrip) {
  TempDir dir("gold");
  const auto ds = synthetic::annotated_dataset(30, 4, {Category::Method, Category::Negative}, 0.5, 0.2);
  const auto golds = aggregate_majority(ds.annotations);
  write_jsonl(dir / "g.jsonl", golds);
  EXPECT_EQ(ingest_gold(dir / "g.jsonl"), golds);
}

// ---- aggregation

TEST(AggregateMajority, ExamplesFromVotes) {
  auto gold_for = [](std::array<int, 3> votes) {
    std::vector<AnnotationRecord> records;
    for (int a = 0; a < 3; ++a) {
      LabelVector l;
      l[Category::Proposal] = votes[static_cast<std::size_t>(a)];
      records.push_back(record("s", "a" + std::to_string(a), l));
    }
    return aggregate_majority(records).at(0);
  };
  auto g = gold_for({1, 1, 0});
  EXPECT_EQ(g.labels[Category::Proposal], 1);
  EXPECT_EQ(g.agreement[Category::Proposal], Agreement::Majority);
  g = gold_for({0, 1, 0});
  EXPECT_EQ(g.labels[Category::Proposal], 0);
  EXPECT_EQ(g.agreement[Category::Proposal], Agreement::Majority);
  g = gold_for({1, 1, 1});
  EXPECT_EQ(g.labels[Category::Proposal], 1);
  EXPECT_EQ(g.agreement[Category::Proposal], Agreement::Full);
  EXPECT_EQ(g.n_annotators, 3);
}

TEST(AggregateMajority, ExhaustiveThreeVoteCombinations) {
  for (Category c : kAllCategories) {
    for (int mask = 0; mask < 8; ++mask) {
      std::vector<AnnotationRecord> records;
      std::array<int, 3> votes{};
      for (int a = 0; a < 3; ++a) {
        votes[static_cast<std::size_t>(a)] = (mask >> a) & 1;
        LabelVector l;
        l[c] = votes[static_cast<std::size_t>(a)];
        // Keep Rationale votes gated without influencing other categories under test.
        if (c == Category::Rationale && l[c] == 1) l[Category::Positive] = 1;
        records.push_back(record("s", "a" + std::to_string(a), l));
      }
      const auto gold = aggregate_majority(records).at(0);
      const int ones = votes[0] + votes[1] + votes[2];
      const int expected = ones >= 2 ? 1 : 0;
      const Agreement expected_agreement = (ones == 0 || ones == 3) ? Agreement::Full : Agreement::Majority;
      EXPECT_EQ(gold.labels[c], expected) << codebook_name(c) << " mask " << mask;
      EXPECT_EQ(gold.agreement[c], expected_agreement) << codebook_name(c) << " mask " << mask;
    }
  }
}

TEST(AggregateMajority, RationaleVotedIndependently) {
  // Two annotators mark Rationale with different statement types: the Positive and Negative
  // majorities both fail but Rationale still passes.
  LabelVector a, b, c;
  a[Category::Positive] = 1;
  a[Category::Rationale] = 1;
  b[Category::Negative] = 1;
  b[Category::Rationale] = 1;
  const auto gold = aggregate_majority({record("s", "a", a), record("s", "b", b), record("s", "c", c)}).at(0);
  EXPECT_EQ(gold.labels[Category::Rationale], 1);
  EXPECT_EQ(gold.labels[Category::Positive], 0);
  EXPECT_EQ(gold.labels[Category::Negative], 0);
}

TEST(AggregateMajority, InsufficientAnnotators) {
  const std::vector<AnnotationRecord> records{record("s1", "a", {}), record("s1", "b", {}), record("s2", "a", {})};
  EXPECT_EQ(error_kind_of([&] { aggregate_majority(records); }), ErrorKind::InsufficientAnnotators);
  EXPECT_EQ(aggregate_majority(records, 1).size(), 2U);
}

TEST(AggregateMajority, EvenPanelTieIsNotMajority) {
  LabelVector one;
  one[Category::Method] = 1;
  const auto gold = aggregate_majority({record("s", "a", one), record("s", "b", one), record("s", "c", {}),
                                        record("s", "d", {})})
                        .at(0);
  EXPECT_EQ(gold.labels[Category::Method], 1);
  EXPECT_EQ(gold.agreement[Category::Method], Agreement::None);
}

TEST(AggregateMajority, RationaleContextOnlyWhenAllRecorded) {
  auto g = aggregate_majority({record("s", "a", {}, 1), record("s", "b", {}, 1), record("s", "c", {}, 0)}).at(0);
  EXPECT_EQ(g.rationale_context, 1);
  g = aggregate_majority({record("s", "a", {}, 1), record("s", "b", {}, 1), record("s", "c", {})}).at(0);
  EXPECT_FALSE(g.rationale_context.has_value());
}

TEST(FilterFullAgreement, KeepsUnanimousEitherValue) {
  std::vector<AnnotationRecord> records;
  // 10 sentences: 0-3 unanimous 1, 4-6 unanimous 0, 7-9 split.
  for (int s = 0; s < 10; ++s) {
    for (int a = 0; a < 3; ++a) {
      LabelVector l;
      l[Category::Positive] = s < 4 ? 1 : s < 7 ? 0 : (a == 0 ? 1 : 0) + (s == 9 && a == 1 ? 1 : 0);
      records.push_back(record("s" + std::to_string(s), "a" + std::to_string(a), l));
    }
  }
  const auto golds = aggregate_majority(records);
  const auto kept = filter_full_agreement(golds, Category::Positive);
  std::size_t brute = 0;
  for (int s = 0; s < 10; ++s) {
    int ones = 0;
    for (const auto& r : records)
      if (r.sentence_id == "s" + std::to_string(s)) ones += r.labels[Category::Positive];
    brute += (ones == 0 || ones == 3) ? 1 : 0;
  }
  EXPECT_EQ(kept.size(), brute);
  EXPECT_EQ(kept.size(), 7U);
  EXPECT_EQ(filter_full_agreement(records, golds, Category::Positive), kept);
  for (const auto& g : kept)
    if (g.sentence_id == "s5") EXPECT_EQ(g.labels[Category::Positive], 0);
}

// ---- splits

namespace {

std::vector<GoldLabel> golds_with_share(std::size_t n, Category c, double share, std::uint64_t seed) {
  std::vector<GoldLabel> golds(n);
  const auto positives = static_cast<std::size_t>(std::llround(share * static_cast<double>(n)));
  for (std::size_t i = 0; i < n; ++i) {
    golds[i].sentence_id = "s" + std::to_string(i);
    golds[i].labels[c] = i < positives ? 1 : 0;
  }
  Rng rng(seed);
  rng.shuffle(golds);
  return golds;
}

std::size_t count_positive(const std::vector<std::string>& ids, const std::vector<GoldLabel>& golds, Category c) {
  std::set<std::string> set(ids.begin(), ids.end());
  std::size_t k = 0;
  for (const auto& g : golds) k += set.count(g.sentence_id) && g.labels[c] == 1 ? 1 : 0;
  return k;
}

}  // namespace

TEST(StratifiedHoldout, SizesFor3000) {
  const auto golds = golds_with_share(3000, Category::Method, 0.162, 1);
  const auto split = stratified_holdout(golds, Category::Method, 1.0 / 6.0, 42);
  EXPECT_EQ(split.test_ids.size(), 500U);
  EXPECT_EQ(split.train_ids.size(), 2500U);
  const auto pos = count_positive(split.test_ids, golds, Category::Method);
  EXPECT_TRUE(pos == 81 || pos == 82) << pos;
}

TEST(StratifiedHoldout, DeterministicAndPartitioning) {
  const auto golds = golds_with_share(777, Category::Negative, 0.152, 2);
  const auto a = stratified_holdout(golds, Category::Negative, 0.2, 9);
  EXPECT_EQ(a, stratified_holdout(golds, Category::Negative, 0.2, 9));
  EXPECT_NE(a.test_ids, stratified_holdout(golds, Category::Negative, 0.2, 10).test_ids);
  std::set<std::string> all(a.train_ids.begin(), a.train_ids.end());
  for (const auto& id : a.test_ids) EXPECT_TRUE(all.insert(id).second);
  EXPECT_EQ(all.size(), golds.size());
}

TEST(StratifiedHoldout, ProportionalWithinOneAcrossSeeds) {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 20 + rng.below(400);
    const double share = 0.02 + 0.9 * rng.uniform();
    const double fraction = 0.05 + 0.8 * rng.uniform();
    const auto golds = golds_with_share(n, Category::Suggestion, share, rng.next());
    std::size_t positives = 0;
    for (const auto& g : golds) positives += g.labels[Category::Suggestion];
    if (positives == 0 || positives == n) continue;
    const auto split = stratified_holdout(golds, Category::Suggestion, fraction, rng.next());
    const auto expected_total = static_cast<std::size_t>(std::llround(static_cast<double>(n) * fraction));
    ASSERT_EQ(split.test_ids.size(), expected_total);
    const double ideal = static_cast<double>(positives) * static_cast<double>(expected_total) / static_cast<double>(n);
    const auto got = static_cast<double>(count_positive(split.test_ids, golds, Category::Suggestion));
    ASSERT_LE(std::abs(got - ideal), 1.0);
  }
}

TEST(StratifiedHoldout, DegenerateStratum) {
  const auto golds = golds_with_share(50, Category::Method, 0.0, 1);
  EXPECT_EQ(error_kind_of([&] { stratified_holdout(golds, Category::Method, 0.2); }), ErrorKind::DegenerateStratum);
  EXPECT_EQ(error_kind_of([&] { stratified_holdout(golds, Category::Method, 1.0); }), ErrorKind::InvalidArgument);
}

TEST(StratifiedKfold, FiveFoldsOf500) {
  const auto golds = golds_with_share(2500, Category::Proposal, 0.409, 5);
  const auto split = stratified_kfold(golds, Category::Proposal, 5, 42);
  ASSERT_EQ(split.folds.size(), 5U);
  for (const auto& f : split.folds) EXPECT_EQ(f.size(), 500U);
}

TEST(StratifiedKfold, TenItemsFourPositives) {
  const auto golds = golds_with_share(10, Category::Method, 0.4, 6);
  const auto split = stratified_kfold(golds, Category::Method, 2, 1);
  for (const auto& f : split.folds) EXPECT_EQ(count_positive(f, golds, Category::Method), 2U);
}

TEST(StratifiedKfold, PartitionAndBalanceAcrossSeeds) {
  Rng rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    const int k = 2 + static_cast<int>(rng.below(9));
    const std::size_t n = static_cast<std::size_t>(4 * k) + rng.below(300);
    const auto golds = golds_with_share(n, Category::Positive, 0.1 + 0.8 * rng.uniform(), rng.next());
    std::size_t positives = 0;
    for (const auto& g : golds) positives += g.labels[Category::Positive];
    if (positives < static_cast<std::size_t>(k) || n - positives < static_cast<std::size_t>(k)) continue;
    const auto split = stratified_kfold(golds, Category::Positive, k, rng.next());
    std::set<std::string> seen;
    std::size_t min_size = n, max_size = 0, min_pos = n, max_pos = 0;
    for (const auto& f : split.folds) {
      for (const auto& id : f) ASSERT_TRUE(seen.insert(id).second);
      min_size = std::min(min_size, f.size());
      max_size = std::max(max_size, f.size());
      const auto p = count_positive(f, golds, Category::Positive);
      min_pos = std::min(min_pos, p);
      max_pos = std::max(max_pos, p);
    }
    ASSERT_EQ(seen.size(), n);
    ASSERT_EQ(std::set<std::string>(split.train_ids.begin(), split.train_ids.end()), seen);
    ASSERT_LE(max_size - min_size, 1U);
    ASSERT_LE(max_pos - min_pos, 1U);
  }
}

TEST(StratifiedKfold, DegenerateStratum) {
  const auto golds = golds_with_share(20, Category::Method, 0.1, 1);  // 2 positives
  EXPECT_EQ(error_kind_of([&] { stratified_kfold(golds, Category::Method, 5); }), ErrorKind::DegenerateStratum);
}

TEST(Kfold, UnstratifiedPartition) {
  std::vector<std::string> ids;
  for (int i = 0; i < 23; ++i) ids.push_back("s" + std::to_string(i));
  const auto split = kfold(ids, 5, 3);
  std::set<std::string> seen;
  for (const auto& f : split.folds) {
    EXPECT_TRUE(f.size() == 4 || f.size() == 5);
    for (const auto& id : f) EXPECT_TRUE(seen.insert(id).second);
  }
  EXPECT_EQ(seen.size(), ids.size());
}

// ---- sampling

namespace {

std::vector<Sentence> population(std::size_t per_box) {
  std::vector<Sentence> out;
  for (TextBox box : kAllTextBoxes) {
    for (std::size_t i = 0; i < per_box; ++i) {
      Sentence s;
      s.review_id = std::string(to_string(box)) + std::to_string(i / 10);
      s.position = static_cast<int>(i % 10);
      s.sentence_id = s.review_id + ":" + std::to_string(s.position);
      s.text = "Text " + s.sentence_id + ".";
      s.text_box = box;
      out.push_back(s);
    }
  }
  return out;
}

}  // namespace

TEST(SampleRound, StratifiedByTextBox) {
  const auto pop = population(450);
  const auto sample = sample_round(pop, {SampleMode::StratifiedByTextBox, 0, 200, 42});
  ASSERT_EQ(sample.size(), 1000U);
  for (TextBox box : kAllTextBoxes)
    EXPECT_EQ(std::count_if(sample.begin(), sample.end(), [&](const Sentence& s) { return s.text_box == box; }), 200);
  std::set<std::string> ids;
  for (const auto& s : sample) ids.insert(s.sentence_id);
  EXPECT_EQ(ids.size(), 1000U);
}

TEST(SampleRound, RandomDistinct) {
  const auto pop = population(450);
  const auto sample = sample_round(pop, {SampleMode::Random, 2000, 0, 42});
  std::set<std::string> ids;
  for (const auto& s : sample) ids.insert(s.sentence_id);
  EXPECT_EQ(ids.size(), 2000U);
  EXPECT_EQ(sample, sample_round(pop, {SampleMode::Random, 2000, 0, 42}));
}

TEST(SampleRound, InsufficientPopulation) {
  const auto pop = population(150);
  EXPECT_EQ(error_kind_of([&] { sample_round(pop, {SampleMode::StratifiedByTextBox, 0, 200, 1}); }),
            ErrorKind::InsufficientPopulation);
  EXPECT_EQ(error_kind_of([&] { sample_round(pop, {SampleMode::Random, 751, 0, 1}); }),
            ErrorKind::InsufficientPopulation);
}
