#include <gtest/gtest.h>

#include <sstream>

#include "reviewlens/metrics.hpp"
#include "reviewlens/rng.hpp"
#include "support/metrics_oracle.hpp"

using namespace reviewlens;
using namespace reviewlens::metrics;

TEST(Confusion, Cells) {
  EXPECT_EQ(confusion(std::vector<int>{1, 0}, std::vector<int>{1, 0}), (ConfusionMatrix{1, 0, 0, 1}));
  EXPECT_EQ(confusion(std::vector<int>{1, 1, 0, 0}, std::vector<int>{1, 0, 1, 0}), (ConfusionMatrix{1, 1, 1, 1}));
  const std::vector<int> y{1, 0, 0, 1, 1};
  const auto cm = confusion(y, y);
  EXPECT_EQ(cm.fp, 0);
  EXPECT_EQ(cm.fn, 0);
}

TEST(Confusion, RejectsBadInput) {
  EXPECT_THROW(confusion(std::vector<int>{1}, std::vector<int>{}), Error);
  EXPECT_THROW(confusion(std::vector<int>{}, std::vector<int>{}), Error);
  EXPECT_THROW(confusion(std::vector<int>{2}, std::vector<int>{1}), Error);
}

TEST(ComputeMetrics, HandEvaluatedCase) {
  const auto r = compute_metrics({2, 1, 1, 6});
  EXPECT_NEAR(r.precision_label1, 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(r.recall_label1, 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(r.f1_label1, 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(r.recall_label0, 6.0 / 7.0, 1e-15);
  EXPECT_NEAR(r.balanced_accuracy, (2.0 / 3.0 + 6.0 / 7.0) / 2.0, 1e-15);
  EXPECT_NEAR(r.balanced_accuracy, 0.762, 5e-4);
  EXPECT_NEAR(r.accuracy, 0.8, 1e-15);
  EXPECT_NEAR(r.share_label, 0.3, 1e-15);
}

TEST(ComputeMetrics, Perfect) {
  const auto r = compute_metrics({3, 0, 0, 7});
  const auto values = report_values(r);
  for (std::size_t i = 1; i < values.size(); ++i) EXPECT_EQ(values[i], 1.0) << kReportColumns[i + 1];
}

TEST(ComputeMetrics, AllNegativePredictionsConvention) {
  const auto r = compute_metrics({0, 0, 4, 6});
  EXPECT_EQ(r.precision_label1, 0.0);
  EXPECT_EQ(r.recall_label1, 0.0);
  EXPECT_EQ(r.f1_label1, 0.0);
  EXPECT_EQ(r.recall_label0, 1.0);
}

TEST(ComputeMetrics, OracleEquivalenceAndMicroIdentity) {
  Rng rng(11);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto n = 1 + rng.below(50);
    std::vector<int> y(n), p(n);
    const double rate_y = rng.uniform(), rate_p = rng.uniform();
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = rng.uniform() < rate_y ? 1 : 0;
      p[i] = rng.uniform() < rate_p ? 1 : 0;
    }
    const auto got = report_values(evaluate(y, p));
    const auto want = reviewlens::testing::brute_force_metrics(y, p);
    for (std::size_t k = 0; k < got.size(); ++k) ASSERT_NEAR(got[k], want[k], 1e-12) << kReportColumns[k + 1];
    const auto r = evaluate(y, p);
    ASSERT_EQ(r.f1_micro, r.accuracy);
    ASSERT_EQ(r.precision_micro, r.accuracy);
    ASSERT_EQ(r.recall_micro, r.accuracy);
    ASSERT_EQ(r.f1_macro, (r.f1_label1 + r.f1_label0) / 2.0);
  }
}

TEST(ComputeMetrics, PolaritySwap) {
  Rng rng(12);
  for (int trial = 0; trial < 300; ++trial) {
    const auto n = 1 + rng.below(40);
    std::vector<int> y(n), p(n), ys(n), ps(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = static_cast<int>(rng.below(2));
      p[i] = static_cast<int>(rng.below(2));
      ys[i] = 1 - y[i];
      ps[i] = 1 - p[i];
    }
    const auto a = evaluate(y, p), b = evaluate(ys, ps);
    EXPECT_EQ(a.f1_label1, b.f1_label0);
    EXPECT_EQ(a.precision_label1, b.precision_label0);
    EXPECT_EQ(a.recall_label0, b.recall_label1);
    EXPECT_DOUBLE_EQ(a.f1_macro, b.f1_macro);
    EXPECT_EQ(a.accuracy, b.accuracy);
  }
}

TEST(ComputeMetrics, BalancedAccuracyEqualsAccuracyWhenSymmetric) {
  // Balanced classes and the same number of errors in each class.
  for (int n_half = 1; n_half <= 20; ++n_half) {
    for (int errors = 0; errors <= n_half; ++errors) {
      const ConfusionMatrix cm{n_half - errors, errors, errors, n_half - errors};
      const auto r = compute_metrics(cm);
      EXPECT_DOUBLE_EQ(r.balanced_accuracy, r.accuracy);
    }
  }
}

TEST(ReportCsv, ColumnsInOrder) {
  std::ostringstream out;
  write_report_csv(out, {{Category::Method, compute_metrics({2, 1, 1, 6})}});
  const auto text = out.str();
  const auto header = text.substr(0, text.find('\n'));
  EXPECT_EQ(header,
            "Category,Share Label,Acc.,Bal. Acc.,F1 (Macro),F1 (Micro),F1 Lab=1,F1 Lab=0,Prec. (Macro),"
            "Prec. (Micro),Prec. Lab=1,Prec. Lab=0,Recall (Macro),Recall (Micro),Recall Lab=1,Recall Lab=0");
  EXPECT_NE(text.find("proposal_method,0.300000,0.800000,"), std::string::npos) << text;
  const auto j = to_json(std::vector<CategoryReport>{{Category::Method, compute_metrics({2, 1, 1, 6})}});
  EXPECT_EQ(j[0]["Category"], "proposal_method");
  EXPECT_DOUBLE_EQ(j[0]["Acc."].get<double>(), 0.8);
}
