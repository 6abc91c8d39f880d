#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "lbnp/annotation.hpp"

namespace lbnp {

// Subject-wise partition into k folds. Fold i is the test set of split i;
// its training set is every subject outside fold i.
struct FoldPlan {
  int k = 3;
  std::uint64_t seed = 1;
  std::map<std::string, int> fold_of;

  std::vector<std::string> subjects() const;
  std::vector<std::string> test_subjects(int fold) const;
  std::vector<std::string> train_subjects(int fold) const;
  std::vector<std::size_t> fold_sizes() const;
};

// Unique subjects are sorted, shuffled with the seed and dealt round-robin,
// so fold sizes differ by at most one. Throws DataError when k < 2 or k
// exceeds the number of distinct subjects.
FoldPlan make_folds(std::vector<std::string> subjects, int k = 3, std::uint64_t seed = 1);

struct LeakageAudit {
  bool passed = true;
  std::vector<std::string> violations;  // "fold <i>: <subject>"
};

// Checks that no subject contributes to both sides of any split. `train` and
// `test` hold the subject id of every sample, per fold.
LeakageAudit audit_leakage(const std::vector<std::vector<std::string>>& train,
                           const std::vector<std::vector<std::string>>& test);
LeakageAudit audit_leakage(const FoldPlan& plan);

struct CurvePoint {
  double threshold = 0.0;
  double x = 0.0;
  double y = 0.0;
};

// One-vs-rest binary curve for a single class. ROC: x = FPR, y = TPR.
// PR: x = recall, y = precision. The first ROC point is (inf, 0, 0).
struct BinaryCurve {
  std::vector<CurvePoint> points;
  double area = 0.0;
  std::size_t positives = 0;
  std::size_t negatives = 0;
  bool skipped = false;
  std::string skip_reason;
};

// Trapezoidal ROC area over all distinct thresholds; ties between a positive
// and a negative count one half. Accumulated in integer units, so the result
// equals the pairwise rank statistic exactly.
BinaryCurve roc_curve(std::span<const double> scores, std::span<const bool> positive);

// Average precision with interpolated precision: each recall increment is
// weighted by the best precision reached at that recall or beyond.
BinaryCurve pr_curve(std::span<const double> scores, std::span<const bool> positive);

using ClassScores = std::array<double, kNumClasses>;

struct OvrResult {
  std::array<BinaryCurve, kNumClasses> per_class;
  double mean = 0.0;  // over non-skipped classes
  std::vector<int> skipped_classes;
};

OvrResult auroc_ovr(std::span<const ClassScores> scores, std::span<const int> labels);
OvrResult auprc_ovr(std::span<const ClassScores> scores, std::span<const int> labels);

struct ClassificationReport {
  std::array<std::array<std::size_t, kNumClasses>, kNumClasses> confusion{};  // [true][pred]
  std::array<double, kNumClasses> sensitivity{};
  std::array<double, kNumClasses> specificity{};
  std::array<double, kNumClasses> precision{};
  std::array<double, kNumClasses> f1{};
  double macro_sensitivity = 0.0;
  double macro_specificity = 0.0;
  double macro_f1 = 0.0;
  std::size_t total = 0;
  std::vector<std::string> flags;  // zero-denominator cells, reported as 0
};

// Labels and predictions are 0-based class indices. Throws DataError on
// empty or mismatched input.
ClassificationReport classification_report(std::span<const int> preds, std::span<const int> labels);

struct MetricSummary {
  double auroc = 0.0;
  double auprc = 0.0;
  double macro_f1 = 0.0;
  double macro_sensitivity = 0.0;
  double macro_specificity = 0.0;
};

struct FoldResult {
  int fold = 0;
  std::vector<std::string> train_subjects;
  std::vector<std::string> test_subjects;
  std::array<std::size_t, kNumClasses> train_counts{};
  std::array<std::size_t, kNumClasses> test_counts{};
  ClassificationReport report;
  OvrResult auroc;
  OvrResult auprc;
  MetricSummary summary;
  std::string checkpoint;
};

struct EvalReport {
  std::string mode;
  std::string channel;
  std::string config_hash;
  std::uint64_t fold_seed = 0;
  std::vector<FoldResult> folds;
  MetricSummary mean;
  bool leakage_audit_passed = false;
};

MetricSummary summarize(const ClassificationReport& r, const OvrResult& roc, const OvrResult& pr);
// Arithmetic mean of the per-fold summaries.
MetricSummary mean_summary(std::span<const FoldResult> folds);

std::string report_to_json(const EvalReport& r);
// Columns: fold,class,curve,threshold,x,y
std::string curves_csv(const EvalReport& r);
// One row per fold and split with per-class segment counts.
std::string segment_counts_csv(const EvalReport& r);

}  // namespace lbnp
