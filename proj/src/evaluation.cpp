#include "lbnp/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "json.hpp"
#include "lbnp/common.hpp"

namespace lbnp {

std::vector<std::string> FoldPlan::subjects() const {
  std::vector<std::string> out;
  for (const auto& [s, f] : fold_of) out.push_back(s);
  return out;
}

std::vector<std::string> FoldPlan::test_subjects(int fold) const {
  std::vector<std::string> out;
  for (const auto& [s, f] : fold_of)
    if (f == fold) out.push_back(s);
  return out;
}

std::vector<std::string> FoldPlan::train_subjects(int fold) const {
  std::vector<std::string> out;
  for (const auto& [s, f] : fold_of)
    if (f != fold) out.push_back(s);
  return out;
}

std::vector<std::size_t> FoldPlan::fold_sizes() const {
  std::vector<std::size_t> n(static_cast<std::size_t>(std::max(k, 0)), 0);
  for (const auto& [s, f] : fold_of) ++n.at(static_cast<std::size_t>(f));
  return n;
}

FoldPlan make_folds(std::vector<std::string> subjects, int k, std::uint64_t seed) {
  std::sort(subjects.begin(), subjects.end());
  subjects.erase(std::unique(subjects.begin(), subjects.end()), subjects.end());
  if (k < 2) throw DataError("fold count must be at least 2");
  if (static_cast<std::size_t>(k) > subjects.size())
    throw DataError("fold count " + std::to_string(k) + " exceeds the number of subjects (" +
                    std::to_string(subjects.size()) + ")");
  std::mt19937_64 rng(seed);
  std::shuffle(subjects.begin(), subjects.end(), rng);
  FoldPlan plan;
  plan.k = k;
  plan.seed = seed;
  for (std::size_t i = 0; i < subjects.size(); ++i) plan.fold_of[subjects[i]] = static_cast<int>(i % k);
  return plan;
}

LeakageAudit audit_leakage(const std::vector<std::vector<std::string>>& train,
                           const std::vector<std::vector<std::string>>& test) {
  if (train.size() != test.size()) throw DataError("leakage audit: train/test fold counts differ");
  LeakageAudit audit;
  for (std::size_t f = 0; f < train.size(); ++f) {
    const std::set<std::string> tr(train[f].begin(), train[f].end());
    const std::set<std::string> te(test[f].begin(), test[f].end());
    for (const auto& s : te)
      if (tr.count(s)) {
        audit.passed = false;
        audit.violations.push_back("fold " + std::to_string(f) + ": " + s);
      }
  }
  return audit;
}

LeakageAudit audit_leakage(const FoldPlan& plan) {
  std::vector<std::vector<std::string>> train, test;
  for (int f = 0; f < plan.k; ++f) {
    train.push_back(plan.train_subjects(f));
    test.push_back(plan.test_subjects(f));
  }
  LeakageAudit a = audit_leakage(train, test);
  // Every subject must also land in exactly one test fold.
  std::map<std::string, int> seen;
  for (const auto& t : test)
    for (const auto& s : t) ++seen[s];
  for (const auto& [s, n] : seen)
    if (n != 1) {
      a.passed = false;
      a.violations.push_back("subject " + s + " tested " + std::to_string(n) + " times");
    }
  return a;
}

namespace {

struct Tally {
  std::size_t tp, fp;
  double threshold;
};

// Cumulative (TP, FP) after each group of tied scores, highest score first.
std::vector<Tally> sweep(std::span<const double> scores, std::span<const bool> positive, std::size_t& P,
                         std::size_t& N) {
  if (scores.size() != positive.size()) throw DataError("scores and labels differ in length");
  for (double s : scores)
    if (!std::isfinite(s)) throw NumericalError("non-finite score");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  P = static_cast<std::size_t>(std::count(positive.begin(), positive.end(), true));
  N = scores.size() - P;
  std::vector<Tally> out;
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double s = scores[order[i]];
    for (; i < order.size() && scores[order[i]] == s; ++i) (positive[order[i]] ? tp : fp)++;
    out.push_back({tp, fp, s});
  }
  return out;
}

}  // namespace

BinaryCurve roc_curve(std::span<const double> scores, std::span<const bool> positive) {
  BinaryCurve c;
  const auto tallies = sweep(scores, positive, c.positives, c.negatives);
  if (c.positives == 0 || c.negatives == 0) {
    c.skipped = true;
    c.skip_reason = c.positives == 0 ? "no positives" : "no negatives";
    return c;
  }
  const double P = static_cast<double>(c.positives), N = static_cast<double>(c.negatives);
  c.points.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
  unsigned long long twice_area = 0;
  std::size_t tp0 = 0, fp0 = 0;
  for (const auto& t : tallies) {
    twice_area += static_cast<unsigned long long>(t.fp - fp0) * (t.tp + tp0);
    c.points.push_back({t.threshold, static_cast<double>(t.fp) / N, static_cast<double>(t.tp) / P});
    tp0 = t.tp;
    fp0 = t.fp;
  }
  c.area = static_cast<double>(twice_area) / (2.0 * static_cast<double>(c.positives * c.negatives));
  return c;
}

BinaryCurve pr_curve(std::span<const double> scores, std::span<const bool> positive) {
  BinaryCurve c;
  const auto tallies = sweep(scores, positive, c.positives, c.negatives);
  if (c.positives == 0) {
    c.skipped = true;
    c.skip_reason = "no positives";
    return c;
  }
  const double P = static_cast<double>(c.positives);
  for (const auto& t : tallies)
    c.points.push_back({t.threshold, static_cast<double>(t.tp) / P,
                        static_cast<double>(t.tp) / static_cast<double>(t.tp + t.fp)});
  double best = 0.0, area = 0.0;
  std::vector<double> interp(c.points.size());
  for (std::size_t i = c.points.size(); i-- > 0;) {
    best = std::max(best, c.points[i].y);
    interp[i] = best;
  }
  double r0 = 0.0;
  for (std::size_t i = 0; i < c.points.size(); ++i) {
    area += (c.points[i].x - r0) * interp[i];
    r0 = c.points[i].x;
  }
  c.area = area;
  return c;
}

namespace {

template <class CurveFn>
OvrResult ovr(std::span<const ClassScores> scores, std::span<const int> labels, CurveFn fn) {
  if (scores.size() != labels.size()) throw DataError("scores and labels differ in length");
  OvrResult r;
  std::vector<double> s(scores.size());
  auto pos = std::make_unique<bool[]>(scores.size());
  double sum = 0.0;
  int used = 0;
  for (int k = 0; k < kNumClasses; ++k) {
    for (std::size_t i = 0; i < scores.size(); ++i) {
      s[i] = scores[i][static_cast<std::size_t>(k)];
      pos[i] = labels[i] == k;
    }
    const std::span<const bool> posv(pos.get(), scores.size());
    r.per_class[static_cast<std::size_t>(k)] = fn(s, posv);
    const auto& c = r.per_class[static_cast<std::size_t>(k)];
    if (c.skipped) {
      r.skipped_classes.push_back(k);
    } else {
      sum += c.area;
      ++used;
    }
  }
  r.mean = used > 0 ? sum / used : 0.0;
  return r;
}

}  // namespace

OvrResult auroc_ovr(std::span<const ClassScores> scores, std::span<const int> labels) {
  return ovr(scores, labels, roc_curve);
}

OvrResult auprc_ovr(std::span<const ClassScores> scores, std::span<const int> labels) {
  return ovr(scores, labels, pr_curve);
}

ClassificationReport classification_report(std::span<const int> preds, std::span<const int> labels) {
  if (preds.empty()) throw DataError("classification report needs at least one sample");
  if (preds.size() != labels.size()) throw DataError("predictions and labels differ in length");
  ClassificationReport r;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= kNumClasses || preds[i] < 0 || preds[i] >= kNumClasses)
      throw DataError("class index out of range");
    ++r.confusion[static_cast<std::size_t>(labels[i])][static_cast<std::size_t>(preds[i])];
  }
  r.total = preds.size();
  auto ratio = [&](std::size_t num, std::size_t den, const std::string& what) {
    if (den == 0) {
      r.flags.push_back(what);
      return 0.0;
    }
    return static_cast<double>(num) / static_cast<double>(den);
  };
  for (std::size_t k = 0; k < kNumClasses; ++k) {
    std::size_t row = 0, col = 0;
    for (std::size_t j = 0; j < kNumClasses; ++j) {
      row += r.confusion[k][j];
      col += r.confusion[j][k];
    }
    const std::size_t tp = r.confusion[k][k], fn = row - tp, fp = col - tp, tn = r.total - tp - fn - fp;
    const std::string name = "class " + std::to_string(k + 1);
    r.sensitivity[k] = ratio(tp, tp + fn, name + " sensitivity");
    r.specificity[k] = ratio(tn, tn + fp, name + " specificity");
    r.precision[k] = ratio(tp, tp + fp, name + " precision");
    const double pr = r.precision[k] + r.sensitivity[k];
    if (pr == 0.0) {
      r.flags.push_back(name + " f1");
      r.f1[k] = 0.0;
    } else {
      r.f1[k] = 2.0 * r.precision[k] * r.sensitivity[k] / pr;
    }
  }
  auto mean3 = [](const std::array<double, kNumClasses>& a) { return (a[0] + a[1] + a[2]) / 3.0; };
  r.macro_sensitivity = mean3(r.sensitivity);
  r.macro_specificity = mean3(r.specificity);
  r.macro_f1 = mean3(r.f1);
  return r;
}

MetricSummary summarize(const ClassificationReport& r, const OvrResult& roc, const OvrResult& pr) {
  return {roc.mean, pr.mean, r.macro_f1, r.macro_sensitivity, r.macro_specificity};
}

MetricSummary mean_summary(std::span<const FoldResult> folds) {
  MetricSummary m;
  if (folds.empty()) return m;
  for (const auto& f : folds) {
    m.auroc += f.summary.auroc;
    m.auprc += f.summary.auprc;
    m.macro_f1 += f.summary.macro_f1;
    m.macro_sensitivity += f.summary.macro_sensitivity;
    m.macro_specificity += f.summary.macro_specificity;
  }
  const double n = static_cast<double>(folds.size());
  m.auroc /= n;
  m.auprc /= n;
  m.macro_f1 /= n;
  m.macro_sensitivity /= n;
  m.macro_specificity /= n;
  return m;
}

namespace {

using nlohmann::json;

json summary_json(const MetricSummary& m) {
  return {{"auroc", m.auroc},
          {"auprc", m.auprc},
          {"macro_f1", m.macro_f1},
          {"macro_sensitivity", m.macro_sensitivity},
          {"macro_specificity", m.macro_specificity},
          {"percent",
           {{"auroc", 100.0 * m.auroc},
            {"auprc", 100.0 * m.auprc},
            {"macro_f1", 100.0 * m.macro_f1},
            {"macro_sensitivity", 100.0 * m.macro_sensitivity},
            {"macro_specificity", 100.0 * m.macro_specificity}}}};
}

json ovr_json(const OvrResult& r) {
  json per = json::array();
  for (const auto& c : r.per_class) {
    json e = {{"positives", c.positives}, {"negatives", c.negatives}, {"skipped", c.skipped}};
    if (c.skipped)
      e["skip_reason"] = c.skip_reason;
    else
      e["area"] = c.area;
    per.push_back(e);
  }
  return {{"mean", r.mean}, {"per_class", per}, {"skipped_classes", r.skipped_classes}};
}

}  // namespace

std::string report_to_json(const EvalReport& r) {
  json j;
  j["metadata"] = {{"mode", r.mode},
                   {"channel", r.channel},
                   {"config_hash", r.config_hash},
                   {"fold_seed", r.fold_seed},
                   {"leakage_audit_passed", r.leakage_audit_passed},
                   {"operating_point", "argmax"},
                   {"averaging", "macro"},
                   {"auprc_convention", "interpolated-step"},
                   {"auroc_convention", "trapezoid-ovr"}};
  json folds = json::array();
  for (const auto& f : r.folds) {
    json cm = json::array();
    for (const auto& row : f.report.confusion) cm.push_back(row);
    folds.push_back({{"fold", f.fold},
                     {"train_subjects", f.train_subjects},
                     {"test_subjects", f.test_subjects},
                     {"train_counts", f.train_counts},
                     {"test_counts", f.test_counts},
                     {"confusion_matrix", cm},
                     {"sensitivity", f.report.sensitivity},
                     {"specificity", f.report.specificity},
                     {"precision", f.report.precision},
                     {"f1", f.report.f1},
                     {"flags", f.report.flags},
                     {"auroc", ovr_json(f.auroc)},
                     {"auprc", ovr_json(f.auprc)},
                     {"summary", summary_json(f.summary)},
                     {"checkpoint", f.checkpoint}});
  }
  j["folds"] = folds;
  j["mean"] = summary_json(r.mean);
  return j.dump(2) + "\n";
}

namespace {

std::string fmt(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

std::string curves_csv(const EvalReport& r) {
  std::ostringstream os;
  os << "fold,class,curve,threshold,x,y\n";
  for (const auto& f : r.folds) {
    for (int k = 0; k < kNumClasses; ++k) {
      const auto emit = [&](const BinaryCurve& c, const char* name) {
        for (const auto& p : c.points)
          os << f.fold << ',' << k + 1 << ',' << name << ',' << fmt(p.threshold) << ',' << fmt(p.x) << ','
             << fmt(p.y) << '\n';
      };
      emit(f.auroc.per_class[static_cast<std::size_t>(k)], "roc");
      emit(f.auprc.per_class[static_cast<std::size_t>(k)], "pr");
    }
  }
  return os.str();
}

std::string segment_counts_csv(const EvalReport& r) {
  std::ostringstream os;
  os << "fold,split,subjects,class1,class2,class3,total\n";
  auto row = [&](const std::string& fold, const char* split, std::size_t nsub,
                 const std::array<std::size_t, kNumClasses>& c) {
    os << fold << ',' << split << ',' << nsub << ',' << c[0] << ',' << c[1] << ',' << c[2] << ','
       << c[0] + c[1] + c[2] << '\n';
  };
  for (const auto& f : r.folds) {
    row(std::to_string(f.fold), "train", f.train_subjects.size(), f.train_counts);
    row(std::to_string(f.fold), "test", f.test_subjects.size(), f.test_counts);
  }
  return os.str();
}

}  // namespace lbnp
