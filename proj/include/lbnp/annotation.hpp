#pragma once

#include <span>
#include <string>
#include <vector>

#include "lbnp/waveform.hpp"

namespace lbnp {

struct ChangepointResult {
  // Index of the first sample of each new interval; strictly increasing.
  std::vector<std::size_t> breakpoints;
  // Mean of each of the breakpoints.size() + 1 intervals.
  std::vector<double> interval_means;
  // Sum over intervals of squared deviation from the interval mean.
  double cost = 0.0;
};

// Exact least-squares segmentation into n + 1 constant-mean intervals
// (segment-neighbourhood dynamic programming, O(n * N^2)). Ties resolve to
// the earliest index.
ChangepointResult find_changepoints(std::span<const double> trace, int n);
ChangepointResult find_changepoints(const Waveform& trace, int n);

// Block-averages the trace by `decimation`, runs the exact search on the
// reduced trace, maps breakpoints back to full-rate indices and recomputes
// interval means and cost on the full-rate samples. decimation == 1 is the
// exact search.
ChangepointResult find_level_changes(const Waveform& trace, int n, std::size_t decimation);

// Interval mean snapped to the nearest multiple of 10 mmHg in [-80, 0].
double snap_level(double mean_mmHg);

// Per-sample step level sequence (same length as the trace).
std::vector<double> step_targets(const Waveform& trace, const ChangepointResult& cp);

enum class SeverityClass { Mild = 0, Moderate = 1, Severe = 2 };

inline constexpr int kNumClasses = 3;

inline int class_index(SeverityClass c) { return static_cast<int>(c); }
// 1-based label used in exported tables ("Class 1" .. "Class 3").
inline int class_number(SeverityClass c) { return class_index(c) + 1; }
SeverityClass class_from_index(int idx);

// 0 / -10 -> Mild, -20 / -30 -> Moderate, <= -40 -> Severe.
SeverityClass map_class(double level_mmHg);

struct LabeledSegment {
  Segment segment;
  SeverityClass label = SeverityClass::Mild;
  double lbnp_level_mmHg = 0.0;
};

struct LabelingParams {
  // The changepoint search runs on the reference trace block-averaged down to
  // roughly this rate.
  double changepoint_rate_hz = 10.0;

  std::size_t decimation(double sample_rate_hz) const;
};

// Step-target sequence for a session, from its LBNP_REF channel and the
// manifest's changepoint count.
std::vector<double> session_step_targets(const Session& session, const LabelingParams& params = {},
                                         ChangepointResult* cp_out = nullptr);

// Labels each segment with the step level at its midpoint sample.
std::vector<LabeledSegment> label_segments(const Session& session, std::vector<Segment> segments,
                                           const LabelingParams& params = {});
std::vector<LabeledSegment> label_segments(std::span<const double> steps, std::vector<Segment> segments);

}  // namespace lbnp
