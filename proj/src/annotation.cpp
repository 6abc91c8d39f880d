#include "lbnp/annotation.hpp"

#include <cmath>
#include <limits>

namespace lbnp {

namespace {

void check_finite(std::span<const double> x) {
  for (double v : x)
    if (!std::isfinite(v)) throw DataError("changepoint input contains non-finite samples");
}

// Interval statistics over [b, e) of the full trace.
double interval_mean(std::span<const double> x, std::size_t b, std::size_t e) {
  double s = 0.0;
  for (std::size_t i = b; i < e; ++i) s += x[i];
  return s / static_cast<double>(e - b);
}

void fill_means_and_cost(std::span<const double> x, ChangepointResult& r) {
  r.interval_means.clear();
  r.cost = 0.0;
  std::size_t b = 0;
  for (std::size_t k = 0; k <= r.breakpoints.size(); ++k) {
    const std::size_t e = k < r.breakpoints.size() ? r.breakpoints[k] : x.size();
    const double m = interval_mean(x, b, e);
    for (std::size_t i = b; i < e; ++i) r.cost += (x[i] - m) * (x[i] - m);
    r.interval_means.push_back(m);
    b = e;
  }
}

}  // namespace

ChangepointResult find_changepoints(std::span<const double> trace, int n) {
  if (n < 1) throw DataError("number of changepoints must be positive");
  const std::size_t N = trace.size();
  if (static_cast<std::size_t>(n) >= N) throw DataError("number of changepoints must be below the sample count");
  check_finite(trace);

  // Shift by the first sample so a constant trace produces exact zero costs
  // and ties resolve to the earliest index.
  std::vector<double> s1(N + 1, 0.0), s2(N + 1, 0.0);
  for (std::size_t i = 0; i < N; ++i) {
    const double v = trace[i] - trace[0];
    s1[i + 1] = s1[i] + v;
    s2[i + 1] = s2[i] + v * v;
  }
  auto cost = [&](std::size_t b, std::size_t e) {
    const double d = s1[e] - s1[b];
    const double c = (s2[e] - s2[b]) - d * d / static_cast<double>(e - b);
    return c > 0.0 ? c : 0.0;
  };

  const std::size_t K = static_cast<std::size_t>(n) + 1;  // intervals
  constexpr double inf = std::numeric_limits<double>::infinity();
  // best[k][j]: minimal cost of splitting [0, j) into k + 1 intervals.
  std::vector<std::vector<double>> best(K, std::vector<double>(N + 1, inf));
  std::vector<std::vector<std::size_t>> from(K, std::vector<std::size_t>(N + 1, 0));
  for (std::size_t j = 1; j <= N; ++j) best[0][j] = cost(0, j);
  for (std::size_t k = 1; k < K; ++k) {
    const std::size_t tail = K - 1 - k;  // intervals still to come after [.., j)
    for (std::size_t j = k + 1; j + tail <= N; ++j) {
      double b = inf;
      std::size_t arg = 0;
      for (std::size_t i = k; i < j; ++i) {
        const double c = best[k - 1][i] + cost(i, j);
        if (c < b) {
          b = c;
          arg = i;
        }
      }
      best[k][j] = b;
      from[k][j] = arg;
    }
  }

  ChangepointResult r;
  r.breakpoints.resize(static_cast<std::size_t>(n));
  std::size_t j = N;
  for (std::size_t k = K - 1; k >= 1; --k) {
    j = from[k][j];
    r.breakpoints[k - 1] = j;
  }
  fill_means_and_cost(trace, r);
  return r;
}

ChangepointResult find_changepoints(const Waveform& trace, int n) {
  return find_changepoints(std::span<const double>(trace.samples), n);
}

ChangepointResult find_level_changes(const Waveform& trace, int n, std::size_t decimation) {
  if (decimation <= 1) return find_changepoints(trace, n);
  check_finite(trace.samples);
  const std::size_t blocks = trace.samples.size() / decimation;
  if (blocks <= static_cast<std::size_t>(n))
    throw DataError("reference trace too short for " + std::to_string(n) + " changepoints");
  std::vector<double> reduced(blocks);
  for (std::size_t b = 0; b < blocks; ++b) reduced[b] = interval_mean(trace.samples, b * decimation, (b + 1) * decimation);
  ChangepointResult coarse = find_changepoints(reduced, n);
  ChangepointResult r;
  for (std::size_t bp : coarse.breakpoints) r.breakpoints.push_back(bp * decimation);
  fill_means_and_cost(trace.samples, r);
  return r;
}

double snap_level(double mean_mmHg) {
  double level = std::round(mean_mmHg / 10.0) * 10.0;
  if (level > 0.0) level = 0.0;
  if (level < -80.0) level = -80.0;
  return level + 0.0;  // no negative zero
}

std::vector<double> step_targets(const Waveform& trace, const ChangepointResult& cp) {
  std::vector<double> out(trace.samples.size());
  std::size_t b = 0;
  for (std::size_t k = 0; k <= cp.breakpoints.size(); ++k) {
    const std::size_t e = k < cp.breakpoints.size() ? cp.breakpoints[k] : out.size();
    const double level = snap_level(cp.interval_means.at(k));
    for (std::size_t i = b; i < e && i < out.size(); ++i) out[i] = level;
    b = e;
  }
  return out;
}

SeverityClass class_from_index(int idx) {
  if (idx < 0 || idx >= kNumClasses) throw DataError("class index out of range: " + std::to_string(idx));
  return static_cast<SeverityClass>(idx);
}

SeverityClass map_class(double level_mmHg) {
  if (!std::isfinite(level_mmHg) || level_mmHg > 0.0) throw DataError("invalid LBNP level");
  if (level_mmHg > -15.0) return SeverityClass::Mild;
  if (level_mmHg > -35.0) return SeverityClass::Moderate;
  return SeverityClass::Severe;
}

std::size_t LabelingParams::decimation(double sample_rate_hz) const {
  if (!(changepoint_rate_hz > 0.0) || changepoint_rate_hz >= sample_rate_hz) return 1;
  return static_cast<std::size_t>(std::floor(sample_rate_hz / changepoint_rate_hz));
}

std::vector<double> session_step_targets(const Session& session, const LabelingParams& params,
                                         ChangepointResult* cp_out) {
  const Waveform& ref = session.channel(Channel::LBNP_REF);
  std::vector<double> steps;
  if (session.n_changepoints <= 0) {
    // Single level for the whole trial.
    const double level = snap_level(interval_mean(ref.samples, 0, ref.samples.size()));
    steps.assign(ref.samples.size(), level);
    if (cp_out) {
      cp_out->breakpoints.clear();
      fill_means_and_cost(ref.samples, *cp_out);
    }
    return steps;
  }
  ChangepointResult cp = find_level_changes(ref, session.n_changepoints, params.decimation(ref.sample_rate_hz));
  steps = step_targets(ref, cp);
  if (cp_out) *cp_out = std::move(cp);
  return steps;
}

std::vector<LabeledSegment> label_segments(std::span<const double> steps, std::vector<Segment> segments) {
  std::vector<LabeledSegment> out;
  out.reserve(segments.size());
  for (auto& seg : segments) {
    const std::size_t mid = seg.midpoint_index();
    if (mid >= steps.size()) throw DataError("segment midpoint lies outside the reference trace");
    LabeledSegment ls;
    ls.lbnp_level_mmHg = steps[mid];
    ls.label = map_class(ls.lbnp_level_mmHg);
    ls.segment = std::move(seg);
    out.push_back(std::move(ls));
  }
  return out;
}

std::vector<LabeledSegment> label_segments(const Session& session, std::vector<Segment> segments,
                                           const LabelingParams& params) {
  for (const auto& seg : segments) {
    if (seg.subject_id != session.subject_id || seg.trial_id != session.trial_id)
      throw DataError("segment does not belong to session " + session.key());
  }
  const auto steps = session_step_targets(session, params);
  return label_segments(steps, std::move(segments));
}

}  // namespace lbnp
