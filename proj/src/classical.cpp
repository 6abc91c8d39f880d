#include "lbnp/classical.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <numeric>

#include "lbnp/fft.hpp"

namespace lbnp {

void FeatureVector::add(std::string name, double value) {
  if (!std::isfinite(value)) throw NumericalError("feature " + name + " is not finite");
  names.push_back(std::move(name));
  values.push_back(value);
}

double FeatureVector::at(const std::string& name) const {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return values[i];
  throw DataError("no feature named " + name);
}

BeatSeries make_beat_series(std::vector<std::size_t> indices, double sample_rate_hz, double start_time_s,
                            BeatSource source) {
  BeatSeries b;
  b.source = source;
  b.beat_indices = std::move(indices);
  for (std::size_t idx : b.beat_indices) b.beat_times_s.push_back(start_time_s + static_cast<double>(idx) / sample_rate_hz);
  for (std::size_t i = 1; i < b.beat_times_s.size(); ++i) {
    const double rr = b.beat_times_s[i] - b.beat_times_s[i - 1];
    if (!(rr > 0.2 && rr < 3.0)) ++b.out_of_range_intervals;
    b.intervals_s.push_back(rr);
  }
  return b;
}

namespace dsp {

namespace {
Biquad butter(double cutoff_hz, double fs, bool high) {
  if (!(cutoff_hz > 0.0 && cutoff_hz < fs / 2.0)) throw DataError("filter cutoff must lie in (0, fs/2)");
  const double w0 = 2.0 * std::numbers::pi * cutoff_hz / fs;
  const double c = std::cos(w0);
  const double alpha = std::sin(w0) / std::numbers::sqrt2;  // Q = 1/sqrt(2)
  const double a0 = 1.0 + alpha;
  Biquad f{};
  if (high) {
    f.b0 = (1.0 + c) / 2.0 / a0;
    f.b1 = -(1.0 + c) / a0;
  } else {
    f.b0 = (1.0 - c) / 2.0 / a0;
    f.b1 = (1.0 - c) / a0;
  }
  f.b2 = f.b0;
  f.a1 = -2.0 * c / a0;
  f.a2 = (1.0 - alpha) / a0;
  return f;
}

void run(const Biquad& f, std::vector<double>& x) {
  double z1 = 0.0, z2 = 0.0;
  for (double& v : x) {
    const double in = v;
    const double out = f.b0 * in + z1;
    z1 = f.b1 * in - f.a1 * out + z2;
    z2 = f.b2 * in - f.a2 * out;
    v = out;
  }
}
}  // namespace

Biquad butter_lowpass(double cutoff_hz, double fs) { return butter(cutoff_hz, fs, false); }
Biquad butter_highpass(double cutoff_hz, double fs) { return butter(cutoff_hz, fs, true); }

std::vector<double> filtfilt(const Biquad& f, std::span<const double> x) {
  const std::size_t n = x.size();
  if (n < 2) return {x.begin(), x.end()};
  const std::size_t pad = std::min<std::size_t>(n - 1, 600);
  std::vector<double> buf;
  buf.reserve(n + 2 * pad);
  for (std::size_t i = pad; i >= 1; --i) buf.push_back(2.0 * x[0] - x[i]);
  buf.insert(buf.end(), x.begin(), x.end());
  for (std::size_t i = 1; i <= pad; ++i) buf.push_back(2.0 * x[n - 1] - x[n - 1 - i]);
  run(f, buf);
  std::reverse(buf.begin(), buf.end());
  run(f, buf);
  std::reverse(buf.begin(), buf.end());
  return {buf.begin() + static_cast<std::ptrdiff_t>(pad), buf.begin() + static_cast<std::ptrdiff_t>(pad + n)};
}

std::vector<double> cubic_spline(std::span<const double> x, std::span<const double> y, std::span<const double> at) {
  const std::size_t n = x.size();
  if (n != y.size() || n < 2) throw DataError("spline needs at least two matching points");
  // Second derivatives by the tridiagonal (Thomas) solve, natural boundary.
  std::vector<double> m(n, 0.0), c(n, 0.0), d(n, 0.0);
  for (std::size_t i = 1; i + 1 < n; ++i) {
    const double h0 = x[i] - x[i - 1], h1 = x[i + 1] - x[i];
    const double a = h0, b = 2.0 * (h0 + h1), cc = h1;
    const double r = 6.0 * ((y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0);
    const double denom = b - a * c[i - 1];
    c[i] = cc / denom;
    d[i] = (r - a * d[i - 1]) / denom;
  }
  for (std::size_t i = n - 2; i >= 1; --i) m[i] = d[i] - c[i] * m[i + 1];

  std::vector<double> out(at.size());
  std::size_t k = 0;
  for (std::size_t j = 0; j < at.size(); ++j) {
    const double t = at[j];
    while (k + 2 < n && t > x[k + 1]) ++k;
    const double h = x[k + 1] - x[k];
    const double A = (x[k + 1] - t) / h, B = (t - x[k]) / h;
    out[j] = A * y[k] + B * y[k + 1] + ((A * A * A - A) * m[k] + (B * B * B - B) * m[k + 1]) * h * h / 6.0;
  }
  return out;
}

}  // namespace dsp

namespace {

// Strict local maxima of x.
std::vector<std::size_t> local_maxima(const std::vector<double>& x) {
  std::vector<std::size_t> out;
  for (std::size_t i = 1; i + 1 < x.size(); ++i) {
    if (x[i] > x[i - 1] && x[i] >= x[i + 1]) out.push_back(i);
  }
  return out;
}

// Moving sum over a centered window of `w` samples, divided by w.
std::vector<double> moving_average(const std::vector<double>& x, std::size_t w) {
  std::vector<double> prefix(x.size() + 1, 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) prefix[i + 1] = prefix[i] + x[i];
  std::vector<double> out(x.size());
  const std::size_t half = w / 2;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const std::size_t b = i >= half ? i - half : 0;
    const std::size_t e = std::min(x.size(), b + w);
    out[i] = (prefix[e] - prefix[b]) / static_cast<double>(w);
  }
  return out;
}

[[noreturn]] void insufficient_beats() { throw DataError("insufficient beats"); }

}  // namespace

BeatSeries detect_r_peaks(const Segment& ecg) {
  const double fs = ecg.sample_rate_hz;
  if (static_cast<double>(ecg.samples.size()) < 5.0 * fs) throw DataError("ECG segment shorter than 5 s");

  auto band = dsp::filtfilt(dsp::butter_highpass(5.0, fs), ecg.samples);
  band = dsp::filtfilt(dsp::butter_lowpass(15.0, fs), band);

  // Five-point derivative, squared.
  const std::size_t n = band.size();
  std::vector<double> sq(n, 0.0);
  for (std::size_t i = 2; i + 2 < n; ++i) {
    const double d = (2.0 * band[i + 2] + band[i + 1] - band[i - 1] - 2.0 * band[i - 2]) * fs / 8.0;
    sq[i] = d * d;
  }
  const auto mwi = moving_average(sq, static_cast<std::size_t>(std::llround(0.150 * fs)));

  const auto refractory = static_cast<std::size_t>(0.200 * fs);
  const auto twave_window = static_cast<std::size_t>(0.360 * fs);
  const auto learn = std::min(n, static_cast<std::size_t>(2.0 * fs));
  double spki = 0.25 * *std::max_element(mwi.begin(), mwi.begin() + static_cast<std::ptrdiff_t>(learn));
  double npki = 0.5 * std::accumulate(mwi.begin(), mwi.begin() + static_cast<std::ptrdiff_t>(learn), 0.0) /
                static_cast<double>(learn);
  auto thr1 = [&] { return npki + 0.25 * (spki - npki); };

  auto slope_at = [&](std::size_t i) {
    const std::size_t b = i > refractory / 2 ? i - refractory / 2 : 0;
    double mx = 0.0;
    for (std::size_t k = b; k <= i; ++k) mx = std::max(mx, sq[k]);
    return mx;
  };

  std::vector<std::size_t> qrs;
  std::vector<double> rr_recent;
  double last_slope = 0.0;
  std::vector<std::size_t> noise_peaks;

  auto accept = [&](std::size_t p, double weight) {
    if (!qrs.empty()) {
      rr_recent.push_back(static_cast<double>(p - qrs.back()));
      if (rr_recent.size() > 8) rr_recent.erase(rr_recent.begin());
    }
    spki = weight * mwi[p] + (1.0 - weight) * spki;
    last_slope = slope_at(p);
    qrs.push_back(p);
  };

  for (std::size_t p : local_maxima(mwi)) {
    if (!(mwi[p] > 0.0)) continue;
    if (!qrs.empty() && p - qrs.back() < refractory) continue;

    // Search-back for a missed beat in the gap before this peak.
    if (!qrs.empty() && !rr_recent.empty()) {
      const double rr_avg = std::accumulate(rr_recent.begin(), rr_recent.end(), 0.0) / static_cast<double>(rr_recent.size());
      if (static_cast<double>(p - qrs.back()) > 1.66 * rr_avg) {
        std::size_t best = 0;
        double best_v = 0.5 * thr1();
        for (std::size_t q : noise_peaks) {
          if (q > qrs.back() + refractory && q + refractory < p && mwi[q] > best_v) {
            best = q;
            best_v = mwi[q];
          }
        }
        if (best != 0) accept(best, 0.25);
      }
    }

    if (mwi[p] > thr1()) {
      const bool maybe_twave = !qrs.empty() && p - qrs.back() < twave_window && slope_at(p) < 0.5 * last_slope;
      if (!maybe_twave) {
        accept(p, 0.125);
        noise_peaks.clear();
        continue;
      }
    }
    npki = 0.125 * mwi[p] + 0.875 * npki;
    noise_peaks.push_back(p);
  }

  // Snap each detection to the raw-signal maximum nearby.
  const auto reach = static_cast<std::size_t>(0.100 * fs);
  std::vector<std::size_t> peaks;
  for (std::size_t p : qrs) {
    const std::size_t b = p > reach ? p - reach : 0;
    const std::size_t e = std::min(n, p + reach + 1);
    const auto it = std::max_element(ecg.samples.begin() + static_cast<std::ptrdiff_t>(b),
                                     ecg.samples.begin() + static_cast<std::ptrdiff_t>(e));
    const auto idx = static_cast<std::size_t>(it - ecg.samples.begin());
    if (peaks.empty() || idx > peaks.back()) peaks.push_back(idx);
  }
  if (peaks.size() < 2) insufficient_beats();
  return make_beat_series(std::move(peaks), fs, ecg.start_time_s, BeatSource::EcgRPeaks);
}

BeatSeries detect_pulse_feet(const Segment& ppg) {
  const double fs = ppg.sample_rate_hz;
  if (static_cast<double>(ppg.samples.size()) < 5.0 * fs) throw DataError("PPG segment shorter than 5 s");
  const auto smooth = dsp::filtfilt(dsp::butter_lowpass(10.0, fs), ppg.samples);
  const std::size_t n = smooth.size();
  std::vector<double> d(n, 0.0);
  for (std::size_t i = 1; i + 1 < n; ++i) d[i] = (smooth[i + 1] - smooth[i - 1]) * fs / 2.0;

  std::vector<double> sorted = d;
  const std::size_t q = static_cast<std::size_t>(0.98 * static_cast<double>(n - 1));
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(q), sorted.end());
  const double thr = 0.3 * sorted[q];
  if (!(thr > 0.0)) insufficient_beats();

  const auto refractory = static_cast<std::size_t>(0.250 * fs);
  std::vector<std::size_t> ups;
  for (std::size_t p : local_maxima(d)) {
    if (!(d[p] > thr)) continue;
    if (!ups.empty() && p - ups.back() < refractory) {
      if (d[p] > d[ups.back()]) ups.back() = p;
      continue;
    }
    ups.push_back(p);
  }

  // The 10 Hz trace rounds the foot and pulls its minimum back into the
  // slowly falling tail, so each foot is refined forward on a wider-band copy.
  const auto fine = dsp::filtfilt(dsp::butter_lowpass(25.0, fs), ppg.samples);
  const auto refine = static_cast<std::size_t>(0.100 * fs);
  const auto lookback = static_cast<std::size_t>(0.300 * fs);
  std::vector<std::size_t> feet;
  for (std::size_t k = 0; k < ups.size(); ++k) {
    const std::size_t m = ups[k];
    std::size_t b = m > lookback ? m - lookback : 0;
    if (k > 0) b = std::max(b, ups[k - 1] + 1);
    // An upstroke whose search window is clipped by the segment start has no
    // trustworthy foot.
    if (m < lookback && k == 0) continue;
    // Walk down the upstroke to the nearest trough rather than taking the
    // window minimum, which wanders across a flat diastolic tail.
    std::size_t idx = m;
    while (idx > b && smooth[idx - 1] <= smooth[idx]) --idx;
    const std::size_t e = std::min(m, idx + refine);
    idx = static_cast<std::size_t>(std::min_element(fine.begin() + static_cast<std::ptrdiff_t>(idx),
                                                    fine.begin() + static_cast<std::ptrdiff_t>(e + 1)) -
                                   fine.begin());
    if (feet.empty() || idx > feet.back()) feet.push_back(idx);
  }
  if (feet.size() < 2) insufficient_beats();
  return make_beat_series(std::move(feet), fs, ppg.start_time_s, BeatSource::PpgPulseFeet);
}

namespace {

double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double sample_std(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace

FeatureVector hrv_features(const BeatSeries& beats) {
  const auto& rr = beats.intervals_s;
  if (rr.size() < 3) insufficient_beats();

  FeatureVector fv;
  fv.metadata["extractor"] = "hrv-v1";
  fv.metadata["source"] = beats.source == BeatSource::EcgRPeaks ? "ecg_r_peaks" : "ppg_pulse_feet";
  fv.metadata["out_of_range_intervals"] = std::to_string(beats.out_of_range_intervals);

  fv.add("mean_rr_s", mean_of(rr));
  fv.add("sdnn_s", sample_std(rr));
  double ss = 0.0;
  std::size_t nn50 = 0;
  for (std::size_t i = 1; i < rr.size(); ++i) {
    const double diff = rr[i] - rr[i - 1];
    ss += diff * diff;
    if (std::abs(diff) > 0.050) ++nn50;
  }
  fv.add("rmssd_s", std::sqrt(ss / static_cast<double>(rr.size() - 1)));
  fv.add("pnn50", static_cast<double>(nn50) / static_cast<double>(rr.size() - 1));

  // Interval i ends at beat i + 1.
  const std::vector<double> t(beats.beat_times_s.begin() + 1, beats.beat_times_s.end());
  const double span = t.back() - t.front();
  double lf = 0.0, hf = 0.0, ratio = 0.0;
  bool valid = false;
  if (span >= 30.0) {
    constexpr double fs = 4.0;
    std::vector<double> grid;
    for (double x = t.front(); x <= t.back(); x += 1.0 / fs) grid.push_back(x);
    auto series = dsp::cubic_spline(t, rr, grid);
    const double m = mean_of(series);
    for (double& v : series) v -= m;
    const std::size_t nfft = next_power_of_two(series.size());
    std::vector<std::complex<double>> buf(nfft);
    std::copy(series.begin(), series.end(), buf.begin());
    fft_inplace(buf);
    const double df = fs / static_cast<double>(nfft);
    const double scale = 2.0 / (fs * static_cast<double>(series.size()));
    for (std::size_t k = 1; k < nfft / 2; ++k) {
      const double f = static_cast<double>(k) * df;
      const double p = std::norm(buf[k]) * scale * df;
      if (f >= 0.04 && f < 0.15) lf += p;
      else if (f >= 0.15 && f < 0.40) hf += p;
    }
    ratio = hf > 0.0 ? lf / hf : 0.0;
    valid = true;
    if (span < 120.0) fv.metadata["frequency_domain"] = "short-window";
    else fv.metadata["frequency_domain"] = "ok";
  } else {
    fv.metadata["frequency_domain"] = "insufficient-duration";
  }
  fv.add("lf_power_s2", lf);
  fv.add("hf_power_s2", hf);
  fv.add("lf_hf_ratio", ratio);
  fv.add("freq_valid", valid ? 1.0 : 0.0);
  return fv;
}

FeatureVector ar_coefficients(const Segment& seg, int order, std::size_t decimation) {
  if (order < 1) throw DataError("AR order must be positive");
  if (decimation == 0) decimation = 1;
  const std::size_t n = seg.samples.size() / decimation;
  if (n <= static_cast<std::size_t>(10 * order)) throw DataError("segment too short for AR order");

  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < decimation; ++k) s += seg.samples[i * decimation + k];
    x[i] = s / static_cast<double>(decimation);
  }
  const double m = mean_of(x);
  double var = 0.0;
  for (double v : x) var += (v - m) * (v - m);
  var /= static_cast<double>(n);
  if (!(var > 0.0)) throw DataError("zero-variance segment");
  const double sd = std::sqrt(var);
  for (double& v : x) v = (v - m) / sd;

  const auto p = static_cast<std::size_t>(order);
  std::vector<double> r(p + 1, 0.0);
  for (std::size_t lag = 0; lag <= p; ++lag) {
    double s = 0.0;
    for (std::size_t i = lag; i < n; ++i) s += x[i] * x[i - lag];
    r[lag] = s / static_cast<double>(n);
  }

  // Levinson-Durbin.
  std::vector<double> a(p + 1, 0.0), prev(p + 1, 0.0);
  double err = r[0];
  for (std::size_t k = 1; k <= p; ++k) {
    double acc = r[k];
    for (std::size_t j = 1; j < k; ++j) acc -= prev[j] * r[k - j];
    const double refl = acc / err;
    a[k] = refl;
    for (std::size_t j = 1; j < k; ++j) a[j] = prev[j] - refl * prev[k - j];
    err *= (1.0 - refl * refl);
    if (!(err > 0.0)) throw NumericalError("Levinson-Durbin recursion lost positive definiteness");
    prev = a;
  }

  FeatureVector fv;
  fv.metadata["extractor"] = "ar-v1";
  fv.metadata["decimation"] = std::to_string(decimation);
  fv.metadata["form"] = "x_t = sum_k a_k x_{t-k} + e_t";
  for (std::size_t k = 1; k <= p; ++k) fv.add("ar" + std::to_string(k), a[k]);
  return fv;
}

FeatureVector fiducial_features(const Segment& ppg, const BeatSeries& feet) {
  if (feet.beat_indices.size() < 3) insufficient_beats();
  const auto& x = ppg.samples;
  const double fs = ppg.sample_rate_hz;
  std::vector<double> amp, rise, area, width;
  for (std::size_t k = 0; k + 1 < feet.beat_indices.size(); ++k) {
    const std::size_t f0 = feet.beat_indices[k], f1 = feet.beat_indices[k + 1];
    if (f1 >= x.size() || f1 <= f0) throw DataError("pulse feet outside the segment");
    const auto pk_it = std::max_element(x.begin() + static_cast<std::ptrdiff_t>(f0), x.begin() + static_cast<std::ptrdiff_t>(f1 + 1));
    const auto pk = static_cast<std::size_t>(pk_it - x.begin());
    const double a = x[pk] - x[f0];
    amp.push_back(a);
    rise.push_back(static_cast<double>(pk - f0) / fs);

    // Trapezoidal area above the straight line joining the two feet.
    const double slope = (x[f1] - x[f0]) / static_cast<double>(f1 - f0);
    double ar = 0.0;
    for (std::size_t i = f0; i < f1; ++i) {
      const double y0 = x[i] - (x[f0] + slope * static_cast<double>(i - f0));
      const double y1 = x[i + 1] - (x[f0] + slope * static_cast<double>(i + 1 - f0));
      ar += 0.5 * (y0 + y1);
    }
    area.push_back(ar / fs);

    const double half = x[f0] + a / 2.0;
    double t_up = static_cast<double>(pk), t_down = static_cast<double>(pk);
    for (std::size_t i = pk; i > f0; --i) {
      if (x[i - 1] < half) {
        t_up = static_cast<double>(i - 1) + (half - x[i - 1]) / (x[i] - x[i - 1]);
        break;
      }
    }
    for (std::size_t i = pk; i < f1; ++i) {
      if (x[i + 1] < half) {
        t_down = static_cast<double>(i) + (x[i] - half) / (x[i] - x[i + 1]);
        break;
      }
    }
    width.push_back((t_down - t_up) / fs);
  }

  FeatureVector fv;
  fv.metadata["extractor"] = "fiducial-v1";
  fv.add("peak_amplitude_mean", mean_of(amp));
  fv.add("peak_amplitude_std", sample_std(amp));
  fv.add("rise_time_s_mean", mean_of(rise));
  fv.add("rise_time_s_std", sample_std(rise));
  fv.add("pulse_area_mean", mean_of(area));
  fv.add("pulse_area_std", sample_std(area));
  fv.add("half_width_s_mean", mean_of(width));
  fv.add("half_width_s_std", sample_std(width));
  return fv;
}

}  // namespace lbnp
