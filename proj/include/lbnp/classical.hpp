#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "lbnp/waveform.hpp"

namespace lbnp {

enum class BeatSource { EcgRPeaks, PpgPulseFeet };

struct BeatSeries {
  std::vector<double> beat_times_s;      // absolute (segment start_time_s + offset)
  std::vector<std::size_t> beat_indices; // sample index within the segment
  std::vector<double> intervals_s;
  BeatSource source = BeatSource::EcgRPeaks;
  // Intervals outside (0.2 s, 3 s). Flagged, not dropped.
  std::size_t out_of_range_intervals = 0;
};

BeatSeries make_beat_series(std::vector<std::size_t> indices, double sample_rate_hz, double start_time_s,
                            BeatSource source);

struct FeatureVector {
  std::vector<std::string> names;
  std::vector<double> values;
  std::map<std::string, std::string> metadata;

  void add(std::string name, double value);
  double at(const std::string& name) const;
};

// Pan-Tompkins: 5-15 Hz band-pass, derivative, squaring, 150 ms moving-window
// integration, adaptive dual thresholds with search-back. Returned beats sit
// at the raw-signal maximum near each detected QRS.
BeatSeries detect_r_peaks(const Segment& ecg);

// Pulse feet: minimum of the low-passed pulse preceding each maximal
// first-derivative upstroke.
BeatSeries detect_pulse_feet(const Segment& ppg);

// Time-domain {mean_rr_s, sdnn_s, rmssd_s, pnn50} and frequency-domain
// {lf_power_s2, hf_power_s2, lf_hf_ratio} from a periodogram of the interval
// series resampled at 4 Hz by natural cubic spline. Frequency features need
// >= 30 s of beats; below that they are 0 and freq_valid is 0.
FeatureVector hrv_features(const BeatSeries& beats);

// AR coefficients in predictor form x_t = sum_k a_k x_{t-k} + e_t, fitted by
// Levinson-Durbin on the block-mean decimated, z-scored segment.
FeatureVector ar_coefficients(const Segment& seg, int order = 4, std::size_t decimation = 10);

// Per-pulse systolic amplitude, foot-to-peak rise time, area above the
// foot-to-foot baseline and width at half amplitude, aggregated as mean and
// sample standard deviation over the pulses between consecutive feet.
FeatureVector fiducial_features(const Segment& ppg, const BeatSeries& feet);

// Digital filtering helpers shared by the detectors.
namespace dsp {

struct Biquad {
  double b0, b1, b2, a1, a2;
};

Biquad butter_lowpass(double cutoff_hz, double fs);
Biquad butter_highpass(double cutoff_hz, double fs);

// Zero-phase forward-backward filtering with odd-reflection edge padding.
std::vector<double> filtfilt(const Biquad& f, std::span<const double> x);

// Natural cubic spline through (x, y) evaluated at `at` (x strictly increasing).
std::vector<double> cubic_spline(std::span<const double> x, std::span<const double> y, std::span<const double> at);

}  // namespace dsp

}  // namespace lbnp
