#pragma once

#include <span>
#include <string>
#include <vector>

#include "lbnp/common.hpp"
#include "lbnp/waveform.hpp"

namespace lbnp {

enum class WindowKind { Hann, Rectangular };

struct SpectrogramParams {
  std::size_t window_len = 64;
  std::size_t frame_count = 261;
  WindowKind window = WindowKind::Hann;
};

// One-sided short-time power spectrum. Bins 1..window_len/2-1 carry the
// energy of both the positive and negative frequency, so each frame's power
// sums to the energy of the windowed frame (Parseval).
struct Spectrogram {
  Matrix power;                        // [freq_bins x frames]
  std::vector<double> freqs_hz;        // bin centers
  std::vector<double> frame_centers_s; // frame-center times from the segment start
  std::size_t window_len = 0;
  double sample_rate_hz = 0.0;

  std::size_t freq_bins() const { return power.rows(); }
  std::size_t frame_count() const { return power.cols(); }
};

// Frame k is centered at round(window_len/2 + k * (N - window_len) / (frame_count - 1)).
std::vector<std::size_t> frame_centers(std::size_t n_samples, std::size_t window_len, std::size_t frame_count);

Spectrogram spectrogram(std::span<const double> samples, double sample_rate_hz, const SpectrogramParams& params = {});

// Frames whose total power is at or below this fraction of the largest frame
// power are treated as empty.
inline constexpr double kZeroFrameGuard = 1e-12;

// Spectral centroid per frame: sum f P(t,f) / sum P(t,f).
std::vector<double> instantaneous_frequency(const Spectrogram& spec);

// Shannon entropy (base 2) of each frame's normalized power spectrum. With
// `normalized` the value is divided by log2(freq_bins) and lies in [0, 1].
std::vector<double> spectral_entropy(const Spectrogram& spec, bool normalized = true);

// Elementwise natural log(power + floor). floor must be positive.
Matrix log_spectrogram(const Spectrogram& spec, double floor);

// Default floor: 1e-10 times the segment's largest power cell.
inline constexpr double kLogFloorRelative = 1e-10;
double default_log_floor(const Spectrogram& spec);

struct TFParams {
  SpectrogramParams spectrogram;
  bool normalize_entropy = true;
  double log_floor_relative = kLogFloorRelative;

  // Stable text form, hashed into feature-cache keys and checkpoints.
  std::string descriptor() const;
};

struct TFFeatures {
  std::vector<double> inst_freq_hz;
  std::vector<double> spectral_entropy;
  Matrix log_spectrogram;              // [freq_bins x frames]
  std::vector<double> frame_centers_s;
  double sample_rate_hz = 0.0;
  bool entropy_normalized = true;

  std::size_t frame_count() const { return inst_freq_hz.size(); }
  std::size_t freq_bins() const { return log_spectrogram.rows(); }
};

// Pads to radix-2 and computes all per-segment features.
TFFeatures featurize(std::span<const double> samples, double sample_rate_hz, const TFParams& params = {});
TFFeatures featurize(const Segment& seg, const TFParams& params = {});

// Binary feature record, little-endian:
//   char[4]  magic "TFF1"
//   u32      freq_bins
//   u32      frames
//   u32      flags (bit 0: entropy normalized)
//   f64      sample_rate_hz
//   f64[frames]            inst_freq_hz
//   f64[frames]            spectral_entropy
//   f64[frames]            frame_centers_s
//   f64[freq_bins*frames]  log_spectrogram, row-major (bin-major)
std::string encode_features(const TFFeatures& f);
TFFeatures decode_features(std::string_view bytes);

// JSON form with explicit shape metadata.
std::string features_to_json(const TFFeatures& f);

}  // namespace lbnp
