#include "lbnp/tf_features.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <complex>
#include <cstring>
#include <numbers>
#include <sstream>

#include "json.hpp"
#include "lbnp/fft.hpp"

namespace lbnp {

std::vector<std::size_t> frame_centers(std::size_t n_samples, std::size_t window_len, std::size_t frame_count) {
  if (window_len == 0 || frame_count == 0) throw DataError("window length and frame count must be positive");
  if (window_len > n_samples) throw DataError("window longer than segment");
  std::vector<std::size_t> centers(frame_count);
  const double first = static_cast<double>(window_len) / 2.0;
  const double span = static_cast<double>(n_samples - window_len);
  for (std::size_t k = 0; k < frame_count; ++k) {
    const double pos = frame_count == 1 ? first : first + span * static_cast<double>(k) / static_cast<double>(frame_count - 1);
    centers[k] = static_cast<std::size_t>(std::llround(pos));
  }
  return centers;
}

Spectrogram spectrogram(std::span<const double> samples, double sample_rate_hz, const SpectrogramParams& params) {
  const std::size_t W = params.window_len;
  if (!is_power_of_two(samples.size())) throw DataError("spectrogram input length must be a power of two");
  if (!is_power_of_two(W)) throw DataError("window length must be a power of two");
  if (W > samples.size()) throw DataError("window longer than segment");
  if (!(sample_rate_hz > 0.0)) throw DataError("sample rate must be positive");

  std::vector<double> window(W, 1.0);
  if (params.window == WindowKind::Hann) {
    for (std::size_t i = 0; i < W; ++i)
      window[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(W));
  }

  const auto centers = frame_centers(samples.size(), W, params.frame_count);
  const std::size_t bins = W / 2 + 1;
  Spectrogram spec;
  spec.power = Matrix(bins, params.frame_count);
  spec.window_len = W;
  spec.sample_rate_hz = sample_rate_hz;
  spec.freqs_hz.resize(bins);
  for (std::size_t b = 0; b < bins; ++b)
    spec.freqs_hz[b] = static_cast<double>(b) * sample_rate_hz / static_cast<double>(W);
  spec.frame_centers_s.resize(params.frame_count);

  std::vector<std::complex<double>> buf(W);
  const double inv_w = 1.0 / static_cast<double>(W);
  for (std::size_t t = 0; t < params.frame_count; ++t) {
    const std::size_t begin = centers[t] - W / 2;
    for (std::size_t i = 0; i < W; ++i) buf[i] = samples[begin + i] * window[i];
    fft_inplace(buf);
    for (std::size_t b = 0; b < bins; ++b) {
      const double scale = (b == 0 || b == W / 2) ? inv_w : 2.0 * inv_w;
      spec.power(b, t) = std::norm(buf[b]) * scale;
    }
    spec.frame_centers_s[t] = static_cast<double>(centers[t]) / sample_rate_hz;
  }
  return spec;
}

namespace {

std::vector<double> frame_totals(const Spectrogram& spec) {
  std::vector<double> total(spec.frame_count(), 0.0);
  for (std::size_t b = 0; b < spec.freq_bins(); ++b) {
    const double* row = spec.power.row(b);
    for (std::size_t t = 0; t < total.size(); ++t) total[t] += row[t];
  }
  return total;
}

double guard_threshold(const std::vector<double>& totals) {
  double mx = 0.0;
  for (double v : totals) mx = std::max(mx, v);
  return kZeroFrameGuard * mx;
}

}  // namespace

std::vector<double> instantaneous_frequency(const Spectrogram& spec) {
  const auto totals = frame_totals(spec);
  const double eps = guard_threshold(totals);
  std::vector<double> out(totals.size(), 0.0);
  for (std::size_t t = 0; t < out.size(); ++t) {
    if (totals[t] <= eps) continue;
    double moment = 0.0;
    for (std::size_t b = 0; b < spec.freq_bins(); ++b) moment += spec.freqs_hz[b] * spec.power(b, t);
    out[t] = moment / totals[t];
  }
  return out;
}

std::vector<double> spectral_entropy(const Spectrogram& spec, bool normalized) {
  const auto totals = frame_totals(spec);
  const double eps = guard_threshold(totals);
  const double norm = normalized && spec.freq_bins() > 1 ? std::log2(static_cast<double>(spec.freq_bins())) : 1.0;
  std::vector<double> out(totals.size(), 0.0);
  for (std::size_t t = 0; t < out.size(); ++t) {
    if (totals[t] <= eps) continue;
    double h = 0.0;
    for (std::size_t b = 0; b < spec.freq_bins(); ++b) {
      const double p = spec.power(b, t) / totals[t];
      if (p > 0.0) h -= p * std::log2(p);
    }
    out[t] = std::clamp(h / norm, 0.0, normalized ? 1.0 : h);
  }
  return out;
}

Matrix log_spectrogram(const Spectrogram& spec, double floor) {
  if (!(floor > 0.0)) throw DataError("log floor must be positive");
  Matrix out(spec.freq_bins(), spec.frame_count());
  const auto& in = spec.power.data();
  auto& o = out.data();
  for (std::size_t i = 0; i < in.size(); ++i) o[i] = std::log(in[i] + floor);
  return out;
}

double default_log_floor(const Spectrogram& spec) {
  double mx = 0.0;
  for (double v : spec.power.data()) mx = std::max(mx, v);
  const double f = kLogFloorRelative * mx;
  // An all-zero segment still needs a finite log.
  return f > 0.0 ? f : kLogFloorRelative;
}

std::string TFParams::descriptor() const {
  std::ostringstream ss;
  ss << "tf-v1;win=" << spectrogram.window_len << ";frames=" << spectrogram.frame_count
     << ";window=" << (spectrogram.window == WindowKind::Hann ? "hann" : "rect")
     << ";se_norm=" << (normalize_entropy ? 1 : 0) << ";logfloor_rel=" << log_floor_relative;
  return ss.str();
}

TFFeatures featurize(std::span<const double> samples, double sample_rate_hz, const TFParams& params) {
  const auto padded = pad_to_radix2(samples);
  const Spectrogram spec = spectrogram(padded, sample_rate_hz, params.spectrogram);
  TFFeatures f;
  f.inst_freq_hz = instantaneous_frequency(spec);
  f.spectral_entropy = spectral_entropy(spec, params.normalize_entropy);
  double mx = 0.0;
  for (double v : spec.power.data()) mx = std::max(mx, v);
  const double floor = mx > 0.0 ? params.log_floor_relative * mx : params.log_floor_relative;
  f.log_spectrogram = log_spectrogram(spec, floor);
  f.frame_centers_s = spec.frame_centers_s;
  f.sample_rate_hz = sample_rate_hz;
  f.entropy_normalized = params.normalize_entropy;
  return f;
}

TFFeatures featurize(const Segment& seg, const TFParams& params) {
  return featurize(seg.samples, seg.sample_rate_hz, params);
}

namespace {

static_assert(std::endian::native == std::endian::little, "feature records assume a little-endian host");

template <typename T>
void put(std::string& out, const T& v) {
  const auto* p = reinterpret_cast<const char*>(&v);
  out.append(p, sizeof(T));
}

void put_doubles(std::string& out, const std::vector<double>& v) {
  out.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double));
}

struct Reader {
  std::string_view bytes;
  std::size_t pos = 0;

  template <typename T>
  T get() {
    if (pos + sizeof(T) > bytes.size()) throw DataError("truncated feature record");
    T v;
    std::memcpy(&v, bytes.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
  }
  void get_doubles(std::vector<double>& v, std::size_t n) {
    if (pos + n * sizeof(double) > bytes.size()) throw DataError("truncated feature record");
    v.resize(n);
    std::memcpy(v.data(), bytes.data() + pos, n * sizeof(double));
    pos += n * sizeof(double);
  }
};

}  // namespace

std::string encode_features(const TFFeatures& f) {
  std::string out = "TFF1";
  put(out, static_cast<std::uint32_t>(f.freq_bins()));
  put(out, static_cast<std::uint32_t>(f.frame_count()));
  put(out, static_cast<std::uint32_t>(f.entropy_normalized ? 1u : 0u));
  put(out, f.sample_rate_hz);
  put_doubles(out, f.inst_freq_hz);
  put_doubles(out, f.spectral_entropy);
  put_doubles(out, f.frame_centers_s);
  put_doubles(out, f.log_spectrogram.data());
  return out;
}

TFFeatures decode_features(std::string_view bytes) {
  if (bytes.substr(0, 4) != "TFF1") throw DataError("not a feature record");
  Reader r{bytes, 4};
  const auto bins = r.get<std::uint32_t>();
  const auto frames = r.get<std::uint32_t>();
  const auto flags = r.get<std::uint32_t>();
  TFFeatures f;
  f.sample_rate_hz = r.get<double>();
  f.entropy_normalized = (flags & 1u) != 0;
  r.get_doubles(f.inst_freq_hz, frames);
  r.get_doubles(f.spectral_entropy, frames);
  r.get_doubles(f.frame_centers_s, frames);
  f.log_spectrogram = Matrix(bins, frames);
  std::vector<double> tmp;
  r.get_doubles(tmp, static_cast<std::size_t>(bins) * frames);
  f.log_spectrogram.data() = std::move(tmp);
  if (r.pos != bytes.size()) throw DataError("trailing bytes in feature record");
  return f;
}

std::string features_to_json(const TFFeatures& f) {
  nlohmann::json j;
  j["shape"] = {{"freq_bins", f.freq_bins()}, {"frames", f.frame_count()}};
  j["sample_rate_hz"] = f.sample_rate_hz;
  j["entropy_normalized"] = f.entropy_normalized;
  j["inst_freq_hz"] = f.inst_freq_hz;
  j["spectral_entropy"] = f.spectral_entropy;
  j["frame_centers_s"] = f.frame_centers_s;
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t b = 0; b < f.freq_bins(); ++b)
    rows.push_back(std::vector<double>(f.log_spectrogram.row(b), f.log_spectrogram.row(b) + f.frame_count()));
  j["log_spectrogram"] = rows;
  return j.dump();
}

}  // namespace lbnp
