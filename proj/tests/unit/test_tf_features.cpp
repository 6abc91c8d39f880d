#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "lbnp/tf_features.hpp"
#include "oracles.hpp"

using namespace lbnp;

namespace {
std::vector<double> tone(std::size_t n, double f, double fs, double amp = 1.0) {
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = amp * std::sin(2.0 * std::numbers::pi * f * static_cast<double>(i) / fs);
  return x;
}

double frame_energy(std::span<const double> x, std::size_t center, std::size_t W, bool hann) {
  double e = 0.0;
  for (std::size_t n = 0; n < W; ++n) {
    const double w = hann ? 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(n) / static_cast<double>(W)) : 1.0;
    const double v = w * x[center - W / 2 + n];
    e += v * v;
  }
  return e;
}
}  // namespace

TEST_CASE("a 15 s segment yields 33 x 261 features") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g;
  std::vector<double> x(15000);
  for (auto& v : x) v = g(rng);
  const auto f = featurize(x, 1000.0);
  CHECK(f.freq_bins() == 33);
  CHECK(f.frame_count() == 261);
  CHECK(f.spectral_entropy.size() == 261);
  CHECK(f.frame_centers_s.size() == 261);
  CHECK(f.log_spectrogram.cols() == 261);
}

TEST_CASE("frame centers span the segment evenly") {
  const auto c = frame_centers(16384, 64, 261);
  REQUIRE(c.size() == 261);
  CHECK(c.front() == 32);
  CHECK(c.back() == 16384 - 32);
  for (std::size_t k = 1; k < c.size(); ++k) CHECK(c[k] > c[k - 1]);
  CHECK_THROWS_AS(frame_centers(32, 64, 10), DataError);
}

TEST_CASE("an all-zero segment gives finite features") {
  const std::vector<double> x(15000, 0.0);
  const auto f = featurize(x, 1000.0);
  for (double v : f.inst_freq_hz) CHECK(v == 0.0);
  for (double v : f.spectral_entropy) CHECK(v == 0.0);
  for (double v : f.log_spectrogram.data()) {
    CHECK(std::isfinite(v));
    CHECK(v == doctest::Approx(std::log(kLogFloorRelative)));
  }
}

TEST_CASE("an impulse has a flat spectrum and obeys Parseval") {
  std::vector<double> x(1024, 0.0);
  const std::size_t W = 64;
  const auto centers = frame_centers(x.size(), W, 17);
  x[centers[5]] = 2.0;  // window value 1 at the frame center
  SpectrogramParams p;
  p.frame_count = 17;
  const auto s = spectrogram(x, 1000.0, p);
  const double e = frame_energy(x, centers[5], W, true);
  double total = 0.0;
  for (std::size_t b = 0; b < s.freq_bins(); ++b) total += s.power(b, 5);
  CHECK(total == doctest::Approx(e).epsilon(1e-12));
  // Interior bins carry both signed frequencies, the edge bins one each.
  const double interior = s.power(1, 5);
  for (std::size_t b = 1; b + 1 < s.freq_bins(); ++b) CHECK(s.power(b, 5) == doctest::Approx(interior));
  CHECK(s.power(0, 5) == doctest::Approx(interior / 2));
  CHECK(s.power(32, 5) == doctest::Approx(interior / 2));
}

TEST_CASE("Hann spectrogram matches a direct DFT of the windowed frame") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g;
  std::vector<double> x(2048);
  for (auto& v : x) v = g(rng);
  SpectrogramParams p;
  p.frame_count = 9;
  const auto s = spectrogram(x, 500.0, p);
  const auto centers = frame_centers(x.size(), 64, 9);
  for (std::size_t t = 0; t < 9; ++t) {
    std::vector<double> fr(64);
    for (std::size_t n = 0; n < 64; ++n)
      fr[n] = x[centers[t] - 32 + n] * (0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(n) / 64.0));
    const auto X = oracle::dft(fr);
    for (std::size_t b = 0; b <= 32; ++b) {
      const double one_sided = (b == 0 || b == 32 ? 1.0 : 2.0) * std::norm(X[b]) / 64.0;
      CHECK(s.power(b, t) == doctest::Approx(one_sided).epsilon(1e-10));
    }
  }
  CHECK(s.freqs_hz[4] == doctest::Approx(4 * 500.0 / 64));
}

TEST_CASE("spectrogram preconditions") {
  const std::vector<double> x(1000, 1.0);
  CHECK_THROWS_AS(spectrogram(x, 1000.0), DataError);
  const std::vector<double> y(1024, 1.0);
  CHECK_THROWS_AS(spectrogram(y, 0.0), DataError);
}

TEST_CASE("centroid of a 125 Hz tone sits at 125 Hz") {
  const auto x = tone(16384, 125.0, 1000.0);
  SpectrogramParams p;
  p.window = WindowKind::Rectangular;
  const auto s = spectrogram(x, 1000.0, p);
  for (double f : instantaneous_frequency(s)) CHECK(f == doctest::Approx(125.0).epsilon(1e-6));
  const auto h = spectrogram(x, 1000.0);
  for (double f : instantaneous_frequency(h)) CHECK(f == doctest::Approx(125.0).epsilon(0.01));
}

TEST_CASE("white noise centroid is near the middle of the band") {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> g;
  std::vector<double> x(16384);
  for (auto& v : x) v = g(rng);
  const auto inf = instantaneous_frequency(spectrogram(x, 1000.0));
  double m = 0.0;
  for (double v : inf) m += v;
  m /= static_cast<double>(inf.size());
  CHECK(m == doctest::Approx(250.0).epsilon(0.1));
}

TEST_CASE("spectral entropy of single-bin and flat frames") {
  Spectrogram s;
  s.power = Matrix(33, 2, 0.0);
  s.freqs_hz.resize(33);
  s.power(7, 0) = 3.0;
  for (std::size_t b = 0; b < 33; ++b) s.power(b, 1) = 0.25;
  const auto se = spectral_entropy(s);
  CHECK(se[0] == doctest::Approx(0.0));
  CHECK(se[1] == doctest::Approx(1.0));
  const auto raw = spectral_entropy(s, false);
  CHECK(raw[1] == doctest::Approx(std::log2(33.0)));
}

TEST_CASE("features are invariant to amplitude scaling") {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g;
  std::vector<double> x(15000), y(15000);
  for (std::size_t i = 0; i < x.size(); ++i) {
    x[i] = g(rng);
    y[i] = 1e3 * x[i];
  }
  const auto a = featurize(x, 1000.0), b = featurize(y, 1000.0);
  for (std::size_t t = 0; t < a.frame_count(); ++t) {
    CHECK(a.inst_freq_hz[t] == doctest::Approx(b.inst_freq_hz[t]).epsilon(1e-9));
    CHECK(a.spectral_entropy[t] == doctest::Approx(b.spectral_entropy[t]).epsilon(1e-9));
  }
  // The log-spectrogram shifts by log(1e6) everywhere.
  for (std::size_t i = 0; i < a.log_spectrogram.size(); ++i)
    CHECK(b.log_spectrogram.data()[i] - a.log_spectrogram.data()[i] == doctest::Approx(std::log(1e6)).epsilon(1e-6));
}

TEST_CASE("log floor bounds the log-spectrogram from below") {
  Spectrogram s;
  s.power = Matrix(2, 2, 0.0);
  s.power(0, 0) = 1.0;
  const double fl = default_log_floor(s);
  CHECK(fl == doctest::Approx(1e-10));
  const auto l = log_spectrogram(s, fl);
  CHECK(l(1, 1) == doctest::Approx(std::log(1e-10)));
  CHECK(l(0, 0) == doctest::Approx(std::log(1.0 + 1e-10)));
  CHECK_THROWS_AS(log_spectrogram(s, 0.0), DataError);
}

TEST_CASE("feature records round-trip exactly") {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> g;
  std::vector<double> x(15000);
  for (auto& v : x) v = g(rng);
  const auto f = featurize(x, 1000.0);
  const auto bytes = encode_features(f);
  const auto d = decode_features(bytes);
  CHECK(d.inst_freq_hz == f.inst_freq_hz);
  CHECK(d.spectral_entropy == f.spectral_entropy);
  CHECK(d.frame_centers_s == f.frame_centers_s);
  CHECK(d.log_spectrogram == f.log_spectrogram);
  CHECK(d.sample_rate_hz == f.sample_rate_hz);
  CHECK(d.entropy_normalized == f.entropy_normalized);
  CHECK_THROWS_AS(decode_features(bytes.substr(0, bytes.size() - 3)), DataError);
  CHECK_THROWS_AS(decode_features("XXXX"), DataError);
  CHECK(features_to_json(f).find("\"freq_bins\"") != std::string::npos);
}

TEST_CASE("descriptor changes with feature parameters") {
  TFParams a, b;
  b.spectrogram.window = WindowKind::Rectangular;
  CHECK(a.descriptor() != b.descriptor());
  CHECK(a.descriptor() == TFParams{}.descriptor());
}
