#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "lbnp/fft.hpp"
#include "lbnp/session_io.hpp"
#include "lbnp/waveform.hpp"
#include "oracles.hpp"
#include "temp_dir.hpp"

using namespace lbnp;

namespace {
Waveform ramp(double seconds, double fs = 1000.0) {
  Waveform w;
  w.sample_rate_hz = fs;
  w.samples.resize(static_cast<std::size_t>(seconds * fs));
  for (std::size_t i = 0; i < w.samples.size(); ++i) w.samples[i] = static_cast<double>(i);
  return w;
}
}  // namespace

TEST_CASE("train-mode segmentation steps by window minus overlap") {
  const auto segs = segment(ramp(60.0), {}, SegmentMode::Train);
  REQUIRE(segs.size() == 10);
  for (std::size_t k = 0; k < segs.size(); ++k) {
    CHECK(segs[k].start_time_s == doctest::Approx(5.0 * static_cast<double>(k)));
    CHECK(segs[k].samples.size() == 15000);
    CHECK(segs[k].samples.front() == static_cast<double>(segs[k].start_index));
  }
}

TEST_CASE("test-mode segmentation does not overlap") {
  const auto segs = segment(ramp(60.0), {}, SegmentMode::Test);
  REQUIRE(segs.size() == 4);
  for (std::size_t k = 0; k < 4; ++k) CHECK(segs[k].start_index == 15000 * k);
}

TEST_CASE("test-mode starts are a subset of train-mode starts") {
  const auto tr = segment(ramp(97.3), {}, SegmentMode::Train);
  const auto te = segment(ramp(97.3), {}, SegmentMode::Test);
  for (const auto& t : te) {
    bool found = false;
    for (const auto& s : tr) found = found || s.start_index == t.start_index;
    CHECK(found);
  }
}

TEST_CASE("waveform shorter than one window is rejected") {
  CHECK_THROWS_WITH_AS(segment(ramp(14.0), {}, SegmentMode::Train), "waveform too short", DataError);
}

TEST_CASE("segments carry session provenance") {
  Session s;
  s.subject_id = "S07";
  s.trial_id = "T2";
  Waveform w = ramp(30.0);
  w.channel = Channel::ECG;
  s.channels[Channel::ECG] = w;
  const auto segs = segment(s, Channel::ECG, {}, SegmentMode::Test);
  REQUIRE(segs.size() == 2);
  CHECK(segs[1].subject_id == "S07");
  CHECK(segs[1].trial_id == "T2");
  CHECK(segs[1].channel == Channel::ECG);
  CHECK_THROWS_AS(segment(s, Channel::PPG, {}, SegmentMode::Test), DataError);
}

TEST_CASE("radix-2 padding") {
  CHECK(pad_to_radix2(std::vector<double>(15000, 1.0)).size() == 16384);
  CHECK(pad_to_radix2(std::vector<double>(16384, 1.0)).size() == 16384);
  CHECK(pad_to_radix2(std::vector<double>(16385, 1.0)).size() == 32768);
  const auto p = pad_to_radix2(std::vector<double>(3, 2.0));
  CHECK(p == std::vector<double>{2.0, 2.0, 2.0, 0.0});
  CHECK_THROWS_AS(pad_to_radix2(std::vector<double>{}), DataError);
}

TEST_CASE("waveform validation rejects non-finite samples") {
  Waveform w = ramp(1.0);
  w.samples[10] = std::nan("");
  CHECK_THROWS_AS(w.validate(), DataError);
  w.samples[10] = 0.0;
  w.sample_rate_hz = 0.0;
  CHECK_THROWS_AS(w.validate(), DataError);
}

TEST_CASE("FFT matches a direct DFT") {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g;
  for (std::size_t n : {1u, 2u, 8u, 64u, 256u}) {
    std::vector<double> x(n);
    for (auto& v : x) v = g(rng);
    const auto fast = fft_real(x);
    const auto slow = oracle::dft(x);
    for (std::size_t k = 0; k < n; ++k) CHECK(std::abs(fast[k] - slow[k]) < 1e-9 * (1.0 + std::abs(slow[k])));
  }
  CHECK(next_power_of_two(1000) == 1024);
  CHECK(is_power_of_two(4096));
  CHECK_FALSE(is_power_of_two(0));
}

TEST_CASE("channel files round-trip in every format") {
  TempDir dir;
  const std::vector<double> x{0.0, -1.5, 3.25, 1e-7, 12345.678};
  for (const char* ext : {"f64", "csv"}) {
    const auto path = dir.file(std::string("x.") + ext);
    write_channel_file(path, x);
    CHECK(read_channel_file(path) == x);
  }
  const auto path = dir.file("x.f32");
  write_channel_file(path, x);
  const auto back = read_channel_file(path);
  REQUIRE(back.size() == x.size());
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(back[i] == static_cast<double>(static_cast<float>(x[i])));
  CHECK_THROWS_AS(read_channel_file(dir.file("missing.f64")), DataError);
}

TEST_CASE("session manifests round-trip") {
  TempDir dir;
  Session s;
  s.subject_id = "S03";
  s.trial_id = "T1";
  s.n_changepoints = 2;
  for (Channel c : {Channel::PPG, Channel::LBNP_REF}) {
    Waveform w = ramp(2.0);
    w.channel = c;
    s.channels[c] = w;
  }
  const auto manifest = write_session(s, dir.file("S03_T1"));
  const Session back = read_session(manifest);
  CHECK(back.key() == "S03/T1");
  CHECK(back.n_changepoints == 2);
  CHECK(back.channel(Channel::PPG).samples == s.channel(Channel::PPG).samples);
  CHECK_FALSE(back.has(Channel::ECG));
  CHECK(find_manifests(dir.path()).size() == 1);
}
