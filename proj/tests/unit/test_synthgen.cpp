#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "lbnp/synthgen.hpp"

using namespace lbnp;

namespace {
double peak_to_peak(const std::vector<double>& x, std::size_t b, std::size_t e) {
  const auto [lo, hi] = std::minmax_element(x.begin() + static_cast<std::ptrdiff_t>(b), x.begin() + static_cast<std::ptrdiff_t>(e));
  return *hi - *lo;
}
}  // namespace

TEST_CASE("sessions are deterministic in seed, subject and trial") {
  SynthConfig cfg;
  cfg.seed = 42;
  const auto a = generate_session(cfg, 2, 1), b = generate_session(cfg, 2, 1);
  for (Channel c : {Channel::PPG, Channel::ECG, Channel::LBNP_REF})
    CHECK(a.session.channel(c).samples == b.session.channel(c).samples);
  CHECK(a.truth.pulse_feet_s == b.truth.pulse_feet_s);
  const auto other = generate_session(cfg, 2, 2);
  CHECK(other.session.channel(Channel::PPG).samples != a.session.channel(Channel::PPG).samples);
  CHECK(a.session.subject_id == "S03");
  CHECK(a.session.trial_id == "T2");
}

TEST_CASE("level schedules respect the protocol") {
  SynthConfig cfg;
  for (int s = 0; s < 6; ++s) {
    for (int t = 0; t < 3; ++t) {
      const auto ss = generate_session(cfg, s, t);
      const auto& sch = ss.truth.schedule;
      REQUIRE(sch.size() == static_cast<std::size_t>(cfg.levels_per_trial));
      CHECK(sch.front().start_s == 0.0);
      CHECK(sch.front().level_mmHg == 0.0);
      bool monotone = true;
      const double duration = static_cast<double>(ss.session.channel(Channel::PPG).samples.size()) / cfg.sample_rate_hz;
      for (std::size_t i = 0; i < sch.size(); ++i) {
        const double end = i + 1 < sch.size() ? sch[i + 1].start_s : duration;
        CHECK(end - sch[i].start_s >= cfg.dwell_min_s - 1e-6);
        CHECK(end - sch[i].start_s <= cfg.dwell_max_s + 1e-6);
        CHECK(sch[i].level_mmHg <= 0.0);
        CHECK(sch[i].level_mmHg >= -80.0);
        CHECK(std::fmod(sch[i].level_mmHg, 10.0) == 0.0);
        if (i > 0) {
          CHECK(sch[i].level_mmHg != sch[i - 1].level_mmHg);
          monotone = monotone && sch[i].level_mmHg < sch[i - 1].level_mmHg;
        }
      }
      CHECK_FALSE(monotone);
      CHECK(ss.session.n_changepoints == cfg.levels_per_trial - 1);
    }
  }
}

TEST_CASE("heart rate at baseline matches the configured rate") {
  SynthConfig cfg;
  cfg.baseline_hr_min_bpm = 75.0;
  cfg.baseline_hr_max_bpm = 75.0;
  const auto ss = generate_constant_session(cfg, 0.0, 60.0);
  const auto& r = ss.truth.r_peak_times_s;
  REQUIRE(r.size() > 10);
  const double mean_rr = (r.back() - r.front()) / static_cast<double>(r.size() - 1);
  CHECK(mean_rr == doctest::Approx(0.8).epsilon(0.02));
  for (double l : ss.truth.levels) CHECK(l == 0.0);
}

TEST_CASE("deeper pressure raises heart rate and shrinks the pulse") {
  SynthConfig cfg;
  cfg.snr_db = 60.0;
  const auto base = generate_constant_session(cfg, 0.0, 40.0, 1);
  const auto deep = generate_constant_session(cfg, -60.0, 40.0, 1);
  const auto& pb = base.session.channel(Channel::PPG).samples;
  const auto& pd = deep.session.channel(Channel::PPG).samples;
  CHECK(peak_to_peak(pd, 5000, 35000) < 0.7 * peak_to_peak(pb, 5000, 35000));
  CHECK(deep.truth.r_peak_times_s.size() > base.truth.r_peak_times_s.size());
}

TEST_CASE("truth class follows the level at a time") {
  SynthConfig cfg;
  const auto ss = generate_constant_session(cfg, -30.0, 20.0);
  CHECK(ss.truth.class_at(10.0, cfg.sample_rate_hz) == SeverityClass::Moderate);
  CHECK(ss.truth.class_at(1e6, cfg.sample_rate_hz) == SeverityClass::Moderate);
}

TEST_CASE("invalid configurations are rejected") {
  SynthConfig cfg;
  cfg.dwell_max_s = 10.0;
  CHECK_THROWS_AS(cfg.validate(), DataError);
  cfg = {};
  cfg.amplitude_per_step = 1.5;
  CHECK_THROWS_AS(cfg.validate(), DataError);
  cfg = {};
  cfg.ppg_runoff_tau_s = 0.0;
  CHECK_THROWS_AS(cfg.validate(), DataError);
  cfg = {};
  CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("truth serializes to JSON") {
  SynthConfig cfg;
  const auto ss = generate_constant_session(cfg, -10.0, 10.0);
  const auto j = truth_to_json(ss.truth);
  CHECK(j.find("schedule") != std::string::npos);
}
