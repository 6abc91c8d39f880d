#include "lbnp/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <random>

#include "json.hpp"
#include "lbnp/session_io.hpp"

namespace lbnp {

void SynthConfig::validate() const {
  if (n_subjects < 1 || trials_per_subject < 1) throw DataError("synth: need at least one subject and trial");
  if (levels_per_trial < 1) throw DataError("synth: levels_per_trial must be positive");
  if (!(dwell_min_s > 0.0 && dwell_max_s >= dwell_min_s)) throw DataError("synth: invalid dwell range");
  if (!(sample_rate_hz > 0.0)) throw DataError("synth: sample rate must be positive");
  if (!(amplitude_per_step > 0.0 && amplitude_per_step <= 1.0)) throw DataError("synth: amplitude_per_step must lie in (0, 1]");
  if (!(baseline_hr_min_bpm > 0.0 && baseline_hr_max_bpm >= baseline_hr_min_bpm)) throw DataError("synth: invalid baseline HR range");
  if (!(ppg_rise_s > 0.0 && ppg_systolic_width_s > 0.0 && ppg_diastolic_width_s > 0.0 && ppg_runoff_tau_s > 0.0))
    throw DataError("synth: pulse widths and time constants must be positive");
  if (!(ppg_diastolic_delay_s > 0.0 && ppg_diastolic_ratio >= 0.0 && ppg_runoff_ratio >= 0.0))
    throw DataError("synth: invalid diastolic or runoff parameters");
}

SeverityClass SynthTruth::class_at(double t_s, double sample_rate_hz) const {
  const auto idx = static_cast<std::size_t>(std::floor(t_s * sample_rate_hz));
  return map_class(levels.at(std::min(idx, levels.size() - 1)));
}

std::string synth_subject_id(int subject_index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "S%02d", subject_index + 1);
  return buf;
}

std::string synth_trial_id(int trial_index) { return "T" + std::to_string(trial_index + 1); }

namespace {

struct SubjectParams {
  double baseline_hr_bpm;
  double amplitude;
  double ecg_amplitude;
};

SubjectParams subject_params(const SynthConfig& cfg, int subject_index) {
  std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                    static_cast<std::uint32_t>(subject_index), 0x5eb1u};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  SubjectParams p;
  p.baseline_hr_bpm = cfg.baseline_hr_min_bpm + (cfg.baseline_hr_max_bpm - cfg.baseline_hr_min_bpm) * u(rng);
  p.amplitude = 0.9 + 0.2 * u(rng);
  p.ecg_amplitude = 0.8 + 0.4 * u(rng);
  return p;
}

bool monotone_descent(const std::vector<double>& levels) {
  for (std::size_t i = 1; i < levels.size(); ++i)
    if (levels[i] > levels[i - 1]) return false;
  return true;
}

// Baseline first, then levels covering the moderate and severe classes in a
// random, non-monotone order with no repeated consecutive level.
std::vector<double> draw_levels(const SynthConfig& cfg, std::mt19937_64& rng) {
  const std::vector<double> moderate{-20.0, -30.0};
  const std::vector<double> severe{-40.0, -50.0, -60.0, -70.0, -80.0};
  std::uniform_int_distribution<int> any(0, 8);
  std::uniform_int_distribution<std::size_t> pick_mod(0, moderate.size() - 1), pick_sev(0, severe.size() - 1);
  const auto n = static_cast<std::size_t>(cfg.levels_per_trial);
  for (int attempt = 0; attempt < 10000; ++attempt) {
    std::vector<double> rest;
    if (n >= 2) rest.push_back(moderate[pick_mod(rng)]);
    if (n >= 3) rest.push_back(severe[pick_sev(rng)]);
    while (rest.size() + 1 < n) rest.push_back(-10.0 * any(rng));
    std::shuffle(rest.begin(), rest.end(), rng);
    std::vector<double> levels{0.0};
    levels.insert(levels.end(), rest.begin(), rest.end());
    bool ok = true;
    for (std::size_t i = 1; i < levels.size(); ++i) ok = ok && levels[i] != levels[i - 1];
    if (n >= 4 && monotone_descent(levels)) ok = false;
    if (ok) return levels;
  }
  throw DataError("synth: could not draw a level schedule");
}

double gauss(double t, double mu, double sigma) {
  const double z = (t - mu) / sigma;
  return std::exp(-0.5 * z * z);
}

// Single pulse, t measured from the beat onset. The systolic wave rises as a
// raised cosine from the onset to its peak at ppg_rise_s and falls as a
// Gaussian; a runoff leaving the peak decays into the following beats; the
// diastolic Gaussian is lowered so it starts from zero at the onset. The sum
// is zero before the onset and peaks ppg_rise_s after it.
double ppg_pulse(const SynthConfig& cfg, double t) {
  if (t < 0.0) return 0.0;
  const double rise = cfg.ppg_rise_s;
  const double sys = t < rise ? std::pow(std::sin(0.5 * std::numbers::pi * t / rise), 2) : gauss(t, rise, cfg.ppg_systolic_width_s);
  const double runoff = cfg.ppg_runoff_ratio * (t < rise ? sys : std::exp(-(t - rise) / cfg.ppg_runoff_tau_s));
  const double mu = cfg.ppg_diastolic_delay_s, sigma = cfg.ppg_diastolic_width_s;
  const double g0 = gauss(0.0, mu, sigma);
  const double dia = std::max(0.0, (gauss(t, mu, sigma) - g0) / (1.0 - g0));
  return sys + runoff + cfg.ppg_diastolic_ratio * dia;
}

SynthSession build(const SynthConfig& cfg, const SubjectParams& sp, const std::vector<LevelStep>& schedule,
                   double duration_s, std::mt19937_64& rng, const std::string& subject, const std::string& trial) {
  const double fs = cfg.sample_rate_hz;
  const auto n = static_cast<std::size_t>(std::llround(duration_s * fs));
  SynthSession out;
  SynthTruth& truth = out.truth;
  truth.schedule = schedule;
  truth.levels.resize(n);
  {
    std::size_t k = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double t = static_cast<double>(i) / fs;
      while (k + 1 < schedule.size() && t >= schedule[k + 1].start_s) ++k;
      truth.levels[i] = schedule[k].level_mmHg;
    }
  }
  auto level_at = [&](double t) {
    const auto i = static_cast<std::size_t>(std::clamp(t * fs, 0.0, static_cast<double>(n - 1)));
    return truth.levels[i];
  };

  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> gn(0.0, 1.0);

  // Beat onsets.
  std::vector<double> beats;
  const double resp_phase = 2.0 * std::numbers::pi * u(rng);
  for (double t = 0.2 + 0.5 * u(rng); t < duration_s;) {
    beats.push_back(t);
    const double steps = -level_at(t) / 10.0;
    const double hr = sp.baseline_hr_bpm + cfg.hr_rise_per_step_bpm * steps;
    const double resp = 1.0 + 0.02 * std::sin(2.0 * std::numbers::pi * 0.25 * t + resp_phase);
    t += 60.0 / hr * resp + 0.004 * gn(rng);
  }

  std::vector<double> ppg(n, 0.0), ecg(n, 0.0);
  for (double tb : beats) {
    const double steps = -level_at(tb) / 10.0;
    const double amp = sp.amplitude * std::pow(cfg.amplitude_per_step, steps);
    const double t_end = tb + std::max(2.0 * cfg.ppg_diastolic_delay_s, cfg.ppg_rise_s + 8.0 * cfg.ppg_runoff_tau_s);
    const auto i0 = static_cast<std::size_t>(std::max(0.0, std::ceil(tb * fs)));
    const auto i1 = std::min(n, static_cast<std::size_t>(std::max(0.0, std::ceil(t_end * fs))));
    for (std::size_t i = i0; i < i1; ++i) ppg[i] += amp * ppg_pulse(cfg, static_cast<double>(i) / fs - tb);
    const double w = cfg.ecg_r_width_s;
    const auto e0 = static_cast<std::size_t>(std::max(0.0, std::ceil((tb - 6.0 * w) * fs)));
    const auto e1 = std::min(n, static_cast<std::size_t>(std::max(0.0, std::ceil((tb + 6.0 * w) * fs))));
    for (std::size_t i = e0; i < e1; ++i) ecg[i] += sp.ecg_amplitude * gauss(static_cast<double>(i) / fs, tb, w);
    truth.r_peak_times_s.push_back(tb);
  }

  // Noiseless PPG fiducials: systolic peak after each onset, foot = minimum
  // between the previous peak and this one.
  std::size_t prev_peak = 0;
  bool have_prev = false;
  for (double tb : beats) {
    const auto b = static_cast<std::size_t>(std::llround(tb * fs));
    const auto e = std::min(n, static_cast<std::size_t>(std::llround((tb + cfg.ppg_rise_s + 3 * cfg.ppg_systolic_width_s) * fs)));
    if (b >= e) break;
    const auto pk = static_cast<std::size_t>(std::max_element(ppg.begin() + static_cast<std::ptrdiff_t>(b), ppg.begin() + static_cast<std::ptrdiff_t>(e)) - ppg.begin());
    const std::size_t lo = have_prev ? prev_peak : (pk > static_cast<std::size_t>(0.4 * fs) ? pk - static_cast<std::size_t>(0.4 * fs) : 0);
    const auto foot = static_cast<std::size_t>(std::min_element(ppg.begin() + static_cast<std::ptrdiff_t>(lo), ppg.begin() + static_cast<std::ptrdiff_t>(pk + 1)) - ppg.begin());
    if (have_prev || lo > 0) truth.pulse_feet_s.push_back(static_cast<double>(foot) / fs);
    truth.pulse_peaks_s.push_back(static_cast<double>(pk) / fs);
    prev_peak = pk;
    have_prev = true;
  }

  // Noise scaled to the baseline-level AC signal power, so the effective SNR
  // falls as the pulse amplitude shrinks.
  auto leading_std = [&](const std::vector<double>& x) {
    const std::size_t end = std::min(n, static_cast<std::size_t>(std::llround(std::min(duration_s, 60.0) * fs)));
    double mean = 0.0;
    for (std::size_t i = 0; i < end; ++i) mean += x[i];
    mean /= static_cast<double>(end);
    double s = 0.0;
    for (std::size_t i = 0; i < end; ++i) s += (x[i] - mean) * (x[i] - mean);
    return std::sqrt(s / static_cast<double>(end));
  };
  const double snr = std::pow(10.0, cfg.snr_db / 20.0);
  // The PPG reference is the subject at 0 mmHg, so undo the attenuation of
  // the first dwell.
  const double first_gain = std::pow(cfg.amplitude_per_step, -truth.levels.front() / 10.0);
  const double ppg_sigma = leading_std(ppg) / first_gain / snr;
  const double ecg_sigma = leading_std(ecg) / snr;
  for (auto& v : ppg) v += ppg_sigma * gn(rng);
  for (auto& v : ecg) v += ecg_sigma * gn(rng);

  std::vector<double> ref(n);
  for (std::size_t i = 0; i < n; ++i) ref[i] = truth.levels[i] + cfg.lbnp_noise_mmHg * gn(rng);

  Session& s = out.session;
  s.subject_id = subject;
  s.trial_id = trial;
  s.sample_rate_hz = fs;
  s.n_changepoints = static_cast<int>(schedule.size()) - 1;
  s.channels[Channel::PPG] = Waveform{std::move(ppg), fs, Channel::PPG, 0.0};
  s.channels[Channel::ECG] = Waveform{std::move(ecg), fs, Channel::ECG, 0.0};
  s.channels[Channel::LBNP_REF] = Waveform{std::move(ref), fs, Channel::LBNP_REF, 0.0};
  return out;
}

}  // namespace

SynthSession generate_session(const SynthConfig& cfg, int subject_index, int trial_index) {
  cfg.validate();
  std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                    static_cast<std::uint32_t>(subject_index), static_cast<std::uint32_t>(trial_index)};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> dwell(cfg.dwell_min_s, cfg.dwell_max_s);

  const auto levels = draw_levels(cfg, rng);
  std::vector<LevelStep> schedule;
  double t = 0.0;
  for (double lv : levels) {
    schedule.push_back({t, lv});
    // Whole-sample dwell boundaries.
    t += std::round(dwell(rng) * cfg.sample_rate_hz) / cfg.sample_rate_hz;
  }
  return build(cfg, subject_params(cfg, subject_index), schedule, t, rng, synth_subject_id(subject_index),
               synth_trial_id(trial_index));
}

SynthSession generate_constant_session(const SynthConfig& cfg, double level_mmHg, double duration_s, int subject_index) {
  cfg.validate();
  std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(subject_index), 0xc0u};
  std::mt19937_64 rng(seq);
  return build(cfg, subject_params(cfg, subject_index), {{0.0, level_mmHg}}, duration_s, rng,
               synth_subject_id(subject_index), "C");
}

std::string truth_to_json(const SynthTruth& t) {
  nlohmann::json j;
  nlohmann::json sched = nlohmann::json::array();
  for (const auto& s : t.schedule) {
    sched.push_back({{"start_s", s.start_s}, {"level_mmHg", s.level_mmHg}, {"class", class_number(map_class(s.level_mmHg))}});
  }
  j["schedule"] = sched;
  j["n_samples"] = t.levels.size();
  j["r_peak_times_s"] = t.r_peak_times_s;
  j["pulse_feet_s"] = t.pulse_feet_s;
  j["pulse_peaks_s"] = t.pulse_peaks_s;
  return j.dump(1) + "\n";
}

std::vector<std::string> write_synth_dataset(const SynthConfig& cfg, const std::string& dir) {
  cfg.validate();
  std::vector<std::string> manifests;
  for (int s = 0; s < cfg.n_subjects; ++s) {
    for (int t = 0; t < cfg.trials_per_subject; ++t) {
      const SynthSession ss = generate_session(cfg, s, t);
      const std::string sdir = (std::filesystem::path(dir) / (ss.session.subject_id + "_" + ss.session.trial_id)).string();
      manifests.push_back(write_session(ss.session, sdir, "f64"));
      write_file_atomic((std::filesystem::path(sdir) / "truth.json").string(), truth_to_json(ss.truth));
    }
  }
  return manifests;
}

}  // namespace lbnp
