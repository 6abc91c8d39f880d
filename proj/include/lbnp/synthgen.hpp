#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lbnp/annotation.hpp"
#include "lbnp/waveform.hpp"

namespace lbnp {

// Synthetic LBNP sessions with class-dependent waveform modulation. The
// physiology is a toy: it exists so the classes are learnable, not to be
// realistic.
struct SynthConfig {
  std::uint64_t seed = 1;
  int n_subjects = 9;
  int trials_per_subject = 3;
  // Pressure levels per trial, the first being the 0 mmHg baseline.
  int levels_per_trial = 5;
  double dwell_min_s = 120.0;
  double dwell_max_s = 180.0;
  double sample_rate_hz = 1000.0;

  double baseline_hr_min_bpm = 60.0;
  double baseline_hr_max_bpm = 70.0;
  double hr_rise_per_step_bpm = 5.0;   // per 10 mmHg
  double amplitude_per_step = 0.9;     // multiplicative, per 10 mmHg
  double snr_db = 20.0;
  double lbnp_noise_mmHg = 0.5;

  // PPG pulse: systolic and diastolic waves after each beat onset, plus an
  // exponential runoff from the systolic peak.
  double ppg_rise_s = 0.15;
  double ppg_systolic_width_s = 0.05;
  double ppg_diastolic_delay_s = 0.40;
  double ppg_diastolic_width_s = 0.12;
  double ppg_diastolic_ratio = 0.4;
  double ppg_runoff_ratio = 0.5;
  double ppg_runoff_tau_s = 0.5;
  double ecg_r_width_s = 0.010;

  void validate() const;
};

struct LevelStep {
  double start_s;
  double level_mmHg;
};

struct SynthTruth {
  std::vector<LevelStep> schedule;
  std::vector<double> levels;          // per-sample true level
  std::vector<double> r_peak_times_s;  // ECG beat truth
  std::vector<double> pulse_feet_s;    // PPG foot truth (noiseless minimum before each upstroke)
  std::vector<double> pulse_peaks_s;   // PPG systolic peak truth

  SeverityClass class_at(double t_s, double sample_rate_hz) const;
};

struct SynthSession {
  Session session;
  SynthTruth truth;
};

std::string synth_subject_id(int subject_index);
std::string synth_trial_id(int trial_index);

// Deterministic in (cfg.seed, subject_index, trial_index).
SynthSession generate_session(const SynthConfig& cfg, int subject_index, int trial_index);

// Single-level session (no level changes) for tests.
SynthSession generate_constant_session(const SynthConfig& cfg, double level_mmHg, double duration_s,
                                       int subject_index = 0);

std::string truth_to_json(const SynthTruth& t);

// Writes <dir>/<subject>_<trial>/{manifest.json, channel files, truth.json}
// for every session; returns the manifest paths.
std::vector<std::string> write_synth_dataset(const SynthConfig& cfg, const std::string& dir);

}  // namespace lbnp
