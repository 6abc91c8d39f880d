#pragma once

#include <string>
#include <vector>

#include "lbnp/waveform.hpp"

namespace lbnp {

// Channel sample files.
//   *.csv  headerless text, one amplitude per line
//   *.f64  raw little-endian IEEE-754 binary64, no header
//   *.f32  raw little-endian IEEE-754 binary32, no header
std::vector<double> read_channel_file(const std::string& path);
void write_channel_file(const std::string& path, const std::vector<double>& samples);

// Session manifest (JSON):
//   {
//     "subject_id": "S01", "trial_id": "T1", "sample_rate_hz": 1000,
//     "n_changepoints": 5,
//     "channels": { "PPG": "ppg.f64", "ECG": "ecg.f64", "LBNP_REF": "lbnp.f64" }
//   }
// Channel paths are relative to the manifest's directory.
Session read_session(const std::string& manifest_path);

// Writes manifest.json plus one file per channel into `dir`.
// `extension` selects the channel format ("f64", "f32" or "csv").
std::string write_session(const Session& s, const std::string& dir, const std::string& extension = "f64");

// All manifest.json files below `data_dir`, sorted by path.
std::vector<std::string> find_manifests(const std::string& data_dir);

}  // namespace lbnp
