#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lbnp/common.hpp"

namespace lbnp {

enum class Channel { PPG, ECG, LBNP_REF };

std::string to_string(Channel c);
Channel channel_from_string(const std::string& s);

struct Waveform {
  std::vector<double> samples;
  double sample_rate_hz = 1000.0;
  Channel channel = Channel::PPG;
  double start_time_s = 0.0;

  double duration_s() const { return static_cast<double>(samples.size()) / sample_rate_hz; }

  // Throws DataError on empty samples, non-positive rate or non-finite values.
  void validate() const;
};

// One subject-trial. All channels share sample rate and duration.
struct Session {
  std::string subject_id;
  std::string trial_id;
  double sample_rate_hz = 1000.0;
  // Number of LBNP level changes in the reference trace, as recorded in the
  // session manifest. Zero means "not provided".
  int n_changepoints = 0;
  std::map<Channel, Waveform> channels;

  bool has(Channel c) const { return channels.count(c) != 0; }
  const Waveform& channel(Channel c) const;
  std::string key() const { return subject_id + "/" + trial_id; }

  void validate() const;
};

enum class SegmentMode { Train, Test };

struct Segment {
  std::vector<double> samples;
  std::string subject_id;
  std::string trial_id;
  Channel channel = Channel::PPG;
  double sample_rate_hz = 1000.0;
  std::size_t start_index = 0;
  double start_time_s = 0.0;

  std::size_t midpoint_index() const { return start_index + samples.size() / 2; }
};

struct SegmentationParams {
  double window_s = 15.0;
  double overlap_s = 10.0;  // applied only in train mode
};

// Fixed-length windows fully inside the waveform; the trailing partial window
// is dropped. Train mode steps by window - overlap, test mode by window.
std::vector<Segment> segment(const Waveform& w, const SegmentationParams& params, SegmentMode mode);

// Same as above, tagging each segment with the session's provenance.
std::vector<Segment> segment(const Session& s, Channel channel, const SegmentationParams& params,
                             SegmentMode mode);

// Zero-pads at the end to the smallest power-of-two length.
std::vector<double> pad_to_radix2(std::span<const double> samples);

}  // namespace lbnp
