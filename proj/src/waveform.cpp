#include "lbnp/waveform.hpp"

#include <cmath>

#include "lbnp/fft.hpp"

namespace lbnp {

std::string to_string(Channel c) {
  switch (c) {
    case Channel::PPG: return "PPG";
    case Channel::ECG: return "ECG";
    case Channel::LBNP_REF: return "LBNP_REF";
  }
  return "?";
}

Channel channel_from_string(const std::string& s) {
  if (s == "PPG") return Channel::PPG;
  if (s == "ECG") return Channel::ECG;
  if (s == "LBNP_REF") return Channel::LBNP_REF;
  throw DataError("unknown channel '" + s + "'");
}

void Waveform::validate() const {
  if (!(sample_rate_hz > 0.0) || !std::isfinite(sample_rate_hz))
    throw DataError("sample rate must be positive");
  if (samples.empty()) throw DataError("waveform has no samples");
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (!std::isfinite(samples[i]))
      throw DataError(to_string(channel) + " sample " + std::to_string(i) + " is not finite");
  }
}

const Waveform& Session::channel(Channel c) const {
  auto it = channels.find(c);
  if (it == channels.end())
    throw DataError("session " + key() + " has no " + to_string(c) + " channel");
  return it->second;
}

void Session::validate() const {
  if (subject_id.empty()) throw DataError("session subject_id is empty");
  if (channels.empty()) throw DataError("session " + key() + " has no channels");
  std::size_t n = 0;
  bool first = true;
  for (const auto& [ch, w] : channels) {
    w.validate();
    if (w.sample_rate_hz != sample_rate_hz)
      throw DataError("session " + key() + ": channel " + to_string(ch) + " sample rate differs");
    if (first) {
      n = w.samples.size();
      first = false;
    } else {
      const auto diff = w.samples.size() > n ? w.samples.size() - n : n - w.samples.size();
      if (diff > 1)
        throw DataError("session " + key() + ": channel durations differ by more than one sample");
    }
  }
}

std::vector<Segment> segment(const Waveform& w, const SegmentationParams& params, SegmentMode mode) {
  const double stride_s = mode == SegmentMode::Train ? params.window_s - params.overlap_s : params.window_s;
  if (!(stride_s > 0.0)) throw DataError("non-positive stride");
  const auto win = static_cast<std::size_t>(std::llround(params.window_s * w.sample_rate_hz));
  const auto stride = static_cast<std::size_t>(std::llround(stride_s * w.sample_rate_hz));
  if (win == 0 || stride == 0) throw DataError("non-positive stride");
  if (win > w.samples.size()) throw DataError("waveform too short");

  std::vector<Segment> out;
  out.reserve((w.samples.size() - win) / stride + 1);
  for (std::size_t start = 0; start + win <= w.samples.size(); start += stride) {
    Segment s;
    s.samples.assign(w.samples.begin() + static_cast<std::ptrdiff_t>(start),
                     w.samples.begin() + static_cast<std::ptrdiff_t>(start + win));
    s.channel = w.channel;
    s.sample_rate_hz = w.sample_rate_hz;
    s.start_index = start;
    s.start_time_s = w.start_time_s + static_cast<double>(start) / w.sample_rate_hz;
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<Segment> segment(const Session& s, Channel channel, const SegmentationParams& params,
                             SegmentMode mode) {
  auto segs = segment(s.channel(channel), params, mode);
  for (auto& seg : segs) {
    seg.subject_id = s.subject_id;
    seg.trial_id = s.trial_id;
  }
  return segs;
}

std::vector<double> pad_to_radix2(std::span<const double> samples) {
  if (samples.empty()) throw DataError("cannot pad an empty segment");
  std::vector<double> out(next_power_of_two(samples.size()), 0.0);
  std::copy(samples.begin(), samples.end(), out.begin());
  return out;
}

}  // namespace lbnp
