#include "lbnp/session_io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstring>
#include <filesystem>
#include <sstream>

#include "json.hpp"

namespace lbnp {
namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "binary channel files assume a little-endian host");

namespace {

std::string extension_of(const std::string& path) {
  auto ext = fs::path(path).extension().string();
  if (!ext.empty() && ext[0] == '.') ext.erase(0, 1);
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext;
}

}  // namespace

std::vector<double> read_channel_file(const std::string& path) {
  const std::string ext = extension_of(path);
  const std::string bytes = read_file(path);
  std::vector<double> out;
  if (ext == "f64") {
    if (bytes.size() % 8 != 0) throw DataError(path + ": size is not a multiple of 8 bytes");
    out.resize(bytes.size() / 8);
    std::memcpy(out.data(), bytes.data(), bytes.size());
  } else if (ext == "f32") {
    if (bytes.size() % 4 != 0) throw DataError(path + ": size is not a multiple of 4 bytes");
    std::vector<float> tmp(bytes.size() / 4);
    std::memcpy(tmp.data(), bytes.data(), bytes.size());
    out.assign(tmp.begin(), tmp.end());
  } else if (ext == "csv" || ext == "txt") {
    std::istringstream in(bytes);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      auto first = line.find_first_not_of(" \t\r");
      if (first == std::string::npos) continue;
      auto last = line.find_last_not_of(" \t\r,");
      double v = 0.0;
      const char* b = line.data() + first;
      const char* e = line.data() + last + 1;
      auto [ptr, ec] = std::from_chars(b, e, v);
      if (ec != std::errc() || ptr != e)
        throw DataError(path + ":" + std::to_string(lineno) + ": not a number");
      out.push_back(v);
    }
  } else {
    throw DataError(path + ": unsupported channel file extension '" + ext + "'");
  }
  return out;
}

void write_channel_file(const std::string& path, const std::vector<double>& samples) {
  const std::string ext = extension_of(path);
  std::string bytes;
  if (ext == "f64") {
    bytes.resize(samples.size() * 8);
    std::memcpy(bytes.data(), samples.data(), bytes.size());
  } else if (ext == "f32") {
    std::vector<float> tmp(samples.begin(), samples.end());
    bytes.resize(tmp.size() * 4);
    std::memcpy(bytes.data(), tmp.data(), bytes.size());
  } else if (ext == "csv") {
    std::ostringstream ss;
    ss.precision(17);
    for (double v : samples) ss << v << '\n';
    bytes = ss.str();
  } else {
    throw DataError(path + ": unsupported channel file extension '" + ext + "'");
  }
  write_file_atomic(path, bytes);
}

Session read_session(const std::string& manifest_path) {
  json m;
  try {
    m = json::parse(read_file(manifest_path));
  } catch (const json::parse_error& e) {
    throw DataError(manifest_path + ": " + e.what());
  }
  Session s;
  try {
    s.subject_id = m.at("subject_id").get<std::string>();
    s.trial_id = m.at("trial_id").get<std::string>();
    s.sample_rate_hz = m.at("sample_rate_hz").get<double>();
    s.n_changepoints = m.value("n_changepoints", 0);
    const fs::path base = fs::path(manifest_path).parent_path();
    for (const auto& [name, file] : m.at("channels").items()) {
      Waveform w;
      w.channel = channel_from_string(name);
      w.sample_rate_hz = s.sample_rate_hz;
      w.samples = read_channel_file((base / file.get<std::string>()).string());
      s.channels.emplace(w.channel, std::move(w));
    }
  } catch (const json::exception& e) {
    throw DataError(manifest_path + ": " + e.what());
  }
  s.validate();
  return s;
}

std::string write_session(const Session& s, const std::string& dir, const std::string& extension) {
  json m;
  m["subject_id"] = s.subject_id;
  m["trial_id"] = s.trial_id;
  m["sample_rate_hz"] = s.sample_rate_hz;
  m["n_changepoints"] = s.n_changepoints;
  json chans = json::object();
  for (const auto& [ch, w] : s.channels) {
    std::string name = to_string(ch);
    std::string file = name + "." + extension;
    std::transform(file.begin(), file.end(), file.begin(), [](unsigned char c) { return std::tolower(c); });
    write_channel_file((fs::path(dir) / file).string(), w.samples);
    chans[name] = file;
  }
  m["channels"] = chans;
  const std::string manifest = (fs::path(dir) / "manifest.json").string();
  write_file_atomic(manifest, m.dump(2) + "\n");
  return manifest;
}

std::vector<std::string> find_manifests(const std::string& data_dir) {
  std::vector<std::string> out;
  if (!fs::is_directory(data_dir)) throw DataError("data directory " + data_dir + " does not exist");
  for (const auto& entry : fs::recursive_directory_iterator(data_dir)) {
    if (entry.is_regular_file() && entry.path().filename() == "manifest.json")
      out.push_back(entry.path().string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace lbnp
