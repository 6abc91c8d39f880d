#include <doctest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sys/wait.h>

#include "json.hpp"
#include "lbnp/common.hpp"
#include "temp_dir.hpp"

namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

// Runs the CLI with stderr folded into stdout.
Run cli(const std::string& args) {
  const std::string cmd = std::string(LBNP_CLI_PATH) + " " + args + " 2>&1";
  Run r;
  FILE* p = popen(cmd.c_str(), "r");
  REQUIRE(p != nullptr);
  std::array<char, 4096> buf{};
  std::size_t n;
  while ((n = std::fread(buf.data(), 1, buf.size(), p)) > 0) r.out.append(buf.data(), n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string small_config(const TempDir& tmp) {
  nlohmann::json j;
  j["paths"] = {{"data_dir", tmp.file("data")}, {"output_dir", tmp.file("out")}};
  j["synth"] = {{"levels_per_trial", 3}, {"dwell_min_s", 20.0}, {"dwell_max_s", 20.0}};
  j["train"] = {{"max_epochs", 1}};
  const auto path = tmp.file("config.json");
  lbnp::write_file_atomic(path, j.dump(2));
  return path;
}

std::size_t count_manifests(const std::string& dir) {
  std::size_t n = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.path().filename() == "manifest.json") ++n;
  return n;
}

}  // namespace

TEST_CASE("usage errors exit with 1") {
  CHECK(cli("").code == 1);
  CHECK(cli("no-such-command").code == 1);
  CHECK(cli("run-cv --epochs -3").code == 1);
  CHECK(cli("--help").code == 0);
}

TEST_CASE("a missing data directory exits with 2") {
  TempDir tmp;
  const auto r = cli("label --data-dir " + tmp.file("absent") + " -o " + tmp.file("out"));
  CHECK(r.code == 2);
  CHECK(r.out.find("does not exist") != std::string::npos);
  CHECK(cli("run-cv -c " + tmp.file("no_config.json")).code == 2);
}

TEST_CASE("synth, label and run-cv end to end") {
  TempDir tmp;
  const auto cfg = small_config(tmp);

  const auto s1 = cli("synth -c " + cfg);
  REQUIRE(s1.code == 0);
  CHECK(count_manifests(tmp.file("data")) == 27);
  const auto first = lbnp::read_file(tmp.file("data/S04_T2/ppg.f64"));
  REQUIRE(cli("synth -c " + cfg).code == 0);
  CHECK(lbnp::read_file(tmp.file("data/S04_T2/ppg.f64")) == first);

  REQUIRE(cli("label -c " + cfg).code == 0);
  const auto labels = lbnp::read_file(tmp.file("out/labels.csv"));
  CHECK(labels.rfind("# config_hash: ", 0) == 0);
  REQUIRE(cli("label -c " + cfg).code == 0);
  CHECK(lbnp::read_file(tmp.file("out/labels.csv")) == labels);
  const auto cps = nlohmann::json::parse(lbnp::read_file(tmp.file("out/changepoints.json")));
  CHECK(cps["sessions"].size() == 27);
  CHECK(cps["sessions"][0]["breakpoints_s"].size() == 2);

  const auto cv = cli("run-cv -c " + cfg + " --mode branch1_only");
  REQUIRE_MESSAGE(cv.code == 0, cv.out);
  const auto report = lbnp::read_file(tmp.file("out/report.json"));
  const auto j = nlohmann::json::parse(report);
  CHECK(j["folds"].size() == 3);
  CHECK(j["mean"].contains("auroc"));
  CHECK(j["metadata"]["mode"] == "branch1_only");
  CHECK(j["metadata"]["leakage_audit_passed"] == true);
  REQUIRE(cli("run-cv -c " + cfg + " --mode branch1_only").code == 0);
  CHECK(lbnp::read_file(tmp.file("out/report.json")) == report);

  const auto rep = cli("report " + tmp.file("out/report.json"));
  CHECK(rep.code == 0);
  CHECK(rep.out.find("branch1_only") != std::string::npos);
}

TEST_CASE("a session without the reference channel is diagnosed") {
  TempDir tmp;
  const auto cfg = small_config(tmp);
  REQUIRE(cli("synth -c " + cfg + " --subjects 3 --trials 1").code == 0);
  const auto manifest = tmp.file("data/S02_T1/manifest.json");
  auto m = nlohmann::json::parse(lbnp::read_file(manifest));
  m["channels"].erase("LBNP_REF");
  lbnp::write_file_atomic(manifest, m.dump());
  const auto r = cli("label -c " + cfg);
  CHECK(r.code == 2);
  CHECK(r.out.find("S02/T1 has no LBNP_REF channel") != std::string::npos);
}
