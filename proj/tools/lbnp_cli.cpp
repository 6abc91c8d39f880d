// lbnp: command-line front end for the hemorrhage-severity pipeline.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
// Settings resolve as: command-line flag, then environment (LBNP_CACHE_DIR
// for the cache directory), then the --config file, then built-in defaults.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "lbnp/common.hpp"
#include "lbnp/evaluation.hpp"
#include "lbnp/pipeline.hpp"
#include "lbnp/session_io.hpp"
#include "lbnp/synthgen.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace lbnp;

namespace {

struct CommonOptions {
  std::string config;
  std::string data_dir;
  std::string cache_dir;
  std::string output_dir;
  std::string channel;
  std::string mode;
  int epochs = 0;
  std::size_t threads = 0;
  bool threads_set = false;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("-c,--config", o.config, "JSON pipeline config");
  cmd->add_option("--data-dir", o.data_dir, "session directory (overrides config)");
  cmd->add_option("--cache-dir", o.cache_dir, "feature cache directory (overrides LBNP_CACHE_DIR and config)");
  cmd->add_option("-o,--out", o.output_dir, "output directory (overrides config)");
}

void add_model_flags(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--channel", o.channel, "PPG or ECG")->check(CLI::IsMember({"PPG", "ECG"}));
  cmd->add_option("--mode", o.mode, "fused, branch1_only or branch2_only")
      ->check(CLI::IsMember({"fused", "branch1_only", "branch2_only"}));
  cmd->add_option("--epochs", o.epochs, "override train.max_epochs")->check(CLI::PositiveNumber);
  cmd->add_option_function<std::size_t>(
      "--threads",
      [&o](const std::size_t& n) {
        o.threads = n;
        o.threads_set = true;
      },
      "gradient worker threads, 0 = all cores (results are identical)");
}

PipelineConfig resolve(const CommonOptions& o) {
  PipelineConfig c = o.config.empty() ? PipelineConfig{} : PipelineConfig::load(o.config);
  if (!o.data_dir.empty()) c.data_dir = o.data_dir;
  if (!o.cache_dir.empty()) {
    c.cache_dir = o.cache_dir;
  } else if (const char* env = std::getenv("LBNP_CACHE_DIR"); env && *env) {
    c.cache_dir = env;
  }
  if (!o.output_dir.empty()) c.output_dir = o.output_dir;
  if (!o.channel.empty()) c.channel = channel_from_string(o.channel);
  if (!o.mode.empty()) c.mode = model_mode_from_string(o.mode);
  if (o.epochs > 0) c.train.max_epochs = o.epochs;
  if (o.threads_set) c.train.threads = o.threads;
  c.validate();
  return c;
}

std::string out_path(const PipelineConfig& c, const std::string& name) { return (fs::path(c.output_dir) / name).string(); }

void log(const std::string& msg) { std::cerr << msg << '\n'; }

std::vector<Session> load_sessions(const PipelineConfig& c, const std::vector<std::string>& subjects = {}) {
  if (!fs::is_directory(c.data_dir)) throw DataError("data directory " + c.data_dir + " does not exist");
  const std::set<std::string> keep(subjects.begin(), subjects.end());
  std::vector<Session> out;
  for (const auto& m : find_manifests(c.data_dir)) {
    Session s = read_session(m);
    if (keep.empty() || keep.count(s.subject_id)) out.push_back(std::move(s));
  }
  if (out.empty()) throw DataError("no sessions found under " + c.data_dir);
  return out;
}

std::string csv_header(const PipelineConfig& c) { return "# config_hash: " + c.hash() + "\n"; }

std::string num(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

// ---------------------------------------------------------------- synth
int cmd_synth(const CommonOptions& o, std::optional<std::uint64_t> seed, int subjects, int trials) {
  PipelineConfig c = resolve(o);
  if (seed) c.synth.seed = *seed;
  if (subjects > 0) c.synth.n_subjects = subjects;
  if (trials > 0) c.synth.trials_per_subject = trials;
  c.synth.validate();
  const auto dirs = write_synth_dataset(c.synth, c.data_dir);
  std::cout << "wrote " << dirs.size() << " sessions (" << c.synth.n_subjects << " subjects x "
            << c.synth.trials_per_subject << " trials) to " << c.data_dir << '\n';
  return 0;
}

// ---------------------------------------------------------------- ingest
int cmd_ingest(const CommonOptions& o, const std::vector<std::string>& manifests) {
  const PipelineConfig c = resolve(o);
  for (const auto& m : manifests) {
    Session s = read_session(m);
    s.validate();
    const auto dir = (fs::path(c.data_dir) / (s.subject_id + "_" + s.trial_id)).string();
    write_session(s, dir);
    std::cout << "ingested " << s.key() << " (" << s.channels.size() << " channels) -> " << dir << '\n';
  }
  return 0;
}

// ---------------------------------------------------------------- label
int cmd_label(const CommonOptions& o) {
  const PipelineConfig c = resolve(o);
  const auto sessions = load_sessions(c);
  LabelStore store(c.labeling);
  std::ostringstream csv;
  csv << csv_header(c) << "subject_id,trial_id,channel,start_index,start_time_s,midpoint_s,lbnp_level_mmHg,class\n";
  json diag = json::array();
  std::array<std::size_t, kNumClasses> counts{};
  for (const auto& s : sessions) {
    if (!s.has(Channel::LBNP_REF)) throw DataError("session " + s.key() + " has no LBNP_REF channel");
    const auto& steps = store.steps(s);
    const auto& cp = store.changepoints(s);
    const auto labeled = label_segments(steps, segment(s, c.channel, c.segmentation, SegmentMode::Train));
    for (const auto& ls : labeled) {
      const auto& seg = ls.segment;
      csv << seg.subject_id << ',' << seg.trial_id << ',' << to_string(seg.channel) << ',' << seg.start_index << ','
          << num(seg.start_time_s) << ',' << num(static_cast<double>(seg.midpoint_index()) / seg.sample_rate_hz)
          << ',' << num(ls.lbnp_level_mmHg) << ',' << class_number(ls.label) << '\n';
      ++counts[static_cast<std::size_t>(class_index(ls.label))];
    }
    std::vector<double> bp_s, levels;
    for (auto b : cp.breakpoints) bp_s.push_back(static_cast<double>(b) / s.sample_rate_hz);
    for (double m : cp.interval_means) levels.push_back(snap_level(m));
    diag.push_back({{"session", s.key()},
                    {"n_changepoints", s.n_changepoints},
                    {"breakpoints_s", bp_s},
                    {"interval_means_mmHg", cp.interval_means},
                    {"levels_mmHg", levels},
                    {"cost", cp.cost}});
  }
  write_file_atomic(out_path(c, "labels.csv"), csv.str());
  write_file_atomic(out_path(c, "changepoints.json"),
                    json{{"config_hash", c.hash()}, {"sessions", diag}}.dump(2) + "\n");
  std::cout << "labeled " << sessions.size() << " sessions: class counts " << counts[0] << '/' << counts[1] << '/'
            << counts[2] << " -> " << out_path(c, "labels.csv") << '\n';
  return 0;
}

// ---------------------------------------------------------------- featurize
int cmd_featurize(const CommonOptions& o, bool classical) {
  PipelineConfig c = resolve(o);
  if (c.cache_dir.empty()) c.cache_dir = out_path(c, "cache");
  const auto sessions = load_sessions(c);
  FeatureCache cache(c.cache_dir);
  LabelStore store(c.labeling);
  std::ostringstream idx;
  idx << csv_header(c) << "subject_id,trial_id,start_index,class,cache_key,mean_if_hz,mean_se\n";
  std::ostringstream cls;
  std::vector<std::string> names;
  std::size_t n = 0, skipped = 0;
  for (const auto& s : sessions) {
    const auto labeled = label_segments(store.steps(s), segment(s, c.channel, c.segmentation, SegmentMode::Train));
    for (const auto& ls : labeled) {
      const auto& tf = cache.get(ls.segment, c.features);
      double mif = 0.0, mse = 0.0;
      for (std::size_t t = 0; t < tf.inst_freq_hz.size(); ++t) {
        mif += tf.inst_freq_hz[t];
        mse += tf.spectral_entropy[t];
      }
      mif /= static_cast<double>(tf.inst_freq_hz.size());
      mse /= static_cast<double>(tf.spectral_entropy.size());
      idx << s.subject_id << ',' << s.trial_id << ',' << ls.segment.start_index << ',' << class_number(ls.label) << ','
          << FeatureCache::key(ls.segment, c.features) << ',' << num(mif) << ',' << num(mse) << '\n';
      ++n;
      if (!classical) continue;
      FeatureVector fv;
      try {
        fv = classical_features(ls.segment);
      } catch (const DataError& e) {
        ++skipped;
        log("skip " + s.key() + " @" + std::to_string(ls.segment.start_index) + ": " + e.what());
        continue;
      }
      if (names.empty()) {
        names = fv.names;
        cls << csv_header(c) << "subject_id,trial_id,start_index,class";
        for (const auto& nm : names) cls << ',' << nm;
        cls << '\n';
      }
      if (fv.names != names) throw DataError("classical feature set changed between segments");
      cls << s.subject_id << ',' << s.trial_id << ',' << ls.segment.start_index << ',' << class_number(ls.label);
      for (double v : fv.values) cls << ',' << num(v);
      cls << '\n';
    }
  }
  write_file_atomic(out_path(c, "features_index.csv"), idx.str());
  if (classical) write_file_atomic(out_path(c, "classical_features.csv"), cls.str());
  std::cout << "featurized " << n << " segments (" << cache.misses() << " computed, " << cache.hits()
            << " cached) into " << c.cache_dir;
  if (classical) std::cout << "; classical features for " << n - skipped << " segments";
  std::cout << '\n';
  return 0;
}

// ---------------------------------------------------------------- train
int cmd_train(const CommonOptions& o, const std::vector<std::string>& subjects) {
  const PipelineConfig c = resolve(o);
  const auto sessions = load_sessions(c, subjects);
  FeatureCache cache(c.cache_dir);
  LabelStore store(c.labeling);
  const auto data = build_samples(sessions, c, SegmentMode::Train, store, cache);
  std::vector<Sample> samples;
  for (const auto& d : data) samples.push_back(d.sample);
  FusionModel model(c.mode, c.model_seed,
                    {c.features.spectrogram.frame_count, c.features.spectrogram.window_len / 2 + 1});
  log("training " + to_string(c.mode) + " on " + std::to_string(samples.size()) + " segments");
  const TrainResult r = train(model, samples, c.train, [&](const EpochLog& e) {
    log("epoch " + std::to_string(e.epoch + 1) + "/" + std::to_string(c.train.max_epochs) + " loss " +
        std::to_string(e.mean_loss) + " acc " + std::to_string(e.train_accuracy));
  });
  write_file_atomic(out_path(c, "model.ckpt"), encode_checkpoint(model, c.features.descriptor()));
  write_file_atomic(out_path(c, "training_log.csv"), training_log_csv(r));
  if (r.clamp_warnings) log(std::to_string(r.clamp_warnings) + " probability clamp warnings");
  std::cout << "trained " << to_string(c.mode) << " model; final train accuracy "
            << r.history.back().train_accuracy << " -> " << out_path(c, "model.ckpt") << '\n';
  return 0;
}

// ---------------------------------------------------------------- evaluate
int cmd_evaluate(const CommonOptions& o, const std::string& checkpoint, const std::vector<std::string>& subjects) {
  const PipelineConfig c = resolve(o);
  std::string descriptor;
  const FusionModel model = decode_checkpoint(read_file(checkpoint), &descriptor);
  if (descriptor != c.features.descriptor())
    throw DataError("checkpoint was trained on features '" + descriptor + "' but the config gives '" +
                    c.features.descriptor() + "'");
  const auto sessions = load_sessions(c, subjects);
  FeatureCache cache(c.cache_dir);
  LabelStore store(c.labeling);
  const auto data = build_samples(sessions, c, SegmentMode::Test, store, cache);
  std::vector<ClassScores> scores;
  std::vector<int> preds, truth;
  std::ostringstream pcsv;
  pcsv << csv_header(c) << "subject_id,trial_id,start_index,class,predicted,p1,p2,p3\n";
  for (const auto& d : data) {
    const Prediction p = model.forward(d.sample.features);
    scores.push_back(p.probs);
    preds.push_back(p.predicted);
    truth.push_back(class_index(d.sample.label));
    pcsv << d.subject_id << ',' << d.trial_id << ',' << d.start_index << ',' << class_number(d.sample.label) << ','
         << p.predicted + 1 << ',' << num(p.probs[0]) << ',' << num(p.probs[1]) << ',' << num(p.probs[2]) << '\n';
  }
  EvalReport rep;
  rep.mode = to_string(model.mode());
  rep.channel = to_string(c.channel);
  rep.config_hash = c.hash();
  FoldResult f;
  f.test_subjects = session_subjects(sessions);
  f.test_counts = class_counts(data);
  f.report = classification_report(preds, truth);
  f.auroc = auroc_ovr(scores, truth);
  f.auprc = auprc_ovr(scores, truth);
  f.summary = summarize(f.report, f.auroc, f.auprc);
  f.checkpoint = fs::path(checkpoint).filename().string();
  rep.folds.push_back(f);
  rep.mean = f.summary;
  write_file_atomic(out_path(c, "evaluation.json"), report_to_json(rep));
  write_file_atomic(out_path(c, "predictions.csv"), pcsv.str());
  std::cout << "evaluated " << data.size() << " segments: AUROC " << f.summary.auroc << ", AUPRC "
            << f.summary.auprc << ", macro-F1 " << f.summary.macro_f1 << '\n';
  return 0;
}

// ---------------------------------------------------------------- run-cv
int cmd_run_cv(const CommonOptions& o) {
  const PipelineConfig c = resolve(o);
  const auto sessions = load_sessions(c);
  const FoldPlan plan = make_folds(session_subjects(sessions), c.folds, c.fold_seed);
  FeatureCache cache(c.cache_dir);
  std::vector<FoldArtifacts> artifacts;
  const EvalReport rep = run_cv(sessions, plan, c, cache, &artifacts, log);
  write_file_atomic(out_path(c, "config.json"), c.to_json());
  for (std::size_t f = 0; f < artifacts.size(); ++f) {
    write_file_atomic(out_path(c, rep.folds[f].checkpoint), artifacts[f].checkpoint);
    write_file_atomic(out_path(c, "fold" + std::to_string(f) + "_training_log.csv"),
                      training_log_csv(artifacts[f].training));
  }
  write_file_atomic(out_path(c, "report.json"), report_to_json(rep));
  write_file_atomic(out_path(c, "curves.csv"), curves_csv(rep));
  write_file_atomic(out_path(c, "segment_counts.csv"), segment_counts_csv(rep));
  std::cout << to_string(c.mode) << " " << c.folds << "-fold CV: mean AUROC " << rep.mean.auroc << ", AUPRC "
            << rep.mean.auprc << ", macro-F1 " << rep.mean.macro_f1 << " -> " << out_path(c, "report.json") << '\n';
  return 0;
}

// ---------------------------------------------------------------- report
int cmd_report(const std::vector<std::string>& reports) {
  std::cout << std::left << std::setw(14) << "mode" << std::setw(8) << "folds" << std::right << std::setw(9)
            << "AUROC" << std::setw(9) << "AUPRC" << std::setw(9) << "F1%" << std::setw(9) << "Sens%"
            << std::setw(9) << "Spec%" << '\n';
  for (const auto& path : reports) {
    json j;
    try {
      j = json::parse(read_file(path));
      const auto& m = j.at("mean");
      std::cout << std::left << std::setw(14) << j.at("metadata").at("mode").get<std::string>() << std::setw(8)
                << j.at("folds").size() << std::right << std::fixed << std::setprecision(4) << std::setw(9)
                << m.at("auroc").get<double>() << std::setw(9) << m.at("auprc").get<double>() << std::setprecision(2)
                << std::setw(9) << 100.0 * m.at("macro_f1").get<double>() << std::setw(9)
                << 100.0 * m.at("macro_sensitivity").get<double>() << std::setw(9)
                << 100.0 * m.at("macro_specificity").get<double>() << '\n';
    } catch (const json::exception& e) {
      throw DataError(path + ": not a report file (" + e.what() + ")");
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hemorrhage-severity classification pipeline for LBNP sessions"};
  app.require_subcommand(1);
  CommonOptions o;

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset into the data directory");
  add_common(synth, o);
  std::optional<std::uint64_t> seed;
  int n_subjects = 0, n_trials = 0;
  synth->add_option("--seed", seed, "generator seed");
  synth->add_option("--subjects", n_subjects, "number of subjects")->check(CLI::PositiveNumber);
  synth->add_option("--trials", n_trials, "trials per subject")->check(CLI::PositiveNumber);

  auto* ingest = app.add_subcommand("ingest", "validate session manifests and copy them into the data directory");
  add_common(ingest, o);
  std::vector<std::string> manifests;
  ingest->add_option("manifests", manifests, "manifest.json files")->required()->check(CLI::ExistingFile);

  auto* label = app.add_subcommand("label", "annotate segments from the LBNP reference trace");
  add_common(label, o);
  label->add_option("--channel", o.channel, "PPG or ECG")->check(CLI::IsMember({"PPG", "ECG"}));

  auto* featurize = app.add_subcommand("featurize", "compute and cache time-frequency features");
  add_common(featurize, o);
  featurize->add_option("--channel", o.channel, "PPG or ECG")->check(CLI::IsMember({"PPG", "ECG"}));
  bool classical = false;
  featurize->add_flag("--classical", classical, "also export baseline handcrafted features as CSV");

  auto* trn = app.add_subcommand("train", "train one model on the selected subjects");
  add_common(trn, o);
  add_model_flags(trn, o);
  std::vector<std::string> train_subjects;
  trn->add_option("--subjects", train_subjects, "restrict to these subject ids");

  auto* evaluate = app.add_subcommand("evaluate", "score a checkpoint on the selected subjects");
  add_common(evaluate, o);
  evaluate->add_option("--channel", o.channel, "PPG or ECG")->check(CLI::IsMember({"PPG", "ECG"}));
  std::string checkpoint;
  std::vector<std::string> eval_subjects;
  evaluate->add_option("--checkpoint", checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
  evaluate->add_option("--subjects", eval_subjects, "restrict to these subject ids");

  auto* runcv = app.add_subcommand("run-cv", "subject-stratified cross-validation");
  add_common(runcv, o);
  add_model_flags(runcv, o);

  auto* report = app.add_subcommand("report", "summarize one or more report.json files");
  std::vector<std::string> reports;
  report->add_option("reports", reports, "report.json files")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*synth) return cmd_synth(o, seed, n_subjects, n_trials);
    if (*ingest) return cmd_ingest(o, manifests);
    if (*label) return cmd_label(o);
    if (*featurize) return cmd_featurize(o, classical);
    if (*trn) return cmd_train(o, train_subjects);
    if (*evaluate) return cmd_evaluate(o, checkpoint, eval_subjects);
    if (*runcv) return cmd_run_cv(o);
    if (*report) return cmd_report(reports);
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return 3;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 2;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
