#include "lbnp/pipeline.hpp"

#include <algorithm>
#include <filesystem>
#include <set>

#include "json.hpp"
#include "lbnp/common.hpp"

namespace lbnp {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

using Setter = std::function<void(const json&)>;

void apply_section(const json& obj, const std::string& section, const std::map<std::string, Setter>& setters) {
  if (!obj.is_object()) throw DataError("config: '" + section + "' must be an object");
  for (const auto& [k, v] : obj.items()) {
    auto it = setters.find(k);
    if (it == setters.end()) throw DataError("config: unknown key '" + section + "." + k + "'");
    try {
      it->second(v);
    } catch (const json::exception& e) {
      throw DataError("config: bad value for '" + section + "." + k + "': " + e.what());
    }
  }
}

template <class T>
Setter set(T& field) {
  return [&field](const json& v) { field = v.get<T>(); };
}

std::string window_name(WindowKind w) { return w == WindowKind::Hann ? "hann" : "rectangular"; }

WindowKind window_from_name(const std::string& s) {
  if (s == "hann") return WindowKind::Hann;
  if (s == "rectangular") return WindowKind::Rectangular;
  throw DataError("config: unknown window '" + s + "'");
}

json to_json_obj(const PipelineConfig& c, bool include_paths) {
  json j;
  if (include_paths)
    j["paths"] = {{"data_dir", c.data_dir}, {"cache_dir", c.cache_dir}, {"output_dir", c.output_dir}};
  j["segmentation"] = {{"window_s", c.segmentation.window_s}, {"overlap_s", c.segmentation.overlap_s}};
  j["features"] = {{"window_len", c.features.spectrogram.window_len},
                   {"frame_count", c.features.spectrogram.frame_count},
                   {"window", window_name(c.features.spectrogram.window)},
                   {"normalize_entropy", c.features.normalize_entropy},
                   {"log_floor_relative", c.features.log_floor_relative}};
  j["labeling"] = {{"changepoint_rate_hz", c.labeling.changepoint_rate_hz}};
  const auto& t = c.train;
  j["train"] = {{"l2", t.l2},
                {"batch_size", t.batch_size},
                {"lr0", t.lr0},
                {"lr_drop_factor", t.lr_drop_factor},
                {"lr_drop_period", t.lr_drop_period},
                {"max_epochs", t.max_epochs},
                {"momentum", t.momentum},
                {"class_weighting", t.class_weighting},
                {"seed", t.seed},
                {"precision", to_string(t.precision)}};
  if (include_paths) j["train"]["threads"] = t.threads;
  j["folds"] = {{"k", c.folds}, {"seed", c.fold_seed}};
  j["model"] = {{"mode", to_string(c.mode)}, {"seed", c.model_seed}};
  j["channel"] = to_string(c.channel);
  const auto& s = c.synth;
  j["synth"] = {{"seed", s.seed},
                {"n_subjects", s.n_subjects},
                {"trials_per_subject", s.trials_per_subject},
                {"levels_per_trial", s.levels_per_trial},
                {"dwell_min_s", s.dwell_min_s},
                {"dwell_max_s", s.dwell_max_s},
                {"sample_rate_hz", s.sample_rate_hz},
                {"baseline_hr_min_bpm", s.baseline_hr_min_bpm},
                {"baseline_hr_max_bpm", s.baseline_hr_max_bpm},
                {"hr_rise_per_step_bpm", s.hr_rise_per_step_bpm},
                {"amplitude_per_step", s.amplitude_per_step},
                {"snr_db", s.snr_db},
                {"lbnp_noise_mmHg", s.lbnp_noise_mmHg},
                {"ppg_rise_s", s.ppg_rise_s},
                {"ppg_systolic_width_s", s.ppg_systolic_width_s},
                {"ppg_diastolic_delay_s", s.ppg_diastolic_delay_s},
                {"ppg_diastolic_width_s", s.ppg_diastolic_width_s},
                {"ppg_diastolic_ratio", s.ppg_diastolic_ratio},
                {"ppg_runoff_ratio", s.ppg_runoff_ratio},
                {"ppg_runoff_tau_s", s.ppg_runoff_tau_s},
                {"ecg_r_width_s", s.ecg_r_width_s}};
  return j;
}

}  // namespace

void PipelineConfig::validate() const {
  if (segmentation.window_s <= 0.0) throw DataError("config: segmentation.window_s must be positive");
  if (segmentation.overlap_s < 0.0 || segmentation.overlap_s >= segmentation.window_s)
    throw DataError("config: segmentation.overlap_s must be in [0, window_s)");
  if (features.spectrogram.window_len < 2 || features.spectrogram.frame_count < 1)
    throw DataError("config: invalid spectrogram parameters");
  if (!(features.log_floor_relative > 0.0)) throw DataError("config: features.log_floor_relative must be positive");
  if (!(labeling.changepoint_rate_hz > 0.0)) throw DataError("config: labeling.changepoint_rate_hz must be positive");
  if (folds < 2) throw DataError("config: folds.k must be at least 2");
  if (channel == Channel::LBNP_REF) throw DataError("config: channel must be PPG or ECG");
  train.validate();
  synth.validate();
}

std::string PipelineConfig::to_json(bool include_paths) const { return to_json_obj(*this, include_paths).dump(2) + "\n"; }

PipelineConfig PipelineConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw DataError(std::string("config: parse error: ") + e.what());
  }
  PipelineConfig c;
  std::string mode, channel, precision, window = window_name(c.features.spectrogram.window);
  std::map<std::string, Setter> top;
  top["paths"] = [&](const json& v) {
    apply_section(v, "paths", {{"data_dir", set(c.data_dir)}, {"cache_dir", set(c.cache_dir)}, {"output_dir", set(c.output_dir)}});
  };
  top["segmentation"] = [&](const json& v) {
    apply_section(v, "segmentation",
                  {{"window_s", set(c.segmentation.window_s)}, {"overlap_s", set(c.segmentation.overlap_s)}});
  };
  top["features"] = [&](const json& v) {
    apply_section(v, "features",
                  {{"window_len", set(c.features.spectrogram.window_len)},
                   {"frame_count", set(c.features.spectrogram.frame_count)},
                   {"window", set(window)},
                   {"normalize_entropy", set(c.features.normalize_entropy)},
                   {"log_floor_relative", set(c.features.log_floor_relative)}});
  };
  top["labeling"] = [&](const json& v) {
    apply_section(v, "labeling", {{"changepoint_rate_hz", set(c.labeling.changepoint_rate_hz)}});
  };
  top["train"] = [&](const json& v) {
    auto& t = c.train;
    apply_section(v, "train",
                  {{"l2", set(t.l2)},
                   {"batch_size", set(t.batch_size)},
                   {"lr0", set(t.lr0)},
                   {"lr_drop_factor", set(t.lr_drop_factor)},
                   {"lr_drop_period", set(t.lr_drop_period)},
                   {"max_epochs", set(t.max_epochs)},
                   {"momentum", set(t.momentum)},
                   {"class_weighting", set(t.class_weighting)},
                   {"seed", set(t.seed)},
                   {"precision", set(precision)},
                   {"threads", set(t.threads)}});
  };
  top["folds"] = [&](const json& v) { apply_section(v, "folds", {{"k", set(c.folds)}, {"seed", set(c.fold_seed)}}); };
  top["model"] = [&](const json& v) { apply_section(v, "model", {{"mode", set(mode)}, {"seed", set(c.model_seed)}}); };
  top["channel"] = set(channel);
  top["synth"] = [&](const json& v) {
    auto& s = c.synth;
    apply_section(v, "synth",
                  {{"seed", set(s.seed)},
                   {"n_subjects", set(s.n_subjects)},
                   {"trials_per_subject", set(s.trials_per_subject)},
                   {"levels_per_trial", set(s.levels_per_trial)},
                   {"dwell_min_s", set(s.dwell_min_s)},
                   {"dwell_max_s", set(s.dwell_max_s)},
                   {"sample_rate_hz", set(s.sample_rate_hz)},
                   {"baseline_hr_min_bpm", set(s.baseline_hr_min_bpm)},
                   {"baseline_hr_max_bpm", set(s.baseline_hr_max_bpm)},
                   {"hr_rise_per_step_bpm", set(s.hr_rise_per_step_bpm)},
                   {"amplitude_per_step", set(s.amplitude_per_step)},
                   {"snr_db", set(s.snr_db)},
                   {"lbnp_noise_mmHg", set(s.lbnp_noise_mmHg)},
                   {"ppg_rise_s", set(s.ppg_rise_s)},
                   {"ppg_systolic_width_s", set(s.ppg_systolic_width_s)},
                   {"ppg_diastolic_delay_s", set(s.ppg_diastolic_delay_s)},
                   {"ppg_diastolic_width_s", set(s.ppg_diastolic_width_s)},
                   {"ppg_diastolic_ratio", set(s.ppg_diastolic_ratio)},
                   {"ppg_runoff_ratio", set(s.ppg_runoff_ratio)},
                   {"ppg_runoff_tau_s", set(s.ppg_runoff_tau_s)},
                   {"ecg_r_width_s", set(s.ecg_r_width_s)}});
  };
  apply_section(j, "config", top);
  c.features.spectrogram.window = window_from_name(window);
  if (!precision.empty()) c.train.precision = precision_from_string(precision);
  if (!mode.empty()) c.mode = model_mode_from_string(mode);
  if (!channel.empty()) c.channel = channel_from_string(channel);
  c.validate();
  return c;
}

PipelineConfig PipelineConfig::load(const std::string& path) {
  try {
    return from_json(read_file(path));
  } catch (const DataError& e) {
    throw DataError(path + ": " + e.what());
  }
}

std::string PipelineConfig::hash() const { return hex64(fnv1a64(to_json(false))); }

std::string FeatureCache::key(const Segment& seg, const TFParams& params) {
  const std::string prov = seg.subject_id + "|" + seg.trial_id + "|" + to_string(seg.channel) + "|" +
                           std::to_string(seg.start_index) + "|" + std::to_string(seg.samples.size()) + "|" +
                           std::to_string(seg.sample_rate_hz);
  return hex64(fnv1a64(prov + "#" + params.descriptor()));
}

const TFFeatures& FeatureCache::get(const Segment& seg, const TFParams& params) {
  const std::string k = key(seg, params);
  if (auto it = mem_.find(k); it != mem_.end()) {
    ++hits_;
    return it->second;
  }
  if (!dir_.empty()) {
    const fs::path p = fs::path(dir_) / (k + ".tff");
    if (fs::exists(p)) {
      try {
        auto [it, ok] = mem_.emplace(k, decode_features(read_file(p.string())));
        ++hits_;
        return it->second;
      } catch (const DataError&) {
        // Corrupt entry: recompute and overwrite below.
      }
    }
  }
  ++misses_;
  auto [it, ok] = mem_.emplace(k, featurize(seg, params));
  if (!dir_.empty()) {
    fs::create_directories(dir_);
    write_file_atomic((fs::path(dir_) / (k + ".tff")).string(), encode_features(it->second));
  }
  return it->second;
}

const std::vector<double>& LabelStore::steps(const Session& s) {
  const std::string k = s.key();
  if (auto it = steps_.find(k); it != steps_.end()) return it->second;
  ChangepointResult cp;
  auto st = session_step_targets(s, params_, &cp);
  cps_[k] = std::move(cp);
  return steps_.emplace(k, std::move(st)).first->second;
}

const ChangepointResult& LabelStore::changepoints(const Session& s) {
  steps(s);
  return cps_.at(s.key());
}

std::vector<LabeledSample> build_samples(const std::vector<Session>& sessions, const PipelineConfig& cfg,
                                         SegmentMode mode, LabelStore& labels, FeatureCache& cache) {
  std::vector<LabeledSample> out;
  for (const auto& s : sessions) {
    const auto& steps = labels.steps(s);
    auto labeled = label_segments(steps, segment(s, cfg.channel, cfg.segmentation, mode));
    for (auto& ls : labeled) {
      LabeledSample x;
      x.subject_id = ls.segment.subject_id;
      x.trial_id = ls.segment.trial_id;
      x.start_index = ls.segment.start_index;
      x.lbnp_level_mmHg = ls.lbnp_level_mmHg;
      x.sample.label = ls.label;
      x.sample.features = cache.get(ls.segment, cfg.features);
      out.push_back(std::move(x));
    }
  }
  return out;
}

std::array<std::size_t, kNumClasses> class_counts(const std::vector<LabeledSample>& samples) {
  std::array<std::size_t, kNumClasses> n{};
  for (const auto& s : samples) ++n[static_cast<std::size_t>(class_index(s.sample.label))];
  return n;
}

std::vector<std::string> session_subjects(const std::vector<Session>& sessions) {
  std::set<std::string> ids;
  for (const auto& s : sessions) ids.insert(s.subject_id);
  return {ids.begin(), ids.end()};
}

EvalReport run_cv(const std::vector<Session>& sessions, const FoldPlan& plan, const PipelineConfig& cfg,
                  FeatureCache& cache, std::vector<FoldArtifacts>* artifacts, const ProgressFn& progress) {
  cfg.validate();
  for (const auto& subj : session_subjects(sessions))
    if (!plan.fold_of.count(subj)) throw DataError("subject " + subj + " is missing from the fold plan");

  const auto plan_audit = audit_leakage(plan);
  if (!plan_audit.passed) throw DataError("leakage audit failed: " + plan_audit.violations.front());

  EvalReport report;
  report.mode = to_string(cfg.mode);
  report.channel = to_string(cfg.channel);
  report.config_hash = cfg.hash();
  report.fold_seed = plan.seed;

  LabelStore labels(cfg.labeling);
  std::vector<std::vector<std::string>> train_ids, test_ids;
  if (artifacts) artifacts->clear();

  for (int f = 0; f < plan.k; ++f) {
    FoldResult fr;
    fr.fold = f;
    fr.train_subjects = plan.train_subjects(f);
    fr.test_subjects = plan.test_subjects(f);
    const std::set<std::string> test_set(fr.test_subjects.begin(), fr.test_subjects.end());
    std::vector<Session> train_sessions, test_sessions;
    for (const auto& s : sessions) (test_set.count(s.subject_id) ? test_sessions : train_sessions).push_back(s);
    if (train_sessions.empty() || test_sessions.empty())
      throw DataError("fold " + std::to_string(f) + " has no " + (train_sessions.empty() ? "training" : "test") +
                      " sessions");

    const auto train_set = build_samples(train_sessions, cfg, SegmentMode::Train, labels, cache);
    const auto test_samples = build_samples(test_sessions, cfg, SegmentMode::Test, labels, cache);
    if (train_set.empty() || test_samples.empty()) throw DataError("fold " + std::to_string(f) + " produced no segments");

    std::vector<std::string> tr_ids, te_ids;
    for (const auto& s : train_set) tr_ids.push_back(s.subject_id);
    for (const auto& s : test_samples) te_ids.push_back(s.subject_id);
    const auto audit = audit_leakage({tr_ids}, {te_ids});
    if (!audit.passed) throw DataError("leakage audit failed in fold " + std::to_string(f));
    train_ids.push_back(std::move(tr_ids));
    test_ids.push_back(std::move(te_ids));

    fr.train_counts = class_counts(train_set);
    fr.test_counts = class_counts(test_samples);
    if (progress)
      progress("fold " + std::to_string(f) + ": " + std::to_string(train_set.size()) + " train / " +
               std::to_string(test_samples.size()) + " test segments");

    std::vector<Sample> train_samples;
    train_samples.reserve(train_set.size());
    for (const auto& s : train_set) train_samples.push_back(s.sample);

    FusionModel model(cfg.mode, cfg.model_seed, {cfg.features.spectrogram.frame_count,
                                                 cfg.features.spectrogram.window_len / 2 + 1});
    EpochCallback on_epoch;
    if (progress)
      on_epoch = [&](const EpochLog& e) {
        if ((e.epoch + 1) % 10 == 0 || e.epoch + 1 == cfg.train.max_epochs)
          progress("fold " + std::to_string(f) + " epoch " + std::to_string(e.epoch + 1) + ": loss " +
                   std::to_string(e.mean_loss) + ", train acc " + std::to_string(e.train_accuracy));
      };
    TrainResult tr = lbnp::train(model, train_samples, cfg.train, on_epoch);

    std::vector<ClassScores> scores;
    std::vector<int> preds, truth;
    for (const auto& s : test_samples) {
      const Prediction p = model.forward(s.sample.features);
      scores.push_back(p.probs);
      preds.push_back(p.predicted);
      truth.push_back(class_index(s.sample.label));
    }
    fr.report = classification_report(preds, truth);
    fr.auroc = auroc_ovr(scores, truth);
    fr.auprc = auprc_ovr(scores, truth);
    fr.summary = summarize(fr.report, fr.auroc, fr.auprc);
    fr.checkpoint = "fold" + std::to_string(f) + ".ckpt";
    if (progress)
      progress("fold " + std::to_string(f) + ": AUROC " + std::to_string(fr.summary.auroc) + ", macro-F1 " +
               std::to_string(fr.summary.macro_f1));
    if (artifacts) artifacts->push_back({encode_checkpoint(model, cfg.features.descriptor()), std::move(tr)});
    report.folds.push_back(std::move(fr));
  }
  report.leakage_audit_passed = audit_leakage(train_ids, test_ids).passed;
  report.mean = mean_summary(report.folds);
  return report;
}

FeatureVector classical_features(const Segment& seg) {
  FeatureVector out;
  auto merge = [&](const FeatureVector& v, const std::string& prefix) {
    for (std::size_t i = 0; i < v.names.size(); ++i) out.add(prefix + v.names[i], v.values[i]);
    for (const auto& [k, m] : v.metadata) out.metadata[prefix + k] = m;
  };
  if (seg.channel == Channel::ECG) {
    merge(hrv_features(detect_r_peaks(seg)), "hrv_");
  } else if (seg.channel == Channel::PPG) {
    const auto feet = detect_pulse_feet(seg);
    merge(hrv_features(feet), "prv_");
    merge(fiducial_features(seg, feet), "");
  } else {
    throw DataError("classical features need a PPG or ECG segment");
  }
  merge(ar_coefficients(seg), "");
  return out;
}

}  // namespace lbnp
