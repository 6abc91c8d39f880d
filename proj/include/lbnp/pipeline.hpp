#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lbnp/annotation.hpp"
#include "lbnp/classical.hpp"
#include "lbnp/evaluation.hpp"
#include "lbnp/model.hpp"
#include "lbnp/synthgen.hpp"
#include "lbnp/tf_features.hpp"
#include "lbnp/waveform.hpp"

namespace lbnp {

// Everything a run needs, read from a JSON document. Unknown keys are
// rejected so typos do not silently fall back to defaults.
struct PipelineConfig {
  std::string data_dir = "data";
  std::string cache_dir;  // empty: in-memory cache only
  std::string output_dir = "out";

  SegmentationParams segmentation;
  TFParams features;
  LabelingParams labeling;
  TrainConfig train;
  SynthConfig synth;

  int folds = 3;
  std::uint64_t fold_seed = 1;
  Channel channel = Channel::PPG;
  ModelMode mode = ModelMode::Fused;
  std::uint64_t model_seed = 1;

  void validate() const;

  // Canonical JSON (sorted keys). `include_paths` = false drops the three
  // directories and the thread count, none of which affect results; that
  // form is hashed for provenance.
  std::string to_json(bool include_paths = true) const;
  static PipelineConfig from_json(const std::string& text);
  static PipelineConfig load(const std::string& path);

  // Hex FNV-1a of the path-free canonical JSON.
  std::string hash() const;
};

// TF features keyed by segment provenance plus the featurization descriptor.
// With a directory, entries are also persisted as one binary file per key.
class FeatureCache {
 public:
  explicit FeatureCache(std::string dir = {}) : dir_(std::move(dir)) {}

  static std::string key(const Segment& seg, const TFParams& params);

  const TFFeatures& get(const Segment& seg, const TFParams& params);

  std::size_t hits() const { return hits_; }
  std::size_t misses() const { return misses_; }

 private:
  std::string dir_;
  std::map<std::string, TFFeatures> mem_;
  std::size_t hits_ = 0, misses_ = 0;
};

struct LabeledSample {
  std::string subject_id;
  std::string trial_id;
  std::size_t start_index = 0;
  double lbnp_level_mmHg = 0.0;
  Sample sample;
};

// Step targets for every session, computed once and reused across folds.
class LabelStore {
 public:
  explicit LabelStore(LabelingParams params = {}) : params_(params) {}
  const std::vector<double>& steps(const Session& s);
  const ChangepointResult& changepoints(const Session& s);

 private:
  LabelingParams params_;
  std::map<std::string, std::vector<double>> steps_;
  std::map<std::string, ChangepointResult> cps_;
};

// Segments, labels and featurizes the given channel of each session.
std::vector<LabeledSample> build_samples(const std::vector<Session>& sessions, const PipelineConfig& cfg,
                                         SegmentMode mode, LabelStore& labels, FeatureCache& cache);

std::array<std::size_t, kNumClasses> class_counts(const std::vector<LabeledSample>& samples);

struct FoldArtifacts {
  std::string checkpoint;  // encoded checkpoint bytes
  TrainResult training;
};

using ProgressFn = std::function<void(const std::string&)>;

// Subject-stratified cross-validation. Throws DataError on an empty fold or
// a failed leakage audit.
EvalReport run_cv(const std::vector<Session>& sessions, const FoldPlan& plan, const PipelineConfig& cfg,
                  FeatureCache& cache, std::vector<FoldArtifacts>* artifacts = nullptr,
                  const ProgressFn& progress = {});

// Distinct subject ids in `sessions`, sorted.
std::vector<std::string> session_subjects(const std::vector<Session>& sessions);

// Baseline handcrafted features for one segment of a session: beat-interval
// statistics from the segment's channel, AR coefficients, and (for PPG)
// pulse fiducials.
FeatureVector classical_features(const Segment& seg);

}  // namespace lbnp
