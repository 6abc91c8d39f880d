#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "lbnp/annotation.hpp"
#include "lbnp/tf_features.hpp"

namespace lbnp {

enum class ModelMode { Fused, Branch1Only, Branch2Only };

std::string to_string(ModelMode m);
ModelMode model_mode_from_string(const std::string& s);

struct InputShape {
  std::size_t frames = 261;
  std::size_t freq_bins = 33;
};

// Named slice of the flat parameter vector.
struct ParamBlock {
  std::string name;
  std::size_t offset = 0;
  std::size_t size = 0;
  bool is_weight = false;  // weights are L2-penalized, biases are not
  int branch = 0;          // 1, 2, or 0 for the fusion head
};

// Per-fold input standardization. Branch 1 uses one mean/std per sequence
// (IF, SE); branch 2 uses one mean/std per frequency bin of the
// log-spectrogram.
struct Normalization {
  std::array<double, 2> seq_mean{0.0, 0.0};
  std::array<double, 2> seq_std{1.0, 1.0};
  std::vector<double> bin_mean;
  std::vector<double> bin_std;
  bool fitted = false;
};

struct Prediction {
  std::array<double, kNumClasses> logits{};
  std::array<double, kNumClasses> probs{};
  int predicted = 0;  // argmax, ties to the lowest index
};

struct Sample {
  TFFeatures features;
  SeverityClass label = SeverityClass::Mild;
};

// Two-branch late-fusion classifier.
//   branch 1: [IF, SE] (2 x frames) -> conv1d k5 x16 -> ReLU -> conv1d k5 x32
//             -> ReLU -> global average pool (32)
//   branch 2: log-spectrogram (1 x bins x frames) -> conv3x3 x8 -> ReLU ->
//             maxpool 2x2 -> conv3x3 x16 -> ReLU -> maxpool 2x2 -> global
//             average pool (16)
//   head:     concat (48) -> dense 32 -> ReLU -> dense 3 -> softmax
// Convolutions use zero "same" padding and stride 1. In the single-branch
// modes the missing embedding is replaced by zeros so the head keeps its
// width.
class FusionModel {
 public:
  static constexpr std::size_t kB1Conv1 = 16, kB1Conv2 = 32, kB1Kernel = 5;
  static constexpr std::size_t kB2Conv1 = 8, kB2Conv2 = 16;
  static constexpr std::size_t kHidden = 32;
  static constexpr std::size_t kEmbed = kB1Conv2 + kB2Conv2;

  FusionModel(ModelMode mode, std::uint64_t seed, InputShape shape = {});

  ModelMode mode() const { return mode_; }
  std::uint64_t seed() const { return seed_; }
  const InputShape& shape() const { return shape_; }

  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }
  const std::vector<ParamBlock>& blocks() const { return blocks_; }
  const ParamBlock& block(const std::string& name) const;
  std::span<double> view(const std::string& name);
  bool is_active(const ParamBlock& b) const;

  Normalization& normalization() { return norm_; }
  const Normalization& normalization() const { return norm_; }
  void fit_normalization(std::span<const Sample> train);

  // Layer inventory and input shape; hashed into checkpoints.
  std::string architecture_descriptor() const;
  std::uint64_t architecture_hash() const;

  Prediction forward(const TFFeatures& tf) const;

  // Hash of every ReLU sign and max-pool winner for one input. Two parameter
  // vectors with the same pattern lie on the same smooth piece of the loss.
  std::uint64_t activation_pattern(const TFFeatures& tf, Prediction* pred_out = nullptr) const;

  // Gradient of the per-sample data loss (class-weighted cross entropy) with
  // respect to all parameters, accumulated into `grad`. Returns the
  // unweighted data loss.
  double accumulate_gradient(const TFFeatures& tf, SeverityClass label, double weight,
                             std::span<double> grad, Prediction* pred_out = nullptr) const;

  // 0.5 * sum of squared active weights.
  double weight_penalty() const;

  // Throws DataError on a shape mismatch or unfitted normalization.
  void check_input(const TFFeatures& tf) const;

 private:
  ModelMode mode_;
  std::uint64_t seed_;
  InputShape shape_;
  std::vector<double> params_;
  std::vector<ParamBlock> blocks_;
  Normalization norm_;
};

Prediction softmax_prediction(const std::array<double, kNumClasses>& logits);

// Arithmetic used for training gradients. Parameters, checkpoints and
// inference stay in double either way.
enum class Precision { Float64, Float32 };

std::string to_string(Precision p);
Precision precision_from_string(const std::string& s);

struct TrainConfig {
  double l2 = 0.1;
  std::size_t batch_size = 10;
  double lr0 = 0.001;
  double lr_drop_factor = 0.1;
  int lr_drop_period = 20;
  int max_epochs = 80;
  double momentum = 0.0;
  bool class_weighting = false;
  std::uint64_t seed = 1;
  Precision precision = Precision::Float32;
  // Worker threads for per-sample gradients (0: hardware concurrency).
  // Results are identical for any value.
  std::size_t threads = 1;

  void validate() const;
};

// Piecewise schedule: lr0 * drop_factor^floor(epoch / drop_period).
double learning_rate(const TrainConfig& cfg, int epoch);

struct LossResult {
  double data = 0.0;
  double penalty = 0.0;
  double total = 0.0;
  bool clamped = false;  // p_true fell below 1e-12
};

// -log p_true (p clamped at 1e-12) plus l2 * 0.5 * sum w^2.
LossResult loss(const Prediction& pred, SeverityClass label, const FusionModel& model, double l2);

struct BatchGradient {
  std::vector<double> grad;  // d(mean batch loss + l2 penalty)/d(params)
  double data_loss = 0.0;    // mean over the batch
  double penalty = 0.0;      // l2 * 0.5 * sum w^2
  std::size_t correct = 0;
};

BatchGradient backward(const FusionModel& model, std::span<const Sample> batch, const TrainConfig& cfg,
                       std::span<const double> class_weights = {});

struct EpochLog {
  int epoch = 0;
  double lr = 0.0;
  double mean_loss = 0.0;  // mean data loss + penalty, averaged over batches
  double train_accuracy = 0.0;
};

struct TrainResult {
  std::vector<EpochLog> history;
  std::size_t clamp_warnings = 0;
};

using EpochCallback = std::function<void(const EpochLog&)>;

// Fits normalization on `train`, then runs seeded minibatch SGD.
TrainResult train(FusionModel& model, std::span<const Sample> train, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});

std::string training_log_csv(const TrainResult& r);

// Checkpoint file:
//   line 1: "LBNPCKPT 1\n"
//   u64 little-endian: byte length L of the JSON header
//   L bytes: JSON header (mode, seed, architecture descriptor and hash,
//            parameter blocks, normalization, feature descriptor)
//   f64[param_count] little-endian parameters
std::string encode_checkpoint(const FusionModel& model, const std::string& feature_descriptor = TFParams{}.descriptor());
// Throws DataError on a malformed file or an architecture hash mismatch.
FusionModel decode_checkpoint(std::string_view bytes, std::string* feature_descriptor = nullptr);

}  // namespace lbnp
