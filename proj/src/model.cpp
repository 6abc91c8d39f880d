#include "lbnp/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>
#include <exception>

#include "json.hpp"
#include "layers.hpp"

namespace lbnp {

std::string to_string(ModelMode m) {
  switch (m) {
    case ModelMode::Fused: return "fused";
    case ModelMode::Branch1Only: return "branch1_only";
    case ModelMode::Branch2Only: return "branch2_only";
  }
  return "?";
}

std::string to_string(Precision p) { return p == Precision::Float32 ? "float32" : "float64"; }

Precision precision_from_string(const std::string& s) {
  if (s == "float32") return Precision::Float32;
  if (s == "float64") return Precision::Float64;
  throw DataError("unknown precision '" + s + "' (expected float32 or float64)");
}

ModelMode model_mode_from_string(const std::string& s) {
  if (s == "fused") return ModelMode::Fused;
  if (s == "branch1_only") return ModelMode::Branch1Only;
  if (s == "branch2_only") return ModelMode::Branch2Only;
  throw DataError("unknown model mode '" + s + "' (expected fused, branch1_only or branch2_only)");
}

FusionModel::FusionModel(ModelMode mode, std::uint64_t seed, InputShape shape)
    : mode_(mode), seed_(seed), shape_(shape) {
  if (shape_.frames < 4 || shape_.freq_bins < 4) throw DataError("model input shape too small");
  struct Spec {
    const char* name;
    std::size_t size;
    std::size_t fan_in;  // 0 for biases
    int branch;
  };
  const Spec specs[] = {
      {"b1.conv1.w", kB1Conv1 * 2 * kB1Kernel, 2 * kB1Kernel, 1},
      {"b1.conv1.b", kB1Conv1, 0, 1},
      {"b1.conv2.w", kB1Conv2 * kB1Conv1 * kB1Kernel, kB1Conv1 * kB1Kernel, 1},
      {"b1.conv2.b", kB1Conv2, 0, 1},
      {"b2.conv1.w", kB2Conv1 * 1 * 9, 9, 2},
      {"b2.conv1.b", kB2Conv1, 0, 2},
      {"b2.conv2.w", kB2Conv2 * kB2Conv1 * 9, kB2Conv1 * 9, 2},
      {"b2.conv2.b", kB2Conv2, 0, 2},
      {"head.fc1.w", kHidden * kEmbed, kEmbed, 0},
      {"head.fc1.b", kHidden, 0, 0},
      {"head.fc2.w", kNumClasses * kHidden, kHidden, 0},
      {"head.fc2.b", kNumClasses, 0, 0},
  };
  std::size_t off = 0;
  for (const auto& s : specs) {
    blocks_.push_back({s.name, off, s.size, s.fan_in != 0, s.branch});
    off += s.size;
  }
  params_.assign(off, 0.0);

  // Fan-in scaled uniform init (He uniform); biases start at zero.
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < std::size(specs); ++i) {
    if (specs[i].fan_in == 0) continue;
    const double limit = std::sqrt(6.0 / static_cast<double>(specs[i].fan_in));
    std::uniform_real_distribution<double> u(-limit, limit);
    for (std::size_t k = 0; k < blocks_[i].size; ++k) params_[blocks_[i].offset + k] = u(rng);
  }
}

const ParamBlock& FusionModel::block(const std::string& name) const {
  for (const auto& b : blocks_)
    if (b.name == name) return b;
  throw DataError("no parameter block " + name);
}

std::span<double> FusionModel::view(const std::string& name) {
  const auto& b = block(name);
  return {params_.data() + b.offset, b.size};
}

bool FusionModel::is_active(const ParamBlock& b) const {
  if (b.branch == 1) return mode_ != ModelMode::Branch2Only;
  if (b.branch == 2) return mode_ != ModelMode::Branch1Only;
  return true;
}

std::string FusionModel::architecture_descriptor() const {
  std::ostringstream ss;
  ss << "fusion-v1;frames=" << shape_.frames << ";bins=" << shape_.freq_bins << ";b1=conv1d(2," << kB1Conv1 << ",k"
     << kB1Kernel << ")relu,conv1d(" << kB1Conv1 << "," << kB1Conv2 << ",k" << kB1Kernel << ")relu,gap;b2=conv2d(1,"
     << kB2Conv1 << ",3x3)relu,maxpool2,conv2d(" << kB2Conv1 << "," << kB2Conv2 << ",3x3)relu,maxpool2,gap;head=dense("
     << kEmbed << "," << kHidden << ")relu,dense(" << kHidden << "," << kNumClasses << ");params=" << params_.size();
  return ss.str();
}

std::uint64_t FusionModel::architecture_hash() const { return fnv1a64(architecture_descriptor()); }

void FusionModel::check_input(const TFFeatures& tf) const {
  if (tf.inst_freq_hz.size() != shape_.frames || tf.spectral_entropy.size() != shape_.frames ||
      tf.log_spectrogram.rows() != shape_.freq_bins || tf.log_spectrogram.cols() != shape_.frames) {
    std::ostringstream ss;
    ss << "input shape mismatch: expected 2x" << shape_.frames << " and " << shape_.freq_bins << "x" << shape_.frames
       << ", got 2x" << tf.inst_freq_hz.size() << " and " << tf.log_spectrogram.rows() << "x"
       << tf.log_spectrogram.cols();
    throw DataError(ss.str());
  }
  if (!norm_.fitted) throw DataError("model normalization statistics are not fitted");
}

void FusionModel::fit_normalization(std::span<const Sample> train) {
  if (train.empty()) throw DataError("cannot fit normalization on an empty set");
  const std::size_t T = shape_.frames, F = shape_.freq_bins;
  Normalization n;
  n.bin_mean.assign(F, 0.0);
  n.bin_std.assign(F, 0.0);
  std::array<double, 2> s{0, 0}, s2{0, 0};
  std::vector<double> b(F, 0.0), b2(F, 0.0);
  for (const auto& smp : train) {
    const auto& tf = smp.features;
    if (tf.inst_freq_hz.size() != T || tf.log_spectrogram.rows() != F || tf.log_spectrogram.cols() != T)
      throw DataError("input shape mismatch while fitting normalization");
    for (std::size_t t = 0; t < T; ++t) {
      s[0] += tf.inst_freq_hz[t];
      s2[0] += tf.inst_freq_hz[t] * tf.inst_freq_hz[t];
      s[1] += tf.spectral_entropy[t];
      s2[1] += tf.spectral_entropy[t] * tf.spectral_entropy[t];
    }
    for (std::size_t f = 0; f < F; ++f) {
      const double* row = tf.log_spectrogram.row(f);
      for (std::size_t t = 0; t < T; ++t) {
        b[f] += row[t];
        b2[f] += row[t] * row[t];
      }
    }
  }
  auto finish = [](double sum, double sum2, double count, double& mean, double& sd) {
    mean = sum / count;
    const double var = std::max(0.0, sum2 / count - mean * mean);
    sd = std::sqrt(var);
    if (!(sd > 1e-12)) sd = 1.0;
  };
  const double cnt = static_cast<double>(train.size() * T);
  for (int c = 0; c < 2; ++c) finish(s[c], s2[c], cnt, n.seq_mean[c], n.seq_std[c]);
  for (std::size_t f = 0; f < F; ++f) finish(b[f], b2[f], cnt, n.bin_mean[f], n.bin_std[f]);
  n.fitted = true;
  norm_ = std::move(n);
}

Prediction softmax_prediction(const std::array<double, kNumClasses>& logits) {
  Prediction p;
  p.logits = logits;
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (int k = 0; k < kNumClasses; ++k) {
    p.probs[k] = std::exp(logits[k] - mx);
    z += p.probs[k];
  }
  for (auto& v : p.probs) v /= z;
  p.predicted = 0;
  for (int k = 1; k < kNumClasses; ++k)
    if (p.probs[k] > p.probs[p.predicted]) p.predicted = k;
  return p;
}

namespace {

// Forward-pass state kept for backpropagation, in the compute precision T.
template <class S>
struct Activations {
  std::size_t T, F, H1, W1, H2, W2;
  layers::Buffer<S> x1p, a1, r1p, a2;
  layers::Buffer<S> x2p, c1, p1, p1p, c2, p2;
  std::vector<std::size_t> arg1, arg2;
  layers::Buffer<S> cols_b1a, cols_b1b, cols_b2a, cols_b2b;
  layers::Buffer<S> da2, dr1p, da1, dc2, dp1p, dc1;
  std::array<S, FusionModel::kEmbed> hin{};
  std::array<S, FusionModel::kHidden> z1{}, h1{};
  std::array<double, kNumClasses> logits{};

  explicit Activations(const InputShape& s)
      : T(s.frames), F(s.freq_bins), H1(F / 2), W1(T / 2), H2(H1 / 2), W2(W1 / 2) {}
};

// Reused per thread so large buffers are not re-mapped on every call.
template <class S>
Activations<S>& workspace(const InputShape& s) {
  thread_local Activations<S> a(s);
  if (a.T != s.frames || a.F != s.freq_bins) a = Activations<S>(s);
  return a;
}

constexpr std::size_t kPad1 = FusionModel::kB1Kernel / 2;

template <class S>
void forward_impl(const FusionModel& m, const S* P, const TFFeatures& tf, Activations<S>& a) {
  using FM = FusionModel;
  auto w = [&](const char* name) { return P + m.block(name).offset; };
  const auto& nrm = m.normalization();
  const std::size_t T = a.T, F = a.F;
  a.hin.fill(S(0));

  if (m.mode() != ModelMode::Branch2Only) {
    const std::size_t lp = T + 2 * kPad1;
    a.x1p.assign(2 * lp, S(0));
    for (std::size_t t = 0; t < T; ++t) {
      a.x1p[kPad1 + t] = static_cast<S>((tf.inst_freq_hz[t] - nrm.seq_mean[0]) / nrm.seq_std[0]);
      a.x1p[lp + kPad1 + t] = static_cast<S>((tf.spectral_entropy[t] - nrm.seq_mean[1]) / nrm.seq_std[1]);
    }
    a.a1.resize(FM::kB1Conv1 * T);
    layers::conv1d_forward_gemm(a.x1p.data(), 2, T, w("b1.conv1.w"), w("b1.conv1.b"), FM::kB1Conv1, FM::kB1Kernel,
                                a.a1.data(), a.cols_b1a);
    layers::relu_inplace(a.a1.data(), a.a1.size());
    a.r1p.resize(FM::kB1Conv1 * lp);
    layers::pad1d(a.a1.data(), FM::kB1Conv1, T, kPad1, a.r1p.data());
    a.a2.resize(FM::kB1Conv2 * T);
    layers::conv1d_forward_gemm(a.r1p.data(), FM::kB1Conv1, T, w("b1.conv2.w"), w("b1.conv2.b"), FM::kB1Conv2,
                                FM::kB1Kernel, a.a2.data(), a.cols_b1b);
    layers::relu_inplace(a.a2.data(), a.a2.size());
    for (std::size_t c = 0; c < FM::kB1Conv2; ++c) {
      const S* r = a.a2.data() + c * T;
      a.hin[c] = std::accumulate(r, r + T, S(0)) / static_cast<S>(T);
    }
  }

  if (m.mode() != ModelMode::Branch1Only) {
    const std::size_t wp = T + 2;
    a.x2p.assign((F + 2) * wp, S(0));
    for (std::size_t f = 0; f < F; ++f) {
      const double* row = tf.log_spectrogram.row(f);
      S* dst = a.x2p.data() + (f + 1) * wp + 1;
      for (std::size_t t = 0; t < T; ++t) dst[t] = static_cast<S>((row[t] - nrm.bin_mean[f]) / nrm.bin_std[f]);
    }
    a.c1.resize(FM::kB2Conv1 * F * T);
    layers::conv2d3_forward_gemm(a.x2p.data(), 1, F, T, w("b2.conv1.w"), w("b2.conv1.b"), FM::kB2Conv1, a.c1.data(),
                                 a.cols_b2a);
    layers::relu_inplace(a.c1.data(), a.c1.size());
    a.p1.resize(FM::kB2Conv1 * a.H1 * a.W1);
    a.arg1.resize(a.p1.size());
    layers::maxpool2_forward(a.c1.data(), FM::kB2Conv1, F, T, a.p1.data(), a.arg1.data());
    a.p1p.resize(FM::kB2Conv1 * (a.H1 + 2) * (a.W1 + 2));
    layers::pad2d(a.p1.data(), FM::kB2Conv1, a.H1, a.W1, 1, a.p1p.data());
    a.c2.resize(FM::kB2Conv2 * a.H1 * a.W1);
    layers::conv2d3_forward_gemm(a.p1p.data(), FM::kB2Conv1, a.H1, a.W1, w("b2.conv2.w"), w("b2.conv2.b"),
                                 FM::kB2Conv2, a.c2.data(), a.cols_b2b);
    layers::relu_inplace(a.c2.data(), a.c2.size());
    a.p2.resize(FM::kB2Conv2 * a.H2 * a.W2);
    a.arg2.resize(a.p2.size());
    layers::maxpool2_forward(a.c2.data(), FM::kB2Conv2, a.H1, a.W1, a.p2.data(), a.arg2.data());
    const std::size_t area = a.H2 * a.W2;
    for (std::size_t c = 0; c < FM::kB2Conv2; ++c) {
      const S* r = a.p2.data() + c * area;
      a.hin[FM::kB1Conv2 + c] = std::accumulate(r, r + area, S(0)) / static_cast<S>(area);
    }
  }

  const S* W1 = w("head.fc1.w");
  const S* B1 = w("head.fc1.b");
  for (std::size_t j = 0; j < FM::kHidden; ++j) {
    S s = B1[j];
    for (std::size_t i = 0; i < FM::kEmbed; ++i) s += W1[j * FM::kEmbed + i] * a.hin[i];
    a.z1[j] = s;
    a.h1[j] = s > S(0) ? s : S(0);
  }
  const S* W2 = w("head.fc2.w");
  const S* B2 = w("head.fc2.b");
  for (int k = 0; k < kNumClasses; ++k) {
    S s = B2[k];
    for (std::size_t j = 0; j < FM::kHidden; ++j) s += W2[k * FM::kHidden + j] * a.h1[j];
    a.logits[k] = static_cast<double>(s);
  }
}

// Backpropagates dL/dlogits = dz2 through the activations left by
// forward_impl, accumulating into G (same layout as the parameters).
template <class S>
void backward_impl(const FusionModel& m, const S* P, Activations<S>& a, const std::array<double, kNumClasses>& dz2,
                   S* G) {
  using FM = FusionModel;
  auto w = [&](const char* name) { return P + m.block(name).offset; };
  auto g = [&](const char* name) { return G + m.block(name).offset; };
  const std::size_t T = a.T, F = a.F;

  const S* W2 = w("head.fc2.w");
  S* gW2 = g("head.fc2.w");
  S* gB2 = g("head.fc2.b");
  std::array<S, FM::kHidden> dz1{};
  for (int k = 0; k < kNumClasses; ++k) {
    const S d = static_cast<S>(dz2[k]);
    gB2[k] += d;
    for (std::size_t j = 0; j < FM::kHidden; ++j) {
      gW2[k * FM::kHidden + j] += d * a.h1[j];
      dz1[j] += W2[k * FM::kHidden + j] * d;
    }
  }
  for (std::size_t j = 0; j < FM::kHidden; ++j)
    if (!(a.z1[j] > S(0))) dz1[j] = S(0);
  const S* W1 = w("head.fc1.w");
  S* gW1 = g("head.fc1.w");
  S* gB1 = g("head.fc1.b");
  std::array<S, FM::kEmbed> dhin{};
  for (std::size_t j = 0; j < FM::kHidden; ++j) {
    gB1[j] += dz1[j];
    for (std::size_t i = 0; i < FM::kEmbed; ++i) {
      gW1[j * FM::kEmbed + i] += dz1[j] * a.hin[i];
      dhin[i] += W1[j * FM::kEmbed + i] * dz1[j];
    }
  }

  if (m.mode() != ModelMode::Branch2Only) {
    const std::size_t lp = T + 2 * kPad1;
    auto& da2 = a.da2;
    da2.assign(FM::kB1Conv2 * T, S(0));
    for (std::size_t c = 0; c < FM::kB1Conv2; ++c) {
      const S v = dhin[c] / static_cast<S>(T);
      for (std::size_t t = 0; t < T; ++t) da2[c * T + t] = a.a2[c * T + t] > S(0) ? v : S(0);
    }
    auto& dr1p = a.dr1p;
    dr1p.assign(FM::kB1Conv1 * lp, S(0));
    layers::conv1d_backward_gemm(a.cols_b1b, FM::kB1Conv1, T, w("b1.conv2.w"), FM::kB1Conv2, FM::kB1Kernel,
                                 da2.data(), g("b1.conv2.w"), g("b1.conv2.b"), dr1p.data());
    auto& da1 = a.da1;
    da1.assign(FM::kB1Conv1 * T, S(0));
    for (std::size_t c = 0; c < FM::kB1Conv1; ++c)
      for (std::size_t t = 0; t < T; ++t) da1[c * T + t] = a.a1[c * T + t] > S(0) ? dr1p[c * lp + kPad1 + t] : S(0);
    layers::conv1d_backward_gemm(a.cols_b1a, 2, T, w("b1.conv1.w"), FM::kB1Conv1, FM::kB1Kernel, da1.data(),
                                 g("b1.conv1.w"), g("b1.conv1.b"), static_cast<S*>(nullptr));
  }

  if (m.mode() != ModelMode::Branch1Only) {
    const std::size_t area2 = a.H2 * a.W2;
    auto& dc2 = a.dc2;
    dc2.assign(a.c2.size(), S(0));
    for (std::size_t c = 0; c < FM::kB2Conv2; ++c) {
      const S v = dhin[FM::kB1Conv2 + c] / static_cast<S>(area2);
      for (std::size_t i = 0; i < area2; ++i) {
        const std::size_t src = a.arg2[c * area2 + i];
        if (a.c2[src] > S(0)) dc2[src] += v;
      }
    }
    const std::size_t wp1 = a.W1 + 2, plane1 = (a.H1 + 2) * wp1;
    auto& dp1p = a.dp1p;
    dp1p.assign(FM::kB2Conv1 * plane1, S(0));
    layers::conv2d3_backward_gemm(a.cols_b2b, FM::kB2Conv1, a.H1, a.W1, w("b2.conv2.w"), FM::kB2Conv2, dc2.data(),
                                  g("b2.conv2.w"), g("b2.conv2.b"), dp1p.data());
    auto& dc1 = a.dc1;
    dc1.assign(a.c1.size(), S(0));
    const std::size_t area1 = a.H1 * a.W1;
    for (std::size_t c = 0; c < FM::kB2Conv1; ++c)
      for (std::size_t y1 = 0; y1 < a.H1; ++y1)
        for (std::size_t x1 = 0; x1 < a.W1; ++x1) {
          const std::size_t src = a.arg1[c * area1 + y1 * a.W1 + x1];
          if (a.c1[src] > S(0)) dc1[src] += dp1p[c * plane1 + (y1 + 1) * wp1 + x1 + 1];
        }
    layers::conv2d3_backward_gemm(a.cols_b2a, 1, F, T, w("b2.conv1.w"), FM::kB2Conv1, dc1.data(), g("b2.conv1.w"),
                                  g("b2.conv1.b"), static_cast<S*>(nullptr));
  }
}

// Per-sample loss and gradient in precision T; returns the unweighted data
// loss. `weight` scales the gradient only.
template <class S>
double sample_gradient(const FusionModel& m, const S* P, const TFFeatures& tf, SeverityClass label, double weight,
                       S* G, Prediction* pred_out) {
  Activations<S>& a = workspace<S>(m.shape());
  forward_impl(m, P, tf, a);
  const Prediction pred = softmax_prediction(a.logits);
  if (pred_out) *pred_out = pred;
  const int y = class_index(label);
  std::array<double, kNumClasses> dz2{};
  for (int k = 0; k < kNumClasses; ++k) dz2[k] = weight * (pred.probs[k] - (k == y ? 1.0 : 0.0));
  backward_impl(m, P, a, dz2, G);
  return -std::log(std::max(pred.probs[y], 1e-12));
}

}  // namespace

Prediction FusionModel::forward(const TFFeatures& tf) const {
  check_input(tf);
  Activations<double>& a = workspace<double>(shape_);
  forward_impl(*this, params_.data(), tf, a);
  return softmax_prediction(a.logits);
}

std::uint64_t FusionModel::activation_pattern(const TFFeatures& tf, Prediction* pred_out) const {
  check_input(tf);
  Activations<double>& a = workspace<double>(shape_);
  forward_impl(*this, params_.data(), tf, a);
  std::uint64_t h = 0x9e3779b97f4a7c15ULL;
  auto mix = [&h](std::uint64_t word) { h = (h ^ word) * 0x100000001b3ULL + (h >> 29); };
  auto signs = [&mix](const auto& v) {
    std::uint64_t word = 0;
    for (std::size_t i = 0; i < v.size(); ++i) {
      word = (word << 1) | (v[i] > 0.0 ? 1u : 0u);
      if (i % 64 == 63) mix(word);
    }
    mix(word);
    mix(v.size());
  };
  auto winners = [&mix](const std::vector<std::size_t>& v) {
    for (std::size_t x : v) mix(x);
  };
  if (mode_ != ModelMode::Branch2Only) {
    signs(a.a1);
    signs(a.a2);
  }
  if (mode_ != ModelMode::Branch1Only) {
    signs(a.c1);
    winners(a.arg1);
    signs(a.c2);
    winners(a.arg2);
  }
  signs(a.z1);
  if (pred_out) *pred_out = softmax_prediction(a.logits);
  return h;
}

double FusionModel::accumulate_gradient(const TFFeatures& tf, SeverityClass label, double weight,
                                        std::span<double> grad, Prediction* pred_out) const {
  check_input(tf);
  if (grad.size() != params_.size()) throw DataError("gradient buffer has the wrong size");
  return sample_gradient(*this, params_.data(), tf, label, weight, grad.data(), pred_out);
}
double FusionModel::weight_penalty() const {
  double s = 0.0;
  for (const auto& b : blocks_) {
    if (!b.is_weight || !is_active(b)) continue;
    for (std::size_t i = 0; i < b.size; ++i) s += params_[b.offset + i] * params_[b.offset + i];
  }
  return 0.5 * s;
}

void TrainConfig::validate() const {
  if (!(l2 >= 0.0)) throw DataError("l2 must be non-negative");
  if (batch_size == 0) throw DataError("batch size must be positive");
  if (!(lr0 > 0.0) || !(lr_drop_factor > 0.0) || lr_drop_period <= 0) throw DataError("learning-rate schedule must be positive");
  if (max_epochs <= 0) throw DataError("max_epochs must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw DataError("momentum must lie in [0, 1)");
  if (threads > 256) throw DataError("threads must be at most 256");
}

double learning_rate(const TrainConfig& cfg, int epoch) {
  return cfg.lr0 * std::pow(cfg.lr_drop_factor, static_cast<double>(epoch / cfg.lr_drop_period));
}

LossResult loss(const Prediction& pred, SeverityClass label, const FusionModel& model, double l2) {
  LossResult r;
  double p = pred.probs[class_index(label)];
  if (!(p > 1e-12)) {
    p = 1e-12;
    r.clamped = true;
  }
  r.data = -std::log(p);
  r.penalty = l2 * model.weight_penalty();
  r.total = r.data + r.penalty;
  return r;
}

namespace {

// Runs fn(i) for i in [0, n) on up to `threads` threads with a static
// interleaved assignment.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(threads);
  auto worker = [&](std::size_t t) {
    try {
      for (std::size_t i = t; i < n; i += threads) fn(i);
    } catch (...) {
      errors[t] = std::current_exception();
    }
  };
  {
    std::vector<std::jthread> pool;
    for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker, t);
    worker(0);
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

BatchGradient backward_ptrs(const FusionModel& model, std::span<const Sample* const> batch, const TrainConfig& cfg,
                            std::span<const double> class_weights) {
  if (batch.empty()) throw DataError("empty batch");
  BatchGradient out;
  const auto& P = model.params();
  const std::size_t n = batch.size(), np = P.size();
  out.grad.assign(np, 0.0);
  const double inv = 1.0 / static_cast<double>(n);
  auto weight_of = [&](const Sample* s) {
    return inv * (class_weights.empty() ? 1.0 : class_weights[static_cast<std::size_t>(class_index(s->label))]);
  };
  // Each sample writes its own gradient buffer; the buffers are then summed
  // in batch order, so results do not depend on the thread count.
  std::vector<double> losses(n);
  std::vector<int> predicted(n);
  const std::size_t threads = cfg.threads == 0 ? std::max(1u, std::thread::hardware_concurrency()) : cfg.threads;
  auto reduce = [&](const auto& grads) {
    for (std::size_t i = 0; i < n; ++i) {
      const auto& g = grads[i];
      for (std::size_t j = 0; j < np; ++j) out.grad[j] += static_cast<double>(g[j]);
      out.data_loss += losses[i];
      if (predicted[i] == class_index(batch[i]->label)) ++out.correct;
    }
  };
  if (cfg.precision == Precision::Float64) {
    std::vector<layers::Buffer<double>> grads(n, layers::Buffer<double>(np, 0.0));
    parallel_for(n, threads, [&](std::size_t i) {
      Prediction p;
      losses[i] = model.accumulate_gradient(batch[i]->features, batch[i]->label, weight_of(batch[i]), grads[i], &p);
      predicted[i] = p.predicted;
    });
    reduce(grads);
  } else {
    const layers::Buffer<float> pf(P.begin(), P.end());
    std::vector<layers::Buffer<float>> grads(n, layers::Buffer<float>(np, 0.0f));
    parallel_for(n, threads, [&](std::size_t i) {
      model.check_input(batch[i]->features);
      Prediction p;
      losses[i] = sample_gradient(model, pf.data(), batch[i]->features, batch[i]->label, weight_of(batch[i]),
                                  grads[i].data(), &p);
      predicted[i] = p.predicted;
    });
    reduce(grads);
  }
  out.data_loss *= inv;
  out.penalty = cfg.l2 * model.weight_penalty();
  for (const auto& b : model.blocks()) {
    if (!model.is_active(b)) {
      std::fill_n(out.grad.begin() + static_cast<std::ptrdiff_t>(b.offset), b.size, 0.0);
      continue;
    }
    if (!b.is_weight || cfg.l2 == 0.0) continue;
    for (std::size_t i = 0; i < b.size; ++i) out.grad[b.offset + i] += cfg.l2 * P[b.offset + i];
  }
  return out;
}

}  // namespace

BatchGradient backward(const FusionModel& model, std::span<const Sample> batch, const TrainConfig& cfg,
                       std::span<const double> class_weights) {
  std::vector<const Sample*> ptrs;
  for (const auto& s : batch) ptrs.push_back(&s);
  return backward_ptrs(model, ptrs, cfg, class_weights);
}

TrainResult train(FusionModel& model, std::span<const Sample> data, const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  std::array<std::size_t, kNumClasses> counts{};
  for (const auto& s : data) ++counts[static_cast<std::size_t>(class_index(s.label))];
  for (auto c : counts)
    if (c == 0) throw DataError("degenerate training set: every class needs at least one sample");

  model.fit_normalization(data);
  std::vector<double> class_weights;
  if (cfg.class_weighting) {
    for (auto c : counts)
      class_weights.push_back(static_cast<double>(data.size()) / (kNumClasses * static_cast<double>(c)));
  }

  TrainResult result;
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> velocity(model.params().size(), 0.0);
  std::vector<const Sample*> batch;

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const double lr = learning_rate(cfg, epoch);
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t correct = 0, batches = 0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      const std::size_t e = std::min(order.size(), b + cfg.batch_size);
      batch.clear();
      for (std::size_t i = b; i < e; ++i) batch.push_back(&data[order[i]]);
      const BatchGradient bg = backward_ptrs(model, batch, cfg, class_weights);
      auto& P = model.params();
      for (std::size_t i = 0; i < P.size(); ++i) {
        velocity[i] = cfg.momentum * velocity[i] - lr * bg.grad[i];
        P[i] += velocity[i];
      }
      loss_sum += bg.data_loss + bg.penalty;
      correct += bg.correct;
      ++batches;
    }
    for (double v : model.params())
      if (!std::isfinite(v)) throw NumericalError("training diverged at epoch " + std::to_string(epoch));
    result.history.push_back({epoch, lr, loss_sum / static_cast<double>(batches),
                              static_cast<double>(correct) / static_cast<double>(data.size())});
    if (on_epoch) on_epoch(result.history.back());
  }
  return result;
}

std::string training_log_csv(const TrainResult& r) {
  std::ostringstream ss;
  ss.precision(10);
  ss << "epoch,lr,mean_loss,train_accuracy\n";
  for (const auto& e : r.history) ss << e.epoch << ',' << e.lr << ',' << e.mean_loss << ',' << e.train_accuracy << '\n';
  return ss.str();
}

static_assert(std::endian::native == std::endian::little, "checkpoints assume a little-endian host");

std::string encode_checkpoint(const FusionModel& model, const std::string& feature_descriptor) {
  nlohmann::json h;
  h["format"] = "lbnp-fusion-checkpoint";
  h["version"] = 1;
  h["mode"] = to_string(model.mode());
  h["seed"] = model.seed();
  h["frames"] = model.shape().frames;
  h["freq_bins"] = model.shape().freq_bins;
  h["architecture"] = model.architecture_descriptor();
  h["architecture_hash"] = hex64(model.architecture_hash());
  h["feature_descriptor"] = feature_descriptor;
  h["param_count"] = model.params().size();
  nlohmann::json blocks = nlohmann::json::array();
  for (const auto& b : model.blocks()) blocks.push_back({{"name", b.name}, {"offset", b.offset}, {"size", b.size}});
  h["blocks"] = blocks;
  const auto& n = model.normalization();
  h["normalization"] = {{"fitted", n.fitted},   {"seq_mean", n.seq_mean}, {"seq_std", n.seq_std},
                        {"bin_mean", n.bin_mean}, {"bin_std", n.bin_std}};
  const std::string header = h.dump();
  std::string out = "LBNPCKPT 1\n";
  const std::uint64_t len = header.size();
  out.append(reinterpret_cast<const char*>(&len), sizeof(len));
  out += header;
  out.append(reinterpret_cast<const char*>(model.params().data()), model.params().size() * sizeof(double));
  return out;
}

FusionModel decode_checkpoint(std::string_view bytes, std::string* feature_descriptor) {
  const std::string_view magic = "LBNPCKPT 1\n";
  if (bytes.substr(0, magic.size()) != magic) throw DataError("not a checkpoint file (bad magic)");
  std::size_t pos = magic.size();
  std::uint64_t len = 0;
  if (bytes.size() < pos + sizeof(len)) throw DataError("truncated checkpoint");
  std::memcpy(&len, bytes.data() + pos, sizeof(len));
  pos += sizeof(len);
  if (bytes.size() < pos + len) throw DataError("truncated checkpoint header");
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(bytes.substr(pos, len));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad checkpoint header: ") + e.what());
  }
  pos += len;
  try {
    FusionModel m(model_mode_from_string(h.at("mode").get<std::string>()), h.at("seed").get<std::uint64_t>(),
                  InputShape{h.at("frames").get<std::size_t>(), h.at("freq_bins").get<std::size_t>()});
    if (h.at("architecture_hash").get<std::string>() != hex64(m.architecture_hash()))
      throw DataError("checkpoint architecture hash mismatch: file has " + h.at("architecture_hash").get<std::string>() +
                      ", this build expects " + hex64(m.architecture_hash()));
    const std::size_t count = h.at("param_count").get<std::size_t>();
    if (count != m.params().size() || bytes.size() - pos != count * sizeof(double))
      throw DataError("checkpoint parameter payload has the wrong size");
    std::memcpy(m.params().data(), bytes.data() + pos, count * sizeof(double));
    const auto& jn = h.at("normalization");
    auto& n = m.normalization();
    n.fitted = jn.at("fitted").get<bool>();
    n.seq_mean = jn.at("seq_mean").get<std::array<double, 2>>();
    n.seq_std = jn.at("seq_std").get<std::array<double, 2>>();
    n.bin_mean = jn.at("bin_mean").get<std::vector<double>>();
    n.bin_std = jn.at("bin_std").get<std::vector<double>>();
    if (feature_descriptor) *feature_descriptor = h.value("feature_descriptor", "");
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad checkpoint header: ") + e.what());
  }
}

}  // namespace lbnp
