#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ndtsync/series.hpp"

namespace ndtsync {

enum class Padding { kSame };

struct CnnConfig {
  std::size_t window_len = 30;
  std::size_t horizon = 1;
  std::size_t conv_layers = 3;
  std::size_t kernel_size = 4;
  std::vector<std::size_t> channels_per_layer{32, 32, 32};
  std::size_t input_channels = 1;
  Padding padding = Padding::kSame;
  std::size_t batch_size = 32;
  std::size_t epochs = 50;
  double learning_rate = 1e-4;
  std::uint64_t seed = 42;

  void validate() const;
};

/// Dense batch x channels x length tensor, row-major.
struct Tensor3 {
  std::size_t n = 0;
  std::size_t ch = 0;
  std::size_t len = 0;
  std::vector<double> data;

  Tensor3() = default;
  Tensor3(std::size_t n_, std::size_t ch_, std::size_t len_, double fill = 0.0)
      : n(n_), ch(ch_), len(len_), data(n_ * ch_ * len_, fill) {}

  double& at(std::size_t b, std::size_t c, std::size_t t) { return data[(b * ch + c) * len + t]; }
  double at(std::size_t b, std::size_t c, std::size_t t) const { return data[(b * ch + c) * len + t]; }
  const double* row(std::size_t b, std::size_t c) const { return data.data() + (b * ch + c) * len; }
  double* row(std::size_t b, std::size_t c) { return data.data() + (b * ch + c) * len; }
};

struct BatchNorm {
  std::vector<double> gamma;
  std::vector<double> beta;
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  explicit BatchNorm(std::size_t channels = 0)
      : gamma(channels, 1.0), beta(channels, 0.0), running_mean(channels, 0.0), running_var(channels, 1.0) {}

  std::size_t channels() const noexcept { return gamma.size(); }
};

struct ConvBlock {
  std::size_t in_ch = 0;
  std::size_t out_ch = 0;
  std::size_t kernel = 0;
  std::vector<double> weight;  // out_ch x in_ch x kernel
  std::vector<double> bias;    // out_ch
  BatchNorm bn;
};

struct DenseHead {
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<double> weight;  // out x in
  std::vector<double> bias;    // out
};

/// The forecaster: (conv 'same' -> batch norm -> ReLU) x layers, then a
/// flatten and one dense layer producing `horizon` normalized outputs.
struct CnnModel {
  CnnConfig config;
  Normalizer normalizer;
  std::vector<ConvBlock> blocks;
  DenseHead head;

  /// Kaiming-normal conv weights, unit gamma, zero biases/beta.
  static CnnModel init(const CnnConfig& config, const Normalizer& normalizer);

  /// Trainable tensors in a fixed order: per block weight, bias, gamma,
  /// beta; then head weight and bias.
  std::vector<std::span<double>> parameters();
  std::vector<std::span<const double>> parameters() const;

  std::size_t parameter_count() const;
  /// Hex FNV-1a of the serialized config, for display and cache keys.
  std::string config_hash() const;
};

enum class Mode { kTrain, kInfer };

/// Cross-correlation with zero padding floor((k-1)/2) on the left and
/// ceil((k-1)/2) on the right, so output length equals input length.
Tensor3 conv1d_same(const Tensor3& input, std::span<const double> weight, std::span<const double> bias,
                    std::size_t out_ch, std::size_t kernel);

struct BatchNormStats {
  std::vector<double> mean;
  std::vector<double> var;  // biased, as used for normalisation
  std::size_t count = 0;    // samples per channel
};

/// Normalizes per channel. Train mode uses batch statistics and, when
/// `update_running` is set, folds them into the running estimates with the
/// configured momentum (unbiased variance). Infer mode uses running stats.
Tensor3 batchnorm_forward(const Tensor3& x, BatchNorm& bn, Mode mode, bool update_running = true);

struct LayerCache {
  Tensor3 input;      // conv input
  Tensor3 xhat;       // normalized conv output
  Tensor3 activated;  // ReLU output
  BatchNormStats stats;
};

struct ForwardCache {
  std::vector<LayerCache> layers;
  std::vector<double> flat;  // head input, batch x head.in
};

/// Runs a batch of windows (normalized space). Never mutates the model;
/// train-mode batch statistics land in `cache` and are folded into the
/// running estimates by commit_running_stats().
std::vector<std::vector<double>> forward(const CnnModel& model, std::span<const std::vector<double>> windows,
                                         Mode mode, ForwardCache* cache = nullptr);

void commit_running_stats(CnnModel& model, const ForwardCache& cache);

/// Gradient tensors aligned with CnnModel::parameters().
struct Gradients {
  std::vector<std::vector<double>> tensors;
};

/// Mean squared error over batch x horizon.
double mse_loss(std::span<const std::vector<double>> outputs, std::span<const std::vector<double>> targets);

/// Gradients of mse_loss * loss_scale with respect to every trainable
/// parameter, through the batch statistics of each batch-norm layer.
/// `cache` must come from a train-mode forward over the same batch.
Gradients backward(const CnnModel& model, const ForwardCache& cache,
                   std::span<const std::vector<double>> outputs, std::span<const std::vector<double>> targets,
                   double loss_scale = 1.0);

class AdamOptimizer {
 public:
  explicit AdamOptimizer(double learning_rate, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(CnnModel& model, const Gradients& grads);

 private:
  double lr_, beta1_, beta2_, eps_;
  std::uint64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

struct ErrorMetrics {
  double mae = 0.0;
  double rmse = 0.0;
  std::size_t count = 0;
};

/// MAE and RMSE of predicted vs actual, using pairwise summation.
ErrorMetrics compute_metrics(std::span<const double> predicted, std::span<const double> actual);

struct Prediction {
  std::vector<double> values;  // pps, clamped >= 0
  std::size_t made_for_step = 0;
};

/// One forecast from a window of raw pps values (not normalized).
Prediction predict(const CnnModel& model, std::span<const double> window_pps, std::size_t made_for_step = 0);

/// Metrics in pps over every (window, target) pair of the dataset, all
/// horizon steps pooled.
ErrorMetrics evaluate(const CnnModel& model, const WindowedDataset& dataset);

/// "Next value equals the last observed value", in pps.
ErrorMetrics persistence_baseline(const WindowedDataset& dataset, const Normalizer& normalizer);

struct EpochStats {
  std::size_t epoch = 0;
  double train_loss = 0.0;  // mean normalized MSE over the epoch's batches
  double val_mae = 0.0;     // pps
  double val_rmse = 0.0;    // pps
};

struct TrainResult {
  CnnModel model;  // parameters from the epoch with the best validation MAE
  std::vector<EpochStats> trace;
  std::size_t best_epoch = 0;
};

TrainResult train(const CnnConfig& config, const Normalizer& normalizer, const WindowedDataset& train_set,
                  const WindowedDataset& val_set);

std::string save_model(const CnnModel& model);
CnnModel load_model(std::string_view text);

void save_model_file(const CnnModel& model, const std::string& path);
CnnModel load_model_file(const std::string& path);

}  // namespace ndtsync
