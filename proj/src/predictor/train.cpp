#include <cmath>
#include <limits>
#include <numeric>

#include "ndtsync/cnn.hpp"
#include "ndtsync/error.hpp"
#include "ndtsync/rng.hpp"

namespace ndtsync {

TrainResult train(const CnnConfig& config, const Normalizer& normalizer, const WindowedDataset& train_set,
                  const WindowedDataset& val_set) {
  config.validate();
  if (train_set.empty() || val_set.empty()) {
    throw Error(Errc::kEmptyDataset, "training and validation datasets must be non-empty");
  }
  if (train_set.window_len != config.window_len || val_set.window_len != config.window_len ||
      train_set.horizon != config.horizon || val_set.horizon != config.horizon) {
    throw Error(Errc::kShapeMismatch, "dataset window/horizon differ from the model config");
  }

  TrainResult result{CnnModel::init(config, normalizer), {}, 0};
  CnnModel model = result.model;
  AdamOptimizer optimizer(config.learning_rate);
  // Separate stream from weight init so changing the architecture does not
  // reshuffle batches.
  Rng shuffle_rng(config.seed ^ 0x9e3779b97f4a7c15ULL);

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  double best_mae = std::numeric_limits<double>::infinity();

  std::vector<std::vector<double>> batch_in;
  std::vector<std::vector<double>> batch_tgt;
  ForwardCache cache;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[shuffle_rng.below(i)]);
    }

    double loss_sum = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size, ++batch_index) {
      const std::size_t count = std::min(config.batch_size, order.size() - start);
      batch_in.clear();
      batch_tgt.clear();
      for (std::size_t j = 0; j < count; ++j) {
        batch_in.push_back(train_set.inputs[order[start + j]]);
        batch_tgt.push_back(train_set.targets[order[start + j]]);
      }
      const auto out = forward(model, batch_in, Mode::kTrain, &cache);
      const double loss = mse_loss(out, batch_tgt);
      if (!std::isfinite(loss)) {
        throw Error(Errc::kNonFiniteLoss, "non-finite training loss at epoch " + std::to_string(epoch) +
                                              ", batch " + std::to_string(batch_index));
      }
      loss_sum += loss * static_cast<double>(count);
      optimizer.step(model, backward(model, cache, out, batch_tgt));
      commit_running_stats(model, cache);
    }

    const ErrorMetrics val = evaluate(model, val_set);
    result.trace.push_back({epoch, loss_sum / static_cast<double>(order.size()), val.mae, val.rmse});
    if (val.mae < best_mae) {
      best_mae = val.mae;
      result.model = model;
      result.best_epoch = epoch;
    }
  }
  return result;
}

}  // namespace ndtsync
