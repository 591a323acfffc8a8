#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ndtsync/ingest.hpp"

namespace ndtsync {

/// Chronological train/validation/test fractions.
struct SplitSpec {
  double train_frac = 0.45;
  double val_frac = 0.275;
  double test_frac = 0.275;

  void validate() const;
};

struct SplitResult {
  TrafficSeries train;
  TrafficSeries val;
  TrafficSeries test;
};

/// Contiguous chronological split into train, validation and test. Each
/// part holds floor or ceil of its exact share of N points.
SplitResult split(const TrafficSeries& series, const SplitSpec& spec = {});

/// Min-max scaling fit on training data. A constant training range maps
/// everything to 0. Values outside the fitted range are not clipped.
class Normalizer {
 public:
  Normalizer() = default;
  Normalizer(double min_val, double max_val);

  static Normalizer identity() { return Normalizer(0.0, 1.0); }

  double min_val() const noexcept { return min_; }
  double max_val() const noexcept { return max_; }
  bool degenerate() const noexcept { return max_ == min_; }

  double transform(double x) const noexcept;
  double inverse(double y) const noexcept;

  friend bool operator==(const Normalizer&, const Normalizer&) = default;

 private:
  double min_ = 0.0;
  double max_ = 1.0;
};

Normalizer fit_normalizer(const TrafficSeries& train);

struct WindowedDataset {
  std::vector<std::vector<double>> inputs;
  std::vector<std::vector<double>> targets;
  std::size_t window_len = 0;
  std::size_t horizon = 0;

  std::size_t size() const noexcept { return inputs.size(); }
  bool empty() const noexcept { return inputs.empty(); }
};

/// Stride-1 sliding windows; target i is the `horizon` values right after
/// input window i. Both sides are passed through `normalizer`.
WindowedDataset make_windows(std::span<const double> values, std::size_t window_len,
                             std::size_t horizon, const Normalizer& normalizer);

inline WindowedDataset make_windows(const TrafficSeries& series, std::size_t window_len,
                                    std::size_t horizon, const Normalizer& normalizer) {
  return make_windows(series.values, window_len, horizon, normalizer);
}

double mean(std::span<const double> values);
/// Population standard deviation.
double stddev(std::span<const double> values);

}  // namespace ndtsync
