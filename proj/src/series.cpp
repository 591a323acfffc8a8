#include "ndtsync/series.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "ndtsync/error.hpp"

namespace ndtsync {
namespace {

constexpr std::size_t kMinSplitLength = 10;

// Absorbs representation error in products such as 0.275 * 40 so that an
// exact integer quota is not floored to the integer below.
constexpr double kFloorSlack = 1e-9;

TrafficSeries slice(const TrafficSeries& s, std::size_t begin, std::size_t count) {
  TrafficSeries out;
  out.start_ts = s.time_at(begin);
  out.bucket_seconds = s.bucket_seconds;
  out.label = s.label;
  out.generator = s.generator;
  out.values.assign(s.values.begin() + static_cast<std::ptrdiff_t>(begin),
                    s.values.begin() + static_cast<std::ptrdiff_t>(begin + count));
  return out;
}

}  // namespace

void SplitSpec::validate() const {
  if (!(train_frac > 0.0) || !(val_frac > 0.0) || !(test_frac > 0.0)) {
    throw Error(Errc::kInvalidArgument, "split fractions must be positive");
  }
  if (std::abs(train_frac + val_frac + test_frac - 1.0) > 1e-9) {
    throw Error(Errc::kInvalidArgument, "split fractions must sum to 1");
  }
}

SplitResult split(const TrafficSeries& series, const SplitSpec& spec) {
  spec.validate();
  const std::size_t n = series.size();
  if (n < kMinSplitLength) {
    throw Error(Errc::kTooShort, "series needs at least 10 points to split, got " + std::to_string(n));
  }
  // Largest-remainder apportionment: each split gets floor(frac*N), and the
  // one or two leftover points go to the largest fractional parts (ties:
  // test, then validation, then train). Every share stays within one point
  // of its exact quota.
  const double dn = static_cast<double>(n);
  const std::array<double, 3> quota{spec.train_frac * dn, spec.val_frac * dn, spec.test_frac * dn};
  std::array<std::size_t, 3> count{};
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    count[i] = static_cast<std::size_t>(std::floor(quota[i] + kFloorSlack));
    assigned += count[i];
  }
  std::array<std::size_t, 3> order{2, 1, 0};
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return quota[a] - static_cast<double>(count[a]) > quota[b] - static_cast<double>(count[b]);
  });
  for (std::size_t k = 0; assigned < n; k = (k + 1) % 3, ++assigned) ++count[order[k]];
  const std::size_t n_train = count[0];
  const std::size_t n_val = count[1];
  return {slice(series, 0, n_train), slice(series, n_train, n_val),
          slice(series, n_train + n_val, n - n_train - n_val)};
}

Normalizer::Normalizer(double min_val, double max_val) : min_(min_val), max_(max_val) {
  if (!std::isfinite(min_val) || !std::isfinite(max_val) || max_val < min_val) {
    throw Error(Errc::kInvalidArgument, "normalizer range must be finite with max >= min");
  }
}

double Normalizer::transform(double x) const noexcept {
  if (degenerate()) return 0.0;
  return (x - min_) / (max_ - min_);
}

double Normalizer::inverse(double y) const noexcept {
  if (degenerate()) return min_;
  return min_ + y * (max_ - min_);
}

Normalizer fit_normalizer(const TrafficSeries& train) {
  if (train.values.empty()) throw Error(Errc::kEmptyInput, "cannot fit a normalizer on an empty split");
  const auto [lo, hi] = std::minmax_element(train.values.begin(), train.values.end());
  return Normalizer(*lo, *hi);
}

WindowedDataset make_windows(std::span<const double> values, std::size_t window_len,
                             std::size_t horizon, const Normalizer& normalizer) {
  if (window_len == 0 || horizon == 0) {
    throw Error(Errc::kInvalidArgument, "window length and horizon must be positive");
  }
  if (values.size() < window_len + horizon) {
    throw Error(Errc::kTooShort, "series of length " + std::to_string(values.size()) +
                                     " is shorter than window + horizon");
  }
  WindowedDataset ds;
  ds.window_len = window_len;
  ds.horizon = horizon;
  const std::size_t count = values.size() - window_len - horizon + 1;
  ds.inputs.reserve(count);
  ds.targets.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::vector<double> in(window_len);
    std::vector<double> out(horizon);
    for (std::size_t j = 0; j < window_len; ++j) in[j] = normalizer.transform(values[i + j]);
    for (std::size_t j = 0; j < horizon; ++j) out[j] = normalizer.transform(values[i + window_len + j]);
    ds.inputs.push_back(std::move(in));
    ds.targets.push_back(std::move(out));
  }
  return ds;
}

double mean(std::span<const double> values) {
  if (values.empty()) return 0.0;
  double s = 0.0;
  for (double v : values) s += v;
  return s / static_cast<double>(values.size());
}

double stddev(std::span<const double> values) {
  if (values.empty()) return 0.0;
  const double m = mean(values);
  double s = 0.0;
  for (double v : values) s += (v - m) * (v - m);
  return std::sqrt(s / static_cast<double>(values.size()));
}

}  // namespace ndtsync
