#include <algorithm>
#include <cmath>

#include "ndtsync/cnn.hpp"
#include "ndtsync/error.hpp"

namespace ndtsync {

Tensor3 conv1d_same(const Tensor3& input, std::span<const double> weight, std::span<const double> bias,
                    std::size_t out_ch, std::size_t kernel) {
  if (kernel == 0 || weight.size() != out_ch * input.ch * kernel || bias.size() != out_ch ||
      input.data.size() != input.n * input.ch * input.len) {
    throw Error(Errc::kShapeMismatch, "conv1d weight/bias/input shapes disagree");
  }
  const std::size_t len = input.len;
  const auto pad_left = static_cast<std::ptrdiff_t>((kernel - 1) / 2);
  Tensor3 out(input.n, out_ch, len);
  for (std::size_t b = 0; b < input.n; ++b) {
    for (std::size_t o = 0; o < out_ch; ++o) {
      double* dst = out.row(b, o);
      std::fill(dst, dst + len, bias[o]);
      for (std::size_t i = 0; i < input.ch; ++i) {
        const double* src = input.row(b, i);
        const double* w = &weight[(o * input.ch + i) * kernel];
        for (std::size_t k = 0; k < kernel; ++k) {
          // dst[t] += w[k] * src[t + k - pad_left] over the in-range t.
          const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(k) - pad_left;
          const std::ptrdiff_t t0 = std::max<std::ptrdiff_t>(0, -shift);
          const std::ptrdiff_t t1 = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(len),
                                                             static_cast<std::ptrdiff_t>(len) - shift);
          const double wk = w[k];
          for (std::ptrdiff_t t = t0; t < t1; ++t) dst[t] += wk * src[t + shift];
        }
      }
    }
  }
  return out;
}

namespace detail {

// Normalizes x per channel into xhat and returns gamma*xhat + beta.
Tensor3 batchnorm_apply(const Tensor3& x, const BatchNorm& bn, Mode mode, Tensor3* xhat_out,
                        BatchNormStats* stats_out) {
  if (bn.channels() != x.ch) throw Error(Errc::kShapeMismatch, "batch-norm channel count mismatch");
  const std::size_t count = x.n * x.len;
  BatchNormStats stats;
  stats.count = count;
  stats.mean.assign(x.ch, 0.0);
  stats.var.assign(x.ch, 0.0);
  if (mode == Mode::kTrain) {
    if (count < 2) throw Error(Errc::kDegenerateBatch, "train-mode batch norm needs batch*len >= 2");
    for (std::size_t c = 0; c < x.ch; ++c) {
      double s = 0.0;
      for (std::size_t b = 0; b < x.n; ++b)
        for (std::size_t t = 0; t < x.len; ++t) s += x.at(b, c, t);
      const double m = s / static_cast<double>(count);
      double v = 0.0;
      for (std::size_t b = 0; b < x.n; ++b)
        for (std::size_t t = 0; t < x.len; ++t) v += (x.at(b, c, t) - m) * (x.at(b, c, t) - m);
      stats.mean[c] = m;
      stats.var[c] = v / static_cast<double>(count);
    }
  } else {
    stats.mean = bn.running_mean;
    stats.var = bn.running_var;
  }

  Tensor3 xhat(x.n, x.ch, x.len);
  Tensor3 y(x.n, x.ch, x.len);
  for (std::size_t c = 0; c < x.ch; ++c) {
    const double inv_std = 1.0 / std::sqrt(stats.var[c] + bn.eps);
    for (std::size_t b = 0; b < x.n; ++b) {
      for (std::size_t t = 0; t < x.len; ++t) {
        const double h = (x.at(b, c, t) - stats.mean[c]) * inv_std;
        xhat.at(b, c, t) = h;
        y.at(b, c, t) = bn.gamma[c] * h + bn.beta[c];
      }
    }
  }
  if (xhat_out) *xhat_out = std::move(xhat);
  if (stats_out) *stats_out = std::move(stats);
  return y;
}

void batchnorm_update_running(BatchNorm& bn, const BatchNormStats& stats) {
  const double n = static_cast<double>(stats.count);
  const double correction = stats.count > 1 ? n / (n - 1.0) : 1.0;
  for (std::size_t c = 0; c < bn.channels(); ++c) {
    bn.running_mean[c] = (1.0 - bn.momentum) * bn.running_mean[c] + bn.momentum * stats.mean[c];
    bn.running_var[c] = (1.0 - bn.momentum) * bn.running_var[c] + bn.momentum * stats.var[c] * correction;
  }
}

}  // namespace detail

Tensor3 batchnorm_forward(const Tensor3& x, BatchNorm& bn, Mode mode, bool update_running) {
  BatchNormStats stats;
  Tensor3 y = detail::batchnorm_apply(x, bn, mode, nullptr, &stats);
  if (mode == Mode::kTrain && update_running) detail::batchnorm_update_running(bn, stats);
  return y;
}

}  // namespace ndtsync
