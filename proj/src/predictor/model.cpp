#include <algorithm>
#include <cmath>

#include "ndtsync/cnn.hpp"
#include "ndtsync/error.hpp"
#include "ndtsync/rng.hpp"

namespace ndtsync {
namespace detail {
Tensor3 batchnorm_apply(const Tensor3& x, const BatchNorm& bn, Mode mode, Tensor3* xhat_out,
                        BatchNormStats* stats_out);
void batchnorm_update_running(BatchNorm& bn, const BatchNormStats& stats);
}  // namespace detail

namespace {

double pairwise_sum(const double* p, std::size_t n) {
  if (n <= 8) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += p[i];
    return s;
  }
  const std::size_t half = n / 2;
  return pairwise_sum(p, half) + pairwise_sum(p + half, n - half);
}

}  // namespace

void CnnConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(Errc::kInvalidArgument, "invalid CNN config: " + what); };
  if (window_len == 0) fail("window_len must be positive");
  if (horizon == 0) fail("horizon must be positive");
  if (conv_layers != channels_per_layer.size()) fail("conv_layers must equal len(channels_per_layer)");
  if (kernel_size == 0) fail("kernel_size must be >= 1");
  if (input_channels != 1) fail("only single-channel input is supported");
  if (std::any_of(channels_per_layer.begin(), channels_per_layer.end(), [](std::size_t c) { return c == 0; }))
    fail("channel counts must be positive");
  if (batch_size == 0) fail("batch_size must be positive");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) fail("learning_rate must be positive");
}

CnnModel CnnModel::init(const CnnConfig& config, const Normalizer& normalizer) {
  config.validate();
  CnnModel m;
  m.config = config;
  m.normalizer = normalizer;
  Rng rng(config.seed);
  std::size_t in_ch = config.input_channels;
  for (std::size_t out_ch : config.channels_per_layer) {
    ConvBlock blk;
    blk.in_ch = in_ch;
    blk.out_ch = out_ch;
    blk.kernel = config.kernel_size;
    blk.weight.resize(out_ch * in_ch * config.kernel_size);
    const double std_w = std::sqrt(2.0 / static_cast<double>(in_ch * config.kernel_size));
    for (auto& w : blk.weight) w = rng.normal() * std_w;
    blk.bias.assign(out_ch, 0.0);
    blk.bn = BatchNorm(out_ch);
    m.blocks.push_back(std::move(blk));
    in_ch = out_ch;
  }
  m.head.in = in_ch * config.window_len;
  m.head.out = config.horizon;
  m.head.weight.resize(m.head.in * m.head.out);
  const double std_h = std::sqrt(1.0 / static_cast<double>(m.head.in));
  for (auto& w : m.head.weight) w = rng.normal() * std_h;
  m.head.bias.assign(m.head.out, 0.0);
  return m;
}

std::vector<std::span<double>> CnnModel::parameters() {
  std::vector<std::span<double>> out;
  for (auto& b : blocks) {
    out.emplace_back(b.weight);
    out.emplace_back(b.bias);
    out.emplace_back(b.bn.gamma);
    out.emplace_back(b.bn.beta);
  }
  out.emplace_back(head.weight);
  out.emplace_back(head.bias);
  return out;
}

std::vector<std::span<const double>> CnnModel::parameters() const {
  std::vector<std::span<const double>> out;
  for (const auto& b : blocks) {
    out.emplace_back(b.weight);
    out.emplace_back(b.bias);
    out.emplace_back(b.bn.gamma);
    out.emplace_back(b.bn.beta);
  }
  out.emplace_back(head.weight);
  out.emplace_back(head.bias);
  return out;
}

std::size_t CnnModel::parameter_count() const {
  std::size_t n = 0;
  for (auto p : parameters()) n += p.size();
  return n;
}

std::vector<std::vector<double>> forward(const CnnModel& model, std::span<const std::vector<double>> windows,
                                         Mode mode, ForwardCache* cache) {
  const std::size_t batch = windows.size();
  const std::size_t len = model.config.window_len;
  if (batch == 0) throw Error(Errc::kShapeMismatch, "empty batch");
  Tensor3 x(batch, 1, len);
  for (std::size_t b = 0; b < batch; ++b) {
    if (windows[b].size() != len) {
      throw Error(Errc::kShapeMismatch, "window of length " + std::to_string(windows[b].size()) +
                                            ", model expects " + std::to_string(len));
    }
    std::copy(windows[b].begin(), windows[b].end(), &x.at(b, 0, 0));
  }

  if (cache) cache->layers.assign(model.blocks.size(), {});
  for (std::size_t l = 0; l < model.blocks.size(); ++l) {
    const auto& blk = model.blocks[l];
    if (blk.in_ch != x.ch) throw Error(Errc::kShapeMismatch, "layer input channels mismatch");
    Tensor3 z = conv1d_same(x, blk.weight, blk.bias, blk.out_ch, blk.kernel);
    Tensor3 xhat;
    BatchNormStats stats;
    Tensor3 y = detail::batchnorm_apply(z, blk.bn, mode, cache ? &xhat : nullptr, cache ? &stats : nullptr);
    for (auto& v : y.data) v = v > 0.0 ? v : 0.0;
    if (cache) {
      auto& lc = cache->layers[l];
      lc.input = std::move(x);
      lc.xhat = std::move(xhat);
      lc.stats = std::move(stats);
      lc.activated = y;
    }
    x = std::move(y);
  }

  const auto& head = model.head;
  if (x.ch * x.len != head.in) throw Error(Errc::kShapeMismatch, "head input size mismatch");
  std::vector<std::vector<double>> out(batch, std::vector<double>(head.out));
  for (std::size_t b = 0; b < batch; ++b) {
    const double* a = &x.data[b * head.in];
    for (std::size_t o = 0; o < head.out; ++o) {
      const double* w = &head.weight[o * head.in];
      double s = head.bias[o];
      for (std::size_t i = 0; i < head.in; ++i) s += w[i] * a[i];
      out[b][o] = s;
    }
  }
  if (cache) cache->flat = std::move(x.data);
  return out;
}

void commit_running_stats(CnnModel& model, const ForwardCache& cache) {
  for (std::size_t l = 0; l < model.blocks.size() && l < cache.layers.size(); ++l) {
    detail::batchnorm_update_running(model.blocks[l].bn, cache.layers[l].stats);
  }
}

double mse_loss(std::span<const std::vector<double>> outputs, std::span<const std::vector<double>> targets) {
  if (outputs.size() != targets.size() || outputs.empty()) throw Error(Errc::kShapeMismatch, "loss shapes");
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t b = 0; b < outputs.size(); ++b) {
    if (outputs[b].size() != targets[b].size()) throw Error(Errc::kShapeMismatch, "loss shapes");
    for (std::size_t o = 0; o < outputs[b].size(); ++o) {
      const double d = outputs[b][o] - targets[b][o];
      s += d * d;
      ++n;
    }
  }
  return s / static_cast<double>(n);
}

Gradients backward(const CnnModel& model, const ForwardCache& cache, std::span<const std::vector<double>> outputs,
                   std::span<const std::vector<double>> targets, double loss_scale) {
  const std::size_t batch = outputs.size();
  const auto& head = model.head;
  if (batch == 0 || targets.size() != batch || cache.layers.size() != model.blocks.size() ||
      cache.flat.size() != batch * head.in) {
    throw Error(Errc::kShapeMismatch, "backward called without a matching train-mode forward");
  }

  Gradients g;
  g.tensors.resize(model.blocks.size() * 4 + 2);
  auto& g_head_w = g.tensors[model.blocks.size() * 4];
  auto& g_head_b = g.tensors[model.blocks.size() * 4 + 1];
  g_head_w.assign(head.weight.size(), 0.0);
  g_head_b.assign(head.bias.size(), 0.0);

  // d(scale * mean (y - t)^2) / dy
  const double coeff = 2.0 * loss_scale / static_cast<double>(batch * head.out);
  const std::size_t last_ch = model.blocks.empty() ? 1 : model.blocks.back().out_ch;
  Tensor3 grad(batch, last_ch, model.config.window_len);
  for (std::size_t b = 0; b < batch; ++b) {
    const double* a = &cache.flat[b * head.in];
    double* da = &grad.data[b * head.in];
    for (std::size_t o = 0; o < head.out; ++o) {
      const double dy = coeff * (outputs[b][o] - targets[b][o]);
      g_head_b[o] += dy;
      double* gw = &g_head_w[o * head.in];
      const double* w = &head.weight[o * head.in];
      for (std::size_t i = 0; i < head.in; ++i) {
        gw[i] += dy * a[i];
        da[i] += dy * w[i];
      }
    }
  }

  for (std::size_t li = model.blocks.size(); li-- > 0;) {
    const auto& blk = model.blocks[li];
    const auto& lc = cache.layers[li];
    auto& g_w = g.tensors[li * 4];
    auto& g_b = g.tensors[li * 4 + 1];
    auto& g_gamma = g.tensors[li * 4 + 2];
    auto& g_beta = g.tensors[li * 4 + 3];
    g_w.assign(blk.weight.size(), 0.0);
    g_b.assign(blk.out_ch, 0.0);
    g_gamma.assign(blk.out_ch, 0.0);
    g_beta.assign(blk.out_ch, 0.0);

    // ReLU
    for (std::size_t i = 0; i < grad.data.size(); ++i) {
      if (!(lc.activated.data[i] > 0.0)) grad.data[i] = 0.0;
    }

    // Batch norm through the batch statistics.
    Tensor3 dz(grad.n, grad.ch, grad.len);
    const double count = static_cast<double>(lc.stats.count);
    for (std::size_t c = 0; c < blk.out_ch; ++c) {
      const double inv_std = 1.0 / std::sqrt(lc.stats.var[c] + blk.bn.eps);
      double sum_dy = 0.0;
      double sum_dy_xhat = 0.0;
      for (std::size_t b = 0; b < grad.n; ++b) {
        for (std::size_t t = 0; t < grad.len; ++t) {
          sum_dy += grad.at(b, c, t);
          sum_dy_xhat += grad.at(b, c, t) * lc.xhat.at(b, c, t);
        }
      }
      g_beta[c] = sum_dy;
      g_gamma[c] = sum_dy_xhat;
      const double gamma = blk.bn.gamma[c];
      // dxhat = gamma * dy; dz = inv_std/M * (M dxhat - sum dxhat - xhat sum(dxhat xhat))
      for (std::size_t b = 0; b < grad.n; ++b) {
        for (std::size_t t = 0; t < grad.len; ++t) {
          dz.at(b, c, t) = gamma * inv_std / count *
                           (count * grad.at(b, c, t) - sum_dy - lc.xhat.at(b, c, t) * sum_dy_xhat);
        }
      }
    }

    // Convolution.
    const std::size_t len = grad.len;
    const std::size_t kernel = blk.kernel;
    const auto pad_left = static_cast<std::ptrdiff_t>((kernel - 1) / 2);
    Tensor3 dx(grad.n, blk.in_ch, len);
    for (std::size_t b = 0; b < grad.n; ++b) {
      for (std::size_t o = 0; o < blk.out_ch; ++o) {
        const double* d = dz.row(b, o);
        double s = 0.0;
        for (std::size_t t = 0; t < len; ++t) s += d[t];
        g_b[o] += s;
        for (std::size_t i = 0; i < blk.in_ch; ++i) {
          const double* xin = lc.input.row(b, i);
          double* dxi = dx.row(b, i);
          const std::size_t wbase = (o * blk.in_ch + i) * kernel;
          for (std::size_t k = 0; k < kernel; ++k) {
            const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(k) - pad_left;
            const std::ptrdiff_t t0 = std::max<std::ptrdiff_t>(0, -shift);
            const std::ptrdiff_t t1 = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(len),
                                                               static_cast<std::ptrdiff_t>(len) - shift);
            const double wk = blk.weight[wbase + k];
            double acc = 0.0;
            for (std::ptrdiff_t t = t0; t < t1; ++t) {
              acc += d[t] * xin[t + shift];
              dxi[t + shift] += d[t] * wk;
            }
            g_w[wbase + k] += acc;
          }
        }
      }
    }
    grad = std::move(dx);
  }
  return g;
}

void AdamOptimizer::step(CnnModel& model, const Gradients& grads) {
  auto params = model.parameters();
  if (grads.tensors.size() != params.size()) throw Error(Errc::kShapeMismatch, "gradient/parameter count mismatch");
  if (m_.empty()) {
    for (auto p : params) {
      m_.emplace_back(p.size(), 0.0);
      v_.emplace_back(p.size(), 0.0);
    }
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto p = params[k];
    const auto& g = grads.tensors[k];
    if (g.size() != p.size()) throw Error(Errc::kShapeMismatch, "gradient tensor size mismatch");
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      p[i] -= lr_ * m_hat / (std::sqrt(v_hat) + eps_);
    }
  }
}

ErrorMetrics compute_metrics(std::span<const double> predicted, std::span<const double> actual) {
  if (predicted.size() != actual.size()) throw Error(Errc::kShapeMismatch, "metric inputs differ in length");
  if (predicted.empty()) throw Error(Errc::kEmptyDataset, "no samples to evaluate");
  std::vector<double> abs_err(predicted.size());
  std::vector<double> sq_err(predicted.size());
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const double e = actual[i] - predicted[i];
    abs_err[i] = std::abs(e);
    sq_err[i] = e * e;
  }
  const double n = static_cast<double>(predicted.size());
  return {pairwise_sum(abs_err.data(), abs_err.size()) / n, std::sqrt(pairwise_sum(sq_err.data(), sq_err.size()) / n),
          predicted.size()};
}

Prediction predict(const CnnModel& model, std::span<const double> window_pps, std::size_t made_for_step) {
  std::vector<std::vector<double>> in(1, std::vector<double>(window_pps.size()));
  for (std::size_t i = 0; i < window_pps.size(); ++i) in[0][i] = model.normalizer.transform(window_pps[i]);
  auto out = forward(model, in, Mode::kInfer);
  Prediction p;
  p.made_for_step = made_for_step;
  p.values.reserve(out[0].size());
  for (double y : out[0]) p.values.push_back(std::max(0.0, model.normalizer.inverse(y)));
  return p;
}

ErrorMetrics evaluate(const CnnModel& model, const WindowedDataset& dataset) {
  if (dataset.empty()) throw Error(Errc::kEmptyDataset, "cannot evaluate on an empty dataset");
  constexpr std::size_t kChunk = 256;
  std::vector<double> pred;
  std::vector<double> actual;
  const auto& nz = model.normalizer;
  for (std::size_t start = 0; start < dataset.size(); start += kChunk) {
    const std::size_t count = std::min(kChunk, dataset.size() - start);
    auto out = forward(model, std::span(dataset.inputs).subspan(start, count), Mode::kInfer);
    for (std::size_t b = 0; b < count; ++b) {
      for (std::size_t o = 0; o < out[b].size(); ++o) {
        pred.push_back(std::max(0.0, nz.inverse(out[b][o])));
        actual.push_back(nz.inverse(dataset.targets[start + b][o]));
      }
    }
  }
  return compute_metrics(pred, actual);
}

ErrorMetrics persistence_baseline(const WindowedDataset& dataset, const Normalizer& normalizer) {
  if (dataset.empty()) throw Error(Errc::kEmptyDataset, "cannot evaluate on an empty dataset");
  std::vector<double> pred;
  std::vector<double> actual;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const double last = normalizer.inverse(dataset.inputs[i].back());
    for (double t : dataset.targets[i]) {
      pred.push_back(last);
      actual.push_back(normalizer.inverse(t));
    }
  }
  return compute_metrics(pred, actual);
}

}  // namespace ndtsync
