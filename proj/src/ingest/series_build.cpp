#include <algorithm>
#include <cmath>
#include <numbers>

#include "ndtsync/error.hpp"
#include "ndtsync/ingest.hpp"
#include "ndtsync/rng.hpp"

namespace ndtsync {

std::string_view to_string(ProfileKind kind) noexcept {
  switch (kind) {
    case ProfileKind::kVideo: return "video";
    case ProfileKind::kIperf: return "iperf";
    case ProfileKind::kConstant: return "constant";
    case ProfileKind::kSine: return "sine";
  }
  return "unknown";
}

ProfileKind parse_profile_kind(std::string_view name) {
  for (auto k : {ProfileKind::kVideo, ProfileKind::kIperf, ProfileKind::kConstant, ProfileKind::kSine}) {
    if (name == to_string(k)) return k;
  }
  throw Error(Errc::kInvalidProfile, "unknown profile kind '" + std::string(name) + "'");
}

SyntheticProfile SyntheticProfile::defaults(ProfileKind kind, std::uint64_t seed) {
  SyntheticProfile p;
  p.kind = kind;
  p.seed = seed;
  switch (kind) {
    case ProfileKind::kVideo:
      break;
    case ProfileKind::kIperf:
      p.base_rate = 1000.0;
      p.burst_rate = 1150.0;
      p.p_enter_burst = 0.01;
      p.p_exit_burst = 0.3;
      p.noise_std = 15.0;
      break;
    case ProfileKind::kConstant:
    case ProfileKind::kSine:
      p.base_rate = 100.0;
      p.burst_rate = 0.0;
      p.p_enter_burst = 0.0;
      p.p_exit_burst = 0.0;
      p.noise_std = 0.0;
      break;
  }
  return p;
}

TrafficSeries bucketize(std::span<const PacketRecord> records, double bucket_seconds) {
  if (records.empty()) throw Error(Errc::kEmptyCapture, "capture holds no packet records");
  if (!(bucket_seconds > 0.0) || !std::isfinite(bucket_seconds)) {
    throw Error(Errc::kInvalidArgument, "bucket width must be positive");
  }
  double lo = records.front().ts_seconds;
  double hi = lo;
  for (const auto& r : records) {
    if (!std::isfinite(r.ts_seconds) || r.ts_seconds < 0.0) {
      throw Error(Errc::kInvalidArgument, "packet timestamp is negative or not finite");
    }
    lo = std::min(lo, r.ts_seconds);
    hi = std::max(hi, r.ts_seconds);
  }

  double start = std::floor(lo / bucket_seconds) * bucket_seconds;
  while (start > lo) start -= bucket_seconds;

  // floor() gives the candidate bucket; the edge comparisons below make the
  // result agree exactly with start + i*b <= ts < start + (i+1)*b.
  auto index_of = [&](double ts) {
    auto i = static_cast<std::int64_t>(std::floor((ts - start) / bucket_seconds));
    if (i < 0) i = 0;
    while (i > 0 && start + static_cast<double>(i) * bucket_seconds > ts) --i;
    while (start + static_cast<double>(i + 1) * bucket_seconds <= ts) ++i;
    return static_cast<std::size_t>(i);
  };

  TrafficSeries series;
  series.start_ts = start;
  series.bucket_seconds = bucket_seconds;
  series.label = "capture";
  series.values.assign(index_of(hi) + 1, 0.0);
  for (const auto& r : records) series.values[index_of(r.ts_seconds)] += 1.0;
  return series;
}

TrafficSeries generate(const SyntheticProfile& p, std::size_t n_steps) {
  auto probability_ok = [](double v) { return v >= 0.0 && v <= 1.0; };
  auto rate_ok = [](double v) { return std::isfinite(v) && v >= 0.0; };
  if (!probability_ok(p.p_enter_burst) || !probability_ok(p.p_exit_burst)) {
    throw Error(Errc::kInvalidProfile, "burst transition probabilities must lie in [0, 1]");
  }
  if (!rate_ok(p.base_rate) || !rate_ok(p.burst_rate) || !rate_ok(p.noise_std)) {
    throw Error(Errc::kInvalidProfile, "rates and noise must be finite and non-negative");
  }
  if (n_steps == 0) throw Error(Errc::kInvalidArgument, "n_steps must be at least 1");

  Rng rng(p.seed);
  TrafficSeries series;
  series.label = std::string(to_string(p.kind));
  series.generator = Rng::kName;
  series.values.reserve(n_steps);

  // Per step: emit from the current state, then draw the transition. Every
  // step consumes one uniform and one normal regardless of kind so streams
  // stay aligned when parameters change.
  bool burst = false;
  for (std::size_t t = 0; t < n_steps; ++t) {
    double rate = p.base_rate;
    switch (p.kind) {
      case ProfileKind::kVideo:
      case ProfileKind::kIperf:
        rate = burst ? p.burst_rate : p.base_rate;
        break;
      case ProfileKind::kConstant:
        break;
      case ProfileKind::kSine:
        rate = p.base_rate * (1.0 + 0.5 * std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / 50.0));
        break;
    }
    const double noise = rng.normal() * p.noise_std;
    series.values.push_back(std::max(0.0, rate + noise));
    const double u = rng.uniform();
    burst = burst ? !(u < p.p_exit_burst) : (u < p.p_enter_burst);
  }
  return series;
}

}  // namespace ndtsync
