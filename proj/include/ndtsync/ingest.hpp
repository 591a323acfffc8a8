#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ndtsync {

struct PacketRecord {
  double ts_seconds = 0.0;
  std::uint32_t captured_len = 0;

  friend bool operator==(const PacketRecord&, const PacketRecord&) = default;
};

/// Uniformly bucketed packets-per-bucket series.
struct TrafficSeries {
  double start_ts = 0.0;
  double bucket_seconds = 1.0;
  std::vector<double> values;
  std::string label;
  /// Name of the generator that produced the series, empty for captures.
  std::string generator;

  std::size_t size() const noexcept { return values.size(); }
  double time_at(std::size_t i) const noexcept {
    return start_ts + static_cast<double>(i) * bucket_seconds;
  }
};

enum class ProfileKind { kVideo, kIperf, kConstant, kSine };

std::string_view to_string(ProfileKind kind) noexcept;
ProfileKind parse_profile_kind(std::string_view name);

struct SyntheticProfile {
  ProfileKind kind = ProfileKind::kVideo;
  double base_rate = 200.0;
  double burst_rate = 800.0;
  double p_enter_burst = 0.05;
  double p_exit_burst = 0.2;
  double noise_std = 20.0;
  std::uint64_t seed = 1;

  /// Reasonable defaults per kind: video is bursty, iperf is a steady bulk
  /// transfer with rare small surges.
  static SyntheticProfile defaults(ProfileKind kind, std::uint64_t seed = 1);
};

// -- pcap -------------------------------------------------------------------

struct PcapParseResult {
  std::vector<PacketRecord> records;
  /// Set when the input ended inside a record header or payload; `records`
  /// then holds everything read before the cut.
  bool truncated = false;
};

/// Classic libpcap format only, either byte order, micro- or nanosecond
/// timestamps. Throws Error(kUnknownMagic) for anything else, including
/// pcapng, and Error(kTruncatedRecord) when even the global header is short.
PcapParseResult parse_pcap(std::span<const std::byte> bytes);

enum class PcapResolution { kMicro, kNano };

/// Writes a little-endian classic pcap with zero-filled payloads. Used for
/// fixtures and tests; inverse of parse_pcap on (ts, len).
std::vector<std::byte> write_pcap(std::span<const PacketRecord> records,
                                  PcapResolution resolution = PcapResolution::kMicro,
                                  bool big_endian = false);

// -- series construction ------------------------------------------------------

/// Counts packets per bucket. The first bucket starts at
/// floor(min_ts / bucket_seconds) * bucket_seconds so edges fall on whole
/// multiples of the bucket width.
TrafficSeries bucketize(std::span<const PacketRecord> records, double bucket_seconds = 1.0);

TrafficSeries generate(const SyntheticProfile& profile, std::size_t n_steps);

// -- CSV ----------------------------------------------------------------------

TrafficSeries read_csv(std::string_view text);
std::string write_csv(const TrafficSeries& series);

TrafficSeries read_csv_file(const std::string& path);
void write_csv_file(const TrafficSeries& series, const std::string& path);

std::vector<std::byte> read_binary_file(const std::string& path);

}  // namespace ndtsync
