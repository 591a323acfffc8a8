#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>

#include "ndtsync/error.hpp"
#include "ndtsync/ingest.hpp"

namespace ndtsync {
namespace {

constexpr std::uint32_t kMagicMicro = 0xa1b2c3d4;
constexpr std::uint32_t kMagicNano = 0xa1b23c4d;
constexpr std::uint32_t kMagicPcapng = 0x0a0d0d0a;
constexpr std::size_t kGlobalHeaderLen = 24;
constexpr std::size_t kRecordHeaderLen = 16;

std::uint32_t load_u32(std::span<const std::byte> bytes, std::size_t offset, bool swap) {
  std::uint32_t v = 0;
  std::memcpy(&v, bytes.data() + offset, sizeof v);
  if constexpr (std::endian::native == std::endian::big) swap = !swap;
  return swap ? __builtin_bswap32(v) : v;
}

void store_u32(std::vector<std::byte>& out, std::uint32_t v, bool big_endian) {
  for (int i = 0; i < 4; ++i) {
    const int shift = big_endian ? (3 - i) * 8 : i * 8;
    out.push_back(static_cast<std::byte>((v >> shift) & 0xffu));
  }
}

void store_u16(std::vector<std::byte>& out, std::uint16_t v, bool big_endian) {
  if (big_endian) {
    out.push_back(static_cast<std::byte>(v >> 8));
    out.push_back(static_cast<std::byte>(v & 0xffu));
  } else {
    out.push_back(static_cast<std::byte>(v & 0xffu));
    out.push_back(static_cast<std::byte>(v >> 8));
  }
}

}  // namespace

PcapParseResult parse_pcap(std::span<const std::byte> bytes) {
  if (bytes.size() < 4) {
    throw Error(Errc::kUnknownMagic, "input too short to hold a pcap magic number");
  }
  const std::uint32_t raw = load_u32(bytes, 0, false);
  bool swap = false;
  double frac_scale = 1e6;
  if (raw == kMagicMicro) {
  } else if (raw == __builtin_bswap32(kMagicMicro)) {
    swap = true;
  } else if (raw == kMagicNano) {
    frac_scale = 1e9;
  } else if (raw == __builtin_bswap32(kMagicNano)) {
    swap = true;
    frac_scale = 1e9;
  } else if (raw == kMagicPcapng) {
    throw Error(Errc::kUnknownMagic,
                "pcapng input is not supported; convert it first, e.g. "
                "`editcap -F pcap in.pcapng out.pcap` or `tshark -F pcap`");
  } else {
    char buf[64];
    std::snprintf(buf, sizeof buf, "unknown pcap magic 0x%08x", raw);
    throw Error(Errc::kUnknownMagic, buf);
  }
  if (bytes.size() < kGlobalHeaderLen) {
    throw Error(Errc::kTruncatedRecord, "pcap global header is shorter than 24 bytes");
  }

  PcapParseResult result;
  std::size_t pos = kGlobalHeaderLen;
  while (pos < bytes.size()) {
    if (bytes.size() - pos < kRecordHeaderLen) {
      result.truncated = true;
      break;
    }
    const std::uint32_t ts_sec = load_u32(bytes, pos, swap);
    const std::uint32_t ts_frac = load_u32(bytes, pos + 4, swap);
    const std::uint32_t incl_len = load_u32(bytes, pos + 8, swap);
    pos += kRecordHeaderLen;
    if (bytes.size() - pos < incl_len) {
      result.truncated = true;
      break;
    }
    pos += incl_len;
    result.records.push_back(
        {static_cast<double>(ts_sec) + static_cast<double>(ts_frac) / frac_scale, incl_len});
  }
  return result;
}

std::vector<std::byte> write_pcap(std::span<const PacketRecord> records,
                                  PcapResolution resolution, bool big_endian) {
  const bool nano = resolution == PcapResolution::kNano;
  const double scale = nano ? 1e9 : 1e6;
  std::vector<std::byte> out;
  store_u32(out, nano ? kMagicNano : kMagicMicro, big_endian);
  store_u16(out, 2, big_endian);
  store_u16(out, 4, big_endian);
  store_u32(out, 0, big_endian);      // thiszone
  store_u32(out, 0, big_endian);      // sigfigs
  store_u32(out, 65535, big_endian);  // snaplen
  store_u32(out, 1, big_endian);      // LINKTYPE_ETHERNET
  for (const auto& r : records) {
    if (!std::isfinite(r.ts_seconds) || r.ts_seconds < 0.0) {
      throw Error(Errc::kInvalidArgument, "pcap timestamps must be finite and non-negative");
    }
    auto sec = static_cast<std::uint32_t>(std::floor(r.ts_seconds));
    auto frac = static_cast<std::uint64_t>(std::llround((r.ts_seconds - sec) * scale));
    if (frac >= static_cast<std::uint64_t>(scale)) {
      ++sec;
      frac -= static_cast<std::uint64_t>(scale);
    }
    store_u32(out, sec, big_endian);
    store_u32(out, static_cast<std::uint32_t>(frac), big_endian);
    store_u32(out, r.captured_len, big_endian);
    store_u32(out, r.captured_len, big_endian);
    out.insert(out.end(), r.captured_len, std::byte{0});
  }
  return out;
}

}  // namespace ndtsync
