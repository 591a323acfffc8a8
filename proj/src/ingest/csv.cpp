#include <charconv>
#include <cstring>
#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>

#include "ndtsync/error.hpp"
#include "ndtsync/ingest.hpp"

namespace ndtsync {
namespace {

constexpr double kSpacingTolerance = 1e-6;

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

bool parse_double(std::string_view s, double& out) {
  s = trim(s);
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && ptr == s.data() + s.size();
}

void append_double(std::string& out, double v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  out.append(buf, ptr);
}

}  // namespace

TrafficSeries read_csv(std::string_view text) {
  TrafficSeries series;
  series.label.clear();
  bool have_bucket_comment = false;
  bool seen_header = false;
  std::vector<double> stamps;

  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = trim(text.substr(0, nl));
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (line.empty()) continue;

    if (!seen_header) {
      if (line.front() == '#') {
        line.remove_prefix(1);
        const auto colon = line.find(':');
        if (colon == std::string_view::npos) continue;
        const auto key = trim(line.substr(0, colon));
        const auto value = trim(line.substr(colon + 1));
        if (key == "label") {
          series.label = std::string(value);
        } else if (key == "generator") {
          series.generator = std::string(value);
        } else if (key == "bucket_seconds") {
          if (!parse_double(value, series.bucket_seconds) || !(series.bucket_seconds > 0.0)) {
            throw Error(Errc::kMalformedRow, "bad bucket_seconds comment on line " + std::to_string(line_no));
          }
          have_bucket_comment = true;
        }
        continue;
      }
      if (line != "timestamp,pps") {
        throw Error(Errc::kMalformedRow, "expected header 'timestamp,pps' on line " + std::to_string(line_no));
      }
      seen_header = true;
      continue;
    }

    const auto comma = line.find(',');
    double ts = 0.0;
    double pps = 0.0;
    if (comma == std::string_view::npos || line.find(',', comma + 1) != std::string_view::npos ||
        !parse_double(line.substr(0, comma), ts) || !parse_double(line.substr(comma + 1), pps) ||
        !std::isfinite(ts) || !std::isfinite(pps) || pps < 0.0) {
      throw Error(Errc::kMalformedRow, "malformed row on line " + std::to_string(line_no) + ": '" +
                                           std::string(line) + "'");
    }
    stamps.push_back(ts);
    series.values.push_back(pps);
  }

  if (!seen_header) throw Error(Errc::kMalformedRow, "missing 'timestamp,pps' header");
  if (series.values.empty()) throw Error(Errc::kEmptyInput, "CSV holds no data rows");

  series.start_ts = stamps.front();
  if (!have_bucket_comment) {
    series.bucket_seconds = stamps.size() >= 2 ? stamps[1] - stamps[0] : 1.0;
  }
  if (!(series.bucket_seconds > 0.0)) {
    throw Error(Errc::kNonUniformSpacing, "timestamps are not strictly ascending");
  }
  for (std::size_t i = 0; i < stamps.size(); ++i) {
    if (std::abs(stamps[i] - series.time_at(i)) > kSpacingTolerance) {
      throw Error(Errc::kNonUniformSpacing,
                  "row " + std::to_string(i) + " breaks uniform spacing of " + std::to_string(series.bucket_seconds) + " s");
    }
  }
  return series;
}

std::string write_csv(const TrafficSeries& series) {
  std::string out;
  if (!series.label.empty()) out += "# label: " + series.label + "\n";
  if (!series.generator.empty()) out += "# generator: " + series.generator + "\n";
  out += "# bucket_seconds: ";
  append_double(out, series.bucket_seconds);
  out += "\ntimestamp,pps\n";
  for (std::size_t i = 0; i < series.size(); ++i) {
    append_double(out, series.time_at(i));
    out += ',';
    append_double(out, series.values[i]);
    out += '\n';
  }
  return out;
}

TrafficSeries read_csv_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::kInvalidArgument, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return read_csv(ss.str());
}

void write_csv_file(const TrafficSeries& series, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::kInvalidArgument, "cannot write " + path);
  out << write_csv(series);
}

std::vector<std::byte> read_binary_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::kInvalidArgument, "cannot open " + path);
  std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::vector<std::byte> out(raw.size());
  std::memcpy(out.data(), raw.data(), raw.size());
  return out;
}

}  // namespace ndtsync
