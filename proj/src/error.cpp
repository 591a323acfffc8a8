#include "ndtsync/error.hpp"

#include <cmath>
#include <numbers>

#include "ndtsync/rng.hpp"

namespace ndtsync {

std::string_view to_string(Errc code) noexcept {
  switch (code) {
    case Errc::kInvalidArgument: return "InvalidArgument";
    case Errc::kUnknownMagic: return "UnknownMagic";
    case Errc::kTruncatedRecord: return "TruncatedRecord";
    case Errc::kEmptyCapture: return "EmptyCapture";
    case Errc::kInvalidProfile: return "InvalidProfile";
    case Errc::kMalformedRow: return "MalformedRow";
    case Errc::kNonUniformSpacing: return "NonUniformSpacing";
    case Errc::kTooShort: return "TooShort";
    case Errc::kEmptyInput: return "EmptyInput";
    case Errc::kShapeMismatch: return "ShapeMismatch";
    case Errc::kDegenerateBatch: return "DegenerateBatch";
    case Errc::kEmptyDataset: return "EmptyDataset";
    case Errc::kNonFiniteLoss: return "NonFiniteLoss";
    case Errc::kVersionMismatch: return "VersionMismatch";
    case Errc::kCorruptModel: return "CorruptModel";
    case Errc::kNotEnabled: return "NotEnabled";
    case Errc::kNonFiniteError: return "NonFiniteError";
    case Errc::kInvalidGains: return "InvalidGains";
    case Errc::kInvalidCommand: return "InvalidCommand";
    case Errc::kExhausted: return "Exhausted";
  }
  return "Unknown";
}

double Rng::normal() {
  const double u1 = uniform_open();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace ndtsync
