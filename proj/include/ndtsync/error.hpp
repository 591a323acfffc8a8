#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ndtsync {

enum class Errc {
  kInvalidArgument,
  // ingest
  kUnknownMagic,
  kTruncatedRecord,
  kEmptyCapture,
  kInvalidProfile,
  kMalformedRow,
  kNonUniformSpacing,
  // series
  kTooShort,
  kEmptyInput,
  // predictor
  kShapeMismatch,
  kDegenerateBatch,
  kEmptyDataset,
  kNonFiniteLoss,
  kVersionMismatch,
  kCorruptModel,
  // pid
  kNotEnabled,
  kNonFiniteError,
  kInvalidGains,
  // synchronizer
  kInvalidCommand,
  kExhausted,
};

std::string_view to_string(Errc code) noexcept;

/// Every failure raised by the library carries one of the codes above so
/// callers (the CLI, the HTTP layer) can map it without string matching.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace ndtsync
