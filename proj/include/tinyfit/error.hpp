#pragma once

#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace tinyfit {

enum class Errc {
  // signal
  EmptyRecording,
  BadTimestamps,
  EmptyDataset,
  DatasetNotFound,
  TooFewSubjects,
  // nn
  BadClassCount,
  BadInput,
  BadLabel,
  InsufficientExamples,
  BadConfig,
  // quant / bundle format
  BadSparsity,
  EmptyCalibration,
  BadMagic,
  BadVersion,
  CrcMismatch,
  Truncated,
  Malformed,
  SizeBudgetExceeded,
  // runtime
  ArenaOverflow,
  NoModel,
  // server / device
  NotFound,
  Unauthorized,
  NotLinked,
  TooShort,
  JobAlreadyActive,
  BadRequest,
  ServerUnreachable,
  Io,
};

std::string_view to_string(Errc code) noexcept;
std::optional<Errc> errc_from_string(std::string_view name) noexcept;

/// Every failure raised by the library carries a machine-readable code plus
/// optional key/value details (class name, byte counts, ...).
class Error : public std::runtime_error {
 public:
  using Details = std::map<std::string, std::string>;

  Error(Errc code, const std::string& message, Details details = {})
      : std::runtime_error(message), code_(code), details_(std::move(details)) {}

  Errc code() const noexcept { return code_; }
  const Details& details() const noexcept { return details_; }

 private:
  Errc code_;
  Details details_;
};

}  // namespace tinyfit
