#include "tinyfit/error.hpp"

namespace tinyfit {

std::string_view to_string(Errc code) noexcept {
  switch (code) {
    case Errc::EmptyRecording: return "EmptyRecording";
    case Errc::BadTimestamps: return "BadTimestamps";
    case Errc::EmptyDataset: return "EmptyDataset";
    case Errc::DatasetNotFound: return "DatasetNotFound";
    case Errc::TooFewSubjects: return "TooFewSubjects";
    case Errc::BadClassCount: return "BadClassCount";
    case Errc::BadInput: return "BadInput";
    case Errc::BadLabel: return "BadLabel";
    case Errc::InsufficientExamples: return "InsufficientExamples";
    case Errc::BadConfig: return "BadConfig";
    case Errc::BadSparsity: return "BadSparsity";
    case Errc::EmptyCalibration: return "EmptyCalibration";
    case Errc::BadMagic: return "BadMagic";
    case Errc::BadVersion: return "BadVersion";
    case Errc::CrcMismatch: return "CrcMismatch";
    case Errc::Truncated: return "Truncated";
    case Errc::Malformed: return "Malformed";
    case Errc::SizeBudgetExceeded: return "SizeBudgetExceeded";
    case Errc::ArenaOverflow: return "ArenaOverflow";
    case Errc::NoModel: return "NoModel";
    case Errc::NotFound: return "NotFound";
    case Errc::Unauthorized: return "Unauthorized";
    case Errc::NotLinked: return "NotLinked";
    case Errc::TooShort: return "TooShort";
    case Errc::JobAlreadyActive: return "JobAlreadyActive";
    case Errc::BadRequest: return "BadRequest";
    case Errc::ServerUnreachable: return "ServerUnreachable";
    case Errc::Io: return "Io";
  }
  return "Unknown";
}

std::optional<Errc> errc_from_string(std::string_view name) noexcept {
  for (int i = 0; i <= static_cast<int>(Errc::Io); ++i)
    if (to_string(static_cast<Errc>(i)) == name) return static_cast<Errc>(i);
  return std::nullopt;
}

}  // namespace tinyfit
