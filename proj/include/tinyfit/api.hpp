#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace tinyfit {

/// Types exchanged between devices and the server.

struct UploadResult {
  std::int64_t recording_id = 0;
  std::size_t window_count = 0;
  std::size_t sample_count = 0;  // after resampling to 20 Hz
};

struct InferenceEvent {
  double timestamp = 0;  // seconds since the Unix epoch
  std::string class_name;
  double confidence = 0;
  std::uint32_t model_version = 0;
  std::optional<std::string> event_id;  // device-assigned; repeats are ignored
};

struct Bundle {
  std::uint32_t version = 0;
  std::vector<std::uint8_t> bytes;
};

}  // namespace tinyfit
