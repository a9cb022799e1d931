#pragma once

#include <array>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <deque>
#include <fstream>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tinyfit/device/source.hpp"
#include "tinyfit/device/transport.hpp"
#include "tinyfit/runtime.hpp"

namespace tinyfit::device {

/// Device time in seconds since the simulator started.
class Clock {
 public:
  virtual ~Clock() = default;
  virtual double now() = 0;
  virtual void sleep_until(double t) = 0;
  void sleep_for(double dt) { sleep_until(now() + dt); }
};

/// Advances only when asked to sleep; a replay takes no wall time.
class VirtualClock final : public Clock {
 public:
  double now() override { return t_; }
  void sleep_until(double t) override { t_ = std::max(t_, t); }

 private:
  double t_ = 0.0;
};

/// Wall time multiplied by time_scale.
class ScaledClock final : public Clock {
 public:
  explicit ScaledClock(double time_scale);
  double now() override;
  void sleep_until(double t) override;

 private:
  double scale_;
  std::chrono::steady_clock::time_point start_;
};

struct DeviceConfig {
  std::string device_id;
  std::string token;
  double poll_interval_s = 10.0;
  double time_scale = 1.0;
  double flush_interval_s = 3.0;
  std::size_t flush_batch = 200;
  std::size_t max_buffered_events = 10000;
  double max_backoff_s = 60.0;
  int upload_attempts = 5;
  double upload_backoff_s = 0.5;
  std::size_t arena_bytes = runtime::kDefaultArenaBytes;
  std::optional<double> start_time;  // epoch seconds of device time 0; defaults to the wall clock
  std::string boot_id;               // prefix of event ids; random when empty
  std::string event_log;             // JSON-lines path; empty disables the file

  void validate() const;
};

struct RunSummary {
  std::size_t samples = 0;
  std::size_t windows = 0;
  std::size_t inferences = 0;
  std::size_t swaps = 0;
  std::size_t rejected_bundles = 0;
  std::size_t dropped_events = 0;
};

/// Software wristband. A 60-sample ring buffer is fed at 20 Hz; every 30 new
/// samples form a window that is classified on-device by the integer runtime.
/// Only inference events and firmware polls leave the device.
class DeviceSimulator {
 public:
  DeviceSimulator(DeviceConfig config, Transport& transport, SampleSource& source, Clock& clock);
  ~DeviceSimulator();

  /// Verifies the server is reachable and the token valid, then performs the
  /// first firmware poll. Raises ServerUnreachable / Unauthorized.
  void start();

  /// Streams until the source ends, max_samples are consumed, or stop() is
  /// called. Polls and event flushes run when due in device time. With
  /// background = true they run on a second thread against wall time.
  RunSummary run(std::optional<std::size_t> max_samples = {}, bool background = false);
  void stop() { stop_.store(true); }

  /// One firmware check; true when a newer bundle was verified and swapped in.
  bool poll_firmware();
  /// Sends buffered events; false (events kept) when the server is unreachable.
  bool flush_events();

  /// Captures `seconds` of the stream and uploads it as a labeled recording.
  /// Transport failures are retried with exponential backoff under one
  /// idempotency key, so at most one recording is created.
  UploadResult record(const std::string& class_name, double seconds);

  std::uint32_t model_version() const { return engine_.model_version(); }
  std::size_t buffered_events() const;
  const RunSummary& summary() const noexcept { return summary_; }
  std::vector<nlohmann::json> log() const;
  const runtime::MicroEngine& engine() const noexcept { return engine_; }

 private:
  void feed(const Sample& s, double t);
  void emit(nlohmann::json entry);
  double epoch(double t) const { return start_epoch_ + t; }

  DeviceConfig config_;
  ApiClient api_;
  SampleSource& source_;
  Clock& clock_;
  runtime::MicroEngine engine_;

  std::array<Sample, kWindowLength> ring_{};
  std::size_t head_ = 0;  // next write slot
  std::size_t total_samples_ = 0;
  std::uint64_t window_seq_ = 0;

  mutable std::mutex events_mu_;
  std::deque<InferenceEvent> pending_;
  double next_flush_ = 0.0;
  double flush_backoff_ = 0.0;

  double next_poll_ = 0.0;
  double start_epoch_ = 0.0;
  std::string boot_id_;
  std::atomic<bool> stop_{false};
  RunSummary summary_;

  mutable std::mutex log_mu_;
  std::vector<nlohmann::json> log_;
  std::ofstream log_file_;
};

/// Reads "device" settings from a JSON object; see README for keys.
DeviceConfig parse_device_config(const nlohmann::json& j);

}  // namespace tinyfit::device
