#include "tinyfit/device/simulator.hpp"

#include <cmath>
#include <random>
#include <set>
#include <thread>

#include "tinyfit/json_config.hpp"
#include "tinyfit/quant.hpp"

namespace tinyfit::device {

using nlohmann::json;

ScaledClock::ScaledClock(double time_scale) : scale_(time_scale), start_(std::chrono::steady_clock::now()) {
  if (!(time_scale > 0.0)) throw Error(Errc::BadConfig, "time_scale must be positive");
}

double ScaledClock::now() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count() * scale_;
}

void ScaledClock::sleep_until(double t) {
  const double wait = (t - now()) / scale_;
  if (wait > 0) std::this_thread::sleep_for(std::chrono::duration<double>(wait));
}

void DeviceConfig::validate() const {
  if (device_id.empty()) throw Error(Errc::BadConfig, "device_id is required");
  if (!(poll_interval_s > 0.0)) throw Error(Errc::BadConfig, "poll_interval_s must be positive");
  if (!(time_scale > 0.0)) throw Error(Errc::BadConfig, "time_scale must be positive");
  if (!(flush_interval_s > 0.0)) throw Error(Errc::BadConfig, "flush_interval_s must be positive");
  if (flush_batch == 0 || max_buffered_events == 0) throw Error(Errc::BadConfig, "event buffer sizes must be positive");
  if (upload_attempts < 1) throw Error(Errc::BadConfig, "upload_attempts must be at least 1");
}

DeviceConfig parse_device_config(const json& j) {
  reject_unknown_keys(j,
                      {"device_id", "token", "poll_interval_s", "time_scale", "flush_interval_s", "flush_batch",
                       "max_buffered_events", "max_backoff_s", "upload_attempts", "upload_backoff_s", "arena_bytes",
                       "start_time", "boot_id", "event_log"},
                      "device.");
  DeviceConfig c;
  read_config_key(j, "device_id", c.device_id, "device.");
  read_config_key(j, "token", c.token, "device.");
  read_config_key(j, "poll_interval_s", c.poll_interval_s, "device.");
  read_config_key(j, "time_scale", c.time_scale, "device.");
  read_config_key(j, "flush_interval_s", c.flush_interval_s, "device.");
  read_config_key(j, "flush_batch", c.flush_batch, "device.");
  read_config_key(j, "max_buffered_events", c.max_buffered_events, "device.");
  read_config_key(j, "max_backoff_s", c.max_backoff_s, "device.");
  read_config_key(j, "upload_attempts", c.upload_attempts, "device.");
  read_config_key(j, "upload_backoff_s", c.upload_backoff_s, "device.");
  read_config_key(j, "arena_bytes", c.arena_bytes, "device.");
  if (j.contains("start_time") && !j["start_time"].is_null()) {
    double t = 0.0;
    read_config_key(j, "start_time", t, "device.");
    c.start_time = t;
  }
  read_config_key(j, "boot_id", c.boot_id, "device.");
  read_config_key(j, "event_log", c.event_log, "device.");
  c.validate();
  return c;
}

namespace {

std::string random_boot_id() {
  std::random_device rd;
  char buf[17];
  std::snprintf(buf, sizeof buf, "%08x%08x", rd(), rd());
  return buf;
}

bool transient(const Error& e) { return e.code() == Errc::ServerUnreachable || e.code() == Errc::Io; }

}  // namespace

DeviceSimulator::DeviceSimulator(DeviceConfig config, Transport& transport, SampleSource& source, Clock& clock)
    : config_(std::move(config)),
      api_(transport, config_.token),
      source_(source),
      clock_(clock),
      engine_(config_.arena_bytes) {
  config_.validate();
  boot_id_ = config_.boot_id.empty() ? random_boot_id() : config_.boot_id;
  if (!config_.event_log.empty()) {
    log_file_.open(config_.event_log, std::ios::app);
    if (!log_file_) throw Error(Errc::Io, "cannot open event log " + config_.event_log, {{"path", config_.event_log}});
  }
}

DeviceSimulator::~DeviceSimulator() = default;

void DeviceSimulator::emit(json entry) {
  std::lock_guard lock(log_mu_);
  if (log_file_.is_open()) log_file_ << entry.dump() << '\n' << std::flush;
  log_.push_back(std::move(entry));
}

std::vector<json> DeviceSimulator::log() const {
  std::lock_guard lock(log_mu_);
  return log_;
}

std::size_t DeviceSimulator::buffered_events() const {
  std::lock_guard lock(events_mu_);
  return pending_.size();
}

void DeviceSimulator::start() {
  api_.get_device(config_.device_id);
  start_epoch_ = config_.start_time.value_or(
      std::chrono::duration<double>(std::chrono::system_clock::now().time_since_epoch()).count());
  const double t = clock_.now();
  emit({{"type", "start"}, {"t", t}, {"device_id", config_.device_id}});
  poll_firmware();
  next_poll_ = t + config_.poll_interval_s;
  next_flush_ = t + config_.flush_interval_s;
}

bool DeviceSimulator::poll_firmware() {
  const double t = clock_.now();
  const std::uint32_t have = engine_.model_version();
  std::optional<Bundle> bundle;
  try {
    bundle = api_.firmware(config_.device_id, have);
  } catch (const Error& e) {
    emit({{"type", "poll_failed"}, {"t", t}, {"code", to_string(e.code())}});
    return false;
  }
  if (!bundle || bundle->version <= have) return false;
  try {
    // Verify integrity and the advertised version before touching the slot.
    const auto parsed = quant::deserialize(bundle->bytes);
    if (parsed.version != bundle->version)
      throw Error(Errc::Malformed, "bundle version disagrees with X-Bundle-Version");
    engine_.load(bundle->bytes);
  } catch (const Error& e) {
    ++summary_.rejected_bundles;
    emit({{"type", "bundle_rejected"}, {"t", t}, {"version", bundle->version}, {"code", to_string(e.code())}});
    return false;
  }
  ++summary_.swaps;
  emit({{"type", "swap"}, {"t", t}, {"from", have}, {"to", bundle->version}, {"bytes", bundle->bytes.size()}});
  return true;
}

bool DeviceSimulator::flush_events() {
  std::vector<InferenceEvent> batch;
  {
    std::lock_guard lock(events_mu_);
    const std::size_t n = std::min(pending_.size(), config_.flush_batch);
    batch.assign(pending_.begin(), pending_.begin() + static_cast<std::ptrdiff_t>(n));
  }
  const double t = clock_.now();
  if (batch.empty()) {
    next_flush_ = t + config_.flush_interval_s;
    return true;
  }
  bool delivered = true;
  try {
    api_.post_inferences(config_.device_id, batch);
  } catch (const Error& e) {
    if (transient(e)) {
      flush_backoff_ = std::min(config_.max_backoff_s, std::max(config_.flush_interval_s, 2 * flush_backoff_));
      next_flush_ = t + flush_backoff_;
      emit({{"type", "flush_failed"}, {"t", t}, {"code", to_string(e.code())}, {"retry_in", flush_backoff_}});
      return false;
    }
    // The server refused the batch; resending it cannot succeed.
    emit({{"type", "events_rejected"}, {"t", t}, {"code", to_string(e.code())}, {"count", batch.size()}});
    delivered = false;
  }
  std::set<std::string> sent;
  for (const auto& e : batch) sent.insert(*e.event_id);
  {
    std::lock_guard lock(events_mu_);
    while (!pending_.empty() && sent.count(*pending_.front().event_id)) pending_.pop_front();
  }
  flush_backoff_ = 0.0;
  next_flush_ = t + config_.flush_interval_s;
  return delivered;
}

void DeviceSimulator::feed(const Sample& s, double t) {
  ring_[head_] = s;
  head_ = (head_ + 1) % kWindowLength;
  ++total_samples_;
  ++summary_.samples;
  if (total_samples_ < static_cast<std::size_t>(kWindowLength) ||
      (total_samples_ - kWindowLength) % kWindowStride != 0)
    return;

  WindowMatrix<float> w;
  for (int r = 0; r < kWindowLength; ++r) {
    const auto& row = ring_[(head_ + static_cast<std::size_t>(r)) % kWindowLength];
    for (int c = 0; c < kChannels; ++c) w(r, c) = row[static_cast<std::size_t>(c)];
  }
  const std::uint64_t seq = window_seq_++;
  ++summary_.windows;
  if (!engine_.loaded()) {
    emit({{"type", "no_model"}, {"t", t}, {"seq", seq}});
    return;
  }
  const auto r = engine_.infer(w);
  ++summary_.inferences;
  InferenceEvent ev;
  ev.timestamp = epoch(t);
  ev.class_name = r.class_name.str();
  ev.confidence = r.confidence;
  ev.model_version = r.model_version;
  ev.event_id = boot_id_ + "-" + std::to_string(seq);
  emit({{"type", "inference"},
        {"t", t},
        {"seq", seq},
        {"class", ev.class_name},
        {"confidence", r.confidence},
        {"model_version", r.model_version}});
  std::lock_guard lock(events_mu_);
  pending_.push_back(std::move(ev));
  while (pending_.size() > config_.max_buffered_events) {
    pending_.pop_front();
    ++summary_.dropped_events;
  }
}

RunSummary DeviceSimulator::run(std::optional<std::size_t> max_samples, bool background) {
  stop_.store(false);
  std::atomic<bool> done{false};
  std::thread side;
  if (background)
    side = std::thread([&] {
      while (!done.load()) {
        const double t = clock_.now();
        if (t >= next_poll_) {
          poll_firmware();
          next_poll_ = t + config_.poll_interval_s;
        }
        if (t >= next_flush_) flush_events();
        std::this_thread::sleep_for(std::chrono::milliseconds(20));
      }
    });

  const double dt = 1.0 / kTargetRateHz;
  double t = clock_.now();
  std::size_t consumed = 0;
  while (!stop_.load() && (!max_samples || consumed < *max_samples)) {
    if (!background) {
      if (t >= next_poll_) {
        poll_firmware();
        next_poll_ = t + config_.poll_interval_s;
      }
      if (t >= next_flush_) flush_events();
    }
    const auto s = source_.next();
    if (!s) break;
    clock_.sleep_until(t);
    feed(*s, t);
    ++consumed;
    t += dt;
  }
  done.store(true);
  if (side.joinable()) side.join();
  flush_events();
  return summary_;
}

UploadResult DeviceSimulator::record(const std::string& class_name, double seconds) {
  if (!(seconds >= 3.0))
    throw Error(Errc::TooShort, "recordings must last at least 3 s", {{"min_seconds", "3"}});
  const auto n = static_cast<std::size_t>(std::llround(seconds * kTargetRateHz));
  std::vector<ImuSample> samples;
  samples.reserve(n);
  const double t0 = clock_.now();
  for (std::size_t i = 0; i < n; ++i) {
    const auto s = source_.next();
    if (!s) throw Error(Errc::TooShort, "source ended during recording", {{"captured", std::to_string(i)}});
    ImuSample x;
    x.t = static_cast<double>(i) / kTargetRateHz;
    std::copy(s->begin(), s->end(), x.channels.begin());
    samples.push_back(x);
    clock_.sleep_until(t0 + x.t);
  }

  static std::atomic<std::uint64_t> counter{0};
  const std::string key = boot_id_ + "-rec-" + std::to_string(counter++);
  double backoff = config_.upload_backoff_s;
  for (int attempt = 1;; ++attempt) {
    try {
      const auto r = api_.upload_recording(config_.device_id, class_name, kTargetRateHz, samples, key);
      emit({{"type", "recording_uploaded"},
            {"t", clock_.now()},
            {"class", class_name},
            {"samples", samples.size()},
            {"windows", r.window_count},
            {"recording_id", r.recording_id}});
      return r;
    } catch (const Error& e) {
      if (!transient(e) || attempt >= config_.upload_attempts) throw;
      emit({{"type", "upload_retry"}, {"t", clock_.now()}, {"attempt", attempt}, {"code", to_string(e.code())}});
      clock_.sleep_for(backoff);
      backoff *= 2;
    }
  }
}

}  // namespace tinyfit::device
