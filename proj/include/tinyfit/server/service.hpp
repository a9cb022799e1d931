#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "tinyfit/api.hpp"
#include "tinyfit/nn/checkpoint.hpp"
#include "tinyfit/nn/train.hpp"
#include "tinyfit/quant.hpp"
#include "tinyfit/signal.hpp"

namespace tinyfit::server {

class Database;

struct User {
  std::string id;
  std::string name;
};

struct Device {
  std::string id;
  std::string name;
  std::optional<std::string> owner;  // user id once linked
  std::uint32_t version = 0;         // latest published bundle, 0 = none
  std::vector<std::string> classes;  // in creation order
};

struct RegisteredDevice {
  Device device;
  std::string token;
  bool created = true;  // false when an idempotency key matched
};

struct ClassCount {
  std::string name;
  std::size_t windows = 0;
};

enum class JobStatus { queued, running, succeeded, failed };
std::string_view to_string(JobStatus s) noexcept;

struct Job {
  std::string id;
  std::string device_id;
  JobStatus status = JobStatus::queued;
  int examples_per_class = 15;
  nlohmann::json metrics = nlohmann::json::object();
  std::optional<std::uint32_t> bundle_version;
  std::optional<std::string> failure;
  double created_at = 0;
  std::optional<double> finished_at;

  bool terminal() const noexcept { return status == JobStatus::succeeded || status == JobStatus::failed; }
};

struct ServiceConfig {
  std::string database = "tinyfit.db";
  std::string pretrained_checkpoint;  // TFLT produced offline
  std::string dataset_tag = "synthetic";
  int workers = 2;
  int examples_per_class = 15;
  nn::TrainConfig fine_tune{.epochs = 50};
  quant::PackageOptions package;
};

ServiceConfig parse_service_config(const nlohmann::json& j);

/// Business logic behind the HTTP API. Thread-safe; all state lives in the
/// SQLite store so a restarted service sees every committed write.
class Service {
 public:
  /// Jobs left queued or running by a previous process are marked failed.
  Service(ServiceConfig config, nn::Checkpoint pretrained);
  explicit Service(ServiceConfig config);  // loads config.pretrained_checkpoint
  ~Service();

  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  User create_user(const std::string& name);
  User get_user(const std::string& id) const;

  /// A repeated idempotency key returns the original device and token.
  RegisteredDevice register_device(const std::string& name, const std::optional<std::string>& idempotency_key);
  Device get_device(const std::string& id) const;

  /// Raises NotFound for an unknown device, Unauthorized for a wrong token.
  void authorize(const std::string& device_id, const std::string& token) const;

  /// Re-linking to the current owner is a no-op.
  Device link_device(const std::string& device_id, const std::string& user_id);

  std::vector<ClassCount> add_class(const std::string& device_id, const std::string& class_name);
  std::vector<ClassCount> class_counts(const std::string& device_id) const;

  /// Samples are resampled to 20 Hz and windowed; at least 60 resampled
  /// samples are needed. A repeated idempotency key returns the first result.
  UploadResult upload_recording(const std::string& device_id, const std::string& class_name, double rate_hz,
                                const std::vector<ImuSample>& samples,
                                const std::optional<std::string>& idempotency_key = std::nullopt);

  std::string start_personalization(const std::string& device_id);
  Job get_job(const std::string& job_id) const;
  std::vector<Job> device_jobs(const std::string& device_id) const;

  /// Latest bundle if its version exceeds have_version.
  std::optional<Bundle> poll_firmware(const std::string& device_id, std::uint32_t have_version) const;

  /// Returns how many events were newly stored.
  std::size_t record_inferences(const std::string& device_id, const std::vector<InferenceEvent>& events);
  std::vector<InferenceEvent> history(const std::string& device_id, std::optional<double> from,
                                      std::optional<double> to) const;

  /// Blocks until no job is queued or running.
  void wait_idle();

  const ServiceConfig& config() const noexcept { return config_; }
  const nn::Checkpoint& pretrained() const noexcept { return pretrained_; }

 private:
  void require_linked(const Device& d) const;
  void worker_loop();
  void run_job(const std::string& job_id);

  ServiceConfig config_;
  nn::Checkpoint pretrained_;
  std::unique_ptr<Database> db_;

  std::mutex start_mu_;  // serializes the check-then-enqueue of job starts

  std::mutex queue_mu_;
  std::condition_variable queue_cv_;
  std::condition_variable idle_cv_;
  std::deque<std::string> queue_;
  std::size_t in_flight_ = 0;
  bool stopping_ = false;
  std::vector<std::thread> workers_;
};

}  // namespace tinyfit::server
