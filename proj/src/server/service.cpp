#include "tinyfit/server/service.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>
#include <set>

#include "sqlite.hpp"
#include "tinyfit/byteio.hpp"
#include "tinyfit/experiment.hpp"
#include "tinyfit/json_config.hpp"

namespace tinyfit::server {

using nlohmann::json;

std::string_view to_string(JobStatus s) noexcept {
  switch (s) {
    case JobStatus::queued: return "queued";
    case JobStatus::running: return "running";
    case JobStatus::succeeded: return "succeeded";
    case JobStatus::failed: return "failed";
  }
  return "unknown";
}

namespace {

JobStatus parse_status(const std::string& s) {
  if (s == "queued") return JobStatus::queued;
  if (s == "running") return JobStatus::running;
  if (s == "succeeded") return JobStatus::succeeded;
  return JobStatus::failed;
}

constexpr std::string_view kSchema = R"sql(
CREATE TABLE IF NOT EXISTS users (
  id TEXT PRIMARY KEY,
  name TEXT NOT NULL,
  created_at REAL NOT NULL
);
CREATE TABLE IF NOT EXISTS devices (
  id TEXT PRIMARY KEY,
  name TEXT NOT NULL,
  token TEXT NOT NULL,
  owner TEXT REFERENCES users(id),
  version INTEGER NOT NULL DEFAULT 0,
  idempotency_key TEXT UNIQUE,
  created_at REAL NOT NULL
);
CREATE TABLE IF NOT EXISTS device_classes (
  device_id TEXT NOT NULL REFERENCES devices(id),
  name TEXT NOT NULL,
  position INTEGER NOT NULL,
  PRIMARY KEY (device_id, name)
);
CREATE TABLE IF NOT EXISTS recordings (
  id INTEGER PRIMARY KEY AUTOINCREMENT,
  device_id TEXT NOT NULL REFERENCES devices(id),
  class_name TEXT NOT NULL,
  rate_hz REAL NOT NULL,
  sample_count INTEGER NOT NULL,
  window_count INTEGER NOT NULL,
  idempotency_key TEXT,
  created_at REAL NOT NULL,
  UNIQUE (device_id, idempotency_key)
);
CREATE TABLE IF NOT EXISTS windows (
  id INTEGER PRIMARY KEY AUTOINCREMENT,
  device_id TEXT NOT NULL REFERENCES devices(id),
  recording_id INTEGER NOT NULL REFERENCES recordings(id),
  class_name TEXT NOT NULL,
  data BLOB NOT NULL
);
CREATE INDEX IF NOT EXISTS windows_by_device ON windows(device_id, class_name);
CREATE TABLE IF NOT EXISTS jobs (
  id TEXT PRIMARY KEY,
  device_id TEXT NOT NULL REFERENCES devices(id),
  status TEXT NOT NULL,
  examples_per_class INTEGER NOT NULL,
  metrics TEXT NOT NULL DEFAULT '{}',
  bundle_version INTEGER,
  failure TEXT,
  created_at REAL NOT NULL,
  finished_at REAL
);
CREATE INDEX IF NOT EXISTS jobs_by_device ON jobs(device_id, created_at);
CREATE TABLE IF NOT EXISTS bundles (
  device_id TEXT NOT NULL REFERENCES devices(id),
  version INTEGER NOT NULL,
  bytes BLOB NOT NULL,
  created_at REAL NOT NULL,
  PRIMARY KEY (device_id, version)
);
CREATE TABLE IF NOT EXISTS inferences (
  id INTEGER PRIMARY KEY AUTOINCREMENT,
  device_id TEXT NOT NULL REFERENCES devices(id),
  ts REAL NOT NULL,
  class_name TEXT NOT NULL,
  confidence REAL NOT NULL,
  model_version INTEGER NOT NULL,
  event_id TEXT,
  UNIQUE (device_id, event_id)
);
CREATE INDEX IF NOT EXISTS inferences_by_time ON inferences(device_id, ts, id);
)sql";

double now_seconds() {
  return std::chrono::duration<double>(std::chrono::system_clock::now().time_since_epoch()).count();
}

std::string random_hex(std::size_t bytes) {
  static std::mutex mu;
  static std::random_device rd;
  static constexpr char kHex[] = "0123456789abcdef";
  std::lock_guard lock(mu);
  std::string out;
  out.reserve(bytes * 2);
  for (std::size_t i = 0; i < bytes; ++i) {
    const auto b = static_cast<unsigned>(rd() & 0xFF);
    out.push_back(kHex[b >> 4]);
    out.push_back(kHex[b & 0xF]);
  }
  return out;
}

std::vector<std::uint8_t> encode_window(const Window& w) {
  ByteWriter out;
  for (int r = 0; r < kWindowLength; ++r)
    for (int c = 0; c < kChannels; ++c) out.f32(w.data(r, c));
  return std::move(out).take();
}

Window decode_window(std::span<const std::uint8_t> bytes) {
  if (bytes.size() != 4u * kWindowLength * kChannels)
    throw Error(Errc::Malformed, "stored window has the wrong size", {{"bytes", std::to_string(bytes.size())}});
  Window w;
  ByteReader in(bytes);
  for (int r = 0; r < kWindowLength; ++r)
    for (int c = 0; c < kChannels; ++c) w.data(r, c) = in.f32();
  if (!w.finite()) throw Error(Errc::Malformed, "stored window holds non-finite values");
  return w;
}

Job read_job(Statement& s) {
  Job j;
  j.id = s.text(0);
  j.device_id = s.text(1);
  j.status = parse_status(s.text(2));
  j.examples_per_class = static_cast<int>(s.int64(3));
  j.metrics = json::parse(s.text(4));
  if (!s.is_null(5)) j.bundle_version = static_cast<std::uint32_t>(s.int64(5));
  j.failure = s.opt_text(6);
  j.created_at = s.real(7);
  if (!s.is_null(8)) j.finished_at = s.real(8);
  return j;
}

constexpr std::string_view kJobColumns =
    "id, device_id, status, examples_per_class, metrics, bundle_version, failure, created_at, finished_at";

}  // namespace

ServiceConfig parse_service_config(const json& j) {
  reject_unknown_keys(j, {"database", "pretrained_checkpoint", "dataset", "workers", "examples_per_class",
                          "fine_tune", "package", "host", "port"});
  ServiceConfig c;
  read_config_key(j, "database", c.database);
  read_config_key(j, "pretrained_checkpoint", c.pretrained_checkpoint);
  read_config_key(j, "dataset", c.dataset_tag);
  read_config_key(j, "workers", c.workers);
  read_config_key(j, "examples_per_class", c.examples_per_class);
  if (c.workers < 1) throw Error(Errc::BadConfig, "workers must be at least 1");
  if (c.examples_per_class < 1) throw Error(Errc::BadConfig, "examples_per_class must be at least 1");
  if (c.pretrained_checkpoint.empty()) throw Error(Errc::BadConfig, "pretrained_checkpoint is required");
  if (j.contains("fine_tune")) experiment::read_train_config(j["fine_tune"], c.fine_tune, "fine_tune.");
  if (j.contains("package")) {
    const auto& p = j["package"];
    reject_unknown_keys(p, {"sparsity", "calibration_windows", "seed"}, "package.");
    read_config_key(p, "sparsity", c.package.sparsity, "package.");
    read_config_key(p, "calibration_windows", c.package.calibration_windows, "package.");
    read_config_key(p, "seed", c.package.seed, "package.");
  }
  return c;
}

Service::Service(ServiceConfig config) : Service(config, nn::load_checkpoint(config.pretrained_checkpoint)) {}

Service::Service(ServiceConfig config, nn::Checkpoint pretrained)
    : config_(std::move(config)), pretrained_(std::move(pretrained)) {
  if (config_.workers < 1) throw Error(Errc::BadConfig, "workers must be at least 1");
  db_ = std::make_unique<Database>(config_.database);
  db_->exec(kSchema);
  {
    auto s = db_->prepare(
        "UPDATE jobs SET status = 'failed', failure = 'interrupted by server restart', finished_at = ? "
        "WHERE status IN ('queued', 'running')");
    s.bind(1, now_seconds()).run();
  }
  for (int i = 0; i < config_.workers; ++i) workers_.emplace_back([this] { worker_loop(); });
}

Service::~Service() {
  {
    std::lock_guard lock(queue_mu_);
    stopping_ = true;
  }
  queue_cv_.notify_all();
  for (auto& t : workers_) t.join();
}

User Service::create_user(const std::string& name) {
  if (name.empty()) throw Error(Errc::BadRequest, "user name must not be empty");
  User u{"usr_" + random_hex(8), name};
  auto lock = db_->lock();
  db_->prepare("INSERT INTO users (id, name, created_at) VALUES (?, ?, ?)")
      .bind(1, u.id)
      .bind(2, u.name)
      .bind(3, now_seconds())
      .run();
  return u;
}

User Service::get_user(const std::string& id) const {
  auto lock = db_->lock();
  auto s = db_->prepare("SELECT id, name FROM users WHERE id = ?");
  s.bind(1, id);
  if (!s.step()) throw Error(Errc::NotFound, "unknown user " + id, {{"user_id", id}});
  return {s.text(0), s.text(1)};
}

RegisteredDevice Service::register_device(const std::string& name, const std::optional<std::string>& key) {
  auto lock = db_->lock();
  if (key) {
    auto s = db_->prepare("SELECT id, token FROM devices WHERE idempotency_key = ?");
    s.bind(1, *key);
    if (s.step()) return {get_device(s.text(0)), s.text(1), false};
  }
  const std::string id = "dev_" + random_hex(8);
  const std::string token = random_hex(16);
  db_->prepare("INSERT INTO devices (id, name, token, idempotency_key, created_at) VALUES (?, ?, ?, ?, ?)")
      .bind(1, id)
      .bind(2, name)
      .bind(3, token)
      .bind(4, key)
      .bind(5, now_seconds())
      .run();
  return {get_device(id), token, true};
}

Device Service::get_device(const std::string& id) const {
  auto lock = db_->lock();
  auto s = db_->prepare("SELECT id, name, owner, version FROM devices WHERE id = ?");
  s.bind(1, id);
  if (!s.step()) throw Error(Errc::NotFound, "unknown device " + id, {{"device_id", id}});
  Device d{s.text(0), s.text(1), s.opt_text(2), static_cast<std::uint32_t>(s.int64(3)), {}};
  auto c = db_->prepare("SELECT name FROM device_classes WHERE device_id = ? ORDER BY position");
  c.bind(1, id);
  while (c.step()) d.classes.push_back(c.text(0));
  return d;
}

void Service::authorize(const std::string& device_id, const std::string& token) const {
  auto lock = db_->lock();
  auto s = db_->prepare("SELECT token FROM devices WHERE id = ?");
  s.bind(1, device_id);
  if (!s.step()) throw Error(Errc::NotFound, "unknown device " + device_id, {{"device_id", device_id}});
  const std::string expected = s.text(0);
  // Constant-time comparison.
  unsigned diff = expected.size() ^ token.size();
  for (std::size_t i = 0; i < expected.size(); ++i)
    diff |= static_cast<unsigned char>(expected[i]) ^ static_cast<unsigned char>(i < token.size() ? token[i] : 0);
  if (diff != 0) throw Error(Errc::Unauthorized, "invalid device token", {{"device_id", device_id}});
}

void Service::require_linked(const Device& d) const {
  if (!d.owner) throw Error(Errc::NotLinked, "device " + d.id + " is not linked to a user", {{"device_id", d.id}});
}

Device Service::link_device(const std::string& device_id, const std::string& user_id) {
  auto lock = db_->lock();
  get_user(user_id);
  const Device d = get_device(device_id);
  if (d.owner == user_id) return d;
  db_->prepare("UPDATE devices SET owner = ? WHERE id = ?").bind(1, user_id).bind(2, device_id).run();
  return get_device(device_id);
}

std::vector<ClassCount> Service::class_counts(const std::string& device_id) const {
  auto lock = db_->lock();
  const Device d = get_device(device_id);
  std::vector<ClassCount> out;
  for (const auto& cls : d.classes) {
    auto q = db_->prepare("SELECT COUNT(*) FROM windows WHERE device_id = ? AND class_name = ?");
    q.bind(1, device_id).bind(2, cls);
    q.step();
    out.push_back({cls, static_cast<std::size_t>(q.int64(0))});
  }
  return out;
}

std::vector<ClassCount> Service::add_class(const std::string& device_id, const std::string& class_name) {
  if (class_name.empty() || class_name.size() > 255)
    throw Error(Errc::BadRequest, "class name must be 1 to 255 bytes");
  auto lock = db_->lock();
  const Device d = get_device(device_id);
  require_linked(d);
  if (std::find(d.classes.begin(), d.classes.end(), class_name) == d.classes.end()) {
    if (d.classes.size() >= 255) throw Error(Errc::BadClassCount, "a device supports at most 255 classes");
    db_->prepare("INSERT INTO device_classes (device_id, name, position) VALUES (?, ?, ?)")
        .bind(1, device_id)
        .bind(2, class_name)
        .bind(3, static_cast<std::int64_t>(d.classes.size()))
        .run();
  }
  return class_counts(device_id);
}

UploadResult Service::upload_recording(const std::string& device_id, const std::string& class_name, double rate_hz,
                                       const std::vector<ImuSample>& samples,
                                       const std::optional<std::string>& idempotency_key) {
  if (!(rate_hz > 0.0) || !std::isfinite(rate_hz)) throw Error(Errc::BadRequest, "rate_hz must be positive");
  {
    auto lock = db_->lock();
    require_linked(get_device(device_id));
    if (idempotency_key) {
      auto s = db_->prepare(
          "SELECT id, window_count, sample_count FROM recordings WHERE device_id = ? AND idempotency_key = ?");
      s.bind(1, device_id).bind(2, *idempotency_key);
      if (s.step())
        return {s.int64(0), static_cast<std::size_t>(s.int64(1)), static_cast<std::size_t>(s.int64(2))};
    }
  }

  Recording rec{device_id, class_name, rate_hz, samples};
  Recording resampled;
  try {
    resampled = resample(rec, kTargetRateHz);
  } catch (const Error& e) {
    if (e.code() == Errc::EmptyRecording)
      throw Error(Errc::TooShort, "recording too short", {{"min_samples", std::to_string(kWindowLength)}});
    throw;
  }
  if (resampled.samples.size() < static_cast<std::size_t>(kWindowLength))
    throw Error(Errc::TooShort, "recording yields fewer than 60 samples at 20 Hz",
                {{"min_samples", std::to_string(kWindowLength)},
                 {"have", std::to_string(resampled.samples.size())},
                 {"min_seconds", "3"}});
  const auto windows = make_windows(resampled);

  auto lock = db_->lock();
  Transaction tx(*db_);
  if (idempotency_key) {
    auto s = db_->prepare(
        "SELECT id, window_count, sample_count FROM recordings WHERE device_id = ? AND idempotency_key = ?");
    s.bind(1, device_id).bind(2, *idempotency_key);
    if (s.step()) return {s.int64(0), static_cast<std::size_t>(s.int64(1)), static_cast<std::size_t>(s.int64(2))};
  }
  add_class(device_id, class_name);
  db_->prepare(
         "INSERT INTO recordings (device_id, class_name, rate_hz, sample_count, window_count, idempotency_key, "
         "created_at) VALUES (?, ?, ?, ?, ?, ?, ?)")
      .bind(1, device_id)
      .bind(2, class_name)
      .bind(3, rate_hz)
      .bind(4, static_cast<std::int64_t>(resampled.samples.size()))
      .bind(5, static_cast<std::int64_t>(windows.size()))
      .bind(6, idempotency_key)
      .bind(7, now_seconds())
      .run();
  const std::int64_t recording_id = db_->last_insert_rowid();
  for (const auto& w : windows) {
    const auto blob = encode_window(w);
    auto s = db_->prepare("INSERT INTO windows (device_id, recording_id, class_name, data) VALUES (?, ?, ?, ?)");
    s.bind(1, device_id).bind(2, recording_id).bind(3, class_name).bind(4, std::span<const std::uint8_t>(blob)).run();
  }
  tx.commit();
  return {recording_id, windows.size(), resampled.samples.size()};
}

std::string Service::start_personalization(const std::string& device_id) {
  std::lock_guard start(start_mu_);
  std::string job_id;
  {
    auto lock = db_->lock();
    const Device d = get_device(device_id);
    require_linked(d);
    auto active = db_->prepare("SELECT id FROM jobs WHERE device_id = ? AND status IN ('queued', 'running')");
    active.bind(1, device_id);
    if (active.step())
      throw Error(Errc::JobAlreadyActive, "a personalization job is already active",
                  {{"device_id", device_id}, {"job_id", active.text(0)}});
    if (d.classes.size() < 2)
      throw Error(Errc::BadClassCount, "personalization needs at least 2 classes",
                  {{"classes", std::to_string(d.classes.size())}});
    for (const auto& c : class_counts(device_id))
      if (c.windows < static_cast<std::size_t>(config_.examples_per_class))
        throw Error(Errc::InsufficientExamples, "not enough windows for class " + c.name,
                    {{"class", c.name},
                     {"have", std::to_string(c.windows)},
                     {"need", std::to_string(config_.examples_per_class)}});
    job_id = "job_" + random_hex(8);
    db_->prepare("INSERT INTO jobs (id, device_id, status, examples_per_class, created_at) VALUES (?, ?, ?, ?, ?)")
        .bind(1, job_id)
        .bind(2, device_id)
        .bind(3, "queued")
        .bind(4, config_.examples_per_class)
        .bind(5, now_seconds())
        .run();
  }
  {
    std::lock_guard lock(queue_mu_);
    queue_.push_back(job_id);
    ++in_flight_;
  }
  queue_cv_.notify_one();
  return job_id;
}

Job Service::get_job(const std::string& job_id) const {
  auto lock = db_->lock();
  auto s = db_->prepare("SELECT " + std::string(kJobColumns) + " FROM jobs WHERE id = ?");
  s.bind(1, job_id);
  if (!s.step()) throw Error(Errc::NotFound, "unknown job " + job_id, {{"job_id", job_id}});
  return read_job(s);
}

std::vector<Job> Service::device_jobs(const std::string& device_id) const {
  auto lock = db_->lock();
  get_device(device_id);
  auto s = db_->prepare("SELECT " + std::string(kJobColumns) + " FROM jobs WHERE device_id = ? ORDER BY created_at, id");
  s.bind(1, device_id);
  std::vector<Job> out;
  while (s.step()) out.push_back(read_job(s));
  return out;
}

void Service::worker_loop() {
  for (;;) {
    std::string job_id;
    {
      std::unique_lock lock(queue_mu_);
      queue_cv_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
      if (stopping_) return;
      job_id = std::move(queue_.front());
      queue_.pop_front();
    }
    run_job(job_id);
    {
      std::lock_guard lock(queue_mu_);
      --in_flight_;
    }
    idle_cv_.notify_all();
  }
}

void Service::wait_idle() {
  std::unique_lock lock(queue_mu_);
  idle_cv_.wait(lock, [&] { return in_flight_ == 0; });
}

void Service::run_job(const std::string& job_id) {
  std::string device_id;
  std::vector<std::string> classes;
  std::vector<Window> raw;
  std::uint32_t base_version = 0;
  int per_class = 0;
  try {
    {
      auto lock = db_->lock();
      auto upd = db_->prepare("UPDATE jobs SET status = 'running' WHERE id = ? AND status = 'queued'");
      upd.bind(1, job_id).run();
      if (upd.changes() != 1) return;
      const Job job = get_job(job_id);
      device_id = job.device_id;
      per_class = job.examples_per_class;
      const Device d = get_device(device_id);
      classes = d.classes;
      base_version = d.version;
      auto s = db_->prepare("SELECT class_name, data, recording_id FROM windows WHERE device_id = ? ORDER BY id");
      s.bind(1, device_id);
      while (s.step()) {
        Window w = decode_window(s.blob(1));
        w.label = s.text(0);
        w.subject_id = device_id;
        w.recording = static_cast<std::uint32_t>(s.int64(2));
        raw.push_back(std::move(w));
      }
    }

    std::vector<Window> user;
    user.reserve(raw.size());
    for (const auto& w : raw) user.push_back(normalize(w, pretrained_.stats));

    nn::PersonalizeOptions opts;
    opts.examples_per_class = per_class;
    opts.classes = classes;
    opts.train = config_.fine_tune;
    const auto pr = nn::personalize(pretrained_.model, user, opts);

    std::vector<Window> tuned, rest;
    const std::set<std::size_t> picked(pr.fine_tune_indices.begin(), pr.fine_tune_indices.end());
    for (std::size_t i = 0; i < user.size(); ++i) (picked.count(i) ? tuned : rest).push_back(user[i]);

    quant::PackageOptions popts = config_.package;
    popts.version = base_version + 1;
    const auto bundle = quant::package_model(pr.model, pretrained_.stats, raw, popts);
    const auto bytes = quant::serialize(bundle);
    if (bytes.size() >= quant::kBundleSizeBudget)
      throw Error(Errc::SizeBudgetExceeded, "bundle exceeds the 15 KiB budget",
                  {{"bytes", std::to_string(bytes.size())}});

    json metrics = {{"fine_tune_accuracy", nn::evaluate(pr.model, tuned).accuracy},
                    {"fine_tune_windows", tuned.size()},
                    {"bundle_bytes", bytes.size()},
                    {"classes", classes},
                    {"dataset", config_.dataset_tag}};
    if (!rest.empty()) {
      metrics["holdout_accuracy"] = nn::evaluate(pr.model, rest).accuracy;
      metrics["holdout_windows"] = rest.size();
    }

    auto lock = db_->lock();
    Transaction tx(*db_);
    auto cur = db_->prepare("SELECT version FROM devices WHERE id = ?");
    cur.bind(1, device_id);
    cur.step();
    if (static_cast<std::uint32_t>(cur.int64(0)) != base_version)
      throw Error(Errc::Malformed, "device version changed while the job ran");
    db_->prepare("INSERT INTO bundles (device_id, version, bytes, created_at) VALUES (?, ?, ?, ?)")
        .bind(1, device_id)
        .bind(2, popts.version)
        .bind(3, std::span<const std::uint8_t>(bytes))
        .bind(4, now_seconds())
        .run();
    db_->prepare("UPDATE devices SET version = ? WHERE id = ?").bind(1, popts.version).bind(2, device_id).run();
    db_->prepare(
           "UPDATE jobs SET status = 'succeeded', metrics = ?, bundle_version = ?, finished_at = ? WHERE id = ?")
        .bind(1, metrics.dump())
        .bind(2, popts.version)
        .bind(3, now_seconds())
        .bind(4, job_id)
        .run();
    tx.commit();
  } catch (const std::exception& e) {
    auto lock = db_->lock();
    db_->prepare("UPDATE jobs SET status = 'failed', failure = ?, finished_at = ? WHERE id = ?")
        .bind(1, std::string(e.what()))
        .bind(2, now_seconds())
        .bind(3, job_id)
        .run();
  }
}

std::optional<Bundle> Service::poll_firmware(const std::string& device_id, std::uint32_t have_version) const {
  auto lock = db_->lock();
  const Device d = get_device(device_id);
  require_linked(d);
  if (d.version <= have_version) return std::nullopt;
  auto s = db_->prepare("SELECT version, bytes FROM bundles WHERE device_id = ? AND version = ?");
  s.bind(1, device_id).bind(2, d.version);
  if (!s.step()) throw Error(Errc::NotFound, "published bundle missing", {{"version", std::to_string(d.version)}});
  return Bundle{static_cast<std::uint32_t>(s.int64(0)), s.blob(1)};
}

std::size_t Service::record_inferences(const std::string& device_id, const std::vector<InferenceEvent>& events) {
  for (const auto& e : events) {
    if (!std::isfinite(e.timestamp)) throw Error(Errc::BadRequest, "event timestamp must be finite");
    if (e.class_name.empty()) throw Error(Errc::BadRequest, "event class_name must not be empty");
    if (!(e.confidence >= 0.0 && e.confidence <= 1.0))
      throw Error(Errc::BadRequest, "event confidence must lie in [0, 1]");
  }
  auto lock = db_->lock();
  require_linked(get_device(device_id));
  Transaction tx(*db_);
  std::size_t stored = 0;
  for (const auto& e : events) {
    auto s = db_->prepare(
        "INSERT OR IGNORE INTO inferences (device_id, ts, class_name, confidence, model_version, event_id) "
        "VALUES (?, ?, ?, ?, ?, ?)");
    s.bind(1, device_id).bind(2, e.timestamp).bind(3, e.class_name).bind(4, e.confidence);
    s.bind(5, e.model_version).bind(6, e.event_id).run();
    stored += static_cast<std::size_t>(s.changes());
  }
  tx.commit();
  return stored;
}

std::vector<InferenceEvent> Service::history(const std::string& device_id, std::optional<double> from,
                                             std::optional<double> to) const {
  auto lock = db_->lock();
  require_linked(get_device(device_id));
  auto s = db_->prepare(
      "SELECT ts, class_name, confidence, model_version, event_id FROM inferences WHERE device_id = ? "
      "AND (?2 IS NULL OR ts >= ?2) AND (?3 IS NULL OR ts <= ?3) ORDER BY ts, id");
  s.bind(1, device_id).bind(2, from).bind(3, to);
  std::vector<InferenceEvent> out;
  while (s.step())
    out.push_back({s.real(0), s.text(1), s.real(2), static_cast<std::uint32_t>(s.int64(3)), s.opt_text(4)});
  return out;
}

}  // namespace tinyfit::server
