// tinyfit: dataset ingest, generalized training, personalized evaluation,
// bundle packaging, and thin launchers for the server and device simulator.

#include <CLI11.hpp>
#include <json.hpp>

#include <csignal>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <thread>

#include "tinyfit/datasets.hpp"
#include "tinyfit/device/simulator.hpp"
#include "tinyfit/experiment.hpp"
#include "tinyfit/json_config.hpp"
#include "tinyfit/nn/checkpoint.hpp"
#include "tinyfit/quant.hpp"
#include "tinyfit/runtime.hpp"
#include "tinyfit/server/http.hpp"
#include "tinyfit/synthetic.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace tinyfit;
using namespace tinyfit::experiment;

namespace {

struct Options {
  std::string dataset;
  std::string path;
  std::string out;
  std::string config;
  std::string checkpoint;
  std::optional<std::uint64_t> seed;
  std::optional<std::uint64_t> slice_seed;
  std::uint32_t version = 1;
  int latency_runs = 1000;
};

ExperimentConfig experiment_config(const Options& o) {
  ExperimentConfig c = o.config.empty() ? ExperimentConfig{} : load_config(o.config);
  if (o.slice_seed) c.slice_seed = *o.slice_seed;
  return c;
}

void require(const std::string& value, const char* flag) {
  if (value.empty()) throw Error(Errc::BadConfig, std::string(flag) + " is required");
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw Error(Errc::Io, "cannot write " + p.string(), {{"path", p.string()}});
  f << text;
}

SyntheticConfig synthetic_config(const Options& o) {
  SyntheticConfig c;
  if (!o.config.empty()) {
    const json j = load_json_config(o.config);
    reject_unknown_keys(j,
                        {"classes", "subjects", "recordings_per_class", "seconds_per_recording", "rate_hz", "noise",
                         "style", "max_tilt_deg", "seed"},
                        "");
    read_config_key(j, "classes", c.classes, "");
    read_config_key(j, "subjects", c.subjects, "");
    read_config_key(j, "recordings_per_class", c.recordings_per_class, "");
    read_config_key(j, "seconds_per_recording", c.seconds_per_recording, "");
    read_config_key(j, "rate_hz", c.rate_hz, "");
    read_config_key(j, "noise", c.noise, "");
    read_config_key(j, "style", c.style, "");
    read_config_key(j, "max_tilt_deg", c.max_tilt_deg, "");
    read_config_key(j, "seed", c.seed, "");
  }
  if (o.seed) c.seed = *o.seed;
  return c;
}

int cmd_ingest(const Options& o) {
  require(o.dataset, "--dataset");
  require(o.out, "--out");
  LoadedDataset loaded;
  if (o.dataset == "wisdm" || o.dataset == "pamap2") {
    require(o.path, "--path");
    loaded = o.dataset == "wisdm" ? load_wisdm(o.path) : load_pamap2(o.path);
  } else if (o.dataset == "synthetic") {
    loaded.recordings = SyntheticGenerator(synthetic_config(o)).dataset();
  } else {
    throw Error(Errc::BadConfig, "unknown dataset " + o.dataset + " (wisdm, pamap2, synthetic)");
  }

  WindowedDataset ds;
  ds.windows = windows_from_recordings(loaded.recordings);
  const auto names = loaded.classes();
  ds.classes.assign(names.begin(), names.end());
  if (o.dataset == "synthetic") ds.classes = SyntheticGenerator(synthetic_config(o)).config().classes;
  write_twin(o.out, ds);

  std::map<std::string, std::size_t> per_class;
  for (const auto& w : ds.windows) ++per_class[w.label.value_or("?")];
  std::cout << "dataset   " << o.dataset << "\n"
            << "subjects  " << subjects_of(std::span<const Window>(ds.windows)).size() << "\n"
            << "classes   " << ds.classes.size() << "\n"
            << "windows   " << ds.windows.size() << "\n";
  if (loaded.report.files)
    std::cout << "files     " << loaded.report.files << "\n"
              << "rows      " << loaded.report.rows << " accepted, " << loaded.report.malformed_rows
              << " malformed, " << loaded.report.dropped_rows << " outside the activity set\n";
  for (const auto& note : loaded.report.notes) std::cout << "note      " << note << "\n";
  for (const auto& [name, n] : per_class) std::cout << "  " << name << " " << n << "\n";
  std::cout << "wrote " << o.out << "\n";
  return 0;
}

int cmd_train(const Options& o) {
  require(o.path, "--path");
  require(o.out, "--out");
  ExperimentConfig cfg = experiment_config(o);
  if (o.seed) cfg.train.seed = *o.seed;
  const WindowedDataset ds = read_twin(o.path);
  const GeneralizedResult r = train_generalized(ds, cfg);
  nn::save_checkpoint(o.out, r.model, r.stats);
  std::printf("generalized subjects  %zu\n", r.generalized_subjects.size());
  std::printf("train/test windows    %zu / %zu\n", r.train_windows, r.test_windows);
  std::printf("gs_accuracy           %.4f\n", r.gs_accuracy);
  std::printf("wrote %s\n", o.out.c_str());
  return 0;
}

int cmd_eval(const Options& o) {
  require(o.path, "--path");
  require(o.checkpoint, "--checkpoint");
  require(o.out, "--out");
  ExperimentConfig cfg = experiment_config(o);
  if (o.seed) cfg.personalize.train.seed = *o.seed;
  const WindowedDataset ds = read_twin(o.path);
  const nn::Checkpoint ck = nn::load_checkpoint(o.checkpoint);
  const std::string tag = o.dataset.empty() ? fs::path(o.path).stem().string() : o.dataset;

  ExperimentReport report = eval_personalized(ck, ds, cfg, tag);
  fs::create_directories(o.out);
  write_text(fs::path(o.out) / "report.json", to_json(report).dump(2) + "\n");
  const std::string table = render_table(report);
  write_text(fs::path(o.out) / "report.txt", table);
  std::cout << table << "wrote " << (fs::path(o.out) / "report.json").string() << " and report.txt\n";
  return 0;
}

int cmd_package(const Options& o) {
  require(o.checkpoint, "--checkpoint");
  require(o.path, "--path");
  require(o.out, "--out");
  const ExperimentConfig cfg = experiment_config(o);
  const nn::Checkpoint ck = nn::load_checkpoint(o.checkpoint);
  const WindowedDataset ds = read_twin(o.path);
  if (ds.classes != ck.model.classes)
    throw Error(Errc::BadClassCount, "checkpoint classes differ from the calibration dataset");
  const DatasetSplit split = slice_windows(ds.windows, cfg.slice_seed);

  quant::PackageOptions po;
  po.version = o.version;
  if (o.seed) po.seed = *o.seed;
  const auto bundle = quant::package_model(ck.model, ck.stats, split.generalized, po);
  const auto bytes = quant::serialize(bundle);
  if (bytes.size() >= quant::kBundleSizeBudget)
    throw Error(Errc::SizeBudgetExceeded,
                "bundle is " + std::to_string(bytes.size()) + " bytes; the budget is " +
                    std::to_string(quant::kBundleSizeBudget),
                {{"bytes", std::to_string(bytes.size())}});

  runtime::MicroEngine engine;
  engine.load(bytes);
  double total_us = 0.0;
  for (int i = 0; i < o.latency_runs; ++i) {
    const auto& w = split.generalized[static_cast<std::size_t>(i) % split.generalized.size()];
    total_us += engine.infer(w.data).latency_us;
  }
  const auto arena = engine.arena_report();

  std::ofstream f(o.out, std::ios::binary);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw Error(Errc::Io, "cannot write " + o.out, {{"path", o.out}});

  std::printf("classes          %d\n", engine.class_count());
  std::printf("bundle bytes     %zu (budget %zu)\n", bytes.size(), quant::kBundleSizeBudget);
  std::printf("arena high-water %zu bytes (model %zu, scratch %zu)\n", arena.high_water, arena.model_bytes,
              arena.scratch_bytes);
  std::printf("macs             %llu\n", static_cast<unsigned long long>(engine.macs_per_inference()));
  std::printf("mean latency     %.1f us over %d runs\n", total_us / o.latency_runs, o.latency_runs);
  std::printf("wrote %s\n", o.out.c_str());
  return 0;
}

sigset_t shutdown_signals() {
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  return set;
}

// Must run before any thread starts so every thread inherits the mask.
void block_shutdown_signals() {
  const sigset_t set = shutdown_signals();
  pthread_sigmask(SIG_BLOCK, &set, nullptr);
}

// Runs `on_signal` once SIGINT or SIGTERM arrives.
class SignalWatcher {
 public:
  template <class F>
  explicit SignalWatcher(F on_signal) {
    thread_ = std::thread([this, on_signal] {
      const sigset_t set = shutdown_signals();
      int sig = 0;
      sigwait(&set, &sig);
      if (!done_) on_signal();
    });
  }
  ~SignalWatcher() {
    done_ = true;
    pthread_kill(thread_.native_handle(), SIGTERM);
    thread_.join();
  }

 private:
  std::atomic<bool> done_{false};
  std::thread thread_;
};

int cmd_serve(const Options& o) {
  require(o.config, "--config");
  block_shutdown_signals();
  const json j = load_json_config(o.config);
  const server::ServiceConfig sc = server::parse_service_config(j);
  const std::string host = j.value("host", "127.0.0.1");
  const int port = j.value("port", 8080);
  server::Service service(sc);
  server::HttpServer http(service);
  SignalWatcher watcher([&] { http.stop(); });
  std::printf("serving %s:%d (database %s, dataset %s)\n", host.c_str(), port, sc.database.c_str(),
              sc.dataset_tag.c_str());
  std::fflush(stdout);
  http.listen(host, port);
  return 0;
}

std::unique_ptr<device::SampleSource> make_source(const json& j) {
  reject_unknown_keys(j, {"type", "path", "subject", "seed", "segment_seconds", "synthetic"}, "source.");
  const std::string type = j.value("type", "synthetic");
  if (type == "synthetic") {
    SyntheticConfig sc;
    if (j.contains("synthetic")) {
      const json& s = j["synthetic"];
      read_config_key(s, "classes", sc.classes, "source.synthetic.");
      read_config_key(s, "subjects", sc.subjects, "source.synthetic.");
      read_config_key(s, "seed", sc.seed, "source.synthetic.");
    }
    return std::make_unique<device::SyntheticSource>(sc, j.value("subject", 0), j.value("seed", std::uint64_t{1}),
                                                     j.value("segment_seconds", 30.0));
  }
  if (type == "twin") {
    std::optional<std::string> subject;
    if (j.contains("subject")) subject = j["subject"].get<std::string>();
    return std::make_unique<device::VectorSource>(device::stream_from_twin(read_twin(j.at("path")), subject));
  }
  if (type == "csv") return std::make_unique<device::VectorSource>(device::stream_from_csv(j.at("path")));
  throw Error(Errc::BadConfig, "unknown source type " + type + " (synthetic, twin, csv)");
}

int cmd_simulate(const Options& o) {
  require(o.config, "--config");
  block_shutdown_signals();
  const json j = load_json_config(o.config);
  reject_unknown_keys(j, {"server", "device", "source", "virtual_clock", "max_samples"}, "");
  const json srv = j.value("server", json::object());
  reject_unknown_keys(srv, {"host", "port", "timeout_s"}, "server.");
  const device::DeviceConfig dc = device::parse_device_config(j.value("device", json::object()));
  auto source = make_source(j.value("source", json::object()));
  std::optional<std::size_t> max_samples;
  if (j.contains("max_samples") && !j["max_samples"].is_null()) max_samples = j["max_samples"].get<std::size_t>();
  const bool virtual_clock = j.value("virtual_clock", false);

  device::HttpTransport transport(srv.value("host", "127.0.0.1"), srv.value("port", 8080),
                                  srv.value("timeout_s", 10.0));
  std::unique_ptr<device::Clock> clock;
  if (virtual_clock)
    clock = std::make_unique<device::VirtualClock>();
  else
    clock = std::make_unique<device::ScaledClock>(dc.time_scale);
  device::DeviceSimulator sim(dc, transport, *source, *clock);
  SignalWatcher watcher([&] { sim.stop(); });
  sim.start();
  std::printf("device %s started, model version %u\n", dc.device_id.c_str(), sim.model_version());
  std::fflush(stdout);
  const auto s = sim.run(max_samples, !virtual_clock);
  const json summary = {{"samples", s.samples},   {"windows", s.windows},
                        {"inferences", s.inferences}, {"swaps", s.swaps},
                        {"rejected_bundles", s.rejected_bundles}, {"dropped_events", s.dropped_events},
                        {"buffered_events", sim.buffered_events()}, {"model_version", sim.model_version()}};
  std::cout << summary.dump() << "\n";
  return 0;
}

int exit_code(Errc c) {
  switch (c) {
    case Errc::BadConfig: return 2;
    case Errc::ServerUnreachable: return 3;
    case Errc::SizeBudgetExceeded: return 4;
    default: return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tinyfit: personalized activity recognition for microcontrollers"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* c) {
    c->add_option("--dataset", o.dataset, "wisdm | pamap2 | synthetic (also the report tag)");
    c->add_option("--path", o.path, "raw dataset directory or TWIN file");
    c->add_option("--out", o.out, "output file or directory");
    c->add_option("--config", o.config, "JSON config file");
    c->add_option("--seed", o.seed, "seed override");
    c->add_option("--checkpoint", o.checkpoint, "TFLT checkpoint");
    c->add_option("--slice-seed", o.slice_seed, "user-split seed override");
  };
  std::map<CLI::App*, int (*)(const Options&)> commands;
  auto add = [&](const char* name, const char* help, int (*fn)(const Options&)) {
    CLI::App* c = app.add_subcommand(name, help);
    common(c);
    commands[c] = fn;
    return c;
  };
  add("ingest", "raw dataset -> TWIN windows", cmd_ingest);
  add("train-generalized", "train on generalized users, report GS accuracy", cmd_train);
  add("eval-personalized", "PS-GM vs PS-PM over the personalized users", cmd_eval);
  auto* pkg = add("package", "quantize a checkpoint into a TBND bundle", cmd_package);
  pkg->add_option("--version", o.version, "bundle version")->check(CLI::PositiveNumber);
  pkg->add_option("--latency-runs", o.latency_runs, "inferences timed")->check(CLI::PositiveNumber);
  add("serve", "run the personalization server", cmd_serve);
  add("simulate", "run a simulated device", cmd_simulate);

  CLI11_PARSE(app, argc, argv);
  try {
    for (const auto& [cmd, fn] : commands)
      if (cmd->parsed()) return fn(o);
  } catch (const Error& e) {
    std::cerr << "error: " << to_string(e.code()) << ": " << e.what();
    for (const auto& [k, v] : e.details()) std::cerr << " " << k << "=" << v;
    std::cerr << "\n";
    return exit_code(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
