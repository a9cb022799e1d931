// Acceptance gate. `tinyfit_acceptance <criterion>` checks one criterion and
// prints one line; with no argument every criterion runs. Exit status: 0 pass,
// 1 fail, 77 skip (a required dataset directory is not configured).
//
// Dataset criteria read TINYFIT_WISDM_DIR / TINYFIT_PAMAP2_DIR.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include "gradcheck.hpp"
#include "tinyfit/datasets.hpp"
#include "tinyfit/device/simulator.hpp"
#include "tinyfit/device/source.hpp"
#include "tinyfit/device/transport.hpp"
#include "tinyfit/experiment.hpp"
#include "tinyfit/quant.hpp"
#include "tinyfit/runtime.hpp"
#include "tinyfit/server/http.hpp"
#include "tinyfit/server/service.hpp"
#include "tinyfit/synthetic.hpp"

using namespace tinyfit;
using namespace tinyfit::experiment;

namespace {

// Tolerances and bars.
constexpr int kGradientModels = 50;
constexpr double kGradientTolerance = 1e-4;  // relative, with h = 1e-4
constexpr std::size_t kMinHeldOutWindows = 500;
constexpr double kMinAgreement = 0.90;
constexpr double kMaxAccuracyDrop = 0.03;
constexpr int kSizeClasses = 18;
constexpr double kMaxLatencyUs = 200'000.0;
constexpr int kLatencyRuns = 1000;
constexpr double kWisdmMinGs = 0.74;
constexpr double kWisdmMinGsDrop = 0.05;  // GS - PS-GM, absolute
constexpr double kWisdmMinGain = 0.05;    // PS-PM - PS-GM, absolute
constexpr double kPamapMinGain = 0.10;
constexpr int kOtaClasses = 7;
constexpr int kOtaWindowsPerClass = 15;
constexpr double kOtaMaxSeconds = 300.0;
constexpr int kFuzzIterations = 1000;

enum class Verdict { pass, fail, skip };

struct Outcome {
  Verdict verdict;
  std::string detail;
};

Outcome pass(std::string d) { return {Verdict::pass, std::move(d)}; }
Outcome fail(std::string d) { return {Verdict::fail, std::move(d)}; }
Outcome skip(std::string d) { return {Verdict::skip, std::move(d)}; }
Outcome check(bool ok, std::string d) { return {ok ? Verdict::pass : Verdict::fail, std::move(d)}; }

template <class... Args>
std::string fmt(const char* f, Args... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::optional<std::string> env_dir(const char* name) {
  const char* v = std::getenv(name);
  if (!v || !*v) return std::nullopt;
  return std::string(v);
}

WindowedDataset windowed(const LoadedDataset& loaded) {
  WindowedDataset ds;
  ds.windows = windows_from_recordings(loaded.recordings);
  const auto names = loaded.classes();
  ds.classes.assign(names.begin(), names.end());
  return ds;
}

nn::CnnModel<double> random_model(int classes, std::uint64_t seed) {
  std::vector<std::string> names;
  for (int i = 0; i < classes; ++i) names.push_back("class" + std::to_string(i));
  return nn::init_model<double>(names, seed);
}

std::vector<Window> noise_windows(std::size_t n, Rng& rng) {
  std::vector<Window> out(n);
  for (auto& w : out)
    for (Eigen::Index i = 0; i < w.data.size(); ++i) w.data.data()[i] = static_cast<float>(rng.normal());
  return out;
}

std::vector<std::uint8_t> random_bundle_bytes(int classes, std::uint64_t seed) {
  Rng rng(seed);
  quant::PackageOptions po;
  po.seed = seed;
  po.version = static_cast<std::uint32_t>(1 + rng.below(1000));
  return quant::serialize(quant::package_model(random_model(classes, seed), ChannelStats{}, noise_windows(16, rng), po));
}

// ---------------------------------------------------------------------------

Outcome window_count_law() {
  for (std::size_t len = 0; len <= 400; ++len) {
    Recording r;
    r.subject_id = "s";
    r.class_label = "a";
    r.rate_hz = kTargetRateHz;
    r.samples.resize(len);
    for (std::size_t i = 0; i < len; ++i) r.samples[i].t = static_cast<double>(i) / kTargetRateHz;
    const std::size_t expect = len < 60 ? 0 : (len - 60) / 30 + 1;
    const std::size_t got = make_windows(r).size();
    if (got != expect) return fail(fmt("L=%zu gives %zu windows, law says %zu", len, got, expect));
  }
  return pass("L = 0..400 at 20 Hz all match floor((L-60)/30)+1");
}

Outcome gradient_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  int redraws = 0, kinked = 0;
  std::size_t coords = 0;
  for (int m = 0; m < kGradientModels; ++m) {
    const auto t = test::random_gradient_trial(static_cast<std::uint64_t>(m + 1));
    worst = std::max(worst, t.result.max_relative_error);
    redraws += t.redraws;
    kinked += t.result.crossed_kink;
    coords += t.result.coordinates;
  }
  const double secs = seconds_since(t0);
  return check(worst <= kGradientTolerance && secs < 60.0,
               fmt("%d models, %zu coordinates, max rel err %.2e (tol %.0e), %d kink redraws, %d still kinked, %.1f s",
                   kGradientModels, coords, worst, kGradientTolerance, redraws, kinked, secs));
}

Outcome freeze_invariant() {
  SyntheticConfig sc;
  sc.subjects = 5;
  sc.recordings_per_class = 1;
  const auto windows = windows_from_recordings(SyntheticGenerator(sc).dataset());
  std::vector<Window> user;
  for (const auto& w : windows)
    if (w.subject_id == windows.front().subject_id) user.push_back(w);
  std::size_t checked = 0;
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto pretrained = nn::init_model<double>(sc.classes, seed);
    nn::PersonalizeOptions po;
    po.train.epochs = 5;
    po.train.seed = seed;
    const auto r = nn::personalize(pretrained, user, po);
    for (auto id : {nn::LayerId::conv1, nn::LayerId::conv2, nn::LayerId::dense1}) {
      const auto& a = pretrained.params[id];
      const auto& b = r.model.params[id];
      if (std::memcmp(a.weight.data(), b.weight.data(), sizeof(double) * static_cast<std::size_t>(a.weight.size())) ||
          std::memcmp(a.bias.data(), b.bias.data(), sizeof(double) * static_cast<std::size_t>(a.bias.size())))
        return fail(fmt("layer %s changed (seed %llu)", std::string(nn::layer_name(id)).c_str(),
                        static_cast<unsigned long long>(seed)));
      checked += static_cast<std::size_t>(a.weight.size() + a.bias.size());
    }
    if (r.model.params[nn::LayerId::head] == pretrained.params[nn::LayerId::head])
      return fail("head did not train");
  }
  return pass(fmt("%zu frozen parameters bit-equal over 3 personalizations", checked));
}

Outcome quant_fidelity_wisdm() {
  const auto dir = env_dir("TINYFIT_WISDM_DIR");
  if (!dir) return skip("TINYFIT_WISDM_DIR not set; WISDM is not available here");
  const auto ds = windowed(load_wisdm(*dir));
  const ExperimentConfig cfg;
  const auto g = train_generalized(ds, cfg);
  const auto split = slice_windows(ds.windows, cfg.slice_seed);
  const auto rs = split_by_recording(split.generalized, cfg.test_fraction, cfg.slice_seed);
  std::vector<Window> held_out = rs.test;
  for (const auto& [_, ws] : split.personalized) held_out.insert(held_out.end(), ws.begin(), ws.end());
  if (held_out.size() < kMinHeldOutWindows) return fail(fmt("only %zu held-out windows", held_out.size()));

  runtime::MicroEngine engine;
  engine.load(quant::serialize(quant::package_model(g.model, g.stats, rs.train)));
  std::vector<Window> normalized;
  for (const auto& w : held_out) normalized.push_back(normalize(w, g.stats));
  const auto float_pred = nn::predict_classes(g.model.cast<float>(), normalized);
  const auto truth = nn::class_ids(g.model.classes, held_out);
  std::size_t agree = 0, float_ok = 0, int_ok = 0;
  for (std::size_t i = 0; i < held_out.size(); ++i) {
    const int p = engine.infer(held_out[i].data).class_id;
    agree += p == float_pred[i];
    float_ok += float_pred[i] == truth[i];
    int_ok += p == truth[i];
  }
  const double n = static_cast<double>(held_out.size());
  const double agreement = agree / n, drop = (float_ok - static_cast<double>(int_ok)) / n;
  return check(agreement >= kMinAgreement && drop <= kMaxAccuracyDrop,
               fmt("%zu windows, agreement %.4f (>= %.2f), accuracy float %.4f int %.4f, drop %.4f (<= %.2f)",
                   held_out.size(), agreement, kMinAgreement, float_ok / n, int_ok / n, drop, kMaxAccuracyDrop));
}

Outcome size_claim() {
  std::size_t worst = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) worst = std::max(worst, random_bundle_bytes(kSizeClasses, seed).size());
  return check(worst < quant::kBundleSizeBudget,
               fmt("C = %d bundle is %zu bytes (< %zu)", kSizeClasses, worst, quant::kBundleSizeBudget));
}

Outcome latency_claim() {
  runtime::MicroEngine engine;
  engine.load(random_bundle_bytes(kSizeClasses, 7));
  Rng rng(7);
  const auto windows = noise_windows(50, rng);
  double total = 0.0;
  for (int i = 0; i < kLatencyRuns; ++i) total += engine.infer(windows[static_cast<std::size_t>(i) % windows.size()].data).latency_us;
  const double mean = total / kLatencyRuns;
  return check(mean < kMaxLatencyUs, fmt("mean %.1f us over %d runs (< 200 ms), %llu MACs per inference (C = %d)", mean,
                                         kLatencyRuns, static_cast<unsigned long long>(engine.macs_per_inference()),
                                         kSizeClasses));
}

std::string report_line(const ExperimentReport& r) {
  return fmt("GS %.4f, PS-GM %.4f, PS-PM %.4f", r.gs.value_or(NAN), r.ps_gm, r.ps_pm);
}

ExperimentReport run_protocol(const WindowedDataset& ds, const std::string& tag) {
  const ExperimentConfig cfg;
  const auto g = train_generalized(ds, cfg);
  return eval_personalized(nn::Checkpoint{g.model, g.stats}, ds, cfg, tag);
}

Outcome wisdm_reproduction() {
  const auto dir = env_dir("TINYFIT_WISDM_DIR");
  if (!dir) return skip("TINYFIT_WISDM_DIR not set; WISDM is not available here");
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = run_protocol(windowed(load_wisdm(*dir)), "wisdm");
  const double gs = r.gs.value_or(0.0);
  return check(gs >= kWisdmMinGs && gs - r.ps_gm >= kWisdmMinGsDrop && r.ps_pm - r.ps_gm >= kWisdmMinGain,
               report_line(r) + fmt(" (need GS >= %.2f, GS-PSGM >= %.2f, PSPM-PSGM >= %.2f), %.0f s", kWisdmMinGs,
                                    kWisdmMinGsDrop, kWisdmMinGain, seconds_since(t0)));
}

Outcome pamap2_reproduction() {
  const auto dir = env_dir("TINYFIT_PAMAP2_DIR");
  if (!dir) return skip("TINYFIT_PAMAP2_DIR not set; PAMAP2 is not available here");
  const auto r = run_protocol(windowed(load_pamap2(*dir)), "pamap2");
  return check(r.ps_pm - r.ps_gm >= kPamapMinGain, report_line(r) + fmt(" (need PSPM-PSGM >= %.2f)", kPamapMinGain));
}

Outcome synthetic_ordering() {
  const SyntheticConfig sc;
  WindowedDataset ds;
  ds.classes = sc.classes;
  ds.windows = windows_from_recordings(SyntheticGenerator(sc).dataset());
  const auto r = run_protocol(ds, "synthetic");
  const double gs = r.gs.value_or(0.0);
  return check(gs > r.ps_pm && r.ps_pm > r.ps_gm, report_line(r) + " (need GS > PS-PM > PS-GM)");
}

Outcome ota_loop() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto dir = std::filesystem::temp_directory_path() /
                   ("tinyfit_ota_" + std::to_string(std::chrono::steady_clock::now().time_since_epoch().count()));
  std::filesystem::create_directories(dir);
  struct Cleanup {
    std::filesystem::path p;
    ~Cleanup() {
      std::error_code ec;
      std::filesystem::remove_all(p, ec);
    }
  } cleanup{dir};

  // Pretrained model: generalized synthetic subjects 1.., the wearer is subject 0.
  SyntheticConfig sc;
  WindowedDataset pre;
  pre.classes = sc.classes;
  for (auto& w : windows_from_recordings(SyntheticGenerator(sc).dataset()))
    if (w.subject_id != SyntheticGenerator(sc).subject_name(0)) pre.windows.push_back(std::move(w));
  nn::TrainConfig tc;
  tc.epochs = 5;
  const auto stats = fit_channel_stats(pre.windows);
  std::vector<Window> norm;
  for (const auto& w : pre.windows) norm.push_back(normalize(w, stats));
  nn::Checkpoint ck{nn::train(nn::init_model<double>(sc.classes, 1), norm, tc).model, stats};

  server::ServiceConfig svc;
  svc.database = (dir / "ota.db").string();
  svc.workers = 1;
  svc.fine_tune.epochs = 20;
  server::Service service(svc, ck);
  server::HttpServer http(service);
  const int port = http.start();

  device::HttpTransport transport("127.0.0.1", port);
  device::TrafficRecorder traffic(transport);
  device::ApiClient api(traffic);
  const auto [device_id, token] = api.register_device("wristband");
  api.link(device_id, api.create_user("wearer"));

  device::DeviceConfig dc;
  dc.device_id = device_id;
  dc.token = token;
  dc.poll_interval_s = 5.0;
  dc.flush_interval_s = 2.0;
  dc.boot_id = "ota";
  device::SyntheticSource source(sc, 0, 99);
  device::VirtualClock clock;
  device::DeviceSimulator sim(dc, traffic, source, clock);
  sim.start();
  if (sim.model_version() != 0) return fail("device started with a model");

  // 15 windows per class: (15 - 1) * 1.5 s + 3 s = 24 s.
  const double seconds = (kOtaWindowsPerClass - 1) * (kWindowStride / kTargetRateHz) + kWindowLength / kTargetRateHz;
  for (int c = 0; c < kOtaClasses; ++c) {
    source.set_activity(c);
    const auto up = sim.record(sc.classes[static_cast<std::size_t>(c)], seconds);
    if (up.window_count != static_cast<std::size_t>(kOtaWindowsPerClass))
      return fail(fmt("class %d stored %zu windows", c, up.window_count));
  }
  source.set_activity(std::nullopt);

  const auto job = api.personalize(device_id);
  service.wait_idle();
  const auto status = api.job(job);
  if (status["status"] != "succeeded") return fail("personalization job " + status.dump());

  traffic.clear();
  sim.run(600);  // 30 s of wear; the 5 s poll cadence picks up the bundle
  const auto device_traffic = traffic.entries();
  std::size_t raw_posts = 0;
  for (const auto& e : device_traffic) {
    const auto& p = e.request.path;
    const bool allowed = (e.request.method == "GET" && p.find("/firmware") != std::string::npos) ||
                         (e.request.method == "POST" && p.find("/inferences") != std::string::npos);
    if (!allowed || e.request.body.find("samples") != std::string::npos) ++raw_posts;
  }
  std::size_t bumped = 0;
  for (const auto& e : api.history(device_id)) bumped += e.model_version == 1;
  const std::size_t requests = device_traffic.size();
  const double secs = seconds_since(t0);
  return check(sim.summary().swaps == 1 && bumped >= 1 && raw_posts == 0 && secs < kOtaMaxSeconds,
               fmt("%d classes x %d windows uploaded, swap 0 -> %u, %zu events with the new version, %zu post-deployment "
                   "requests with %zu raw-data payloads, %.1f s",
                   kOtaClasses, kOtaWindowsPerClass, sim.model_version(), bumped, requests, raw_posts, secs));
}

Outcome serialization_fuzz() {
  std::vector<std::vector<std::uint8_t>> corpus;
  for (int i = 0; i < 24; ++i) corpus.push_back(random_bundle_bytes(2 + i % 17, static_cast<std::uint64_t>(100 + i)));
  Rng rng(2024);
  std::map<std::string, int> codes;
  int roundtrips = 0;
  for (int it = 0; it < kFuzzIterations; ++it) {
    const auto& bytes = corpus[rng.below(corpus.size())];
    const auto parsed = quant::deserialize(bytes);
    if (quant::serialize(parsed) != bytes) return fail(fmt("iteration %d: round trip changed the bytes", it));
    ++roundtrips;

    auto bad = bytes;
    const auto mode = rng.below(3);
    if (mode == 0) {
      bad[rng.below(bad.size())] ^= static_cast<std::uint8_t>(1 + rng.below(255));
    } else if (mode == 1) {
      bad.resize(rng.below(bad.size()));
    } else {
      const auto pos = rng.below(bad.size());
      bad.insert(bad.begin() + static_cast<std::ptrdiff_t>(pos), static_cast<std::uint8_t>(rng.below(256)));
    }
    try {
      const auto q = quant::deserialize(bad);
      if (!(q == parsed)) return fail(fmt("iteration %d: corrupted bytes parsed silently", it));
      ++codes["equal"];
    } catch (const Error& e) {
      if (e.code() != Errc::CrcMismatch && e.code() != Errc::Truncated)
        return fail(fmt("iteration %d: unexpected %s", it, std::string(to_string(e.code())).c_str()));
      ++codes[std::string(to_string(e.code()))];
    }
  }
  std::ostringstream os;
  for (const auto& [k, v] : codes) os << " " << k << "=" << v;
  return pass(fmt("%d round trips exact, corruptions:", roundtrips) + os.str());
}

const std::vector<std::pair<std::string, std::function<Outcome()>>>& criteria() {
  static const std::vector<std::pair<std::string, std::function<Outcome()>>> all = {
      {"window_count_law", window_count_law},
      {"gradient_oracle", gradient_oracle},
      {"freeze_invariant", freeze_invariant},
      {"quant_fidelity_wisdm", quant_fidelity_wisdm},
      {"size_claim", size_claim},
      {"latency_claim", latency_claim},
      {"wisdm_reproduction", wisdm_reproduction},
      {"pamap2_reproduction", pamap2_reproduction},
      {"synthetic_ordering", synthetic_ordering},
      {"ota_loop", ota_loop},
      {"serialization_fuzz", serialization_fuzz},
  };
  return all;
}

Verdict run_one(const std::string& name, const std::function<Outcome()>& fn) {
  Outcome o;
  try {
    o = fn();
  } catch (const std::exception& e) {
    o = fail(std::string("exception: ") + e.what());
  }
  const char* tag = o.verdict == Verdict::pass ? "PASS" : o.verdict == Verdict::fail ? "FAIL" : "SKIP";
  std::printf("%s %-22s %s\n", tag, name.c_str(), o.detail.c_str());
  std::fflush(stdout);
  return o.verdict;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc > 2) {
    std::fprintf(stderr, "usage: %s [criterion]\n", argv[0]);
    return 2;
  }
  if (argc == 2) {
    for (const auto& [name, fn] : criteria())
      if (name == argv[1]) {
        const auto v = run_one(name, fn);
        return v == Verdict::pass ? 0 : v == Verdict::skip ? 77 : 1;
      }
    std::fprintf(stderr, "unknown criterion %s\n", argv[1]);
    return 2;
  }
  bool failed = false;
  for (const auto& [name, fn] : criteria()) failed |= run_one(name, fn) == Verdict::fail;
  return failed ? 1 : 0;
}
