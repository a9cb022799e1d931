#include <doctest.h>

#include <sys/wait.h>

#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "support.hpp"
#include "tinyfit/nn/checkpoint.hpp"
#include "tinyfit/quant.hpp"

using namespace tinyfit;
using namespace tinyfit::test;

namespace {

struct Run {
  int status = -1;
  std::string output;  // stdout and stderr interleaved
};

Run tinyfit_cli(const std::string& args) {
  const std::string cmd = std::string(TINYFIT_CLI_PATH) + " " + args + " 2>&1";
  Run r;
  FILE* p = popen(cmd.c_str(), "r");
  REQUIRE(p != nullptr);
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof buf, p)) r.output.append(buf, n);
  const int raw = pclose(p);
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  return r;
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& text) { std::ofstream(path, std::ios::binary) << text; }

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("synthetic pipeline: ingest, train, evaluate, package") {
    TempDir dir;
    const auto synth = dir.file("synth.json");
    write_file(synth, R"({"classes": ["walking", "jogging", "typing"], "subjects": 6, "recordings_per_class": 2,
                          "seconds_per_recording": 20})");
    const auto exp = dir.file("exp.json");
    write_file(exp, R"({"train": {"epochs": 2}, "personalize": {"examples_per_class": 5, "train": {"epochs": 3}}})");

    const auto twin = dir.file("s.twin");
    auto r = tinyfit_cli("ingest --dataset synthetic --config " + synth + " --out " + twin);
    INFO(r.output);
    REQUIRE(r.status == 0);
    CHECK(r.output.find("subjects  6") != std::string::npos);
    CHECK(r.output.find("classes   3") != std::string::npos);
    const auto twin2 = dir.file("s2.twin");
    REQUIRE(tinyfit_cli("ingest --dataset synthetic --config " + synth + " --out " + twin2).status == 0);
    CHECK(slurp(twin) == slurp(twin2));
    REQUIRE(tinyfit_cli("ingest --dataset synthetic --config " + synth + " --seed 9 --out " + twin2).status == 0);
    CHECK(slurp(twin) != slurp(twin2));

    const auto ck = dir.file("gm.tflt");
    r = tinyfit_cli("train-generalized --path " + twin + " --config " + exp + " --out " + ck);
    INFO(r.output);
    REQUIRE(r.status == 0);
    CHECK(r.output.find("gs_accuracy") != std::string::npos);

    const auto out = dir.file("report");
    r = tinyfit_cli("eval-personalized --path " + twin + " --checkpoint " + ck + " --config " + exp + " --out " + out);
    INFO(r.output);
    REQUIRE(r.status == 0);
    const auto report = nlohmann::json::parse(slurp(out + "/report.json"));
    CHECK(report["dataset"] == "s");
    CHECK(report["classes"].size() == 3);
    CHECK(report["users"].size() == kPersonalizedSubjects);
    CHECK(report["gs"].is_number());
    CHECK(report["seeds"]["slice"] == 42);
    CHECK(slurp(out + "/report.txt").find("PS-GM") != std::string::npos);

    const auto b1 = dir.file("a.tbnd"), b2 = dir.file("b.tbnd");
    r = tinyfit_cli("package --checkpoint " + ck + " --path " + twin + " --version 3 --latency-runs 20 --out " + b1);
    INFO(r.output);
    REQUIRE(r.status == 0);
    CHECK(r.output.find("macs             35040") != std::string::npos);
    REQUIRE(tinyfit_cli("package --checkpoint " + ck + " --path " + twin + " --version 3 --latency-runs 5 --out " + b2)
                .status == 0);
    const auto bytes = slurp(b1);
    CHECK(bytes == slurp(b2));
    const auto bundle = quant::deserialize(std::vector<std::uint8_t>(bytes.begin(), bytes.end()));
    CHECK(bundle.version == 3);
    CHECK(bytes.size() < quant::kBundleSizeBudget);
  }

  TEST_CASE("config errors exit 2 and name the line") {
    TempDir dir;
    const auto bad = dir.file("bad.json");
    write_file(bad, "{\n  \"train\": {\n    \"epochs\": 2,\n  }\n}\n");
    auto r = tinyfit_cli("train-generalized --path x.twin --config " + bad + " --out y");
    CHECK(r.status == 2);
    CHECK(r.output.find("BadConfig") != std::string::npos);
    CHECK(r.output.find("line=4") != std::string::npos);

    write_file(bad, R"({"trian": {}})");
    r = tinyfit_cli("train-generalized --path x.twin --config " + bad + " --out y");
    CHECK(r.status == 2);
    CHECK(r.output.find("trian") != std::string::npos);

    CHECK(tinyfit_cli("ingest --dataset mnist --out x").status == 2);
    CHECK(tinyfit_cli("ingest --dataset wisdm --out x").status == 2);
    r = tinyfit_cli("ingest --dataset wisdm --path " + dir.file("nowhere") + " --out " + dir.file("x"));
    CHECK(r.status == 1);
    CHECK(r.output.find("DatasetNotFound") != std::string::npos);
    CHECK(tinyfit_cli("bogus").status != 0);
  }

  TEST_CASE("a bundle over budget exits 4 and writes nothing") {
    TempDir dir;
    const auto names = class_names(255);
    WindowedDataset ds;
    ds.classes = names;
    for (int s = 0; s < 6; ++s) {
      auto ws = separable_windows(3, 2, static_cast<std::uint64_t>(s), names, "subject" + std::to_string(s));
      ds.windows.insert(ds.windows.end(), ws.begin(), ws.end());
    }
    write_twin(dir.file("d.twin"), ds);
    nn::save_checkpoint(dir.file("big.tflt"), nn::init_model<double>(names, 1), ChannelStats{});
    const auto out = dir.file("big.tbnd");
    const auto r = tinyfit_cli("package --checkpoint " + dir.file("big.tflt") + " --path " + dir.file("d.twin") +
                               " --out " + out);
    INFO(r.output);
    CHECK(r.status == 4);
    CHECK(r.output.find("SizeBudgetExceeded") != std::string::npos);
    CHECK_FALSE(std::filesystem::exists(out));
  }

  TEST_CASE("simulate against a server that is not running exits 3") {
    TempDir dir;
    const auto cfg = dir.file("sim.json");
    write_file(cfg, R"({"server": {"host": "127.0.0.1", "port": 1, "timeout_s": 1},
                        "device": {"device_id": "d", "token": "t"},
                        "source": {"type": "synthetic"}, "virtual_clock": true, "max_samples": 10})");
    const auto r = tinyfit_cli("simulate --config " + cfg);
    INFO(r.output);
    CHECK(r.status == 3);
    CHECK(r.output.find("ServerUnreachable") != std::string::npos);
  }
}
