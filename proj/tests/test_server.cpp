#include <doctest.h>
#include <sqlite3.h>

#include "server_fixture.hpp"
#include "tinyfit/quant.hpp"

using namespace tinyfit;
using namespace tinyfit::test;
using nlohmann::json;

namespace {

struct Registered {
  std::string device_id;
  std::string token;
  std::string user_id;
};

json body_of(const httplib::Result& r) {
  REQUIRE(r);
  return r->body.empty() ? json() : json::parse(r->body);
}

Registered register_and_link(httplib::Client& c, bool link = true) {
  const auto dev = body_of(c.Post("/api/devices", "{}", "application/json"));
  const auto user = body_of(c.Post("/api/users", R"({"name": "ada"})", "application/json"));
  Registered r{dev["device_id"], dev["token"], user["id"]};
  if (link) {
    auto res = c.Post("/api/devices/" + r.device_id + "/link", bearer_headers(r.token),
                      json{{"user_id", r.user_id}}.dump(), "application/json");
    REQUIRE(res->status == 200);
  }
  return r;
}

httplib::Result upload(httplib::Client& c, const Registered& r, const std::string& cls, std::size_t n,
                       double rate_hz = 20.0, std::optional<std::string> key = {}) {
  json body = {{"class_name", cls}, {"rate_hz", rate_hz}, {"samples", sample_rows(n, rate_hz, cls.size() % 3)}};
  if (key) body["idempotency_key"] = *key;
  return c.Post("/api/devices/" + r.device_id + "/recordings", bearer_headers(r.token), body.dump(),
                "application/json");
}

// Samples that yield exactly `windows` windows at 20 Hz.
std::size_t samples_for(std::size_t windows) { return kWindowLength + (windows - 1) * kWindowStride; }

void sql(const std::string& path, const std::string& statement) {
  sqlite3* db = nullptr;
  REQUIRE(sqlite3_open(path.c_str(), &db) == SQLITE_OK);
  sqlite3_busy_timeout(db, 5000);
  char* err = nullptr;
  const int rc = sqlite3_exec(db, statement.c_str(), nullptr, nullptr, &err);
  INFO(statement << " -> " << (err ? err : ""));
  sqlite3_free(err);
  sqlite3_close(db);
  REQUIRE(rc == SQLITE_OK);
}

}  // namespace

TEST_SUITE("server") {
  TEST_CASE("device routes require the device's bearer token") {
    TempDir dir;
    ServerHarness h(quick_service_config(dir.file("db.sqlite")));
    auto c = h.client();
    const auto r = register_and_link(c);
    const auto other = register_and_link(c);
    const std::string base = "/api/devices/" + r.device_id;
    for (const std::string path : {base, base + "/classes", base + "/jobs", base + "/firmware", base + "/history"}) {
      CHECK(c.Get(path)->status == 401);
      CHECK(c.Get(path, bearer_headers("nope"))->status == 401);
      CHECK(c.Get(path, bearer_headers(other.token))->status == 401);
      CHECK(c.Get(path, bearer_headers(r.token))->status < 300);
    }
    const auto unknown = c.Get("/api/devices/dev_missing", bearer_headers(r.token));
    CHECK(unknown->status == 404);
    const auto err = body_of(unknown);
    CHECK(err["code"] == "NotFound");
    CHECK(err.contains("message"));
    CHECK(err["details"]["device_id"] == "dev_missing");
  }

  TEST_CASE("status codes and typed error bodies") {
    TempDir dir;
    ServerHarness h(quick_service_config(dir.file("db.sqlite")));
    auto c = h.client();
    CHECK(c.Post("/api/users", R"({"name": ""})", "application/json")->status == 400);
    CHECK(c.Post("/api/users", "{not json", "application/json")->status == 400);
    CHECK(c.Post("/api/users", R"({"name": 5})", "application/json")->status == 400);
    CHECK(c.Get("/api/users/usr_missing")->status == 404);

    const auto unlinked = register_and_link(c, false);
    auto res = upload(c, unlinked, "walk", 200);
    CHECK(res->status == 409);
    CHECK(body_of(res)["code"] == "NotLinked");

    const auto r = register_and_link(c);
    res = upload(c, r, "walk", 59);
    CHECK(res->status == 422);
    CHECK(body_of(res)["code"] == "TooShort");
    CHECK(upload(c, r, "walk", 100, -1.0)->status == 400);
    res = c.Post("/api/devices/" + r.device_id + "/recordings", bearer_headers(r.token),
                 R"({"class_name": "walk", "rate_hz": 20, "samples": [[0, 1, 2]]})", "application/json");
    CHECK(res->status == 400);

    CHECK(upload(c, r, "walk", samples_for(15))->status == 201);
    res = c.Post("/api/devices/" + r.device_id + "/personalize", bearer_headers(r.token), "", "application/json");
    CHECK(res->status == 422);
    CHECK(body_of(res)["code"] == "BadClassCount");

    CHECK(c.Get("/api/devices/" + r.device_id + "/firmware", bearer_headers(r.token))->status == 204);
    CHECK(c.Get("/api/devices/" + r.device_id + "/firmware?have_version=-1", bearer_headers(r.token))->status == 400);
    CHECK(c.Get("/api/devices/" + r.device_id + "/history?from=abc", bearer_headers(r.token))->status == 400);
    CHECK(c.Get("/api/jobs/job_missing", bearer_headers(r.token))->status == 404);
    CHECK(c.Options("/api/devices")->status == 204);
  }

  TEST_CASE("180 samples at 20 Hz store 5 windows") {
    TempDir dir;
    ServerHarness h(quick_service_config(dir.file("db.sqlite")));
    auto c = h.client();
    const auto r = register_and_link(c);
    const auto res = body_of(upload(c, r, "walk", 180));
    CHECK(res["window_count"] == 5);
    CHECK(res["sample_count"] == 180);
    const auto classes = body_of(c.Get("/api/devices/" + r.device_id + "/classes", bearer_headers(r.token)));
    REQUIRE(classes.size() == 1);
    CHECK(classes[0]["name"] == "walk");
    CHECK(classes[0]["windows"] == 5);
    // 9 s at 50 Hz resample to 180 samples as well.
    CHECK(body_of(upload(c, r, "run", 450, 50.0))["window_count"] == 5);
  }

  TEST_CASE("idempotent registration and upload") {
    TempDir dir;
    ServerHarness h(quick_service_config(dir.file("db.sqlite")));
    auto c = h.client();
    const auto a = c.Post("/api/devices", R"({"idempotency_key": "boot-1"})", "application/json");
    const auto b = c.Post("/api/devices", R"({"idempotency_key": "boot-1"})", "application/json");
    CHECK(a->status == 201);
    CHECK(b->status == 200);
    CHECK(body_of(a)["device_id"] == body_of(b)["device_id"]);
    CHECK(body_of(a)["token"] == body_of(b)["token"]);

    const auto r = register_and_link(c);
    const auto first = body_of(upload(c, r, "walk", 180, 20.0, "rec-1"));
    const auto second = body_of(upload(c, r, "walk", 180, 20.0, "rec-1"));
    CHECK(first == second);
    const auto classes = body_of(c.Get("/api/devices/" + r.device_id + "/classes", bearer_headers(r.token)));
    CHECK(classes[0]["windows"] == 5);
  }

  TEST_CASE("personalization needs 15 windows per class, then publishes a bundle") {
    TempDir dir;
    ServerHarness h(quick_service_config(dir.file("db.sqlite")));
    auto c = h.client();
    const auto r = register_and_link(c);
    REQUIRE(upload(c, r, "walk", samples_for(15))->status == 201);
    REQUIRE(upload(c, r, "sit", samples_for(14))->status == 201);
    const std::string base = "/api/devices/" + r.device_id;
    auto res = c.Post(base + "/personalize", bearer_headers(r.token), "", "application/json");
    CHECK(res->status == 422);
    const auto err = body_of(res);
    CHECK(err["code"] == "InsufficientExamples");
    CHECK(err["details"]["class"] == "sit");
    CHECK(err["details"]["have"] == "14");
    CHECK(err["details"]["need"] == "15");

    REQUIRE(upload(c, r, "sit", samples_for(1))->status == 201);
    res = c.Post(base + "/personalize", bearer_headers(r.token), "", "application/json");
    REQUIRE(res->status == 202);
    const auto job_id = body_of(res)["id"].get<std::string>();
    h.service->wait_idle();
    const auto job = body_of(c.Get("/api/jobs/" + job_id, bearer_headers(r.token)));
    CHECK(job["status"] == "succeeded");
    CHECK(job["bundle_version"] == 1);
    CHECK(job["metrics"]["fine_tune_windows"] == 30);
    CHECK(job["metrics"]["bundle_bytes"].get<std::size_t>() < quant::kBundleSizeBudget);
    CHECK(c.Get("/api/jobs/" + job_id)->status == 401);

    const auto fw = c.Get(base + "/firmware?have_version=0", bearer_headers(r.token));
    REQUIRE(fw->status == 200);
    CHECK(fw->get_header_value("X-Bundle-Version") == "1");
    const auto bundle = quant::deserialize(std::vector<std::uint8_t>(fw->body.begin(), fw->body.end()));
    CHECK(bundle.version == 1);
    CHECK(bundle.classes == std::vector<std::string>{"walk", "sit"});
    CHECK(c.Get(base + "/firmware?have_version=1", bearer_headers(r.token))->status == 204);
    CHECK(body_of(c.Get(base, bearer_headers(r.token)))["version"] == 1);
  }

  TEST_CASE("inference events are deduplicated by event id and filtered by time") {
    TempDir dir;
    ServerHarness h(quick_service_config(dir.file("db.sqlite")));
    auto c = h.client();
    const auto r = register_and_link(c);
    const std::string base = "/api/devices/" + r.device_id;
    json events = json::array();
    for (int i = 0; i < 5; ++i)
      events.push_back({{"timestamp", 100.0 + i}, {"class_name", "walk"}, {"confidence", 0.5}, {"model_version", 1},
                        {"event_id", "b-" + std::to_string(i)}});
    auto res = body_of(c.Post(base + "/inferences", bearer_headers(r.token), json{{"events", events}}.dump(), "application/json"));
    CHECK(res["stored"] == 5);
    res = body_of(c.Post(base + "/inferences", bearer_headers(r.token), json{{"events", events}}.dump(), "application/json"));
    CHECK(res["received"] == 5);
    CHECK(res["stored"] == 0);
    const auto single = json{{"timestamp", 200.0}, {"class_name", "sit"}, {"confidence", 0.9}, {"model_version", 1}};
    CHECK(body_of(c.Post(base + "/inferences", bearer_headers(r.token), single.dump(), "application/json"))["stored"] == 1);
    auto bad = single;
    bad["confidence"] = 1.5;
    CHECK(c.Post(base + "/inferences", bearer_headers(r.token), bad.dump(), "application/json")->status == 400);

    const auto all = body_of(c.Get(base + "/history", bearer_headers(r.token)))["events"];
    CHECK(all.size() == 6);
    const auto window = body_of(c.Get(base + "/history?from=101&to=103", bearer_headers(r.token)))["events"];
    REQUIRE(window.size() == 3);
    CHECK(window[0]["timestamp"] == 101.0);
    CHECK(window[2]["event_id"] == "b-3");
  }

  TEST_CASE("state survives a restart and interrupted jobs are failed") {
    TempDir dir;
    const auto db = dir.file("db.sqlite");
    Registered r;
    {
      ServerHarness h(quick_service_config(db));
      auto c = h.client();
      r = register_and_link(c);
      REQUIRE(upload(c, r, "walk", samples_for(15), 20.0, "k1")->status == 201);
      REQUIRE(upload(c, r, "sit", samples_for(15))->status == 201);
      REQUIRE(c.Post("/api/devices/" + r.device_id + "/personalize", bearer_headers(r.token), "", "application/json")
                  ->status == 202);
      h.service->wait_idle();
      const json ev = {{"timestamp", 5.0}, {"class_name", "walk"}, {"confidence", 0.7}, {"model_version", 1},
                       {"event_id", "e1"}};
      REQUIRE(c.Post("/api/devices/" + r.device_id + "/inferences", bearer_headers(r.token), ev.dump(),
                     "application/json")
                  ->status == 201);
    }
    sql(db, "INSERT INTO jobs (id, device_id, status, examples_per_class, created_at) VALUES ('job_stale', '" +
                r.device_id + "', 'running', 15, 0)");

    ServerHarness h(quick_service_config(db));
    auto c = h.client();
    const std::string base = "/api/devices/" + r.device_id;
    const auto dev = body_of(c.Get(base, bearer_headers(r.token)));
    CHECK(dev["version"] == 1);
    CHECK(dev["owner"] == r.user_id);
    CHECK(dev["classes"].size() == 2);
    CHECK(dev["classes"][0]["windows"] == 15);
    CHECK(body_of(c.Get(base + "/history", bearer_headers(r.token)))["events"].size() == 1);
    CHECK(c.Get(base + "/firmware", bearer_headers(r.token))->get_header_value("X-Bundle-Version") == "1");
    CHECK(body_of(upload(c, r, "walk", samples_for(15), 20.0, "k1"))["window_count"] == 15);
    CHECK(body_of(c.Get(base + "/classes", bearer_headers(r.token)))[0]["windows"] == 15);

    const auto stale = body_of(c.Get("/api/jobs/job_stale", bearer_headers(r.token)));
    CHECK(stale["status"] == "failed");
    CHECK(stale["failure"].get<std::string>().find("restart") != std::string::npos);
  }

  TEST_CASE("a job over corrupt stored windows fails without publishing") {
    TempDir dir;
    const auto db = dir.file("db.sqlite");
    ServerHarness h(quick_service_config(db));
    auto c = h.client();
    const auto r = register_and_link(c);
    REQUIRE(upload(c, r, "walk", samples_for(15))->status == 201);
    REQUIRE(upload(c, r, "sit", samples_for(15))->status == 201);
    sql(db, "UPDATE windows SET data = x'00010203' WHERE id = (SELECT MIN(id) FROM windows)");
    const auto res = c.Post("/api/devices/" + r.device_id + "/personalize", bearer_headers(r.token), "", "application/json");
    REQUIRE(res->status == 202);
    h.service->wait_idle();
    const auto job = body_of(c.Get("/api/jobs/" + body_of(res)["id"].get<std::string>(), bearer_headers(r.token)));
    CHECK(job["status"] == "failed");
    CHECK_FALSE(job["failure"].is_null());
    CHECK(job["bundle_version"].is_null());
    CHECK(c.Get("/api/devices/" + r.device_id + "/firmware", bearer_headers(r.token))->status == 204);
    // The device is free to try again.
    CHECK(c.Post("/api/devices/" + r.device_id + "/personalize", bearer_headers(r.token), "", "application/json")->status ==
          202);
    h.service->wait_idle();
  }
}
