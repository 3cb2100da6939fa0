// H: the HTTP contract against a server loading the trained toy checkpoint from disk.
#include <chrono>
#include <thread>

#include "acceptance.hpp"
#include "common/archive.hpp"
#include "dataio/dataio.hpp"
#include "service/service.hpp"

// After the Eigen users: <resolv.h> defines a _res macro.
#include <httplib.h>

namespace acceptance {

using namespace e2eve;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string png_string(const Image& img) {
  const auto b = encode_png(img);
  return {b.begin(), b.end()};
}

std::string mask_string(const Mask& m) {
  const auto b = encode_mask_png(m);
  return {b.begin(), b.end()};
}

Image toy(int index) { return dataio::render_toy_image(64, 64, 1, index).image; }

struct Client {
  httplib::Client http;
  std::vector<std::string> failures;
  int calls = 0;

  explicit Client(int port) : http("127.0.0.1", port) { http.set_read_timeout(120, 0); }

  json check(const httplib::Result& r, const std::string& what, int expect) {
    ++calls;
    if (!r) {
      failures.push_back(what + ": no response");
      return json::object();
    }
    if (r->status != expect) failures.push_back(what + ": " + std::to_string(r->status) + " (want " + std::to_string(expect) + ")");
    const auto j = json::parse(r->body, nullptr, false);
    return j.is_discarded() ? json::object() : j;
  }
  json get(const std::string& p, int expect = 200) { return check(http.Get(p), "GET " + p, expect); }
  json post(const std::string& p, const json& body, int expect) {
    return check(http.Post(p, body.dump(), "application/json"), "POST " + p, expect);
  }
  json put(const std::string& p, const std::string& body, const std::string& type, int expect = 200) {
    return check(http.Put(p, body, type), "PUT " + p, expect);
  }
  void expect(bool ok, const std::string& what) {
    if (!ok) failures.push_back(what);
  }

  std::string session(int image, bool with_driver = true) {
    const std::string id = post("/v1/sessions", json::object(), 201).value("id", "");
    put("/v1/sessions/" + id + "/source", png_string(toy(image)), "image/png");
    put("/v1/sessions/" + id + "/region", json{{"rect", {{"top", 12}, {"left", 18}, {"height", 28}, {"width", 24}}}}.dump(),
        "application/json");
    if (with_driver) put("/v1/sessions/" + id + "/driver", png_string(resize_area(toy(image + 7), 16, 16)), "image/png");
    return id;
  }

  json wait(const std::string& job) {
    for (int i = 0; i < 6000; ++i) {
      json j = get("/v1/jobs/" + job);
      if (j.value("status", "") == "done" || j.value("status", "") == "failed") return j;
      std::this_thread::sleep_for(std::chrono::milliseconds(50));
    }
    failures.push_back("job " + job + " did not finish");
    return json::object();
  }
};

}  // namespace

Outcome check_service(const Context& ctx) {
  const auto ckpt = toy_checkpoint(ctx);
  service::ServiceConfig cfg;
  cfg.ckpt_dir = ckpt;
  cfg.samples_dir = ctx.workdir / "H" / "samples";
  fs::remove_all(cfg.samples_dir);
  cfg.port = 0;
  service::Server server(cfg);
  server.load_model_async();
  const int port = server.start();
  Client c(port);

  for (int i = 0; i < 600 && !server.model_loaded() && server.model_error().empty(); ++i)
    std::this_thread::sleep_for(std::chrono::milliseconds(100));
  c.expect(c.get("/v1/health").value("status", "") == "ok", "health is not ok after loading: " + server.model_error());

  // create -> inputs -> generate -> poll -> fetch -> promote
  const json req = {{"n", 6}, {"keep", 3}, {"policy", {{"kind", "top_p"}, {"p", 0.9}}}, {"seed", 2024}};
  const auto sid = c.session(3);
  const auto job = c.post("/v1/sessions/" + sid + "/generate", req, 202);
  const auto done = c.wait(job.value("id", ""));
  c.expect(done.value("status", "") == "done", "first job did not complete");
  const auto results = done.value("results", json::array());
  c.expect(results.size() == 3, "expected 3 kept samples");
  std::vector<std::string> bodies;
  for (const auto& r : results) {
    const std::string id = r.value("sample_id", "");
    auto png = c.http.Get("/v1/samples/" + id);
    ++c.calls;
    c.expect(png && png->status == 200 && png->get_header_value("Content-Type") == "image/png", "sample fetch " + id);
    if (png) {
      c.expect(sha256_hex(png->body.data(), png->body.size()) == id, "sample id is not the content hash");
      bodies.push_back(png->body);
    }
  }
  if (!results.empty()) {
    const std::string first = results[0].value("sample_id", "");
    const auto promoted = c.post("/v1/sessions/" + sid + "/promote", {{"sample_id", first}}, 200);
    c.expect(promoted.value("source", json::object()).value("sha256", "") == first, "promote did not replace the source");
    const auto job2 = c.post("/v1/sessions/" + sid + "/generate", req, 202);
    c.expect(job2.value("source_sha256", "") == first, "regeneration does not start from the promoted sample");
    c.expect(c.wait(job2.value("id", "")).value("status", "") == "done", "regeneration failed");
  }

  // Same inputs and seed in a fresh session give byte-identical PNGs.
  const auto sid2 = c.session(3);
  const auto again = c.wait(c.post("/v1/sessions/" + sid2 + "/generate", req, 202).value("id", ""));
  const auto results2 = again.value("results", json::array());
  bool identical = results2.size() == results.size() && bodies.size() == results.size();
  for (size_t i = 0; identical && i < results2.size(); ++i) {
    auto png = c.http.Get("/v1/samples/" + results2[i].value("sample_id", ""));
    identical = png && png->body == bodies[i];
  }
  c.expect(identical, "seeded requests are not byte-identical");

  // 409: generate before the driver is set
  const auto partial = c.session(5, false);
  c.post("/v1/sessions/" + partial + "/generate", req, 409);
  // 404: unknown session, job, sample
  c.get("/v1/sessions/ffffffffffff", 404);
  c.get("/v1/jobs/abc123", 404);
  c.get("/v1/samples/" + std::string(64, 'a'), 404);
  c.post("/v1/sessions/" + sid + "/promote", {{"sample_id", std::string(64, 'b')}}, 404);
  // 422: malformed region, mask of the wrong size, bad sampling parameters
  c.put("/v1/sessions/" + partial + "/region", json{{"rect", {60, 60, 10, 10}}}.dump(), "application/json", 422);
  c.put("/v1/sessions/" + partial + "/region", mask_string(Mask(32, 32, 1)), "image/png", 422);
  c.put("/v1/sessions/" + partial + "/source", "not a png", "image/png", 422);
  c.post("/v1/sessions/" + sid + "/generate", {{"n", 2}, {"keep", 3}}, 422);
  c.post("/v1/sessions/" + sid + "/generate", {{"policy", {{"kind", "top_p"}, {"p", 1.5}}}}, 422);

  server.stop();
  Outcome o;
  o.pass = c.failures.empty();
  o.summary = std::to_string(c.calls) + " requests against the trained toy checkpoint, " +
              (c.failures.empty() ? std::string("flow, determinism and 409/404/422 paths hold") : c.failures.front());
  o.detail = {{"checkpoint", ckpt.string()}, {"requests", c.calls}, {"failures", c.failures},
              {"byte_identical", identical}};
  return o;
}

}  // namespace acceptance
