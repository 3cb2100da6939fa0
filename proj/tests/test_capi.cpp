#include <e2eve/e2eve.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "helpers.hpp"
#include "json.hpp"
#include "tiny_config.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string take(char* s) {
  std::string out = s ? s : "";
  e2eve_free_string(s);
  return out;
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

struct Cfg {
  e2eve_config* p = nullptr;
  ~Cfg() { e2eve_config_free(p); }
};

}  // namespace

TEST_CASE("c api: presets, patches and errors") {
  Cfg cfg;
  REQUIRE(e2eve_config_preset("paper-scale", &cfg.p) == E2EVE_OK);
  char* text = nullptr;
  REQUIRE(e2eve_config_describe(cfg.p, &text) == E2EVE_OK);
  const std::string d = take(text);
  CHECK(d.find("24 layers / 16 heads / 1024 dim") != std::string::npos);
  CHECK(d.find("p=0.9") != std::string::npos);
  CHECK(d.find("alpha: 0.4-0.7") != std::string::npos);
  CHECK(d.find("sequence 528") != std::string::npos);

  CHECK(e2eve_config_patch(cfg.p, R"({"artist": {"heads": 7}})") == E2EVE_OK);
  CHECK(e2eve_config_validate(cfg.p) == E2EVE_ERR_INVALID_ARGUMENT);
  CHECK(std::string(e2eve_last_error()).find("heads") != std::string::npos);
  CHECK(e2eve_config_patch(cfg.p, "{oops") == E2EVE_ERR_INVALID_ARGUMENT);
  CHECK(e2eve_config_patch(cfg.p, R"({"artist": {"layers": "many"}})") == E2EVE_ERR_INVALID_ARGUMENT);

  e2eve_config* none = nullptr;
  CHECK(e2eve_config_preset("huge", &none) == E2EVE_ERR_INVALID_ARGUMENT);
  CHECK(none == nullptr);
  CHECK(std::string(e2eve_status_name(E2EVE_ERR_MASK_SHAPE_MISMATCH)) == "MaskShapeMismatch");
  CHECK(e2eve_model_load("/nonexistent/artist.ckpt", nullptr) == E2EVE_ERR_INVALID_ARGUMENT);
  e2eve_model* m = nullptr;
  CHECK(e2eve_model_load("/nonexistent/artist.ckpt", &m) == E2EVE_ERR_IO);
  CHECK(std::string(e2eve_version()).size() > 0);
}

TEST_CASE("c api: seeds derive from the run seed") {
  Cfg a, b;
  REQUIRE(e2eve_config_preset("toy", &a.p) == E2EVE_OK);
  REQUIRE(e2eve_config_preset("toy", &b.p) == E2EVE_OK);
  REQUIRE(e2eve_config_patch(b.p, R"({"seed": 1})") == E2EVE_OK);
  char* sa = nullptr;
  char* sb = nullptr;
  e2eve_config_seeds(a.p, &sa);
  e2eve_config_seeds(b.p, &sb);
  const json ja = json::parse(take(sa)), jb = json::parse(take(sb));
  CHECK(ja.size() == 7);
  for (const auto& [k, v] : ja.items()) CHECK(jb[k] != v);
  std::set<std::uint64_t> distinct;
  for (const auto& [k, v] : ja.items()) distinct.insert(v.get<std::uint64_t>());
  CHECK(distinct.size() == 7);
}

TEST_CASE("c api: stage by stage, with config echo in every artifact") {
  const auto dir = testutil::scratch("capi_stages");
  Cfg cfg;
  REQUIRE(e2eve_config_preset("toy", &cfg.p) == E2EVE_OK);
  REQUIRE(e2eve_config_patch(cfg.p, kTinyRunPatch) == E2EVE_OK);
  REQUIRE(e2eve_config_validate(cfg.p) == E2EVE_OK);

  const auto data = dir / "data";
  REQUIRE(e2eve_data_toy(cfg.p, data.c_str()) == E2EVE_OK);
  const auto manifest = data / "manifest.json";
  CHECK(read_json(manifest)["entries"].size() == 12);

  const auto shards = dir / "shards";
  REQUIRE(e2eve_synth(cfg.p, manifest.c_str(), "train", shards.c_str()) == E2EVE_OK);
  const json index = read_json(shards / "index.json");
  CHECK(index.dump().find("\"per_image\":2") != std::string::npos);
  CHECK(e2eve_synth(cfg.p, manifest.c_str(), "test", (dir / "x").c_str()) == E2EVE_ERR_INVALID_ARGUMENT);

  const auto vqi = dir / "vq_image.ckpt", vqd = dir / "vq_driver.ckpt", art = dir / "artist.ckpt";
  REQUIRE(e2eve_train_vq(cfg.p, "image", manifest.c_str(), nullptr, vqi.c_str()) == E2EVE_OK);
  REQUIRE(e2eve_train_vq(cfg.p, "driver", nullptr, shards.c_str(), vqd.c_str()) == E2EVE_OK);
  CHECK(e2eve_train_vq(cfg.p, "driver", manifest.c_str(), nullptr, vqd.c_str()) == E2EVE_ERR_INVALID_ARGUMENT);
  CHECK(e2eve_train_vq(cfg.p, "audio", manifest.c_str(), nullptr, vqd.c_str()) == E2EVE_ERR_INVALID_ARGUMENT);
  REQUIRE(e2eve_train_artist(cfg.p, vqi.c_str(), vqd.c_str(), shards.c_str(), nullptr, art.c_str()) == E2EVE_OK);
  CHECK(e2eve_train_artist(cfg.p, vqi.c_str(), vqd.c_str(), shards.c_str(), manifest.c_str(), art.c_str()) ==
        E2EVE_ERR_INVALID_ARGUMENT);

  e2eve_model* model = nullptr;
  REQUIRE(e2eve_model_load(art.c_str(), &model) == E2EVE_OK);
  char* info = nullptr;
  REQUIRE(e2eve_model_info(model, &info) == E2EVE_OK);
  const json ji = json::parse(take(info));
  CHECK(ji["config"]["n_layers"] == 1);
  CHECK(ji["step"] == 3);
  CHECK(ji["vq_image"]["sha256"].get<std::string>().size() == 64);

  // Sampling from files, block rect and driver.
  const json entries = read_json(manifest)["entries"];
  const auto source = data / entries[0]["relative_path"].get<std::string>();
  const auto driver = data / entries[1]["relative_path"].get<std::string>();
  char* out = nullptr;
  const json req = {{"n", 4}, {"keep", 2}, {"policy", {{"kind", "top_k"}, {"k", 4}}}, {"seed", 9}, {"rect", {8, 8, 24, 24}}};
  REQUIRE(e2eve_sample(model, source.c_str(), nullptr, driver.c_str(), req.dump().c_str(), (dir / "samples").c_str(),
                       &out) == E2EVE_OK);
  const json side = json::parse(take(out));
  CHECK(side["samples"].size() == 2);
  CHECK(side["candidates"].size() == 4);
  CHECK(fs::exists(dir / "samples" / side["samples"][0]["file"].get<std::string>()));
  CHECK(read_json(dir / "samples" / "samples.json") == side);
  CHECK(e2eve_sample(model, source.c_str(), nullptr, driver.c_str(), R"({"n": 2})", (dir / "s2").c_str(), nullptr) ==
        E2EVE_ERR_INVALID_ARGUMENT);

  const auto report_path = dir / "report.json";
  char* rep = nullptr;
  REQUIRE(e2eve_evaluate(cfg.p, model, manifest.c_str(), report_path.c_str(), &rep) == E2EVE_OK);
  const json report = json::parse(take(rep));
  CHECK(report == read_json(report_path));
  for (const char* m : {"e2eve", "copy_paste", "inpaint"}) CHECK(report["methods"].contains(m));
  CHECK(report["methods"]["copy_paste"]["locality_l1"] == 0.0);
  CHECK(report["config"]["seed"] == 4);
  e2eve_model_free(model);

  // Train straight from the manifest (synthesized in memory).
  REQUIRE(e2eve_train_artist(cfg.p, vqi.c_str(), vqd.c_str(), nullptr, manifest.c_str(), (dir / "a2.ckpt").c_str()) ==
          E2EVE_OK);
}

TEST_CASE("c api: pipeline end to end") {
  const auto dir = testutil::scratch("capi_pipeline");
  Cfg cfg;
  REQUIRE(e2eve_config_preset("toy", &cfg.p) == E2EVE_OK);
  REQUIRE(e2eve_config_patch(cfg.p, kTinyRunPatch) == E2EVE_OK);
  std::vector<std::string> lines;
  e2eve_set_log([](const char* l, void* u) { static_cast<std::vector<std::string>*>(u)->push_back(l); }, &lines);
  char* out = nullptr;
  REQUIRE(e2eve_pipeline(cfg.p, dir.c_str(), &out) == E2EVE_OK);
  e2eve_set_log(nullptr, nullptr);
  const json report = json::parse(take(out));
  CHECK(report == read_json(dir / "report.json"));
  CHECK(report.contains("version"));
  CHECK(report["seeds"].size() == 7);
  CHECK(report["config"]["artist"]["layers"] == 1);
  CHECK(!lines.empty());
  for (const char* f : {"vq_image.ckpt", "vq_driver.ckpt", "artist.ckpt", "shards/index.json", "data/manifest.json"})
    CHECK_MESSAGE(fs::exists(dir / f), f);
}

TEST_CASE("c api: server start and stop") {
  const auto dir = testutil::scratch("capi_server");
  Cfg cfg;
  REQUIRE(e2eve_config_preset("toy", &cfg.p) == E2EVE_OK);
  REQUIRE(e2eve_config_patch(cfg.p, R"({"serve": {"port": 0}})") == E2EVE_OK);
  e2eve_server* s = nullptr;
  REQUIRE(e2eve_server_create(cfg.p, dir.c_str(), nullptr, nullptr, &s) == E2EVE_OK);
  int port = 0;
  REQUIRE(e2eve_server_start(s, &port) == E2EVE_OK);
  CHECK(port > 0);
  CHECK(e2eve_server_stop(s) == E2EVE_OK);
  e2eve_server_free(s);
}
