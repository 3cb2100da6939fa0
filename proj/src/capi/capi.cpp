#include "e2eve/e2eve.h"

#include <cstring>
#include <fstream>
#include <mutex>
#include <string>

#include "common/archive.hpp"
#include "common/error.hpp"
#include "pipeline/pipeline.hpp"
#include "service/service.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace e2eve;

struct e2eve_config {
  pipeline::RunConfig cfg;
};

struct e2eve_model {
  std::shared_ptr<const artist::ArtistModel> model;
  std::string path;
};

struct e2eve_server {
  std::unique_ptr<service::Server> server;
};

namespace {

thread_local std::string g_last_error;

std::mutex g_log_mu;
e2eve_log_fn g_log_fn = nullptr;
void* g_log_user = nullptr;

void emit(const std::string& line) {
  std::lock_guard lk(g_log_mu);
  if (g_log_fn) g_log_fn(line.c_str(), g_log_user);
}

pipeline::Log logger() { return [](const std::string& s) { emit(s); }; }

template <typename F>
e2eve_status guarded(F&& fn) {
  try {
    fn();
    g_last_error.clear();
    return E2EVE_OK;
  } catch (const Error& e) {
    g_last_error = e.what();
    return static_cast<e2eve_status>(e.code());
  } catch (const json::exception& e) {
    g_last_error = std::string("json: ") + e.what();
    return E2EVE_ERR_FORMAT;
  } catch (const fs::filesystem_error& e) {
    g_last_error = e.what();
    return E2EVE_ERR_IO;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return E2EVE_ERR_INTERNAL;
  }
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void put_string(char** out, const std::string& s) {
  if (out) *out = dup_string(s);
}

void need(const void* p, const char* what) {
  require(p != nullptr, ErrorCode::InvalidArgument, std::string(what) + " is null");
}

json effective(const e2eve_config* c) {
  json j = c->cfg.to_json();
  j["seeds"] = pipeline::derive_seeds(c->cfg.seed).to_json();
  return j;
}

dataio::Split parse_split(const char* s) {
  const std::string v = s ? s : "train";
  if (v == "train") return dataio::Split::Train;
  if (v == "val") return dataio::Split::Val;
  fail(ErrorCode::InvalidArgument, "split must be train or val, got " + v);
}

Image read_image_file(const char* path) {
  need(path, "image path");
  return read_png(path);
}

}  // namespace

extern "C" {

const char* e2eve_version(void) { return version_string(); }

const char* e2eve_last_error(void) { return g_last_error.c_str(); }

const char* e2eve_status_name(int status) { return error_code_name(static_cast<ErrorCode>(status)); }

void e2eve_free_string(char* s) { std::free(s); }

void e2eve_set_log(e2eve_log_fn fn, void* user) {
  std::lock_guard lk(g_log_mu);
  g_log_fn = fn;
  g_log_user = user;
}

e2eve_status e2eve_config_preset(const char* name, e2eve_config** out) {
  return guarded([&] {
    need(name, "preset name");
    need(out, "out");
    *out = new e2eve_config{pipeline::preset(name)};
  });
}

e2eve_status e2eve_config_load(const char* path, e2eve_config** out) {
  return guarded([&] {
    need(path, "config path");
    need(out, "out");
    *out = new e2eve_config{pipeline::load_config(path)};
  });
}

e2eve_status e2eve_config_patch(e2eve_config* cfg, const char* json_patch) {
  return guarded([&] {
    need(cfg, "config");
    need(json_patch, "patch");
    json p;
    try {
      p = json::parse(json_patch);
    } catch (const json::exception& e) {
      fail(ErrorCode::InvalidArgument, std::string("config patch: ") + e.what());
    }
    cfg->cfg = cfg->cfg.patched(p);
  });
}

e2eve_status e2eve_config_validate(const e2eve_config* cfg) {
  return guarded([&] {
    need(cfg, "config");
    cfg->cfg.validate();
  });
}

e2eve_status e2eve_config_to_json(const e2eve_config* cfg, char** out_json) {
  return guarded([&] {
    need(cfg, "config");
    put_string(out_json, cfg->cfg.to_json().dump(2));
  });
}

e2eve_status e2eve_config_describe(const e2eve_config* cfg, char** out_text) {
  return guarded([&] {
    need(cfg, "config");
    put_string(out_text, pipeline::describe(cfg->cfg));
  });
}

e2eve_status e2eve_config_seeds(const e2eve_config* cfg, char** out_json) {
  return guarded([&] {
    need(cfg, "config");
    put_string(out_json, pipeline::derive_seeds(cfg->cfg.seed).to_json().dump(2));
  });
}

void e2eve_config_free(e2eve_config* cfg) { delete cfg; }

e2eve_status e2eve_data_toy(const e2eve_config* cfg, const char* out_dir) {
  return guarded([&] {
    need(cfg, "config");
    need(out_dir, "out_dir");
    const auto& c = cfg->cfg;
    const auto m = dataio::make_toy_corpus(c.data.n_images, c.data.height, c.data.width,
                                           pipeline::derive_seeds(c.seed).data, out_dir, c.data.val_fraction);
    emit("toy corpus: " + std::to_string(m.count(dataio::Split::Train)) + " train / " +
         std::to_string(m.count(dataio::Split::Val)) + " val images in " + out_dir);
  });
}

e2eve_status e2eve_data_ingest(const e2eve_config* cfg, const char* in_dir, const char* out_dir) {
  return guarded([&] {
    need(cfg, "config");
    need(in_dir, "in_dir");
    need(out_dir, "out_dir");
    const auto& c = cfg->cfg;
    auto m = dataio::ingest_folder(in_dir, c.data.height, c.data.width, c.data.val_fraction,
                                   pipeline::derive_seeds(c.seed).data);
    fs::create_directories(out_dir);
    const fs::path out = fs::absolute(out_dir);
    // Entries are stored relative to the manifest's own directory.
    for (auto& e : m.entries) {
      e.relative_path = fs::relative(fs::absolute(m.root / e.relative_path), out).generic_string();
      if (e.mask_path) *e.mask_path = fs::relative(fs::absolute(m.root / *e.mask_path), out).generic_string();
    }
    m.root = out;
    m.save(out / "manifest.json");
    emit("ingested " + std::to_string(m.entries.size()) + " images, skipped " + std::to_string(m.skipped_files));
  });
}

e2eve_status e2eve_synth(const e2eve_config* cfg, const char* manifest_path, const char* split,
                         const char* shards_dir) {
  return guarded([&] {
    need(cfg, "config");
    need(manifest_path, "manifest");
    need(shards_dir, "shards_dir");
    const auto m = dataio::DatasetManifest::load(manifest_path);
    const auto opts = pipeline::synth_options(cfg->cfg, parse_split(split));
    const auto quads = editsynth::synthesize_dataset(m, opts);
    editsynth::write_shards(shards_dir, quads, effective(cfg));
    emit("wrote " + std::to_string(quads.size()) + " quadruplets to " + shards_dir);
  });
}

e2eve_status e2eve_train_vq(const e2eve_config* cfg, const char* role, const char* manifest_path,
                            const char* shards_dir, const char* out_ckpt) {
  return guarded([&] {
    need(cfg, "config");
    need(role, "role");
    need(out_ckpt, "out_ckpt");
    const std::string r = role;
    std::unique_ptr<vq::VqModel> model;
    if (r == "image") {
      need(manifest_path, "manifest (image quantizers train on manifest images)");
      const auto m = dataio::DatasetManifest::load(manifest_path);
      const auto pool = pipeline::load_split(m, dataio::Split::Train);
      require(!pool.empty(), ErrorCode::NoImages, "manifest has no train images");
      model = std::make_unique<vq::VqModel>(pipeline::train_image_vq(cfg->cfg, pool));
    } else if (r == "driver") {
      need(shards_dir, "shards (driver quantizers train on synthesized drivers)");
      const auto quads = editsynth::read_shards(shards_dir);
      require(!quads.empty(), ErrorCode::NoImages, "no quadruplets in shards");
      model = std::make_unique<vq::VqModel>(pipeline::train_driver_vq(cfg->cfg, quads));
    } else {
      fail(ErrorCode::InvalidArgument, "role must be image or driver, got " + r);
    }
    vq::save_vq(*model, out_ckpt, effective(cfg));
    emit("saved " + r + " quantizer to " + std::string(out_ckpt));
  });
}

e2eve_status e2eve_train_artist(const e2eve_config* cfg, const char* vq_image_ckpt, const char* vq_driver_ckpt,
                                const char* shards_dir, const char* manifest_path, const char* out_ckpt) {
  return guarded([&] {
    need(cfg, "config");
    need(vq_image_ckpt, "vq_image");
    need(vq_driver_ckpt, "vq_driver");
    need(out_ckpt, "out_ckpt");
    require((shards_dir == nullptr) != (manifest_path == nullptr), ErrorCode::InvalidArgument,
            "give exactly one of shards or manifest");
    const auto& c = cfg->cfg;
    std::vector<editsynth::EditQuadruplet> quads;
    if (shards_dir) {
      quads = editsynth::read_shards(shards_dir);
    } else {
      quads = editsynth::synthesize_dataset(dataio::DatasetManifest::load(manifest_path),
                                            pipeline::synth_options(c, dataio::Split::Train));
    }
    require(!quads.empty(), ErrorCode::NoImages, "no training quadruplets");
    auto model = artist::make_artist(vq_image_ckpt, vq_driver_ckpt, c.artist.layers, c.artist.heads, c.artist.d_model,
                                     derive_seed(pipeline::derive_seeds(c.seed).artist, "init"));
    pipeline::fit_artist(c, model, quads, logger());
    artist::save_artist(model, out_ckpt, effective(cfg));
    emit("saved artist to " + std::string(out_ckpt));
  });
}

e2eve_status e2eve_model_load(const char* artist_ckpt, e2eve_model** out) {
  return guarded([&] {
    need(artist_ckpt, "checkpoint");
    need(out, "out");
    auto m = std::make_shared<const artist::ArtistModel>(artist::load_artist(artist_ckpt));
    *out = new e2eve_model{std::move(m), artist_ckpt};
  });
}

e2eve_status e2eve_model_info(const e2eve_model* model, char** out_json) {
  return guarded([&] {
    need(model, "model");
    const auto& m = *model->model;
    json j = {{"path", model->path},
              {"config", artist::to_json(m.config)},
              {"parameters", m.net.parameter_count()},
              {"step", m.step},
              {"vq_image", {{"path", m.image_ref.path}, {"sha256", m.image_ref.sha256}, {"config", vq::to_json(m.vq_image->config)}}},
              {"vq_driver", {{"path", m.driver_ref.path}, {"sha256", m.driver_ref.sha256}, {"config", vq::to_json(m.vq_driver->config)}}},
              {"train", m.train_config}};
    put_string(out_json, j.dump(2));
  });
}

void e2eve_model_free(e2eve_model* model) { delete model; }

e2eve_status e2eve_sample(const e2eve_model* model, const char* source_png, const char* mask_png,
                          const char* driver_png, const char* request_json, const char* out_dir, char** out_json) {
  return guarded([&] {
    need(model, "model");
    need(out_dir, "out_dir");
    const auto& m = *model->model;
    const json req = request_json ? json::parse(request_json) : json::object();
    require(req.is_object(), ErrorCode::InvalidArgument, "request must be a JSON object");

    sampler::EditRequest r;
    r.source = read_image_file(source_png);
    const auto& ic = m.vq_image->config;
    if (r.source.height != ic.image_height || r.source.width != ic.image_width)
      r.source = resize_area(r.source, ic.image_height, ic.image_width);
    if (mask_png) {
      Mask mask = read_mask_png(mask_png);
      require(mask.height == r.source.height && mask.width == r.source.width, ErrorCode::MaskShapeMismatch,
              "mask size differs from the model's image size");
      const bool block = mask.count() > 0 && mask.count() == tight_bbox(mask).area();
      r.region = make_region_from_mask(std::move(mask), block ? RegionKind::Block : RegionKind::Freeform);
    } else {
      require(req.contains("rect"), ErrorCode::InvalidArgument, "need a mask or a rect");
      const auto& a = req.at("rect");
      require(a.is_array() && a.size() == 4, ErrorCode::InvalidArgument, "rect is [top, left, height, width]");
      r.region = make_block_region(r.source.height, r.source.width,
                                   {a[0].get<int>(), a[1].get<int>(), a[2].get<int>(), a[3].get<int>()});
    }
    if (driver_png) {
      Image d = read_image_file(driver_png);
      const auto& dc = m.vq_driver->config;
      if (d.height != dc.image_height || d.width != dc.image_width) d = resize_area(d, dc.image_height, dc.image_width);
      r.driver = std::move(d);
    }
    r.n_candidates = req.value("n", 20);
    r.n_keep = req.value("keep", std::min(10, r.n_candidates));
    if (req.contains("policy")) {
      json p = sampler::to_json(sampler::SamplingPolicy{});
      p.merge_patch(req["policy"]);
      r.policy = sampler::policy_from_json(p);
    }
    r.policy.seed = req.value("seed", std::uint64_t{0});

    std::vector<sampler::Candidate> ranked;
    sampler::SampleResult all;
    if (r.driver) {
      const evalkit::FeatureEmbedder embedder;
      ranked = sampler::sample_and_filter(m, r, embedder, &all);
    } else {
      // Nothing to filter against: keep the first n_keep candidates.
      require(r.n_keep <= r.n_candidates, ErrorCode::InvalidRequest, "keep exceeds n");
      all = sampler::sample_edit(m, r);
      for (int i = 0; i < r.n_keep; ++i) {
        all.candidates[static_cast<size_t>(i)].kept = true;
        ranked.push_back(all.candidates[static_cast<size_t>(i)]);
      }
    }

    fs::create_directories(out_dir);
    json samples = json::array();
    int rank = 0;
    for (const auto& c : ranked) {
      if (!c.kept) continue;
      char name[64];
      std::snprintf(name, sizeof name, "sample_%02d_c%02d.png", rank, c.index);
      const auto png = encode_png(c.image);
      std::ofstream(fs::path(out_dir) / name, std::ios::binary)
          .write(reinterpret_cast<const char*>(png.data()), static_cast<std::streamsize>(png.size()));
      samples.push_back({{"rank", rank},
                         {"file", name},
                         {"candidate", c.index},
                         {"nll", c.nll},
                         {"similarity", c.similarity},
                         {"sha256", sha256_hex(png)}});
      ++rank;
    }
    json candidates = json::array();
    for (const auto& c : all.candidates)
      candidates.push_back({{"candidate", c.index}, {"nll", c.nll}, {"similarity", c.similarity}, {"kept", c.kept}});
    const auto& b = r.region.bbox;
    json sidecar = {{"model", model->path},
                    {"request",
                     {{"n", r.n_candidates},
                      {"keep", r.n_keep},
                      {"policy", sampler::to_json(r.policy)},
                      {"seed", r.policy.seed},
                      {"region", {{"kind", region_kind_name(r.region.kind)}, {"bbox", {b.top, b.left, b.height, b.width}}}},
                      {"driver", r.driver.has_value()}}},
                    {"samples", samples},
                    {"candidates", candidates},
                    {"seconds", all.seconds},
                    {"images_per_second", all.images_per_second},
                    {"version", version_string()}};
    std::ofstream(fs::path(out_dir) / "samples.json") << sidecar.dump(2) << "\n";
    put_string(out_json, sidecar.dump(2));
  });
}

e2eve_status e2eve_evaluate(const e2eve_config* cfg, const e2eve_model* model, const char* manifest_path,
                            const char* report_path, char** out_json) {
  return guarded([&] {
    need(cfg, "config");
    need(model, "model");
    need(manifest_path, "manifest");
    const auto m = dataio::DatasetManifest::load(manifest_path);
    json report = pipeline::evaluate_all(cfg->cfg, *model->model, m, logger());
    report["config"] = cfg->cfg.to_json();
    report["seeds"] = pipeline::derive_seeds(cfg->cfg.seed).to_json();
    report["model"] = model->path;
    report["version"] = version_string();
    if (report_path) std::ofstream(report_path) << report.dump(2) << "\n";
    put_string(out_json, report.dump(2));
  });
}

e2eve_status e2eve_pipeline(const e2eve_config* cfg, const char* workdir, char** out_json) {
  return guarded([&] {
    need(cfg, "config");
    need(workdir, "workdir");
    put_string(out_json, pipeline::run_pipeline(cfg->cfg, workdir, logger()).dump(2));
  });
}

e2eve_status e2eve_server_create(const e2eve_config* cfg, const char* ckpt_dir, const char* samples_dir,
                                 const char* host, e2eve_server** out) {
  return guarded([&] {
    need(cfg, "config");
    need(ckpt_dir, "ckpt_dir");
    need(out, "out");
    service::ServiceConfig sc;
    sc.ckpt_dir = ckpt_dir;
    if (samples_dir) sc.samples_dir = samples_dir;
    if (host) sc.host = host;
    sc.port = cfg->cfg.serve.port;
    sc.max_jobs = cfg->cfg.serve.max_jobs;
    sc.session_ttl_seconds = cfg->cfg.serve.session_ttl_seconds;
    auto s = std::make_unique<e2eve_server>();
    s->server = std::make_unique<service::Server>(sc);
    *out = s.release();
  });
}

e2eve_status e2eve_server_run(e2eve_server* server) {
  return guarded([&] {
    need(server, "server");
    const int port = server->server->bind();
    server->server->load_model_async();
    emit("listening on port " + std::to_string(port));
    server->server->run();
  });
}

e2eve_status e2eve_server_start(e2eve_server* server, int* port) {
  return guarded([&] {
    need(server, "server");
    const int p = server->server->start();
    server->server->load_model_async();
    if (port) *port = p;
  });
}

e2eve_status e2eve_server_stop(e2eve_server* server) {
  return guarded([&] {
    need(server, "server");
    server->server->stop();
  });
}

void e2eve_server_free(e2eve_server* server) { delete server; }

}  // extern "C"
