// e2eve command line: one binary, one subcommand per stage.
#include <e2eve/e2eve.h>

#include <CLI11.hpp>
#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

using nlohmann::json;

namespace {

struct Failure {
  e2eve_status status;
  std::string message;
};

void check(e2eve_status s) {
  if (s != E2EVE_OK) throw Failure{s, e2eve_last_error()};
}

std::string take(char* s) {
  std::string out = s ? s : "";
  e2eve_free_string(s);
  return out;
}

// Sets a dotted path ("artist.train.lr") inside a patch object.
void set_path(json& patch, const std::string& dotted, json value) {
  json* node = &patch;
  size_t start = 0;
  for (;;) {
    const size_t dot = dotted.find('.', start);
    const std::string key = dotted.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw Failure{E2EVE_ERR_INVALID_ARGUMENT, "bad config key '" + dotted + "'"};
    if (dot == std::string::npos) {
      (*node)[key] = std::move(value);
      return;
    }
    json& next = (*node)[key];
    if (!next.is_object()) next = json::object();
    node = &next;
    start = dot + 1;
  }
}

json parse_value(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::exception&) {
    return text;  // bare strings need no quotes
  }
}

// Options every subcommand accepts.
struct Common {
  std::string preset;
  std::string config;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> sets;
  bool dry_run = false;
  bool quiet = false;
  json patch = json::object();  // filled by subcommand flags

  void add_to(CLI::App* app) {
    app->add_option("--preset", preset, "Base configuration")->check(CLI::IsMember({"toy", "paper-scale"}));
    app->add_option("--config", config, "JSON config file patched over the preset")->check(CLI::ExistingFile);
    app->add_option("--seed", seed, "Run seed; every module seed derives from it");
    app->add_option("--set", sets, "Override any config key, e.g. --set artist.train.steps=200");
    app->add_flag("--dry-run", dry_run, "Print the effective configuration and exit");
    app->add_flag("-q,--quiet", quiet, "No progress output");
  }

  template <typename T>
  void flag(CLI::App* app, const std::string& name, const std::string& key, const std::string& help) {
    app->add_option_function<T>(name, [this, key](const T& v) { set_path(patch, key, v); }, help);
  }

  e2eve_config* build() const {
    json file;
    if (!config.empty()) {
      std::ifstream in(config);
      try {
        file = json::parse(in);
      } catch (const json::exception& e) {
        throw Failure{E2EVE_ERR_INVALID_ARGUMENT, "config " + config + ": " + e.what()};
      }
      if (!file.is_object()) throw Failure{E2EVE_ERR_INVALID_ARGUMENT, "config must be a JSON object"};
    }
    std::string base = preset;
    if (base.empty()) base = file.is_object() ? file.value("preset", std::string("toy")) : "toy";
    if (!preset.empty() && file.is_object()) file.erase("preset");

    e2eve_config* cfg = nullptr;
    check(e2eve_config_preset(base.c_str(), &cfg));
    try {
      if (file.is_object()) check(e2eve_config_patch(cfg, file.dump().c_str()));
      json p = patch;
      if (seed) p["seed"] = *seed;
      for (const auto& s : sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw Failure{E2EVE_ERR_INVALID_ARGUMENT, "--set needs key=value: " + s};
        set_path(p, s.substr(0, eq), parse_value(s.substr(eq + 1)));
      }
      if (!p.empty()) check(e2eve_config_patch(cfg, p.dump().c_str()));
      check(e2eve_config_validate(cfg));
    } catch (...) {
      e2eve_config_free(cfg);
      throw;
    }
    return cfg;
  }
};

struct ConfigHandle {
  e2eve_config* p;
  ~ConfigHandle() { e2eve_config_free(p); }
};

struct ModelHandle {
  e2eve_model* p = nullptr;
  ~ModelHandle() { e2eve_model_free(p); }
};

void print_log(const char* line, void*) { std::cerr << line << std::endl; }

// Prints the effective config; true if the caller should stop (dry run).
bool dry_run(const Common& c, e2eve_config* cfg) {
  if (!c.dry_run) return false;
  char* text = nullptr;
  char* js = nullptr;
  char* seeds = nullptr;
  check(e2eve_config_describe(cfg, &text));
  check(e2eve_config_to_json(cfg, &js));
  check(e2eve_config_seeds(cfg, &seeds));
  std::cout << take(text) << "\nseeds:\n" << take(seeds) << "\n\neffective config:\n" << take(js) << std::endl;
  return true;
}

e2eve_server* g_server = nullptr;

void on_signal(int) {
  if (g_server) e2eve_server_stop(g_server);
}

const char* env_or(const char* name, const char* fallback) {
  const char* v = std::getenv(name);
  return v && *v ? v : fallback;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"e2eve: example-based image editing with a token transformer"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(e2eve_version()));
  Common common;
  std::function<void()> action;

  // data
  auto* data = app.add_subcommand("data", "Build a dataset manifest");
  data->require_subcommand(1);
  std::string data_out, data_in;
  auto* toy = data->add_subcommand("toy", "Render the procedural toy corpus");
  common.add_to(toy);
  toy->add_option("--out", data_out, "Output directory")->required();
  common.flag<int>(toy, "--n", "data.n_images", "Number of images");
  common.flag<double>(toy, "--val-fraction", "data.val_fraction", "Share of images held out for validation");
  auto* ingest = data->add_subcommand("ingest", "Index a folder of PNG images");
  common.add_to(ingest);
  ingest->add_option("--in", data_in, "Folder of PNG files")->required()->check(CLI::ExistingDirectory);
  ingest->add_option("--out", data_out, "Directory for manifest.json")->required();
  common.flag<double>(ingest, "--val-fraction", "data.val_fraction", "Share of images held out for validation");
  for (auto* sc : {toy, ingest}) {
    sc->add_option_function<std::vector<int>>(
          "--size", [&](const std::vector<int>& v) { set_path(common.patch, "data.image_size", v); },
          "Image height and width")
        ->expected(2);
  }
  toy->callback([&] {
    action = [&] {
      ConfigHandle cfg{common.build()};
      if (dry_run(common, cfg.p)) return;
      check(e2eve_data_toy(cfg.p, data_out.c_str()));
    };
  });
  ingest->callback([&] {
    action = [&] {
      ConfigHandle cfg{common.build()};
      if (dry_run(common, cfg.p)) return;
      check(e2eve_data_ingest(cfg.p, data_in.c_str(), data_out.c_str()));
    };
  });

  // synth
  auto* synth = app.add_subcommand("synth", "Write self-supervised training quadruplets");
  common.add_to(synth);
  std::string manifest, shards, split = "train";
  synth->add_option("--manifest", manifest, "manifest.json")->required()->check(CLI::ExistingFile);
  synth->add_option("--out", shards, "Shard directory")->required();
  synth->add_option("--split", split, "Split to draw from")->check(CLI::IsMember({"train", "val"}));
  common.flag<int>(synth, "--per-image", "synth.per_image", "Quadruplets per image");
  synth->add_flag_function("--freeform", [&](std::int64_t) { set_path(common.patch, "synth.freeform", true); },
                           "Use the manifest masks as free-form regions");
  common.flag<std::vector<double>>(synth, "--alpha", "synth.transform.alpha", "Crop ratio range: min max");
  synth->callback([&] {
    action = [&] {
      ConfigHandle cfg{common.build()};
      if (dry_run(common, cfg.p)) return;
      check(e2eve_synth(cfg.p, manifest.c_str(), split.c_str(), shards.c_str()));
    };
  });

  // train-vq
  auto* tvq = app.add_subcommand("train-vq", "Train an image or driver quantizer");
  common.add_to(tvq);
  std::string role, out;
  tvq->add_option("--role", role, "image or driver")->required()->check(CLI::IsMember({"image", "driver"}));
  tvq->add_option("--manifest", manifest, "manifest.json (image role)")->check(CLI::ExistingFile);
  tvq->add_option("--shards", shards, "Shard directory (driver role)")->check(CLI::ExistingDirectory);
  tvq->add_option("--out", out, "Checkpoint path")->required();
  std::optional<int> vq_steps, vq_batch;
  std::optional<double> vq_lr;
  tvq->add_option("--steps", vq_steps, "Optimizer steps");
  tvq->add_option("--batch", vq_batch, "Batch size");
  tvq->add_option("--lr", vq_lr, "Learning rate");
  tvq->callback([&] {
    const std::string base = "vq." + role + ".train.";
    if (vq_steps) set_path(common.patch, base + "steps", *vq_steps);
    if (vq_batch) set_path(common.patch, base + "batch", *vq_batch);
    if (vq_lr) set_path(common.patch, base + "lr", *vq_lr);
    action = [&] {
      ConfigHandle cfg{common.build()};
      if (dry_run(common, cfg.p)) return;
      check(e2eve_train_vq(cfg.p, role.c_str(), manifest.empty() ? nullptr : manifest.c_str(),
                           shards.empty() ? nullptr : shards.c_str(), out.c_str()));
    };
  });

  // train-artist
  auto* tart = app.add_subcommand("train-artist", "Train the artist transformer");
  common.add_to(tart);
  std::string vq_image, vq_driver;
  tart->add_option("--vq-image", vq_image, "Image quantizer checkpoint")->required()->check(CLI::ExistingFile);
  tart->add_option("--vq-driver", vq_driver, "Driver quantizer checkpoint")->required()->check(CLI::ExistingFile);
  auto* src_shards = tart->add_option("--shards", shards, "Train from shards on disk")->check(CLI::ExistingDirectory);
  auto* src_manifest =
      tart->add_option("--manifest", manifest, "Synthesize from a manifest in memory")->check(CLI::ExistingFile);
  src_shards->excludes(src_manifest);
  tart->add_option("--out", out, "Checkpoint path")->required();
  common.flag<int>(tart, "--steps", "artist.train.steps", "Optimizer steps");
  common.flag<int>(tart, "--batch", "artist.train.batch", "Batch size");
  common.flag<double>(tart, "--lr", "artist.train.lr", "Peak learning rate");
  common.flag<int>(tart, "--layers", "artist.layers", "Transformer blocks");
  common.flag<int>(tart, "--heads", "artist.heads", "Attention heads");
  common.flag<int>(tart, "--d-model", "artist.d_model", "Embedding size");
  tart->callback([&] {
    action = [&] {
      if (shards.empty() == manifest.empty())
        throw Failure{E2EVE_ERR_INVALID_ARGUMENT, "train-artist needs --shards or --manifest"};
      ConfigHandle cfg{common.build()};
      if (dry_run(common, cfg.p)) return;
      check(e2eve_train_artist(cfg.p, vq_image.c_str(), vq_driver.c_str(), shards.empty() ? nullptr : shards.c_str(),
                               manifest.empty() ? nullptr : manifest.c_str(), out.c_str()));
    };
  });

  // sample
  auto* sample = app.add_subcommand("sample", "Generate edits for one source image");
  common.add_to(sample);
  std::string model_path, source, mask, driver;
  std::vector<int> rect;
  int n = 20, keep = 10;
  std::optional<std::string> policy;
  std::optional<double> top_p, temperature;
  std::optional<int> top_k;
  sample->add_option("--model", model_path, "Artist checkpoint")->required()->check(CLI::ExistingFile);
  sample->add_option("--source", source, "Source PNG")->required()->check(CLI::ExistingFile);
  auto* mask_opt = sample->add_option("--mask", mask, "Edit region mask PNG (nonzero = edit)")->check(CLI::ExistingFile);
  auto* rect_opt = sample->add_option("--rect", rect, "Block region: top left height width")->expected(4);
  mask_opt->excludes(rect_opt);
  sample->add_option("--driver", driver, "Driver PNG; omit for inpainting")->check(CLI::ExistingFile);
  sample->add_option("--out", out, "Output directory")->required();
  sample->add_option("--n", n, "Candidates to draw")->check(CLI::PositiveNumber);
  sample->add_option("--keep", keep, "Candidates kept after filtering")->check(CLI::PositiveNumber);
  sample->add_option("--policy", policy, "greedy, top_k or top_p")
      ->check(CLI::IsMember({"greedy", "top_k", "top_p", "top-k", "top-p"}));
  sample->add_option("--p", top_p, "Nucleus mass");
  sample->add_option("--k", top_k, "Top-k size");
  sample->add_option("--temperature", temperature, "Softmax temperature");
  sample->callback([&] {
    action = [&] {
      if (mask.empty() && rect.empty()) throw Failure{E2EVE_ERR_INVALID_ARGUMENT, "sample needs --mask or --rect"};
      ConfigHandle cfg{common.build()};
      if (dry_run(common, cfg.p)) return;
      char* sampler_json = nullptr;
      check(e2eve_config_to_json(cfg.p, &sampler_json));
      const json run = json::parse(take(sampler_json));
      json pol = run["sampler"]["policy"];
      if (policy) pol["kind"] = *policy;
      if (top_p) pol["p"] = *top_p;
      if (top_k) pol["k"] = *top_k;
      if (temperature) pol["temperature"] = *temperature;
      json req = {{"n", n}, {"keep", keep}, {"policy", pol}, {"seed", run["seed"]}};
      if (!rect.empty()) req["rect"] = rect;
      ModelHandle model;
      check(e2eve_model_load(model_path.c_str(), &model.p));
      char* result = nullptr;
      check(e2eve_sample(model.p, source.c_str(), mask.empty() ? nullptr : mask.c_str(),
                         driver.empty() ? nullptr : driver.c_str(), req.dump().c_str(), out.c_str(), &result));
      const json r = json::parse(take(result));
      for (const auto& s : r["samples"])
        std::cout << s["file"].get<std::string>() << " similarity " << s["similarity"] << " nll " << s["nll"] << "\n";
    };
  });

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "Naturalness, faithfulness, locality and diversity");
  common.add_to(evaluate);
  evaluate->add_option("--model", model_path, "Artist checkpoint")->required()->check(CLI::ExistingFile);
  evaluate->add_option("--manifest", manifest, "manifest.json (val split is used)")->required()->check(CLI::ExistingFile);
  evaluate->add_option("--out", out, "Report path")->required();
  common.flag<int>(evaluate, "--n-triplets", "eval.n_triplets", "Evaluation triplets");
  common.flag<int>(evaluate, "--n", "sampler.n", "Candidates per triplet");
  common.flag<int>(evaluate, "--keep", "sampler.keep", "Samples kept per triplet");
  evaluate->add_flag_function("--no-filter", [&](std::int64_t) { set_path(common.patch, "eval.filter", false); },
                              "Keep the first candidates instead of the most driver-similar");
  evaluate->callback([&] {
    action = [&] {
      ConfigHandle cfg{common.build()};
      if (dry_run(common, cfg.p)) return;
      ModelHandle model;
      check(e2eve_model_load(model_path.c_str(), &model.p));
      char* report = nullptr;
      check(e2eve_evaluate(cfg.p, model.p, manifest.c_str(), out.c_str(), &report));
      const json r = json::parse(take(report));
      for (const auto& [name, m] : r["methods"].items())
        std::cout << name << ": fid " << m["fid_image"] << " R@1 " << m["retrieval"]["r_at_1"]
                  << " locality " << m["locality_l1"] << "\n";
    };
  });

  // serve
  auto* serve = app.add_subcommand("serve", "Run the HTTP editing service");
  common.add_to(serve);
  std::string ckpt_dir = env_or("E2EVE_CKPT_DIR", ""), samples_dir, host = "127.0.0.1";
  serve->add_option("--ckpt-dir", ckpt_dir, "Directory holding artist.ckpt (E2EVE_CKPT_DIR)");
  serve->add_option("--samples-dir", samples_dir, "Where generated PNGs are stored");
  serve->add_option("--host", host, "Bind address");
  std::optional<int> port, max_jobs;
  serve->add_option("--port", port, "Port (E2EVE_PORT)");
  serve->add_option("--max-jobs", max_jobs, "Concurrent generate jobs (E2EVE_MAX_JOBS)");
  serve->callback([&] {
    // Precedence: flags, then environment, then config.
    if (const char* v = std::getenv("E2EVE_PORT"); v && *v && !port) port = std::atoi(v);
    if (const char* v = std::getenv("E2EVE_MAX_JOBS"); v && *v && !max_jobs) max_jobs = std::atoi(v);
    if (port) set_path(common.patch, "serve.port", *port);
    if (max_jobs) set_path(common.patch, "serve.max_jobs", *max_jobs);
    action = [&] {
      if (ckpt_dir.empty()) throw Failure{E2EVE_ERR_INVALID_ARGUMENT, "serve needs --ckpt-dir or E2EVE_CKPT_DIR"};
      ConfigHandle cfg{common.build()};
      if (dry_run(common, cfg.p)) return;
      check(e2eve_server_create(cfg.p, ckpt_dir.c_str(), samples_dir.empty() ? nullptr : samples_dir.c_str(),
                                host.c_str(), &g_server));
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      const e2eve_status s = e2eve_server_run(g_server);
      const std::string err = e2eve_last_error();
      e2eve_server_free(g_server);
      g_server = nullptr;
      if (s != E2EVE_OK) throw Failure{s, err};
    };
  });

  // pipeline
  auto* pipe = app.add_subcommand("pipeline", "Toy corpus to evaluation report, end to end");
  common.add_to(pipe);
  std::string workdir = "e2eve-run";
  pipe->add_option("--workdir", workdir, "Directory for every artifact");
  pipe->callback([&] {
    action = [&] {
      ConfigHandle cfg{common.build()};
      if (dry_run(common, cfg.p)) return;
      char* report = nullptr;
      check(e2eve_pipeline(cfg.p, workdir.c_str(), &report));
      const json r = json::parse(take(report));
      for (const auto& [name, m] : r["methods"].items())
        std::cout << name << ": fid " << m["fid_image"] << " R@1 " << m["retrieval"]["r_at_1"]
                  << " locality " << m["locality_l1"] << "\n";
      std::cout << "report: " << workdir << "/report.json\n";
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    app.exit(e);
    return 2;
  }

  try {
    if (!common.quiet) e2eve_set_log(print_log, nullptr);
    if (action) action();
    return 0;
  } catch (const Failure& f) {
    const json err = {{"error", {{"code", e2eve_status_name(f.status)}, {"status", static_cast<int>(f.status)},
                                 {"message", f.message}}}};
    std::cerr << err.dump() << std::endl;
    return 1;
  } catch (const std::exception& e) {
    const json err = {{"error", {{"code", "Internal"}, {"status", 99}, {"message", e.what()}}}};
    std::cerr << err.dump() << std::endl;
    return 1;
  }
}
