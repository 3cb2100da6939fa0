#include "service/service.hpp"

#include <httplib.h>

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <thread>
#include <unordered_map>

#include "common/archive.hpp"
#include "common/error.hpp"
#include "evalkit/embedder.hpp"
#include "sampler/sampler.hpp"

namespace e2eve::service {

namespace fs = std::filesystem;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

struct ApiError {
  int status;
  std::string message;
};

[[noreturn]] void api_fail(int status, std::string message) { throw ApiError{status, std::move(message)}; }

int status_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument:
    case ErrorCode::MaskShapeMismatch:
    case ErrorCode::EmptyMask:
    case ErrorCode::ShapeError:
    case ErrorCode::FormatError:
    case ErrorCode::InvalidRequest:
    case ErrorCode::InvalidToken:
      return 422;
    default:
      return 500;
  }
}

struct Session {
  std::string id;
  std::mutex mu;  // serializes mutation of this session
  std::optional<Image> source;
  std::string source_sha256;
  std::optional<EditRegion> region;
  std::optional<Image> driver;
  std::vector<std::string> history;  // job ids, append-only
  std::int64_t created_at = 0;
  std::atomic<Clock::rep> expires{0};  // touched under sessions_mu, read anywhere

  void touch(int ttl_seconds) {
    expires = (Clock::now() + std::chrono::seconds(ttl_seconds)).time_since_epoch().count();
  }
  Clock::time_point deadline() const { return Clock::time_point(Clock::duration(expires.load())); }
};

enum class JobStatus { Queued, Running, Done, Failed };

const char* status_name(JobStatus s) {
  switch (s) {
    case JobStatus::Queued: return "queued";
    case JobStatus::Running: return "running";
    case JobStatus::Done: return "done";
    case JobStatus::Failed: return "failed";
  }
  return "?";
}

struct SampleInfo {
  std::string id;
  int candidate = 0;
  double similarity = 0.0;
  double nll = 0.0;
};

struct Job {
  std::string id;
  std::string session_id;
  sampler::EditRequest request;
  json request_json;
  std::string source_sha256;
  // Guarded by Impl::jobs_mu from here on.
  JobStatus status = JobStatus::Queued;
  long started_order = -1;
  std::vector<SampleInfo> results;
  std::string error;
  double seconds = 0.0;
  Clock::time_point expires = Clock::time_point::max();
};

std::int64_t unix_now() {
  return std::chrono::duration_cast<std::chrono::seconds>(std::chrono::system_clock::now().time_since_epoch())
      .count();
}

std::span<const std::uint8_t> bytes_of(const std::string& body) {
  return {reinterpret_cast<const std::uint8_t*>(body.data()), body.size()};
}

bool looks_like_png(const std::string& body) { return body.size() >= 8 && body.compare(0, 4, "\x89PNG") == 0; }

json parse_body(const httplib::Request& req, bool allow_empty) {
  if (req.body.empty()) {
    if (allow_empty) return json::object();
    api_fail(422, "request body is empty");
  }
  try {
    json j = json::parse(req.body);
    if (!j.is_object()) api_fail(422, "request body must be a JSON object");
    return j;
  } catch (const json::exception& e) {
    api_fail(422, std::string("malformed JSON: ") + e.what());
  }
}

Rect rect_from_json(const json& j) {
  const json& r = j.contains("rect") ? j.at("rect") : j;
  try {
    if (r.is_array()) {
      if (r.size() != 4) api_fail(422, "rect array must be [top, left, height, width]");
      return {r[0].get<int>(), r[1].get<int>(), r[2].get<int>(), r[3].get<int>()};
    }
    return {r.at("top").get<int>(), r.at("left").get<int>(), r.at("height").get<int>(), r.at("width").get<int>()};
  } catch (const json::exception& e) {
    api_fail(422, std::string("rect needs integer top, left, height, width: ") + e.what());
  }
}

void check_rect(const Rect& r, int h, int w) {
  if (r.height <= 0 || r.width <= 0 || r.top < 0 || r.left < 0 || r.bottom() > h || r.right() > w)
    api_fail(422, "rect lies outside the " + std::to_string(h) + "x" + std::to_string(w) + " image or is empty");
}

bool is_sample_id(const std::string& s) {
  return s.size() == 64 && s.find_first_not_of("0123456789abcdef") == std::string::npos;
}

}  // namespace

struct Server::Impl {
  ServiceConfig cfg;
  httplib::Server http;
  std::thread serve_thread;
  std::thread loader;
  const evalkit::FeatureEmbedder embedder;
  bool bound = false;

  mutable std::mutex model_mu;
  std::shared_ptr<const artist::ArtistModel> model;
  std::string model_err;

  std::mutex sessions_mu;
  std::unordered_map<std::string, std::shared_ptr<Session>> sessions;

  std::mutex jobs_mu;
  std::condition_variable jobs_cv;
  std::unordered_map<std::string, std::shared_ptr<Job>> jobs;
  std::deque<std::shared_ptr<Job>> queue;
  int running = 0;
  long started_counter = 0;
  bool stopping = false;
  std::vector<std::thread> workers;

  std::mutex samples_mu;
  std::mutex id_mu;
  std::mt19937_64 id_rng{std::random_device{}()};

  explicit Impl(ServiceConfig c) : cfg(std::move(c)) {
    if (cfg.samples_dir.empty()) cfg.samples_dir = fs::temp_directory_path() / "e2eve-samples";
    fs::create_directories(cfg.samples_dir);
    require(cfg.max_jobs >= 1, ErrorCode::InvalidArgument, "max_jobs must be positive");
    require(cfg.session_ttl_seconds > 0, ErrorCode::InvalidArgument, "session ttl must be positive");
    routes();
    for (int i = 0; i < cfg.max_jobs; ++i) workers.emplace_back([this] { work(); });
  }

  ~Impl() {
    http.stop();
    if (serve_thread.joinable()) serve_thread.join();
    {
      std::lock_guard lk(jobs_mu);
      stopping = true;
      for (auto& j : queue) {
        j->status = JobStatus::Failed;
        j->error = "server stopped";
      }
      queue.clear();
    }
    jobs_cv.notify_all();
    for (auto& t : workers) t.join();
    if (loader.joinable()) loader.join();
  }

  std::string new_id() {
    std::lock_guard lk(id_mu);
    char buf[33];
    std::snprintf(buf, sizeof buf, "%016llx%016llx", static_cast<unsigned long long>(id_rng()),
                  static_cast<unsigned long long>(id_rng()));
    return buf;
  }

  std::shared_ptr<const artist::ArtistModel> current_model() const {
    std::lock_guard lk(model_mu);
    return model;
  }

  // Lazy expiry: sessions past their deadline and finished jobs past theirs are dropped.
  void purge() {
    const auto now = Clock::now();
    {
      std::lock_guard lk(sessions_mu);
      std::erase_if(sessions, [&](const auto& kv) { return kv.second->deadline() <= now; });
    }
    std::lock_guard lk(jobs_mu);
    std::erase_if(jobs, [&](const auto& kv) { return kv.second->expires <= now; });
  }

  std::shared_ptr<Session> find_session(const std::string& id) {
    std::lock_guard lk(sessions_mu);
    auto it = sessions.find(id);
    if (it == sessions.end()) api_fail(404, "unknown session " + id);
    it->second->touch(cfg.session_ttl_seconds);
    return it->second;
  }

  fs::path sample_path(const std::string& id) const { return cfg.samples_dir / (id + ".png"); }

  std::string store_sample(const Image& img) {
    const auto png = encode_png(img);
    const auto id = sha256_hex(png);
    std::lock_guard lk(samples_mu);
    const auto path = sample_path(id);
    if (!fs::exists(path)) {
      const auto tmp = cfg.samples_dir / (id + ".tmp" + std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id())));
      std::ofstream(tmp, std::ios::binary).write(reinterpret_cast<const char*>(png.data()), static_cast<std::streamsize>(png.size()));
      fs::rename(tmp, path);
    }
    return id;
  }

  std::optional<std::string> read_sample(const std::string& id) {
    if (!is_sample_id(id)) return std::nullopt;
    std::lock_guard lk(samples_mu);
    std::ifstream in(sample_path(id), std::ios::binary);
    if (!in) return std::nullopt;
    return std::string(std::istreambuf_iterator<char>(in), {});
  }

  json session_json(const Session& s) const {
    json j = {{"id", s.id},
              {"has_source", s.source.has_value()},
              {"has_region", s.region.has_value()},
              {"has_driver", s.driver.has_value()},
              {"history", s.history},
              {"created_at", s.created_at},
              {"expires_in_seconds",
               std::chrono::duration_cast<std::chrono::seconds>(s.deadline() - Clock::now()).count()}};
    if (s.source) {
      j["source"] = {{"height", s.source->height}, {"width", s.source->width}, {"sha256", s.source_sha256}};
    }
    if (s.region) {
      const auto& b = s.region->bbox;
      j["region"] = {{"kind", region_kind_name(s.region->kind)},
                     {"bbox", {b.top, b.left, b.height, b.width}},
                     {"area", s.region->area()}};
    }
    if (s.driver) j["driver"] = {{"height", s.driver->height}, {"width", s.driver->width}};
    return j;
  }

  // Caller holds jobs_mu.
  json job_json(const Job& j) const {
    json results = json::array();
    for (const auto& r : j.results)
      results.push_back({{"sample_id", r.id}, {"candidate", r.candidate}, {"similarity", r.similarity}, {"nll", r.nll}});
    json out = {{"id", j.id},
                {"session_id", j.session_id},
                {"status", status_name(j.status)},
                {"request", j.request_json},
                {"source_sha256", j.source_sha256},
                {"results", results}};
    if (j.started_order >= 0) out["started_order"] = j.started_order;
    if (j.status == JobStatus::Done || j.status == JobStatus::Failed) out["seconds"] = j.seconds;
    if (!j.error.empty()) out["error"] = j.error;
    return out;
  }

  void work() {
    for (;;) {
      std::shared_ptr<Job> job;
      {
        std::unique_lock lk(jobs_mu);
        jobs_cv.wait(lk, [&] { return stopping || !queue.empty(); });
        if (stopping) return;
        job = queue.front();
        queue.pop_front();
        job->status = JobStatus::Running;
        job->started_order = started_counter++;
        ++running;
      }
      const auto t0 = Clock::now();
      std::vector<SampleInfo> results;
      std::string error;
      try {
        auto m = current_model();
        if (!m) fail(ErrorCode::Internal, "model unloaded");
        const auto ranked = sampler::sample_and_filter(*m, job->request, embedder);
        for (const auto& c : ranked) {
          if (!c.kept) continue;
          results.push_back({store_sample(c.image), c.index, c.similarity, c.nll});
        }
      } catch (const std::exception& e) {
        error = e.what();
      }
      {
        std::lock_guard lk(jobs_mu);
        job->results = std::move(results);
        job->error = std::move(error);
        job->status = job->error.empty() ? JobStatus::Done : JobStatus::Failed;
        job->seconds = std::chrono::duration<double>(Clock::now() - t0).count();
        job->expires = Clock::now() + std::chrono::seconds(cfg.session_ttl_seconds);
        --running;
      }
    }
  }

  static void send_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  static void send_error(httplib::Response& res, int status, const std::string& message) {
    send_json(res, status, {{"error", {{"status", status}, {"message", message}}}});
  }

  template <typename F>
  httplib::Server::Handler wrap(F fn) {
    return [this, fn](const httplib::Request& req, httplib::Response& res) {
      try {
        purge();
        fn(req, res);
      } catch (const ApiError& e) {
        send_error(res, e.status, e.message);
      } catch (const Error& e) {
        send_error(res, status_for(e.code()), e.what());
      } catch (const std::exception& e) {
        send_error(res, 500, e.what());
      }
    };
  }

  // Decoded-image size the model expects, or nullopt while no model is loaded.
  std::optional<std::pair<int, int>> model_image_size() const {
    auto m = current_model();
    if (!m) return std::nullopt;
    return std::pair{m->vq_image->config.image_height, m->vq_image->config.image_width};
  }

  void put_source(Session& s, Image img) {
    if (auto size = model_image_size(); size && (img.height != size->first || img.width != size->second))
      api_fail(422, "source must be " + std::to_string(size->first) + "x" + std::to_string(size->second));
    if (s.region && (s.region->height() != img.height || s.region->width() != img.width)) s.region.reset();
    s.source_sha256 = sha256_hex(encode_png(img));
    s.source = std::move(img);
  }

  void routes() {
    http.Post("/v1/sessions", wrap([this](const httplib::Request&, httplib::Response& res) {
      auto s = std::make_shared<Session>();
      s->id = new_id();
      s->created_at = unix_now();
      s->touch(cfg.session_ttl_seconds);
      {
        std::lock_guard lk(sessions_mu);
        sessions[s->id] = s;
      }
      std::lock_guard lk(s->mu);
      send_json(res, 201, session_json(*s));
    }));

    http.Get(R"(/v1/sessions/([0-9a-f]+))", wrap([this](const httplib::Request& req, httplib::Response& res) {
      auto s = find_session(req.matches[1]);
      std::lock_guard lk(s->mu);
      send_json(res, 200, session_json(*s));
    }));

    http.Put(R"(/v1/sessions/([0-9a-f]+)/source)", wrap([this](const httplib::Request& req, httplib::Response& res) {
      auto s = find_session(req.matches[1]);
      Image img = decode_png(bytes_of(req.body));
      std::lock_guard lk(s->mu);
      put_source(*s, std::move(img));
      send_json(res, 200, session_json(*s));
    }));

    http.Get(R"(/v1/sessions/([0-9a-f]+)/source)", wrap([this](const httplib::Request& req, httplib::Response& res) {
      auto s = find_session(req.matches[1]);
      std::lock_guard lk(s->mu);
      if (!s->source) api_fail(404, "session has no source");
      const auto png = encode_png(*s->source);
      res.set_content(std::string(png.begin(), png.end()), "image/png");
    }));

    http.Put(R"(/v1/sessions/([0-9a-f]+)/region)", wrap([this](const httplib::Request& req, httplib::Response& res) {
      auto s = find_session(req.matches[1]);
      std::lock_guard lk(s->mu);
      int h = 0, w = 0;
      if (s->source) {
        h = s->source->height;
        w = s->source->width;
      } else if (auto size = model_image_size()) {
        std::tie(h, w) = *size;
      }
      if (looks_like_png(req.body) || req.get_header_value("Content-Type") == "image/png") {
        Mask mask;
        try {
          mask = decode_mask_png(bytes_of(req.body));
        } catch (const Error& e) {
          api_fail(422, std::string("malformed mask: ") + e.what());
        }
        if (h > 0 && (mask.height != h || mask.width != w))
          api_fail(422, "mask is " + std::to_string(mask.height) + "x" + std::to_string(mask.width) + ", source is " +
                            std::to_string(h) + "x" + std::to_string(w));
        if (mask.count() == 0) api_fail(422, "mask has no set pixel");
        // A mask that fills its bounding box is a block edit.
        const Rect bb = tight_bbox(mask);
        auto kind = mask.count() == bb.area() ? RegionKind::Block : RegionKind::Freeform;
        s->region = make_region_from_mask(std::move(mask), kind);
      } else {
        const json j = parse_body(req, false);
        if (h == 0) api_fail(409, "a rect region needs a source (or a loaded model) to size it");
        const Rect r = rect_from_json(j);
        check_rect(r, h, w);
        s->region = make_block_region(h, w, r);
      }
      send_json(res, 200, session_json(*s));
    }));

    http.Get(R"(/v1/sessions/([0-9a-f]+)/region)", wrap([this](const httplib::Request& req, httplib::Response& res) {
      auto s = find_session(req.matches[1]);
      std::lock_guard lk(s->mu);
      if (!s->region) api_fail(404, "session has no region");
      const auto png = encode_mask_png(s->region->mask);
      res.set_content(std::string(png.begin(), png.end()), "image/png");
    }));

    http.Put(R"(/v1/sessions/([0-9a-f]+)/driver)", wrap([this](const httplib::Request& req, httplib::Response& res) {
      auto s = find_session(req.matches[1]);
      Image img;
      if (looks_like_png(req.body) || req.get_header_value("Content-Type") == "image/png") {
        img = decode_png(bytes_of(req.body));
      } else {
        // Crop of an existing sample: {"sample_id": ..., "rect": {...}}; no rect means the whole sample.
        const json j = parse_body(req, false);
        if (!j.contains("sample_id") || !j["sample_id"].is_string()) api_fail(422, "driver JSON needs sample_id");
        const auto bytes = read_sample(j["sample_id"].get<std::string>());
        if (!bytes) api_fail(404, "unknown sample " + j["sample_id"].get<std::string>());
        img = decode_png(bytes_of(*bytes));
        if (j.contains("rect")) {
          const Rect r = rect_from_json(j);
          check_rect(r, img.height, img.width);
          img = crop(img, r);
        }
      }
      std::lock_guard lk(s->mu);
      s->driver = std::move(img);
      send_json(res, 200, session_json(*s));
    }));

    http.Post(R"(/v1/sessions/([0-9a-f]+)/generate)", wrap([this](const httplib::Request& req, httplib::Response& res) {
      auto s = find_session(req.matches[1]);
      auto job = std::make_shared<Job>();
      {
        std::lock_guard lk(s->mu);
        std::string missing;
        for (auto [have, name] : {std::pair{s->source.has_value(), "source"}, std::pair{s->region.has_value(), "region"},
                                  std::pair{s->driver.has_value(), "driver"}})
          if (!have) missing += missing.empty() ? name : std::string(", ") + name;
        if (!missing.empty()) api_fail(409, "session is incomplete: missing " + missing);
        auto m = current_model();
        if (!m) api_fail(503, model_err.empty() ? "model is loading" : "model failed to load: " + model_err);

        const json j = parse_body(req, true);
        sampler::EditRequest r;
        try {
          r.n_candidates = j.value("n", 20);
          r.n_keep = j.value("keep", std::min(10, r.n_candidates));
          if (j.contains("policy")) {
            json p = sampler::to_json(sampler::SamplingPolicy{});
            p.merge_patch(j["policy"]);
            r.policy = sampler::policy_from_json(p);
          }
          r.policy.seed = j.value("seed", std::uint64_t{0});
        } catch (const json::exception& e) {
          api_fail(422, std::string("bad generate request: ") + e.what());
        }
        if (r.n_candidates < 1 || r.n_keep < 1 || r.n_keep > r.n_candidates)
          api_fail(422, "need 1 <= keep <= n");
        r.policy.validate(m->config.k_img);
        const auto& ic = m->vq_image->config;
        if (s->source->height != ic.image_height || s->source->width != ic.image_width)
          api_fail(422, "source does not match the model's image size");
        r.source = *s->source;
        r.region = *s->region;
        const auto& dc = m->vq_driver->config;
        r.driver = (s->driver->height == dc.image_height && s->driver->width == dc.image_width)
                       ? *s->driver
                       : resize_area(*s->driver, dc.image_height, dc.image_width);

        job->id = new_id();
        job->session_id = s->id;
        job->source_sha256 = s->source_sha256;
        job->request_json = {{"n", r.n_candidates}, {"keep", r.n_keep}, {"policy", sampler::to_json(r.policy)},
                             {"seed", r.policy.seed}};
        job->request = std::move(r);
        s->history.push_back(job->id);
      }
      json body;
      {
        std::lock_guard lk(jobs_mu);
        jobs[job->id] = job;
        queue.push_back(job);
        body = job_json(*job);
      }
      jobs_cv.notify_one();
      send_json(res, 202, body);
    }));

    http.Get(R"(/v1/jobs/([0-9a-f]+))", wrap([this](const httplib::Request& req, httplib::Response& res) {
      std::lock_guard lk(jobs_mu);
      auto it = jobs.find(req.matches[1]);
      if (it == jobs.end()) api_fail(404, "unknown job " + std::string(req.matches[1]));
      send_json(res, 200, job_json(*it->second));
    }));

    http.Get(R"(/v1/samples/([^/]+))", wrap([this](const httplib::Request& req, httplib::Response& res) {
      const auto bytes = read_sample(req.matches[1]);
      if (!bytes) api_fail(404, "unknown sample " + std::string(req.matches[1]));
      res.set_content(*bytes, "image/png");
    }));

    http.Post(R"(/v1/sessions/([0-9a-f]+)/promote)", wrap([this](const httplib::Request& req, httplib::Response& res) {
      auto s = find_session(req.matches[1]);
      const json j = parse_body(req, false);
      if (!j.contains("sample_id") || !j["sample_id"].is_string()) api_fail(422, "promote needs sample_id");
      const auto id = j["sample_id"].get<std::string>();
      const auto bytes = read_sample(id);
      if (!bytes) api_fail(404, "unknown sample " + id);
      Image img = decode_png(bytes_of(*bytes));
      std::lock_guard lk(s->mu);
      put_source(*s, std::move(img));
      send_json(res, 200, session_json(*s));
    }));

    http.Get("/v1/health", wrap([this](const httplib::Request&, httplib::Response& res) {
      json j;
      {
        std::lock_guard lk(model_mu);
        j["model_loaded"] = model != nullptr;
        j["status"] = model ? "ok" : (model_err.empty() ? "loading" : "error");
        if (!model_err.empty()) j["error"] = model_err;
      }
      {
        std::lock_guard lk(jobs_mu);
        j["queued"] = queue.size();
        j["running"] = running;
      }
      {
        std::lock_guard lk(sessions_mu);
        j["sessions"] = sessions.size();
      }
      j["max_jobs"] = cfg.max_jobs;
      j["version"] = version_string();
      send_json(res, 200, j);
    }));
  }
};

Server::Server(ServiceConfig cfg) : impl_(std::make_unique<Impl>(std::move(cfg))) {}
Server::~Server() = default;

void Server::set_model(std::shared_ptr<const artist::ArtistModel> model) {
  std::lock_guard lk(impl_->model_mu);
  impl_->model = std::move(model);
  impl_->model_err.clear();
}

void Server::load_model_async() {
  require(!impl_->loader.joinable(), ErrorCode::InvalidRequest, "model load already started");
  impl_->loader = std::thread([impl = impl_.get()] {
    try {
      auto m = std::make_shared<const artist::ArtistModel>(artist::load_artist(impl->cfg.ckpt_dir / "artist.ckpt"));
      std::lock_guard lk(impl->model_mu);
      impl->model = std::move(m);
    } catch (const std::exception& e) {
      std::lock_guard lk(impl->model_mu);
      impl->model_err = e.what();
    }
  });
}

bool Server::model_loaded() const { return impl_->current_model() != nullptr; }

std::string Server::model_error() const {
  std::lock_guard lk(impl_->model_mu);
  return impl_->model_err;
}

int Server::bind() {
  auto& c = impl_->cfg;
  if (c.port == 0) {
    c.port = impl_->http.bind_to_any_port(c.host);
    require(c.port > 0, ErrorCode::IOFailure, "cannot bind " + c.host);
  } else {
    require(impl_->http.bind_to_port(c.host, c.port), ErrorCode::IOFailure,
            "cannot bind " + c.host + ":" + std::to_string(c.port));
  }
  impl_->bound = true;
  return c.port;
}

void Server::run() {
  require(impl_->bound, ErrorCode::InvalidRequest, "bind() before run()");
  impl_->http.listen_after_bind();
}

int Server::start() {
  const int port = bind();
  impl_->serve_thread = std::thread([this] { impl_->http.listen_after_bind(); });
  impl_->http.wait_until_ready();
  return port;
}

void Server::stop() {
  impl_->http.stop();
  if (impl_->serve_thread.joinable()) impl_->serve_thread.join();
}

}  // namespace e2eve::service
