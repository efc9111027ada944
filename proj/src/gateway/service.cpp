#include "repro_lens/gateway.hpp"

#include <httplib.h>

#include <fstream>
#include <sstream>

namespace repro_lens::gateway {

namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

Service::Service(PipelineConfig config, Options options)
    : config_(std::move(config)), options_(options), store_(config_.workdir / "jobs") {
  options_.workers = std::max(1u, options_.workers);
}

Service::~Service() { stop(); }

void Service::start() {
  std::lock_guard lock(mu_);
  if (started_) return;
  started_ = true;
  stopping_ = false;
  for (const auto& job : store_.list()) {
    if (job.state.phase == JobPhase::Queued) {
      queue_.push_back(job.id);
    } else if (!job.state.terminal()) {
      store_.transition(job.id, {JobPhase::Failed, "interrupted: the service restarted while the job was " +
                                                       std::string(to_string(job.state.phase))});
    }
  }
  for (unsigned i = 0; i < options_.workers; ++i) workers_.emplace_back([this] { worker_loop(); });
}

void Service::stop() {
  {
    std::lock_guard lock(mu_);
    if (!started_) return;
    stopping_ = true;
  }
  cv_.notify_all();
  for (auto& t : workers_) t.join();
  workers_.clear();
  std::lock_guard lock(mu_);
  started_ = false;
}

std::string Service::submit(const std::string& url, const std::optional<std::string>& ref) {
  auto parsed = ingest::parse_repo_url(url);
  if (!parsed) throw GatewayError("InvalidUrl", 400, "not a repository URL: " + url);
  std::string canonical = parsed->canonical();
  std::optional<std::string> r = ref && !ref->empty() ? ref : std::nullopt;
  std::lock_guard lock(mu_);
  if (auto existing = store_.find_active(canonical, r)) return existing->id;
  Job job = store_.create(canonical, r);
  queue_.push_back(job.id);
  cv_.notify_all();
  return job.id;
}

void Service::worker_loop() {
  while (true) {
    std::string id;
    {
      std::unique_lock lock(mu_);
      cv_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
      if (stopping_) return;
      id = queue_.front();
      queue_.pop_front();
    }
    process(id);
    cv_.notify_all();
  }
}

void Service::process(const std::string& id) {
  auto job = store_.get(id);
  if (!job || job->state.phase != JobPhase::Queued) return;
  try {
    run_pipeline(
        config_, id, job->url, job->requested_ref, job->dir, OutputFormat::Both,
        [&](const JobState& s) { store_.transition(id, s); },
        [&](const std::string& r) { store_.set_resolved_ref(id, r); });
    store_.transition(id, {JobPhase::Completed, {}});
  } catch (const std::exception& e) {
    try {
      store_.transition(id, {JobPhase::Failed, e.what()});
    } catch (const std::exception&) {
    }
  }
}

Job Service::require(const std::string& id) const {
  auto job = store_.get(id);
  if (!job) throw GatewayError("JobNotFound", 404, "no job " + id);
  return *job;
}

Job Service::status(const std::string& id) const { return require(id); }

std::optional<Job> Service::wait(const std::string& id, std::chrono::milliseconds timeout) const {
  auto deadline = std::chrono::steady_clock::now() + timeout;
  std::unique_lock lock(mu_);
  while (true) {
    auto job = store_.get(id);
    if (!job) return std::nullopt;
    if (job->state.terminal()) return job;
    auto now = std::chrono::steady_clock::now();
    if (now >= deadline) return job;
    // Transitions are journaled outside mu_, so poll in short slices.
    cv_.wait_for(lock, std::min<std::chrono::steady_clock::duration>(deadline - now, std::chrono::milliseconds(50)));
  }
}

std::string Service::report(const std::string& id) const {
  Job job = require(id);
  if (job.state.phase == JobPhase::Failed) throw GatewayError("JobFailed", 409, job.state.detail);
  if (job.state.phase != JobPhase::Completed) {
    throw GatewayError("JobNotFinished", 409, "job is " + std::string(to_string(job.state.phase)));
  }
  return slurp(job.dir / "report.json");
}

Json Service::completed_report(const std::string& id) const { return Json::parse(report(id)); }

namespace {

std::string notebook_path_at(const Json& report, std::size_t index) {
  const auto& rows = report.at("notebooks");
  if (index >= rows.size()) {
    throw GatewayError("NotebookNotFound", 404, "no notebook at index " + std::to_string(index));
  }
  return rows[index].at("path").get<std::string>();
}

}  // namespace

std::string Service::notebook_prov(const std::string& id, std::size_t index) const {
  Json doc = completed_report(id);
  std::string path = notebook_path_at(doc, index);
  return slurp(require(id).dir / "prov" / (path + ".prov.ttl"));
}

std::string Service::notebook_binder(const std::string& id, std::size_t index) const {
  Json doc = completed_report(id);
  std::string path = notebook_path_at(doc, index);
  Job job = require(id);
  return binder_link(job.url, job.resolved_ref.empty() ? doc["repository"]["ref"].get<std::string>() : job.resolved_ref,
                     path);
}

// ---------------------------------------------------------------------------

struct HttpServer::Impl {
  Service& service;
  httplib::Server server;
  std::thread thread;

  explicit Impl(Service& s) : service(s) { routes(); }

  static void send_error(httplib::Response& res, int status, const std::string& code, const std::string& message) {
    res.status = status;
    res.set_content(Json{{"code", code}, {"message", message}}.dump(), "application/json");
  }

  template <typename F>
  void guarded(httplib::Response& res, F&& body) {
    try {
      body();
    } catch (const GatewayError& e) {
      send_error(res, e.http_status(), e.code(), e.what());
    } catch (const std::exception& e) {
      send_error(res, 500, "InternalError", e.what());
    }
  }

  static std::size_t parse_index(const std::string& s) {
    if (s.empty() || s.size() > 9 || s.find_first_not_of("0123456789") != std::string::npos) {
      throw GatewayError("NotebookNotFound", 404, "bad notebook index " + s);
    }
    return std::stoul(s);
  }

  void routes() {
    server.Post("/api/jobs", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        Json body;
        try {
          body = Json::parse(req.body);
        } catch (const Json::exception&) {
          throw GatewayError("BadRequest", 400, "body must be JSON");
        }
        if (!body.is_object() || !body.contains("url") || !body["url"].is_string()) {
          throw GatewayError("BadRequest", 400, "body must carry a string url");
        }
        std::optional<std::string> ref;
        if (body.contains("ref") && body["ref"].is_string()) ref = body["ref"].get<std::string>();
        std::string id = service.submit(body["url"].get<std::string>(), ref);
        res.status = 202;
        res.set_header("Location", "/api/jobs/" + id);
        res.set_content(Json{{"job_id", id}}.dump(), "application/json");
      });
    });
    server.Get(R"(/api/jobs/([0-9A-Za-z]+))", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] { res.set_content(to_json(service.status(req.matches[1])).dump(), "application/json"); });
    });
    server.Get(R"(/api/jobs/([0-9A-Za-z]+)/report)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] { res.set_content(service.report(req.matches[1]), "application/json"); });
    });
    server.Get(R"(/api/jobs/([0-9A-Za-z]+)/notebooks/([^/]+)/prov\.ttl)",
               [this](const httplib::Request& req, httplib::Response& res) {
                 guarded(res, [&] {
                   res.set_content(service.notebook_prov(req.matches[1], parse_index(req.matches[2])),
                                   "text/turtle; charset=utf-8");
                 });
               });
    server.Get(R"(/api/jobs/([0-9A-Za-z]+)/notebooks/([^/]+)/binder)",
               [this](const httplib::Request& req, httplib::Response& res) {
                 guarded(res, [&] {
                   res.set_redirect(service.notebook_binder(req.matches[1], parse_index(req.matches[2])), 302);
                 });
               });
    server.set_error_handler([](const httplib::Request&, httplib::Response& res) {
      if (res.body.empty()) {
        send_error(res, res.status, res.status == 404 ? "NotFound" : "HttpError", "no such route");
      }
    });
  }
};

HttpServer::HttpServer(Service& service) : impl_(std::make_unique<Impl>(service)) {}

HttpServer::~HttpServer() { stop(); }

int HttpServer::start(const std::string& host, int port) {
  int bound = port == 0 ? impl_->server.bind_to_any_port(host) : (impl_->server.bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return bound;
}

bool HttpServer::listen(const std::string& host, int port) { return impl_->server.listen(host, port); }

void HttpServer::stop() {
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace repro_lens::gateway
