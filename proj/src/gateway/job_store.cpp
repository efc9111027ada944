#include "repro_lens/gateway.hpp"

#include "repro_lens/util/ulid.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <fstream>
#include <sstream>

namespace repro_lens::gateway {

namespace fs = std::filesystem;

std::string_view to_string(JobPhase p) {
  switch (p) {
    case JobPhase::Queued: return "Queued";
    case JobPhase::Fetching: return "Fetching";
    case JobPhase::Provisioning: return "Provisioning";
    case JobPhase::Executing: return "Executing";
    case JobPhase::Completed: return "Completed";
    case JobPhase::Failed: return "Failed";
  }
  return "Queued";
}

std::optional<JobPhase> job_phase_from_string(std::string_view s) {
  for (auto p : {JobPhase::Queued, JobPhase::Fetching, JobPhase::Provisioning, JobPhase::Executing,
                 JobPhase::Completed, JobPhase::Failed}) {
    if (to_string(p) == s) return p;
  }
  return std::nullopt;
}

bool valid_transition(const JobState& from, const JobState& to) {
  if (from.terminal()) return false;
  if (to.phase == JobPhase::Failed) return true;
  if (from.phase == JobPhase::Executing && to.phase == JobPhase::Executing) return true;
  return static_cast<int>(to.phase) == static_cast<int>(from.phase) + 1;
}

Json to_json(const Job& job) {
  Json j = {{"job_id", job.id},
            {"url", job.url},
            {"ref", job.requested_ref ? Json(*job.requested_ref) : Json(nullptr)},
            {"resolved_ref", job.resolved_ref.empty() ? Json(nullptr) : Json(job.resolved_ref)},
            {"state", to_string(job.state.phase)},
            {"created_at", util::format_iso8601(job.created_at)},
            {"updated_at", util::format_iso8601(job.updated_at)}};
  if (job.state.phase == JobPhase::Executing) j["current_path"] = job.state.detail;
  if (job.state.phase == JobPhase::Failed) j["error"] = job.state.detail;
  return j;
}

namespace {

void append_line(const fs::path& file, const std::string& line) {
  int fd = ::open(file.c_str(), O_WRONLY | O_APPEND | O_CREAT | O_CLOEXEC, 0644);
  if (fd < 0) throw std::runtime_error("cannot open journal " + file.string());
  std::string data = line + "\n";
  const char* p = data.data();
  std::size_t left = data.size();
  while (left > 0) {
    ssize_t n = ::write(fd, p, left);
    if (n < 0) {
      if (errno == EINTR) continue;
      ::close(fd);
      throw std::runtime_error("journal write failed for " + file.string());
    }
    p += n;
    left -= static_cast<std::size_t>(n);
  }
  ::fsync(fd);
  ::close(fd);
}

void fsync_dir(const fs::path& dir) {
  int fd = ::open(dir.c_str(), O_RDONLY | O_DIRECTORY | O_CLOEXEC);
  if (fd >= 0) {
    ::fsync(fd);
    ::close(fd);
  }
}

}  // namespace

void write_file_atomic(const fs::path& path, const std::string& content) {
  fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
  if (fd < 0) throw std::runtime_error("cannot write " + tmp.string());
  const char* p = content.data();
  std::size_t left = content.size();
  while (left > 0) {
    ssize_t n = ::write(fd, p, left);
    if (n < 0) {
      if (errno == EINTR) continue;
      ::close(fd);
      throw std::runtime_error("write failed for " + tmp.string());
    }
    p += n;
    left -= static_cast<std::size_t>(n);
  }
  ::fsync(fd);
  ::close(fd);
  fs::rename(tmp, path);
  fsync_dir(path.parent_path());
}

JobStore::JobStore(fs::path root) : root_(std::move(root)) {
  fs::create_directories(root_);
  for (const auto& entry : fs::directory_iterator(root_)) {
    if (!entry.is_directory() || !fs::exists(entry.path() / "journal.jsonl")) continue;
    try {
      Job job = load(entry.path());
      jobs_[job.id] = std::move(job);
    } catch (const std::exception&) {
      // A journal without a readable creation record never became a job.
    }
  }
}

Job JobStore::load(const fs::path& dir) {
  fs::path file = dir / "journal.jsonl";
  std::string data;
  {
    std::ifstream in(file, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    data = ss.str();
  }
  Job job;
  job.dir = dir;
  bool created = false;
  std::size_t good = 0;
  std::size_t pos = 0;
  while (pos < data.size()) {
    std::size_t nl = data.find('\n', pos);
    if (nl == std::string::npos) break;  // torn final write
    Json rec;
    try {
      rec = Json::parse(data.substr(pos, nl - pos));
    } catch (const Json::exception&) {
      break;
    }
    auto at = util::parse_iso8601(rec.value("at", std::string{}));
    const std::string event = rec.value("event", std::string{});
    if (event == "created") {
      job.id = rec.at("id").get<std::string>();
      job.url = rec.at("url").get<std::string>();
      if (rec.contains("ref") && rec["ref"].is_string()) job.requested_ref = rec["ref"].get<std::string>();
      job.created_at = job.updated_at = at.value_or(util::Timestamp{});
      created = true;
    } else if (event == "state" && created) {
      auto phase = job_phase_from_string(rec.value("phase", std::string{}));
      if (!phase) break;
      JobState next{*phase, rec.value("detail", std::string{})};
      if (!valid_transition(job.state, next)) break;
      job.state = next;
      if (at) job.updated_at = *at;
    } else if (event == "resolved_ref" && created) {
      job.resolved_ref = rec.value("ref", std::string{});
    } else {
      break;
    }
    pos = nl + 1;
    good = pos;
  }
  if (!created) throw std::runtime_error("journal has no creation record: " + file.string());
  if (good < data.size()) fs::resize_file(file, good);
  return job;
}

void JobStore::append(const Job& job, const Json& record) { append_line(job.dir / "journal.jsonl", record.dump()); }

Job JobStore::create(const std::string& url, const std::optional<std::string>& ref) {
  Job job;
  job.id = util::make_ulid();
  job.url = url;
  job.requested_ref = ref;
  job.created_at = job.updated_at = util::now_utc();
  job.dir = root_ / job.id;
  fs::create_directories(job.dir);
  Json rec = {{"event", "created"},
              {"id", job.id},
              {"url", url},
              {"ref", ref ? Json(*ref) : Json(nullptr)},
              {"at", util::format_iso8601(job.created_at)}};
  std::lock_guard lock(mu_);
  append(job, rec);
  fsync_dir(root_);
  jobs_[job.id] = job;
  return job;
}

Job JobStore::transition(const std::string& id, const JobState& state) {
  std::lock_guard lock(mu_);
  auto it = jobs_.find(id);
  if (it == jobs_.end()) throw std::out_of_range("unknown job " + id);
  Job& job = it->second;
  if (!valid_transition(job.state, state)) {
    throw std::logic_error("job " + id + ": " + std::string(to_string(job.state.phase)) + " cannot become " +
                           std::string(to_string(state.phase)));
  }
  auto now = util::now_utc();
  Json rec = {{"event", "state"}, {"phase", to_string(state.phase)}, {"at", util::format_iso8601(now)}};
  if (!state.detail.empty()) rec["detail"] = state.detail;
  append(job, rec);
  job.state = state;
  job.updated_at = now;
  return job;
}

void JobStore::set_resolved_ref(const std::string& id, const std::string& ref) {
  std::lock_guard lock(mu_);
  auto it = jobs_.find(id);
  if (it == jobs_.end()) throw std::out_of_range("unknown job " + id);
  append(it->second, {{"event", "resolved_ref"}, {"ref", ref}, {"at", util::format_iso8601(util::now_utc())}});
  it->second.resolved_ref = ref;
}

std::optional<Job> JobStore::get(const std::string& id) const {
  std::lock_guard lock(mu_);
  auto it = jobs_.find(id);
  if (it == jobs_.end()) return std::nullopt;
  return it->second;
}

std::vector<Job> JobStore::list() const {
  std::lock_guard lock(mu_);
  std::vector<Job> out;
  for (const auto& [id, job] : jobs_) out.push_back(job);
  return out;
}

std::optional<Job> JobStore::find_active(const std::string& url, const std::optional<std::string>& ref) const {
  std::lock_guard lock(mu_);
  for (const auto& [id, job] : jobs_) {
    if (job.state.terminal() || job.url != url) continue;
    bool same = job.requested_ref == ref || (ref && !job.resolved_ref.empty() && *ref == job.resolved_ref);
    if (same) return job;
  }
  return std::nullopt;
}

}  // namespace repro_lens::gateway
