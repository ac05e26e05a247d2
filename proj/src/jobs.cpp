#include "ragtutor/jobs.hpp"

#include <algorithm>

#include "ragtutor/error.hpp"
#include "ragtutor/text.hpp"

namespace ragtutor::jobs {

std::string_view to_string(JobKind kind) {
  switch (kind) {
    case JobKind::ingest: return "ingest";
    case JobKind::quiz_generation: return "quiz_generation";
    case JobKind::eval_sweep: return "eval_sweep";
  }
  return "ingest";
}

std::string_view to_string(JobState state) {
  switch (state) {
    case JobState::queued: return "queued";
    case JobState::running: return "running";
    case JobState::succeeded: return "succeeded";
    case JobState::failed: return "failed";
  }
  return "queued";
}

JobKind parse_job_kind(std::string_view name) {
  for (auto k : {JobKind::ingest, JobKind::quiz_generation, JobKind::eval_sweep}) {
    if (to_string(k) == name) return k;
  }
  throw Error(ErrorCode::InvalidArgument, "unknown job kind", std::string(name));
}

JobState parse_job_state(std::string_view name) {
  for (auto s : {JobState::queued, JobState::running, JobState::succeeded, JobState::failed}) {
    if (to_string(s) == name) return s;
  }
  throw Error(ErrorCode::InvalidArgument, "unknown job state", std::string(name));
}

bool is_legal_transition(JobState from, JobState to) {
  switch (from) {
    case JobState::queued: return to == JobState::running;
    case JobState::running:
      return to == JobState::running || to == JobState::succeeded || to == JobState::failed;
    default: return false;
  }
}

nlohmann::json Job::to_json() const {
  nlohmann::json j = {{"job_id", job_id},       {"kind", to_string(kind)},
                      {"course_id", course_id}, {"state", to_string(state)},
                      {"progress", progress},   {"attempts", attempts},
                      {"created_at", created_at}};
  if (!result.is_null()) j["result"] = result;
  if (!reason.empty()) {
    j["reason"] = reason;
    j["message"] = message;
  }
  return j;
}

namespace {

Job job_from(const store::EntityRecord& r) {
  Job j;
  j.job_id = r.entity_id;
  j.course_id = r.course_id;
  j.kind = parse_job_kind(r.body.at("kind").get<std::string>());
  j.state = parse_job_state(r.body.at("state").get<std::string>());
  j.owner_id = r.body.value("owner_id", std::string());
  j.progress = r.body.value("progress", 0.0);
  j.payload = r.body.value("payload", nlohmann::json::object());
  j.result = r.body.value("result", nlohmann::json());
  j.reason = r.body.value("reason", std::string());
  j.message = r.body.value("message", std::string());
  j.attempts = r.body.value("attempts", 0);
  j.created_at = r.created_at;
  return j;
}

}  // namespace

JobQueue::JobQueue(store::Store& store, JobQueueOptions options) : store_(store), options_(options) {
  if (options_.workers < 1) throw Error(ErrorCode::InvalidArgument, "job queue needs at least one worker");
}

JobQueue::~JobQueue() { stop(); }

void JobQueue::register_handler(JobKind kind, Handler handler) {
  std::lock_guard lock(mu_);
  handlers_[kind] = std::move(handler);
}

std::string JobQueue::lane_of(const Job& job) {
  return job.course_id.empty() ? "job:" + job.job_id : job.course_id;
}

void JobQueue::persist_locked(Job& job) {
  store::EntityRecord r;
  r.kind = store::EntityKind::job;
  r.entity_id = job.job_id;
  r.course_id = job.course_id;
  r.created_at = job.created_at;
  r.version = versions_[job.job_id];
  r.body = {{"kind", to_string(job.kind)},   {"state", to_string(job.state)},
            {"owner_id", job.owner_id},      {"progress", job.progress},
            {"payload", job.payload},        {"result", job.result},
            {"reason", job.reason},          {"message", job.message},
            {"attempts", job.attempts}};
  versions_[job.job_id] = store_.persist_entity(std::move(r));
}

void JobQueue::start() {
  std::lock_guard lock(mu_);
  if (started_) return;
  started_ = true;
  stopping_ = false;
  auto stored = store_.fetch_entities(store::EntityKind::job);
  for (const auto& r : stored) {
    if (jobs_.count(r.entity_id)) continue;
    auto job = job_from(r);
    versions_[job.job_id] = r.version;
    const bool unfinished = job.state == JobState::queued || job.state == JobState::running;
    const auto id = job.job_id;
    jobs_.emplace(id, std::move(job));
    if (unfinished) pending_.push_back(id);
  }
  for (int i = 0; i < options_.workers; ++i) workers_.emplace_back([this] { worker_loop(); });
}

void JobQueue::stop() {
  {
    std::lock_guard lock(mu_);
    stopping_ = true;
  }
  changed_.notify_all();
  for (auto& t : workers_) t.join();
  workers_.clear();
  std::lock_guard lock(mu_);
  started_ = false;
}

std::string JobQueue::enqueue(JobKind kind, const std::string& course_id, nlohmann::json payload,
                              const std::string& owner_id) {
  std::lock_guard lock(mu_);
  if (!handlers_.count(kind))
    throw Error(ErrorCode::InvalidArgument, "no handler for job kind", std::string(to_string(kind)));
  if (pending_.size() >= options_.capacity)
    throw Error(ErrorCode::QueueFull, "job queue is full", std::to_string(options_.capacity));
  Job job;
  job.job_id = make_id("job");
  job.kind = kind;
  job.course_id = course_id;
  job.owner_id = owner_id;
  job.payload = payload.is_null() ? nlohmann::json::object() : std::move(payload);
  job.created_at = now_millis();
  persist_locked(job);
  pending_.push_back(job.job_id);
  const auto id = job.job_id;
  jobs_.emplace(id, std::move(job));
  changed_.notify_all();
  return id;
}

Job JobQueue::poll(const std::string& job_id) const {
  std::lock_guard lock(mu_);
  auto it = jobs_.find(job_id);
  if (it == jobs_.end()) {
    if (auto r = store_.get(store::EntityKind::job, job_id)) return job_from(*r);
    throw Error(ErrorCode::UnknownJob, "unknown job", job_id);
  }
  return it->second;
}

Job JobQueue::wait(const std::string& job_id, std::chrono::milliseconds timeout) const {
  std::unique_lock lock(mu_);
  if (!jobs_.count(job_id)) throw Error(ErrorCode::UnknownJob, "unknown job", job_id);
  changed_.wait_for(lock, timeout, [&] {
    const auto s = jobs_.at(job_id).state;
    return s == JobState::succeeded || s == JobState::failed;
  });
  return jobs_.at(job_id);
}

std::size_t JobQueue::pending() const {
  std::lock_guard lock(mu_);
  return pending_.size();
}

std::optional<std::string> JobQueue::next_runnable_locked() {
  for (auto it = pending_.begin(); it != pending_.end(); ++it) {
    const auto& job = jobs_.at(*it);
    if (busy_lanes_.count(lane_of(job))) continue;
    auto id = *it;
    pending_.erase(it);
    return id;
  }
  return std::nullopt;
}

void JobQueue::worker_loop() {
  std::unique_lock lock(mu_);
  while (true) {
    std::optional<std::string> id;
    changed_.wait(lock, [&] { return stopping_ || (id = next_runnable_locked()).has_value(); });
    if (stopping_ && !id) return;
    if (stopping_) {
      pending_.push_front(*id);
      return;
    }

    Job& job = jobs_.at(*id);
    const auto lane = lane_of(job);
    busy_lanes_.insert(lane);
    job.state = JobState::running;
    ++job.attempts;
    persist_locked(job);
    const Job snapshot = job;
    auto handler = handlers_.count(job.kind) ? handlers_.at(job.kind) : Handler{};
    changed_.notify_all();

    lock.unlock();
    nlohmann::json result;
    std::string reason, message;
    try {
      if (!handler) throw Error(ErrorCode::Internal, "no handler for job kind");
      ProgressFn progress = [this, jid = *id](double p) {
        std::lock_guard guard(mu_);
        auto& j = jobs_.at(jid);
        if (j.state == JobState::running) j.progress = std::clamp(p, j.progress, 1.0);
      };
      result = handler(snapshot, progress);
    } catch (const Error& e) {
      reason = std::string(ragtutor::to_string(e.code()));
      message = e.what();
    } catch (const std::exception& e) {
      reason = std::string(ragtutor::to_string(ErrorCode::Internal));
      message = e.what();
    }
    lock.lock();

    Job& done = jobs_.at(*id);
    if (reason.empty()) {
      done.state = JobState::succeeded;
      done.progress = 1.0;
      done.result = std::move(result);
    } else {
      done.state = JobState::failed;
      done.reason = reason;
      done.message = message;
    }
    try {
      persist_locked(done);
    } catch (const std::exception&) {
      // Polling still sees the outcome; a restart would re-run the job.
    }
    busy_lanes_.erase(lane);
    changed_.notify_all();
  }
}

}  // namespace ragtutor::jobs
