#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "ragtutor/store.hpp"

namespace ragtutor::jobs {

enum class JobKind { ingest, quiz_generation, eval_sweep };
enum class JobState { queued, running, succeeded, failed };

std::string_view to_string(JobKind kind);
std::string_view to_string(JobState state);
/// Throws InvalidArgument.
JobKind parse_job_kind(std::string_view name);
JobState parse_job_state(std::string_view name);

/// Forward-only: queued -> running -> {succeeded, failed}. Re-entering running is allowed
/// for a job resumed after a restart.
bool is_legal_transition(JobState from, JobState to);

struct Job {
  std::string job_id;
  JobKind kind = JobKind::ingest;
  std::string course_id;
  std::string owner_id;
  JobState state = JobState::queued;
  double progress = 0.0;
  nlohmann::json payload = nlohmann::json::object();
  nlohmann::json result;
  /// Machine-readable error code name when failed.
  std::string reason;
  std::string message;
  int attempts = 0;
  std::int64_t created_at = 0;

  nlohmann::json to_json() const;
};

using ProgressFn = std::function<void(double)>;
/// Returns the result document. Throwing ragtutor::Error fails the job with that code.
using Handler = std::function<nlohmann::json(const Job&, const ProgressFn&)>;

struct JobQueueOptions {
  int workers = 4;
  std::size_t capacity = 256;
};

/// Global worker pool with per-course FIFO: a course's jobs run one at a time in enqueue
/// order, different courses run in parallel. Jobs are persisted so unfinished ones resume
/// after a restart.
class JobQueue {
 public:
  JobQueue(store::Store& store, JobQueueOptions options = {});
  ~JobQueue();

  JobQueue(const JobQueue&) = delete;
  JobQueue& operator=(const JobQueue&) = delete;

  void register_handler(JobKind kind, Handler handler);

  /// Re-queues unfinished jobs found in the store, then starts the workers.
  void start();
  void stop();

  /// Throws QueueFull.
  std::string enqueue(JobKind kind, const std::string& course_id, nlohmann::json payload,
                      const std::string& owner_id = {});
  /// Side-effect free. Throws UnknownJob.
  Job poll(const std::string& job_id) const;
  /// Blocks until the job is terminal or the timeout passes; returns the latest state.
  Job wait(const std::string& job_id, std::chrono::milliseconds timeout) const;

  std::size_t pending() const;

 private:
  void worker_loop();
  void persist_locked(Job& job);
  std::optional<std::string> next_runnable_locked();
  static std::string lane_of(const Job& job);

  store::Store& store_;
  JobQueueOptions options_;
  std::map<JobKind, Handler> handlers_;
  mutable std::mutex mu_;
  mutable std::condition_variable changed_;
  std::map<std::string, Job> jobs_;
  std::map<std::string, std::int64_t> versions_;
  std::deque<std::string> pending_;
  std::set<std::string> busy_lanes_;
  std::vector<std::thread> workers_;
  bool stopping_ = false;
  bool started_ = false;
};

}  // namespace ragtutor::jobs
