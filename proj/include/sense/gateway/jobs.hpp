#pragma once

#include <chrono>
#include <condition_variable>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "sense/synthlab/generate.hpp"

namespace sense::gateway {

enum class JobStatus { queued, running, done, failed };
const char* to_string(JobStatus s);

struct JobSnapshot {
  std::string id;
  JobStatus status = JobStatus::queued;
  std::string error;
  std::string idempotency_key;
  std::shared_ptr<const synthlab::SyntheticTile> result;
};

// Bounded FIFO queue drained by a fixed pool of worker threads.
class JobQueue {
 public:
  using Runner = std::function<synthlab::SyntheticTile(const synthlab::GenerationRequest&)>;

  JobQueue(Runner runner, int workers, std::size_t queue_depth);
  ~JobQueue();
  JobQueue(const JobQueue&) = delete;
  JobQueue& operator=(const JobQueue&) = delete;

  struct Submitted {
    std::string id;
    bool created = false;
  };
  // A repeated idempotency key with the same payload fingerprint returns the
  // original job; with a different fingerprint it is a conflict. A full
  // queue is reported as busy.
  Submitted submit(synthlab::GenerationRequest request, const std::string& idempotency_key = {},
                   const std::string& fingerprint = {});

  std::optional<JobSnapshot> get(const std::string& id) const;
  // Blocks until the job is done or failed, or the timeout passes.
  std::optional<JobSnapshot> wait(const std::string& id, std::chrono::milliseconds timeout) const;
  std::size_t pending() const;
  int workers() const { return static_cast<int>(threads_.size()); }
  void shutdown();

 private:
  struct Job {
    JobSnapshot snapshot;
    synthlab::GenerationRequest request;
    std::string fingerprint;
  };
  void worker_loop();

  Runner runner_;
  std::size_t queue_depth_;
  mutable std::mutex mutex_;
  mutable std::condition_variable work_cv_;
  mutable std::condition_variable done_cv_;
  std::deque<std::string> queue_;
  std::map<std::string, std::shared_ptr<Job>> jobs_;
  std::map<std::string, std::string> by_key_;
  std::uint64_t next_id_ = 1;
  bool stopping_ = false;
  std::vector<std::thread> threads_;
};

}  // namespace sense::gateway
