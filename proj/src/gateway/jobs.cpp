#include "sense/gateway/jobs.hpp"

#include <cstdio>

#include "sense/error.hpp"

namespace sense::gateway {

const char* to_string(JobStatus s) {
  switch (s) {
    case JobStatus::queued: return "queued";
    case JobStatus::running: return "running";
    case JobStatus::done: return "done";
    case JobStatus::failed: return "failed";
  }
  return "?";
}

JobQueue::JobQueue(Runner runner, int workers, std::size_t queue_depth)
    : runner_(std::move(runner)), queue_depth_(queue_depth) {
  if (!runner_) throw Error(ErrorKind::invalid_argument, "job queue: no runner");
  if (workers < 1 || queue_depth < 1) throw Error(ErrorKind::invalid_argument, "job queue: bad pool size");
  for (int i = 0; i < workers; ++i) threads_.emplace_back([this] { worker_loop(); });
}

JobQueue::~JobQueue() { shutdown(); }

void JobQueue::shutdown() {
  {
    std::lock_guard lock(mutex_);
    if (stopping_) return;
    stopping_ = true;
  }
  work_cv_.notify_all();
  for (auto& t : threads_) {
    if (t.joinable()) t.join();
  }
}

JobQueue::Submitted JobQueue::submit(synthlab::GenerationRequest request, const std::string& key,
                                     const std::string& fingerprint) {
  std::lock_guard lock(mutex_);
  if (stopping_) throw Error(ErrorKind::busy, "job queue is shutting down");
  if (!key.empty()) {
    if (auto it = by_key_.find(key); it != by_key_.end()) {
      const auto& job = jobs_.at(it->second);
      if (job->fingerprint != fingerprint) {
        throw Error(ErrorKind::conflict, "idempotency key '" + key + "' was used with a different payload");
      }
      return {it->second, false};
    }
  }
  if (queue_.size() >= queue_depth_) {
    throw Error(ErrorKind::busy, "job queue is full (" + std::to_string(queue_depth_) + " pending)");
  }
  char id[32];
  std::snprintf(id, sizeof(id), "job-%06llu", static_cast<unsigned long long>(next_id_++));
  auto job = std::make_shared<Job>();
  job->snapshot.id = id;
  job->snapshot.idempotency_key = key;
  job->request = std::move(request);
  job->fingerprint = fingerprint;
  jobs_[id] = job;
  if (!key.empty()) by_key_[key] = id;
  queue_.push_back(id);
  work_cv_.notify_one();
  return {id, true};
}

std::optional<JobSnapshot> JobQueue::get(const std::string& id) const {
  std::lock_guard lock(mutex_);
  auto it = jobs_.find(id);
  if (it == jobs_.end()) return std::nullopt;
  return it->second->snapshot;
}

std::optional<JobSnapshot> JobQueue::wait(const std::string& id, std::chrono::milliseconds timeout) const {
  std::unique_lock lock(mutex_);
  auto it = jobs_.find(id);
  if (it == jobs_.end()) return std::nullopt;
  auto job = it->second;
  done_cv_.wait_for(lock, timeout, [&] {
    return job->snapshot.status == JobStatus::done || job->snapshot.status == JobStatus::failed;
  });
  return job->snapshot;
}

std::size_t JobQueue::pending() const {
  std::lock_guard lock(mutex_);
  return queue_.size();
}

void JobQueue::worker_loop() {
  for (;;) {
    std::shared_ptr<Job> job;
    {
      std::unique_lock lock(mutex_);
      work_cv_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
      if (stopping_) return;
      job = jobs_.at(queue_.front());
      queue_.pop_front();
      job->snapshot.status = JobStatus::running;
    }
    std::shared_ptr<const synthlab::SyntheticTile> result;
    std::string error;
    try {
      result = std::make_shared<const synthlab::SyntheticTile>(runner_(job->request));
    } catch (const std::exception& e) {
      error = e.what();
    }
    {
      std::lock_guard lock(mutex_);
      if (result) {
        job->snapshot.result = std::move(result);
        job->snapshot.status = JobStatus::done;
      } else {
        job->snapshot.error = error;
        job->snapshot.status = JobStatus::failed;
      }
    }
    done_cv_.notify_all();
  }
}

}  // namespace sense::gateway
