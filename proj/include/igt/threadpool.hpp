#pragma once

#include <condition_variable>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace igt {

// Process-wide worker pool. Size is hardware_concurrency capped by the
// IGT_THREADS environment variable; a size of 1 runs everything inline.
// Work is split into disjoint index ranges so results are bitwise
// deterministic regardless of pool size.
class ThreadPool {
 public:
  static ThreadPool& instance();

  int size() const { return size_; }

  // Calls fn(begin, end) over a partition of [0, n). Blocks until done.
  void parallel_for(int n, const std::function<void(int, int)>& fn);

  ~ThreadPool();

 private:
  explicit ThreadPool(int size);
  void worker_loop(int id);

  int size_ = 1;
  std::vector<std::thread> workers_;
  std::mutex mu_;
  std::condition_variable cv_start_;
  std::condition_variable cv_done_;
  const std::function<void(int, int)>* job_ = nullptr;
  std::vector<std::pair<int, int>> ranges_;
  int pending_ = 0;
  std::uint64_t epoch_ = 0;
  bool stop_ = false;
};

}  // namespace igt
