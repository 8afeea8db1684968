#include "igt/threadpool.hpp"

#include <cstdint>
#include <cstdlib>
#include <string>

namespace igt {

namespace {

int pool_size_from_env() {
  int n = static_cast<int>(std::thread::hardware_concurrency());
  if (n < 1) n = 1;
  if (const char* env = std::getenv("IGT_THREADS")) {
    try {
      const int cap = std::stoi(env);
      if (cap >= 1 && cap < n) n = cap;
      if (cap >= 1 && cap > n) n = cap;  // allow oversubscription if asked
    } catch (...) {
      // ignore malformed values, keep hardware default
    }
  }
  return n;
}

}  // namespace

ThreadPool& ThreadPool::instance() {
  static ThreadPool pool(pool_size_from_env());
  return pool;
}

ThreadPool::ThreadPool(int size) : size_(size) {
  if (size_ <= 1) return;
  ranges_.resize(static_cast<std::size_t>(size_));
  workers_.reserve(static_cast<std::size_t>(size_ - 1));
  for (int i = 1; i < size_; ++i) {
    workers_.emplace_back([this, i] { worker_loop(i); });
  }
}

ThreadPool::~ThreadPool() {
  {
    std::lock_guard<std::mutex> lk(mu_);
    stop_ = true;
    ++epoch_;
  }
  cv_start_.notify_all();
  for (auto& w : workers_) w.join();
}

void ThreadPool::worker_loop(int id) {
  std::uint64_t seen = 0;
  for (;;) {
    std::unique_lock<std::mutex> lk(mu_);
    cv_start_.wait(lk, [&] { return stop_ || epoch_ != seen; });
    if (stop_) return;
    seen = epoch_;
    const auto range = ranges_[static_cast<std::size_t>(id)];
    const auto* job = job_;
    lk.unlock();
    if (range.first < range.second) (*job)(range.first, range.second);
    lk.lock();
    if (--pending_ == 0) cv_done_.notify_one();
  }
}

void ThreadPool::parallel_for(int n, const std::function<void(int, int)>& fn) {
  if (n <= 0) return;
  if (size_ <= 1 || n == 1) {
    fn(0, n);
    return;
  }
  const int parts = size_ < n ? size_ : n;
  const int chunk = (n + parts - 1) / parts;
  std::pair<int, int> own;
  {
    std::lock_guard<std::mutex> lk(mu_);
    for (int i = 0; i < size_; ++i) {
      const int b = i * chunk;
      const int e = b + chunk < n ? b + chunk : n;
      ranges_[static_cast<std::size_t>(i)] = {b < n ? b : n, e};
    }
    own = ranges_[0];
    job_ = &fn;
    pending_ = size_ - 1;
    ++epoch_;
  }
  cv_start_.notify_all();
  if (own.first < own.second) fn(own.first, own.second);
  std::unique_lock<std::mutex> lk(mu_);
  cv_done_.wait(lk, [&] { return pending_ == 0; });
}

}  // namespace igt
