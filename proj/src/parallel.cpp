#include "spacegraph/parallel.hpp"

#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace spacegraph {

namespace {
std::atomic<int> configured{0};
}

int thread_count() {
  if (const char* env = std::getenv("SPACEGRAPH_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  if (configured.load() > 0) return configured.load();
  const unsigned hw = std::thread::hardware_concurrency();
  return hw ? static_cast<int>(hw) : 1;
}

void set_thread_count(int n) { configured.store(n > 0 ? n : 0); }

void parallel_for(int count, const std::function<void(int)>& body, int grain) {
  const int workers = std::min(thread_count(), std::max(1, count / std::max(1, grain)));
  if (workers <= 1) {
    for (int i = 0; i < count; ++i) body(i);
    return;
  }
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  const int chunk = (count + workers - 1) / workers;
  for (int w = 0; w < workers; ++w) {
    const int lo = w * chunk, hi = std::min(count, lo + chunk);
    pool.emplace_back([&, lo, hi] {
      try {
        for (int i = lo; i < hi; ++i) body(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace spacegraph
