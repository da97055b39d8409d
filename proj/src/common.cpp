#include "psdf/common.hpp"

#include <atomic>
#include <thread>

namespace psdf {

namespace {
std::atomic<int> g_threads{0};
}

std::string hex64(std::uint64_t value) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[value & 0xf];
    value >>= 4;
  }
  return out;
}

void set_thread_count(int threads) { g_threads.store(threads); }

int thread_count() {
  int t = g_threads.load();
  if (t > 0) return t;
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& fn) {
  const int workers = std::min<std::int64_t>(thread_count(), n);
  if (workers <= 1) {
    for (std::int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::int64_t> next{0};
  const std::int64_t chunk = std::max<std::int64_t>(1, n / (workers * 8));
  auto worker = [&] {
    for (;;) {
      const std::int64_t begin = next.fetch_add(chunk);
      if (begin >= n) return;
      const std::int64_t end = std::min(begin + chunk, n);
      for (std::int64_t i = begin; i < end; ++i) fn(i);
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers - 1));
  for (int w = 1; w < workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
}

}  // namespace psdf
