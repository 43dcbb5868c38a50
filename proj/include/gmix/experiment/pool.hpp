#pragma once

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <functional>
#include <string>
#include <thread>
#include <vector>

namespace gmix {

// Worker count: explicit value if positive, else GMIX_JOBS, else 1.
inline int resolve_jobs(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("GMIX_JOBS")) {
    int n = std::atoi(env);
    if (n > 0) return n;
  }
  return 1;
}

struct CellOutcome {
  bool ok = true;
  std::string message;
};

// Runs task(i) for i in [0, n) on up to `jobs` threads. Idle workers take
// the next unclaimed index, so long cells do not hold up short ones. An
// exception fails only its own cell. Outcomes are indexed like the cells,
// which keeps the aggregate independent of the schedule.
inline std::vector<CellOutcome> run_cells(std::size_t n, int jobs, const std::function<void(std::size_t)>& task) {
  std::vector<CellOutcome> out(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        task(i);
      } catch (const std::exception& e) {
        out[i] = {false, e.what()};
      } catch (...) {
        out[i] = {false, "unknown error"};
      }
    }
  };
  const std::size_t threads = std::min<std::size_t>(static_cast<std::size_t>(std::max(1, jobs)), n);
  if (threads <= 1) {
    worker();
    return out;
  }
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  return out;
}

}  // namespace gmix
