#include "palt/log.hpp"

#include <atomic>
#include <iostream>
#include <mutex>

namespace palt {
namespace {
std::atomic<std::int64_t> g_warnings{0};
std::atomic<bool> g_quiet{false};
std::mutex g_stderr_mutex;
}  // namespace

void log_warning(std::string_view message) {
  g_warnings.fetch_add(1, std::memory_order_relaxed);
  if (g_quiet.load(std::memory_order_relaxed)) return;
  std::lock_guard lock(g_stderr_mutex);
  std::cerr << "[palt] warning: " << message << '\n';
}

std::int64_t warning_count() { return g_warnings.load(std::memory_order_relaxed); }

void set_warnings_quiet(bool quiet) { g_quiet.store(quiet, std::memory_order_relaxed); }

}  // namespace palt
