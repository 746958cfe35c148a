#pragma once

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <iostream>
#include <mutex>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>

namespace skiff {

using WorkerId = std::uint32_t;
using RowId = std::uint64_t;
using ColId = std::uint32_t;

// Clocks count whole iterations. Signed so that expressions like
// reader_clock - s - 1 stay well-defined below zero.
using ClockT = std::int64_t;

// Caller broke a documented precondition (unknown table, bad index, ...).
struct UsageError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Two writers overwrote the same cell in the same clock.
struct ConflictError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A blocking call was cancelled by shutdown.
struct InterruptedError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A run aborted (worker failure, missing partial, ...). No recovery.
struct RunError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ProtocolError : std::runtime_error {
  std::size_t offset;
  ProtocolError(const std::string& what, std::size_t off)
      : std::runtime_error(what + " (at byte " + std::to_string(off) + ")"),
        offset(off) {}
};

// ---------------------------------------------------------------------------
// Deterministic randomness helpers. Standard <random> distributions are
// implementation-defined, so every draw that must reproduce across builds
// goes through these instead.

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t s = a;
  std::uint64_t h = splitmix64(s);
  s ^= b + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
  return splitmix64(s);
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  return mix_seed(mix_seed(a, b), c);
}

// Wraps mt19937_64 with portable draw routines.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t bits() { return eng_(); }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform01() { return double(eng_() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n).
  std::uint64_t index(std::uint64_t n) {
    return std::uint64_t(uniform01() * double(n));
  }

  // Standard normal via Box-Muller (stateless variant: one draw per call pair).
  double gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform01();
    double u2 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

 private:
  std::mt19937_64 eng_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// ---------------------------------------------------------------------------
// Logging. Level comes from the PETUUM_LITE_LOG environment variable:
// one of error|warn|info|debug (default warn).

enum class LogLevel { kError = 0, kWarn = 1, kInfo = 2, kDebug = 3 };

inline LogLevel log_level() {
  static LogLevel level = [] {
    const char* env = std::getenv("PETUUM_LITE_LOG");
    if (!env) return LogLevel::kWarn;
    std::string v(env);
    if (v == "error") return LogLevel::kError;
    if (v == "warn") return LogLevel::kWarn;
    if (v == "info") return LogLevel::kInfo;
    if (v == "debug") return LogLevel::kDebug;
    return LogLevel::kWarn;
  }();
  return level;
}

inline std::mutex& log_mutex() {
  static std::mutex m;
  return m;
}

inline void log_line(LogLevel level, const std::string& msg) {
  if (level > log_level()) return;
  static const char* names[] = {"error", "warn", "info", "debug"};
  std::lock_guard<std::mutex> lk(log_mutex());
  std::cerr << "[skiff:" << names[int(level)] << "] " << msg << "\n";
}

#define SKIFF_LOG(level, expr)                            \
  do {                                                    \
    if ((level) <= ::skiff::log_level()) {                \
      std::ostringstream skiff_log_os_;                   \
      skiff_log_os_ << expr;                              \
      ::skiff::log_line((level), skiff_log_os_.str());    \
    }                                                     \
  } while (0)

#define SKIFF_WARN(expr) SKIFF_LOG(::skiff::LogLevel::kWarn, expr)
#define SKIFF_INFO(expr) SKIFF_LOG(::skiff::LogLevel::kInfo, expr)
#define SKIFF_DEBUG(expr) SKIFF_LOG(::skiff::LogLevel::kDebug, expr)

}  // namespace skiff
