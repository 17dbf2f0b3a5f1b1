#pragma once

#include <atomic>
#include <iostream>
#include <string_view>

namespace feddis::log {

enum class Level { quiet = 0, warn = 1, info = 2 };

inline Level& level() {
  static Level current = Level::warn;
  return current;
}

/// Number of warnings raised so far in this process.
inline std::atomic<long>& warning_count() {
  static std::atomic<long> count{0};
  return count;
}

inline void warn(std::string_view msg) {
  ++warning_count();
  if (level() >= Level::warn) std::cerr << "[warn] " << msg << '\n';
}

inline void info(std::string_view msg) {
  if (level() >= Level::info) std::cerr << "[info] " << msg << '\n';
}

}  // namespace feddis::log
