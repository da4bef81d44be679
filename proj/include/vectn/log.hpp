#pragma once

#include <functional>
#include <iostream>
#include <string_view>
#include <utility>

namespace vectn {

using LogSink = std::function<void(std::string_view)>;

inline LogSink& warning_sink() {
  static LogSink sink = [](std::string_view msg) {
    std::cerr << "warning: " << msg << '\n';
  };
  return sink;
}

inline void warn(std::string_view msg) { warning_sink()(msg); }

// Swaps the warning sink for the lifetime of the guard (tests, quiet CLI runs).
class ScopedWarningSink {
 public:
  explicit ScopedWarningSink(LogSink sink)
      : previous_(std::exchange(warning_sink(), std::move(sink))) {}
  ~ScopedWarningSink() { warning_sink() = std::move(previous_); }
  ScopedWarningSink(const ScopedWarningSink&) = delete;
  ScopedWarningSink& operator=(const ScopedWarningSink&) = delete;

 private:
  LogSink previous_;
};

}  // namespace vectn
