#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <string_view>

namespace ncsr::log {

enum class Level { info, warning };

using Sink = std::function<void(Level, std::string_view)>;

/// Replaces the process-wide sink (stderr by default). Returns the previous one.
Sink set_sink(Sink sink);

void info(std::string_view message);
void warn(std::string_view message);

/// Number of warnings emitted since process start.
std::size_t warning_count();

/// Captures warnings for the lifetime of the object (used by tests).
class ScopedCapture {
 public:
  ScopedCapture();
  ~ScopedCapture();
  ScopedCapture(const ScopedCapture&) = delete;
  ScopedCapture& operator=(const ScopedCapture&) = delete;

  std::size_t warnings() const { return warnings_; }
  const std::string& last() const { return last_; }

 private:
  Sink previous_;
  std::size_t warnings_ = 0;
  std::string last_;
};

}  // namespace ncsr::log
