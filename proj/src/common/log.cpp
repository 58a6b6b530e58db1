#include "ncsr/common/log.hpp"

#include <atomic>
#include <iostream>
#include <mutex>

namespace ncsr::log {
namespace {

std::mutex& sink_mutex() {
  static std::mutex m;
  return m;
}

Sink& current_sink() {
  static Sink sink = [](Level level, std::string_view message) {
    std::cerr << (level == Level::warning ? "[warn] " : "[info] ") << message << '\n';
  };
  return sink;
}

std::atomic<std::size_t> g_warnings{0};

void emit(Level level, std::string_view message) {
  Sink sink;
  {
    std::lock_guard lock(sink_mutex());
    sink = current_sink();
  }
  if (sink) sink(level, message);
}

}  // namespace

Sink set_sink(Sink sink) {
  std::lock_guard lock(sink_mutex());
  Sink previous = std::move(current_sink());
  current_sink() = std::move(sink);
  return previous;
}

void info(std::string_view message) { emit(Level::info, message); }

void warn(std::string_view message) {
  ++g_warnings;
  emit(Level::warning, message);
}

std::size_t warning_count() { return g_warnings.load(); }

ScopedCapture::ScopedCapture() {
  previous_ = set_sink([this](Level level, std::string_view message) {
    if (level == Level::warning) {
      ++warnings_;
      last_ = std::string(message);
    }
  });
}

ScopedCapture::~ScopedCapture() { set_sink(std::move(previous_)); }

}  // namespace ncsr::log
