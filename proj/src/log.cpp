#include "cmdf/log.hpp"

#include <iostream>
#include <mutex>

namespace cmdf {

namespace {
std::mutex g_mutex;
LogSink g_sink;
}  // namespace

void set_warning_sink(LogSink sink) {
  std::lock_guard lock(g_mutex);
  g_sink = std::move(sink);
}

void log_warning(const std::string& message) {
  std::lock_guard lock(g_mutex);
  if (g_sink) {
    g_sink(message);
  } else {
    std::cerr << "warning: " << message << '\n';
  }
}

}  // namespace cmdf
