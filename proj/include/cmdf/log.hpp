#pragma once

#include <functional>
#include <string>

namespace cmdf {

using LogSink = std::function<void(const std::string&)>;

/// Routes warnings; the default sink writes "warning: <msg>" to stderr.
/// Passing an empty function restores the default.
void set_warning_sink(LogSink sink);
void log_warning(const std::string& message);

}  // namespace cmdf
