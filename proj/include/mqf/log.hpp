#pragma once

#include <functional>
#include <string>

namespace mqf {

// Non-fatal diagnostics (masked horizons, ignored events, ...). Default
// handler writes "warning: ..." to stderr; tests swap it to capture output.
void warn(const std::string& message);

using WarnHandler = std::function<void(const std::string&)>;

// Returns the previous handler. Pass nullptr to restore the default.
WarnHandler set_warn_handler(WarnHandler handler);

}  // namespace mqf
