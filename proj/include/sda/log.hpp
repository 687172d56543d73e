#pragma once

#include <functional>
#include <string>

namespace sda {

using WarningHandler = std::function<void(const std::string&)>;

/// Routes a warning to the installed handler (stderr by default).
void warn(const std::string& message);

/// Installs `handler`, returning the previous one. An empty handler restores stderr.
WarningHandler set_warning_handler(WarningHandler handler);

}  // namespace sda
