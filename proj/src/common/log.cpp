#include "sda/log.hpp"

#include <iostream>
#include <utility>

namespace sda {

namespace {
WarningHandler& handler_slot() {
  static WarningHandler h;
  return h;
}
}  // namespace

void warn(const std::string& message) {
  if (auto& h = handler_slot()) {
    h(message);
  } else {
    std::cerr << "warning: " << message << '\n';
  }
}

WarningHandler set_warning_handler(WarningHandler handler) { return std::exchange(handler_slot(), std::move(handler)); }

}  // namespace sda
