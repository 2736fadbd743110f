#include "mqf/log.hpp"

#include <iostream>

namespace mqf {

namespace {

void default_handler(const std::string& message) {
    std::cerr << "warning: " << message << "\n";
}

WarnHandler& handler_slot() {
    static WarnHandler handler = default_handler;
    return handler;
}

}  // namespace

void warn(const std::string& message) {
    handler_slot()(message);
}

WarnHandler set_warn_handler(WarnHandler handler) {
    WarnHandler previous = handler_slot();
    handler_slot() = handler ? std::move(handler) : default_handler;
    return previous;
}

}  // namespace mqf
