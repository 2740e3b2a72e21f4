#pragma once

#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>

namespace biasaudit {

inline constexpr const char* kVersion = "0.1.0";

/// Any contract violation or malformed input. Messages are user-facing and
/// carry row/column context where one exists.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {

template <typename... Args>
[[nodiscard]] std::string concat(Args&&... args) {
    std::ostringstream os;
    (os << ... << std::forward<Args>(args));
    return os.str();
}

}  // namespace detail

template <typename... Args>
[[noreturn]] void fail(Args&&... args) {
    throw Error(detail::concat(std::forward<Args>(args)...));
}

template <typename... Args>
void require(bool cond, Args&&... args) {
    if (!cond) fail(std::forward<Args>(args)...);
}

}  // namespace biasaudit
