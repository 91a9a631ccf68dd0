#pragma once

#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>

namespace metadapt {

/// Failure raised by every module. `code` is a stable machine-readable tag
/// (e.g. "shape_mismatch"); what() carries the human-readable detail.
class Error : public std::runtime_error {
  public:
    Error(std::string code, const std::string& message)
        : std::runtime_error(message), code_(std::move(code)) {}

    const std::string& code() const noexcept { return code_; }

  private:
    std::string code_;
};

namespace detail {
template <typename... Parts>
std::string concat(const Parts&... parts) {
    std::ostringstream os;
    (os << ... << parts);
    return os.str();
}
}  // namespace detail

template <typename... Parts>
[[noreturn]] void fail(const std::string& code, const Parts&... parts) {
    throw Error(code, detail::concat(parts...));
}

template <typename... Parts>
void check(bool condition, const std::string& code, const Parts&... parts) {
    if (!condition) fail(code, parts...);
}

}  // namespace metadapt
