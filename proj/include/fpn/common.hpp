#pragma once

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>

namespace fpn {

namespace detail {
inline void format_into(std::ostringstream&) {}
template <typename Head, typename... Tail>
void format_into(std::ostringstream& os, Head&& head, Tail&&... tail) {
  os << std::forward<Head>(head);
  format_into(os, std::forward<Tail>(tail)...);
}
}  // namespace detail

template <typename... Args>
[[noreturn]] void fail(Args&&... args) {
  std::ostringstream os;
  detail::format_into(os, std::forward<Args>(args)...);
  throw std::runtime_error(os.str());
}

}  // namespace fpn

#define FPN_CHECK(cond, ...)                                          \
  do {                                                                \
    if (!(cond)) ::fpn::fail("check failed: " #cond "; ", __VA_ARGS__); \
  } while (0)
