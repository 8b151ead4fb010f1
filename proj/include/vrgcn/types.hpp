#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace vrgcn {

using NodeId = std::uint32_t;

/// Raised for malformed inputs: bad shapes, out-of-range ids, invalid configs.
class InputError : public std::invalid_argument {
 public:
  explicit InputError(const std::string& what) : std::invalid_argument(what) {}
};

inline void require(bool condition, const char* message) {
  if (!condition) throw InputError(message);
}

}  // namespace vrgcn
