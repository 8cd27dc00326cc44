#pragma once

#include <stdexcept>
#include <string>
#include <vector>
#include <sstream>
#include <cstddef>

namespace loretrack {

// Shape disagreement between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Invalid model / data / training configuration.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// API misuse, e.g. backward() on a non-scalar.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

inline std::string shape_str(const std::vector<std::size_t>& shape) {
  std::ostringstream oss;
  oss << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) oss << 'x';
    oss << shape[i];
  }
  oss << ']';
  return oss.str();
}

}  // namespace loretrack
