#ifndef MILSEG_ERRORS_HPP
#define MILSEG_ERRORS_HPP

#include <stdexcept>

namespace milseg {

/// File-system or file-format failure.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad configuration or command-line usage.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace milseg

#endif  // MILSEG_ERRORS_HPP
