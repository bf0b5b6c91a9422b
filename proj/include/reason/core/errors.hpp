#pragma once

#include <stdexcept>
#include <string>

namespace reason {

// Bad input, config, or file contents. The CLI maps this to exit code 1.
class ValidationError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Non-finite loss or other failure while optimizing. The CLI maps this to exit code 2.
class TrainingError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

} // namespace reason
