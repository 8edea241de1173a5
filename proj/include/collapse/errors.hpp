#ifndef COLLAPSE_ERRORS_HPP
#define COLLAPSE_ERRORS_HPP

#include <cstddef>
#include <stdexcept>
#include <string>

namespace collapse {

/// Raised when an input violates a documented precondition.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a checkpoint cannot be decoded.
class ModelFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The checkpoint is well formed but was written by an incompatible format version.
class IncompatibleVersionError : public ModelFormatError {
 public:
  IncompatibleVersionError(unsigned found, unsigned expected)
      : ModelFormatError("checkpoint format version " + std::to_string(found) +
                         " is incompatible with supported version " +
                         std::to_string(expected)),
        found_(found) {}
  unsigned found() const { return found_; }

 private:
  unsigned found_;
};

/// An attack step produced a non-finite loss or gradient.
class AttackError : public std::runtime_error {
 public:
  AttackError(std::size_t step, const std::string& what)
      : std::runtime_error("attack aborted at step " + std::to_string(step) + ": " + what),
        step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

}  // namespace collapse

#endif  // COLLAPSE_ERRORS_HPP
