#pragma once

#include <stdexcept>
#include <string>

namespace quantface {

// Failure categories; the CLI maps these onto process exit codes.
enum class ErrorKind {
  Dimension,        // shape / size mismatch between operands
  Argument,         // invalid argument value
  State,            // operation not valid in the current object state
  Numerical,        // iteration did not converge, NaN/Inf produced
  UnsupportedSize,  // e.g. Hadamard size that is not a power of two
  Infeasible,       // allocation budget cannot be met
  Training,         // divergence during distillation
  Config,           // bad run configuration
  Io,               // file format / filesystem failure
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg)
      : std::runtime_error(msg), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace quantface
