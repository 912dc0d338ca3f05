#pragma once

#include <stdexcept>
#include <string>

namespace sacc {

// Failure categories. The CLI maps these onto its exit codes.
enum class ErrorKind {
  kFormat,       // malformed file contents
  kUnsupported,  // valid but unsupported encoding
  kIo,           // filesystem failure
  kContract,     // caller violated a precondition (shapes, ranges)
  kConfig,       // bad configuration / infeasible sampling
  kGeometry,     // physically inconsistent room setup
  kNumeric,      // singular matrices, NaN divergence
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline void require(bool condition, ErrorKind kind, const std::string& what) {
  if (!condition) throw Error(kind, what);
}

inline void require_contract(bool condition, const std::string& what) {
  require(condition, ErrorKind::kContract, what);
}

}  // namespace sacc
