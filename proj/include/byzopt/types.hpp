#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace byzopt {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

/// Thrown when a caller violates an operation's precondition.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown when a run cannot proceed (non-finite schedules, broken constructions).
class RuntimeFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& what) {
  if (!cond) throw InvalidArgument(what);
}

inline void require_same_dim(const Vector& v, Index d, const char* what) {
  if (v.size() != d) {
    throw InvalidArgument(std::string(what) + ": dimension mismatch (got " + std::to_string(v.size()) +
                          ", expected " + std::to_string(d) + ")");
  }
}

}  // namespace byzopt
