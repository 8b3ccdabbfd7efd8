#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>

namespace irlm {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

// Error taxonomy mapped to process exit codes by the CLI:
// usage = 1, data = 2, numeric = 3.

// Caller misuse: bad flag combinations, wrong architecture for an
// operation, inconsistent shapes.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed or degenerate input files: invalid encodings, empty corpora,
// truncated checkpoints, hash mismatches.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Divergence during training or evaluation (NaN/Inf in states, gradients
// or parameters).
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline void require_finite(const Vector& v, const char* what) {
  if (!v.allFinite()) throw NumericError(std::string(what) + ": non-finite values");
}

inline void require_finite(const Matrix& m, const char* what) {
  if (!m.allFinite()) throw NumericError(std::string(what) + ": non-finite values");
}

}  // namespace irlm
