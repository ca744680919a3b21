#pragma once

#include <complex>
#include <memory>
#include <string>

#include <Eigen/Dense>

namespace lopf {

using Complex = std::complex<double>;
using ComplexMatrix = Eigen::MatrixXcd;
using ComplexVector = Eigen::VectorXcd;

// Partial-pivoting LU of a square complex matrix together with its
// reciprocal condition estimate. Shared read-only between solves.
struct LuFactor {
  Eigen::PartialPivLU<ComplexMatrix> lu;
  double rcond = 0.0;

  Eigen::Index size() const { return lu.rows(); }
};

// Factorizes `a`; throws SingularSystemError when the reciprocal condition
// estimate falls below `rcond_min` (or the matrix is not finite).
std::shared_ptr<const LuFactor> factorize(const ComplexMatrix& a, const std::string& what,
                                          double rcond_min = 1e-13);

}  // namespace lopf
