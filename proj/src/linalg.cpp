#include "lopf/linalg.hpp"

#include <cmath>

#include "lopf/error.hpp"

namespace lopf {

std::shared_ptr<const LuFactor> factorize(const ComplexMatrix& a, const std::string& what, double rcond_min) {
  if (a.rows() != a.cols()) {
    throw DimensionError(what + ": matrix is not square");
  }
  auto factor = std::make_shared<LuFactor>();
  if (a.size() == 0) {
    factor->rcond = 1.0;
    return factor;
  }
  if (!a.allFinite()) {
    throw SingularSystemError(what + ": matrix has non-finite entries", 0.0);
  }
  factor->lu.compute(a);
  factor->rcond = factor->lu.rcond();
  if (std::isnan(factor->rcond)) factor->rcond = 0.0;
  if (!(factor->rcond >= rcond_min)) {
    throw SingularSystemError(what + " is singular", factor->rcond);
  }
  return factor;
}

}  // namespace lopf
