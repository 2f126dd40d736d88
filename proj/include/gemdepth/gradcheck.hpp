#pragma once

#include <functional>
#include <string>

#include "gemdepth/tensor.hpp"

namespace gemdepth {

struct GradCheckReport {
  bool pass = false;
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  int64_t worst_index = -1;
  double tol = 0.0;
  std::string label;
};

/// Central-difference oracle: compares the tape gradient of a scalar-valued
/// function against (f(x+h)-f(x-h))/2h elementwise. Relative error uses
/// max(|analytic|, |numeric|, denom_floor) as denominator, so elements whose
/// gradient sits below the floor are held to the combined absolute tolerance
/// tol*denom_floor (f32 forward noise makes a purely relative check
/// meaningless there). Contract error if f is not scalar-valued.
GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f,
                           const Tensor& x, double step = 1e-3,
                           double tol = 1e-3, double denom_floor = 0.1,
                           const std::string& label = "");

}  // namespace gemdepth
