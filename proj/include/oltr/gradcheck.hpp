#pragma once

#include <functional>
#include <string>
#include <vector>

#include "oltr/tensor.hpp"

namespace oltr {

template <std::floating_point T>
struct GradCheckResult {
  double max_rel_err = 0.0;
  std::size_t worst_param = 0;
  std::int64_t worst_entry = -1;
  double analytic = 0.0;
  double numeric = 0.0;
};

// Compares the reverse-mode gradient of a scalar program against central
// finite differences. Relative error per entry is
// |analytic - fd| / max(1, |analytic|); the maximum over all entries of all
// params is returned. The program must be a pure function of `params`.
template <std::floating_point T>
GradCheckResult<T> grad_check(const std::function<Tensor<T>()>& fn,
                              const std::vector<Tensor<T>>& params,
                              T fd_step = T(1e-5));

}  // namespace oltr
