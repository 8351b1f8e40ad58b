#include "oltr/gradcheck.hpp"

#include <cmath>
#include <cstdlib>

namespace oltr {

template <std::floating_point T>
GradCheckResult<T> grad_check(const std::function<Tensor<T>()>& fn,
                              const std::vector<Tensor<T>>& params, T fd_step) {
  for (const auto& p : params) {
    if (!p.requires_grad()) throw TensorError("grad_check: all params must require grad");
    p.zero_grad();
  }

  Tensor<T> loss = fn();
  if (loss.numel() != 1) throw TensorError("grad_check: fn must return a scalar");
  backward(loss);

  std::vector<std::vector<T>> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params) analytic.push_back(p.grad());

  GradCheckResult<T> result;
  NoGradGuard no_grad;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& values = params[pi].values();
    for (std::size_t ei = 0; ei < values.size(); ++ei) {
      const T saved = values[ei];
      values[ei] = saved + fd_step;
      const double plus = static_cast<double>(fn().item());
      values[ei] = saved - fd_step;
      const double minus = static_cast<double>(fn().item());
      values[ei] = saved;
      const double fd = (plus - minus) / (2.0 * static_cast<double>(fd_step));
      const double an = static_cast<double>(analytic[pi][ei]);
      const double rel = std::abs(an - fd) / std::max(1.0, std::abs(an));
      if (rel > result.max_rel_err) {
        result.max_rel_err = rel;
        result.worst_param = pi;
        result.worst_entry = static_cast<std::int64_t>(ei);
        result.analytic = an;
        result.numeric = fd;
      }
    }
  }
  return result;
}

template GradCheckResult<float> grad_check<float>(const std::function<Tensor<float>()>&,
                                                  const std::vector<Tensor<float>>&, float);
template GradCheckResult<double> grad_check<double>(const std::function<Tensor<double>()>&,
                                                    const std::vector<Tensor<double>>&, double);

}  // namespace oltr
