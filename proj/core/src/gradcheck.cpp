#include "sne/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace sne {

real relative_error(real analytic, real numeric) {
  const real denom = std::max({std::abs(analytic), std::abs(numeric), real(1e-3)});
  return std::abs(analytic - numeric) / denom;
}

real grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& point, real step) {
  Tensor x = point.clone();
  x.set_requires_grad(true);
  return grad_check_leaves([&] { return f(x); }, {x}, step).max_rel_error;
}

GradCheckResult grad_check_leaves(const std::function<Tensor()>& f, std::vector<Tensor> leaves,
                                  real step) {
  std::vector<std::vector<real>> analytic;
  {
    TapeScope scope;
    for (auto& t : leaves) t.set_requires_grad(true).zero_grad();
    Tensor loss = f();
    scope.tape().backward(loss);
    for (auto& t : leaves) {
      auto g = t.grad();
      analytic.emplace_back(g.begin(), g.end());
      t.zero_grad();
    }
  }
  GradCheckResult worst;
  NoGradGuard no_grad;
  for (std::size_t ti = 0; ti < leaves.size(); ++ti) {
    auto values = leaves[ti].data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const real orig = values[i];
      values[i] = orig + step;
      const real fp = f().item();
      values[i] = orig - step;
      const real fm = f().item();
      values[i] = orig;
      const real numeric = (fp - fm) / (2 * step);
      const real err = relative_error(analytic[ti][i], numeric);
      if (err > worst.max_rel_error || (ti == 0 && i == 0)) {
        worst = {err, ti, i, analytic[ti][i], numeric};
      }
    }
  }
  return worst;
}

}  // namespace sne
