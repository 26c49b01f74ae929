#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "sne/tensor.hpp"

namespace sne {

struct GradCheckResult {
  real max_rel_error = 0;
  std::size_t tensor_index = 0;
  std::size_t element_index = 0;
  real analytic = 0;
  real numeric = 0;
};

// Relative error used by every check: |a - n| / max(|a|, |n|, 1e-3). The floor
// keeps entries with vanishing gradients from dominating through round-off.
real relative_error(real analytic, real numeric);

// Compares the autodiff gradient of a scalar function at `point` with central
// differences (f(x+h) - f(x-h)) / 2h, element by element.
real grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& point,
                real step = real(1e-5));

// Same check with respect to a set of leaf tensors read by `f` (e.g. model
// parameters). Leaves are marked as requiring gradients; values are restored
// afterwards.
GradCheckResult grad_check_leaves(const std::function<Tensor()>& f, std::vector<Tensor> leaves,
                                  real step = real(1e-5));

}  // namespace sne
