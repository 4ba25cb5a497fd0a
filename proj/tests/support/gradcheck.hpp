#pragma once

#include <functional>
#include <string>
#include <vector>

#include "tst/random.hpp"
#include "tst/tensor.hpp"

namespace tst::testing {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;  // "<tensor>[<index>] analytic=... numeric=..."
  std::size_t checked = 0;
};

/// Compares tape gradients of `loss` with central differences for every
/// element of every tensor in `wrt`. `loss` must rebuild the graph on each
/// call and return a scalar.
GradCheckResult check_gradients(const std::function<Tensor()>& loss, const std::vector<Tensor>& wrt,
                                const std::vector<std::string>& names = {}, double h = 1e-5);

/// sum(out * R) with a fixed random R, so that no gradient vanishes by symmetry.
Tensor weighted_sum(const Tensor& out, std::uint64_t seed);

/// Tensor of the given shape with entries uniform in [lo, hi).
Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0, bool requires_grad = false);

}  // namespace tst::testing
