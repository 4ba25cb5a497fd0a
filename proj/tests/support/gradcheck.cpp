#include "gradcheck.hpp"

#include <cmath>
#include <sstream>

#include "tst/ops.hpp"

namespace tst::testing {

Tensor random_tensor(const Shape& shape, Rng& rng, double lo, double hi, bool requires_grad) {
  Tensor t(shape, requires_grad);
  for (auto& v : t.values()) v = static_cast<Real>(uniform(rng, lo, hi));
  return t;
}

Tensor weighted_sum(const Tensor& out, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  Tensor weights = random_tensor(out.shape(), rng, 0.5, 1.5);
  return sum(mul(out, weights));
}

GradCheckResult check_gradients(const std::function<Tensor()>& loss, const std::vector<Tensor>& wrt,
                                const std::vector<std::string>& names, double h) {
  std::vector<Tensor> params = wrt;
  for (auto& p : params) {
    p.set_requires_grad(true);
    p.zero_grad();
  }
  {
    Tape tape;
    TapeScope scope(tape);
    backward(loss());
  }
  GradCheckResult result;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k];
    std::vector<Real> analytic(p.grad().begin(), p.grad().end());
    if (analytic.empty()) analytic.assign(p.numel(), Real(0));
    auto values = p.values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const Real saved = values[i];
      double plus, minus;
      {
        NoGradScope off;
        values[i] = saved + static_cast<Real>(h);
        plus = static_cast<double>(loss().item());
        values[i] = saved - static_cast<Real>(h);
        minus = static_cast<double>(loss().item());
        values[i] = saved;
      }
      const double numeric = (plus - minus) / (2.0 * h);
      const double a = static_cast<double>(analytic[i]);
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-4});
      const double rel = std::abs(a - numeric) / denom;
      ++result.checked;
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        std::ostringstream os;
        os << (k < names.size() ? names[k] : "tensor" + std::to_string(k)) << "[" << i << "] analytic=" << a
           << " numeric=" << numeric;
        result.worst = os.str();
      }
    }
  }
  return result;
}

}  // namespace tst::testing
