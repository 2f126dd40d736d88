#include "gemdepth/gradcheck.hpp"

#include <cmath>
#include <stdexcept>

namespace gemdepth {

GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f,
                           const Tensor& x, double step, double tol,
                           double denom_floor, const std::string& label) {
  if (step <= 0.0) throw std::invalid_argument("grad_check: step must be > 0");

  // Analytic pass: fresh tape, fresh leaf sharing x's values.
  Tensor leaf = x.detach_copy();
  leaf.set_requires_grad(true);
  std::vector<float> analytic;
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor out = f(leaf);
    if (out.numel() != 1)
      throw std::invalid_argument(
          "grad_check: function must be scalar-valued, got shape " +
          shape_str(out.shape()));
    tape.backward(out);
    auto g = leaf.grad_view();
    analytic.assign(g.begin(), g.end());
    if (analytic.empty()) analytic.assign(static_cast<size_t>(x.numel()), 0.0f);
  }

  // Numeric pass: no tape, perturb one element at a time.
  Tensor probe = x.detach_copy();
  auto pd = probe.mutable_data();
  GradCheckReport rep;
  rep.tol = tol;
  rep.label = label;
  const float h = static_cast<float>(step);
  for (int64_t i = 0; i < probe.numel(); ++i) {
    const float saved = pd[static_cast<size_t>(i)];
    pd[static_cast<size_t>(i)] = saved + h;
    const double fp = static_cast<double>(f(probe).item());
    pd[static_cast<size_t>(i)] = saved - h;
    const double fm = static_cast<double>(f(probe).item());
    pd[static_cast<size_t>(i)] = saved;
    const double numeric = (fp - fm) / (2.0 * step);
    const double a = static_cast<double>(analytic[static_cast<size_t>(i)]);
    const double abs_err = std::fabs(a - numeric);
    const double denom =
        std::max({std::fabs(a), std::fabs(numeric), denom_floor});
    const double rel_err = abs_err / denom;
    if (rel_err > rep.max_rel_err) {
      rep.max_rel_err = rel_err;
      rep.worst_index = i;
    }
    rep.max_abs_err = std::max(rep.max_abs_err, abs_err);
  }
  rep.pass = rep.max_rel_err < tol;
  return rep;
}

}  // namespace gemdepth
