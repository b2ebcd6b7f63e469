#include "reconformer/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace reconformer {

double finite_diff_gradcheck(const std::function<Tensor64(const Tensor64&)>& f,
                             const Tensor64& input, double h) {
  const char* where = "diff-engine::finite_diff_gradcheck";
  Tensor64 x = Tensor64::from_data(input.shape(), input.value(), /*requires_grad=*/true);
  Tensor64 y = f(x);
  require(y.size() == 1, ErrorKind::Usage, where, "callable must produce a scalar");
  y.backward();
  std::vector<double> analytic = x.grad();

  double worst = 0.0;
  std::vector<double> probe = input.value();
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double saved = probe[i];
    probe[i] = saved + h;
    double fp = f(Tensor64::from_data(input.shape(), probe)).item();
    probe[i] = saved - h;
    double fm = f(Tensor64::from_data(input.shape(), probe)).item();
    probe[i] = saved;
    double fd = (fp - fm) / (2.0 * h);
    double rel = std::fabs(fd - analytic[i]) / std::max(1e-8, std::fabs(fd) + std::fabs(analytic[i]));
    worst = std::max(worst, rel);
  }
  return worst;
}

}  // namespace reconformer
