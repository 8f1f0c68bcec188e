#include "fpn/grad_check.hpp"

#include <cmath>

namespace fpn {

template <typename Dtype>
Dtype grad_check(const std::function<Tensor<Dtype>(const Tensor<Dtype>&)>& f,
                 Tensor<Dtype> x, Dtype eps) {
  FPN_CHECK(eps > 0 && eps <= Dtype(1e-2), "eps must lie in (0, 1e-2]");
  FPN_CHECK(x.requires_grad(), "grad_check input must require grad");
  x.zero_grad();
  auto loss = f(x);
  FPN_CHECK(loss.numel() == 1, "grad_check needs a scalar-valued computation");
  loss.backward();
  auto analytic = x.grad();

  Dtype max_err = 0;
  auto data = x.data();
  for (int64_t i = 0; i < x.numel(); ++i) {
    const Dtype saved = data[i];
    data[i] = saved + eps;
    Dtype fp = f(x).item();
    data[i] = saved - eps;
    Dtype fm = f(x).item();
    data[i] = saved;
    Dtype numeric = (fp - fm) / (2 * eps);
    Dtype denom = std::max({std::abs(analytic[i]), std::abs(numeric), Dtype(1e-8)});
    max_err = std::max(max_err, std::abs(analytic[i] - numeric) / denom);
  }
  return max_err;
}

template float grad_check<float>(
    const std::function<Tensor<float>(const Tensor<float>&)>&, Tensor<float>, float);
template double grad_check<double>(
    const std::function<Tensor<double>(const Tensor<double>&)>&, Tensor<double>,
    double);

}  // namespace fpn
