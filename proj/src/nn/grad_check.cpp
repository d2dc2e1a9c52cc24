#include "flowids/nn/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "flowids/errors.hpp"

namespace flowids::nn {

namespace {

std::vector<std::int64_t> full_signature(const Sequential& net,
                                         const Loss& loss) {
  std::vector<std::int64_t> sig = net.kink_signature();
  loss.append_kink_signature(sig);
  return sig;
}

}  // namespace

GradCheckReport grad_check(Sequential& net, Loss& loss, Tensor& input,
                           const Tensor& target, double eps) {
  if (!(eps > 0.0) || eps > 1e-2) {
    throw ConfigError("grad_check eps must be in (0, 1e-2], got " +
                      std::to_string(eps));
  }

  net.zero_grad();
  const Tensor pred = net.forward(input);
  loss.forward(pred, target);
  const Tensor dinput = net.backward(loss.backward());

  std::vector<ParamRef> params = net.params();
  // Analytic gradients, copied before the perturbation loop mutates state.
  std::vector<Tensor> analytic;
  analytic.reserve(params.size() + 1);
  for (const ParamRef& p : params) analytic.push_back(*p.grad);
  analytic.push_back(dinput);

  std::vector<Tensor*> checked;
  for (const ParamRef& p : params) checked.push_back(p.value);
  checked.push_back(&input);

  GradCheckReport report;
  for (std::size_t ti = 0; ti < checked.size(); ++ti) {
    Tensor& tensor = *checked[ti];
    const Tensor& grad = analytic[ti];
    for (std::size_t i = 0; i < tensor.numel(); ++i) {
      const double orig = tensor[i];
      tensor[i] = orig + eps;
      const double lp = loss.forward(net.forward(input), target);
      const auto sig_p = full_signature(net, loss);
      tensor[i] = orig - eps;
      const double lm = loss.forward(net.forward(input), target);
      const auto sig_m = full_signature(net, loss);
      tensor[i] = orig;
      if (sig_p != sig_m) {
        ++report.skipped;
        continue;
      }
      const double numeric = (lp - lm) / (2.0 * eps);
      const double a = grad[i];
      const double rel =
          std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
      report.max_rel_error = std::max(report.max_rel_error, rel);
      ++report.evaluated;
    }
  }
  return report;
}

}  // namespace flowids::nn
