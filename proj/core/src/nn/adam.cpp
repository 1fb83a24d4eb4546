#include "deskbot/nn/adam.hpp"

#include <cmath>

#include <fmt/format.h>

#include "deskbot/error.hpp"

namespace deskbot::nn {

void Adam::step(ParamStore& params, const Gradients& grads) {
  check_parity(params, grads);
  for (const auto& [name, g] : grads) {
    if (!g.all_finite()) {
      throw NumericalError(fmt::format("non-finite gradient in '{}' at Adam step {}", name, t_ + 1));
    }
  }
  if (m_.size() == 0) {
    for (const auto& [name, p] : params) {
      m_.insert(name, Tensor(p.shape()));
      v_.insert(name, Tensor(p.shape()));
    }
  }
  check_parity(params, m_);
  ++t_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  auto gi = grads.begin();
  auto mi = m_.begin();
  auto vi = v_.begin();
  for (auto& [name, p] : params) {
    auto pd = p.data();
    auto gd = gi->second.data();
    auto md = mi->second.data();
    auto vd = vi->second.data();
    for (std::size_t i = 0; i < pd.size(); ++i) {
      md[i] = config_.beta1 * md[i] + (1.0 - config_.beta1) * gd[i];
      vd[i] = config_.beta2 * vd[i] + (1.0 - config_.beta2) * gd[i] * gd[i];
      const double mhat = md[i] / c1;
      const double vhat = vd[i] / c2;
      pd[i] -= config_.lr * mhat / (std::sqrt(vhat) + config_.eps);
    }
    ++gi;
    ++mi;
    ++vi;
  }
}

void Adam::restore(std::uint64_t t, TensorMap m, TensorMap v) {
  check_parity(m, v);
  t_ = t;
  m_ = std::move(m);
  v_ = std::move(v);
}

}  // namespace deskbot::nn
