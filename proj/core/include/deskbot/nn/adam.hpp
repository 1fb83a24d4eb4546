#pragma once

#include <cstdint>

#include "deskbot/nn/params.hpp"

namespace deskbot::nn {

struct AdamConfig {
  double lr = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction. Moments are created lazily to match the first
// parameter store it sees.
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  // Applies one update. Non-finite gradients leave `params` untouched and throw
  // NumericalError naming the first offending tensor.
  void step(ParamStore& params, const Gradients& grads);

  const AdamConfig& config() const { return config_; }
  std::uint64_t steps() const { return t_; }
  const TensorMap& first_moment() const { return m_; }
  const TensorMap& second_moment() const { return v_; }

  // Restores persisted state; moments must match `params` in names and shapes.
  void restore(std::uint64_t t, TensorMap m, TensorMap v);

 private:
  AdamConfig config_;
  std::uint64_t t_ = 0;
  TensorMap m_;
  TensorMap v_;
};

}  // namespace deskbot::nn
