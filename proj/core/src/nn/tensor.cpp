#include "deskbot/nn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "deskbot/error.hpp"

namespace deskbot::nn {

std::size_t element_count(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw ContractViolation(fmt::format("negative dimension in {}", shape_str(shape)));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_str(const std::vector<int>& shape) { return fmt::format("[{}]", fmt::join(shape, ", ")); }

Tensor::Tensor(std::vector<int> shape, double fill)
    : shape_(std::move(shape)), data_(element_count(shape_), fill) {}

Tensor::Tensor(std::vector<int> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(data.begin(), data.end()) {
  if (data_.size() != element_count(shape_)) {
    throw ContractViolation(fmt::format("tensor data length {} does not match shape {}",
                                        data_.size(), nn::shape_str(shape_)));
  }
}

double Tensor::item() const {
  if (data_.size() != 1) throw ContractViolation(fmt::format("item() on tensor of shape {}", shape_str()));
  return data_[0];
}

Tensor Tensor::reshaped(std::vector<int> shape) const {
  if (element_count(shape) != data_.size()) {
    throw ContractViolation(fmt::format("cannot reshape {} to {}", shape_str(), nn::shape_str(shape)));
  }
  return Tensor(Adopt{}, std::move(shape), data_);
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

std::string Tensor::shape_str() const { return nn::shape_str(shape_); }

}  // namespace deskbot::nn
