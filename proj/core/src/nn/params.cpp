#include "deskbot/nn/params.hpp"

#include <cmath>

#include <fmt/format.h>

#include "deskbot/error.hpp"

namespace deskbot::nn {

void TensorMap::insert(const std::string& name, Tensor t) {
  if (!tensors_.emplace(name, std::move(t)).second) {
    throw ContractViolation(fmt::format("duplicate tensor name '{}'", name));
  }
}

const Tensor& TensorMap::at(std::string_view name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw ContractViolation(fmt::format("no tensor named '{}'", name));
  return it->second;
}

Tensor& TensorMap::at(std::string_view name) {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw ContractViolation(fmt::format("no tensor named '{}'", name));
  return it->second;
}

std::size_t TensorMap::element_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : tensors_) n += t.size();
  return n;
}

Gradients Gradients::zeros_like(const TensorMap& params) {
  Gradients g;
  for (const auto& [name, t] : params) g.insert(name, Tensor(t.shape()));
  return g;
}

void Gradients::accumulate(const Gradients& other, double scale) {
  check_parity(*this, other);
  auto it = other.begin();
  for (auto& [name, t] : *this) {
    auto src = it->second.data();
    auto dst = t.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += scale * src[i];
    ++it;
  }
}

bool Gradients::all_finite() const {
  for (const auto& [_, t] : *this) {
    if (!t.all_finite()) return false;
  }
  return true;
}

void check_parity(const TensorMap& a, const TensorMap& b) {
  if (a.size() != b.size()) {
    throw ContractViolation(fmt::format("tensor maps differ in size: {} vs {}", a.size(), b.size()));
  }
  auto ib = b.begin();
  for (const auto& [name, t] : a) {
    if (ib->first != name) {
      throw ContractViolation(fmt::format("tensor maps differ: '{}' vs '{}'", name, ib->first));
    }
    if (ib->second.shape() != t.shape()) {
      throw ContractViolation(fmt::format("tensor '{}' shape {} vs {}", name, t.shape_str(),
                                          ib->second.shape_str()));
    }
    ++ib;
  }
}

Tensor xavier_uniform(std::vector<int> shape, int fan_in, int fan_out, std::mt19937_64& rng,
                      double gain) {
  const double a = gain * std::sqrt(6.0 / (fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-a, a);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = dist(rng);
  return t;
}

Tensor normal(std::vector<int> shape, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = dist(rng);
  return t;
}

}  // namespace deskbot::nn
