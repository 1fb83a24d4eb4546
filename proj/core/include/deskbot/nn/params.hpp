#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "deskbot/nn/tensor.hpp"

namespace deskbot::nn {

// Named tensors, iterated in lexicographic name order.
class TensorMap {
 public:
  using Storage = std::map<std::string, Tensor, std::less<>>;

  void insert(const std::string& name, Tensor t);
  bool contains(std::string_view name) const { return tensors_.find(name) != tensors_.end(); }
  const Tensor& at(std::string_view name) const;
  Tensor& at(std::string_view name);
  std::size_t size() const { return tensors_.size(); }
  std::size_t element_count() const;

  auto begin() { return tensors_.begin(); }
  auto end() { return tensors_.end(); }
  auto begin() const { return tensors_.begin(); }
  auto end() const { return tensors_.end(); }

  bool operator==(const TensorMap&) const = default;

 private:
  Storage tensors_;
};

class ParamStore : public TensorMap {};

class Gradients : public TensorMap {
 public:
  static Gradients zeros_like(const TensorMap& params);
  // this += scale * other; key/shape parity required.
  void accumulate(const Gradients& other, double scale = 1.0);
  bool all_finite() const;
};

// Throws ContractViolation unless both maps hold the same names with equal shapes.
void check_parity(const TensorMap& a, const TensorMap& b);

// Weight initializers. Same generator state gives identical tensors.
Tensor xavier_uniform(std::vector<int> shape, int fan_in, int fan_out, std::mt19937_64& rng,
                      double gain = 1.0);
Tensor normal(std::vector<int> shape, double stddev, std::mt19937_64& rng);

}  // namespace deskbot::nn
