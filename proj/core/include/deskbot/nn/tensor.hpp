#pragma once

#include <cstddef>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace deskbot::nn {

// Cache-line aligned storage. Vectorized kernels peel unaligned leading elements, so
// without a fixed alignment the summation order (and the last bits of every result)
// would depend on where the allocator happened to place a buffer.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlignment{64};

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlignment)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, kAlignment); }

  template <class U>
  bool operator==(const AlignedAllocator<U>&) const { return true; }
};

// Dense row-major tensor of doubles.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape, double fill = 0.0);
  Tensor(std::vector<int> shape, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
  std::size_t size() const { return data_.size(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  double* ptr() { return data_.data(); }
  const double* ptr() const { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // Value of a single-element tensor.
  double item() const;

  // Same data, new shape with equal element count.
  Tensor reshaped(std::vector<int> shape) const;

  bool all_finite() const;
  std::string shape_str() const;

  bool operator==(const Tensor&) const = default;

 private:
  using Storage = std::vector<double, AlignedAllocator<double>>;
  struct Adopt {};
  Tensor(Adopt, std::vector<int> shape, Storage data) : shape_(std::move(shape)), data_(std::move(data)) {}

  std::vector<int> shape_;
  Storage data_;
};

std::size_t element_count(const std::vector<int>& shape);
std::string shape_str(const std::vector<int>& shape);

}  // namespace deskbot::nn
