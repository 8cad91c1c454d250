#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace cfa {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major array of doubles. Values are validated as finite when a
/// tensor is built from caller-supplied data.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  /// Wraps data produced by an internal op without the finiteness scan.
  /// Shape/length agreement is still checked.
  static Tensor adopt(Shape shape, std::vector<double> data);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }
  const std::vector<double>& vector() const { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  // Multi-index access, row-major.
  double at(std::initializer_list<std::size_t> index) const;
  double& at(std::initializer_list<std::size_t> index);

  Tensor reshaped(Shape shape) const;
  bool all_finite() const;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  std::size_t offset(std::initializer_list<std::size_t> index) const;

  Shape shape_;
  std::vector<double> data_;
};

}  // namespace cfa
