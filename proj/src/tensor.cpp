#include "cfa/tensor.hpp"

#include <cmath>
#include <sstream>

#include "cfa/errors.hpp"

namespace cfa {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

static void check_shape(const Shape& shape) {
  for (auto d : shape)
    if (d == 0) throw DimensionError("tensor dimensions must be positive: " + shape_string(shape));
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  check_shape(shape_);
  if (!std::isfinite(fill)) throw DomainError("tensor fill value is not finite");
  data_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  check_shape(shape_);
  if (shape_size(shape_) != data_.size())
    throw DimensionError("data length " + std::to_string(data_.size()) + " does not match shape " +
                         shape_string(shape_));
  if (!all_finite()) throw DomainError("tensor data contains NaN or Inf");
}

Tensor Tensor::adopt(Shape shape, std::vector<double> data) {
  check_shape(shape);
  if (shape_size(shape) != data.size()) throw DimensionError("data length does not match shape " + shape_string(shape));
  Tensor out;
  out.shape_ = std::move(shape);
  out.data_ = std::move(data);
  return out;
}

std::size_t Tensor::offset(std::initializer_list<std::size_t> index) const {
  if (index.size() != shape_.size()) throw DimensionError("index rank does not match tensor rank");
  std::size_t off = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= shape_[axis]) throw DimensionError("index out of range");
    off = off * shape_[axis] + i;
    ++axis;
  }
  return off;
}

double Tensor::at(std::initializer_list<std::size_t> index) const { return data_[offset(index)]; }
double& Tensor::at(std::initializer_list<std::size_t> index) { return data_[offset(index)]; }

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != data_.size())
    throw DimensionError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  Tensor out;
  out.shape_ = std::move(shape);
  out.data_ = data_;
  return out;
}

bool Tensor::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace cfa
