#include "nres/tensor.hpp"

#include <cmath>

#include "nres/errors.hpp"

namespace nres {

namespace {

int64_t checked_numel(const std::vector<int64_t>& shape) {
  if (shape.empty()) {
    throw DimensionError("tensor shape must have at least one axis");
  }
  int64_t n = 1;
  for (int64_t d : shape) {
    if (d <= 0) {
      throw DimensionError("tensor axis must be positive in shape " + shape_to_string(shape));
    }
    n *= d;
  }
  return n;
}

}  // namespace

std::string shape_to_string(const std::vector<int64_t>& shape) {
  std::string out = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(shape[i]);
  }
  out += "]";
  return out;
}

Tensor::Tensor(std::vector<int64_t> shape) : shape_(std::move(shape)) {
  data_.assign(static_cast<size_t>(checked_numel(shape_)), 0.0f);
}

Tensor::Tensor(std::vector<int64_t> shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  int64_t n = checked_numel(shape_);
  if (n != static_cast<int64_t>(data_.size())) {
    throw DimensionError("tensor data size " + std::to_string(data_.size()) +
                         " does not match shape " + shape_to_string(shape_));
  }
}

Tensor Tensor::full(std::vector<int64_t> shape, float value) {
  Tensor t(std::move(shape));
  t.fill(value);
  return t;
}

int64_t Tensor::dim(size_t i) const {
  if (i >= shape_.size()) {
    throw IndexError("axis " + std::to_string(i) + " out of range for shape " + shape_str());
  }
  return shape_[i];
}

float& Tensor::at(int64_t i) {
  if (i < 0 || i >= numel()) {
    throw IndexError("index " + std::to_string(i) + " out of range for " +
                     std::to_string(numel()) + " elements");
  }
  return data_[static_cast<size_t>(i)];
}

float Tensor::at(int64_t i) const { return const_cast<Tensor*>(this)->at(i); }

float& Tensor::at(int64_t r, int64_t c) {
  if (r < 0 || r >= rows() || c < 0 || c >= cols()) {
    throw IndexError("index (" + std::to_string(r) + ", " + std::to_string(c) +
                     ") out of range for shape " + shape_str());
  }
  return data_[static_cast<size_t>(r * cols() + c)];
}

float Tensor::at(int64_t r, int64_t c) const { return const_cast<Tensor*>(this)->at(r, c); }

bool Tensor::all_finite() const {
  for (float v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void Tensor::fill(float value) { data_.assign(data_.size(), value); }

}  // namespace nres
