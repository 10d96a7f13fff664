#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace nres {

std::string shape_to_string(const std::vector<int64_t>& shape);

// Dense row-major f32 tensor. No views or strides: every tensor owns its
// buffer. Reductions that feed losses or norms accumulate in f64 at the call
// site; storage stays f32.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int64_t> shape);
  Tensor(std::vector<int64_t> shape, std::vector<float> data);

  static Tensor zeros(std::vector<int64_t> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<int64_t> shape, float value);
  static Tensor scalar(float value) { return Tensor({1}, {value}); }

  const std::vector<int64_t>& shape() const { return shape_; }
  size_t ndim() const { return shape_.size(); }
  int64_t dim(size_t i) const;
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  // Matrix view of the trailing axis: rows() * cols() == numel().
  int64_t cols() const { return shape_.empty() ? 0 : shape_.back(); }
  int64_t rows() const { return shape_.empty() ? 0 : numel() / cols(); }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  std::vector<float>& vec() { return data_; }
  const std::vector<float>& vec() const { return data_; }

  float& at(int64_t i);
  float at(int64_t i) const;
  float& at(int64_t r, int64_t c);
  float at(int64_t r, int64_t c) const;

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;
  std::string shape_str() const { return shape_to_string(shape_); }

  void fill(float value);

 private:
  std::vector<int64_t> shape_;
  std::vector<float> data_;
};

}  // namespace nres
