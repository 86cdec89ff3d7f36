#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace advrl {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major array of doubles tagged with its shape.
///
/// A default-constructed tensor is empty (rank 0, no elements) and is used as
/// a "no value" marker by the gradient machinery. Every other tensor holds
/// exactly `shape_size(shape())` elements.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  /// 1-D tensor from a list of values.
  static Tensor vector(std::initializer_list<double> values);
  /// 2-D tensor from nested rows; all rows must share a length.
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor scalar(double value);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<const double> data() const noexcept { return data_; }
  std::span<double> data() noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  double at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
  double& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }

  /// Scalar value of a one-element tensor.
  double item() const;

  /// Same data under a new shape with the same element count.
  Tensor reshaped(Shape shape) const;

  bool all_finite() const noexcept;

  friend bool operator==(const Tensor& a, const Tensor& b) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// Standard matrix product of an m×k and a k×n matrix.
Tensor matmul(const Tensor& a, const Tensor& b);

/// Valid (unpadded) cross-correlation.
///
/// `input` is either c×h×w or batched n×c×h×w; `filters` is f×c×kh×kw. The
/// output is f×h'×w' (or n×f×h'×w') with h' = (h − kh)/stride + 1.
Tensor conv2d(const Tensor& input, const Tensor& filters, std::size_t stride);

/// Elementwise max(0, x).
Tensor relu(const Tensor& x);

namespace kernels {

// Raw building blocks shared by the eager ops above and the tape's backward
// pass. All operate on contiguous row-major buffers.

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> out,
            std::size_t m, std::size_t k, std::size_t n);
// out (m×k) += grad (m×n) · bᵀ (n×k)
void matmul_grad_a(std::span<const double> grad, std::span<const double> b, std::span<double> out,
                   std::size_t m, std::size_t k, std::size_t n);
// out (k×n) += aᵀ (k×m) · grad (m×n)
void matmul_grad_b(std::span<const double> a, std::span<const double> grad, std::span<double> out,
                   std::size_t m, std::size_t k, std::size_t n);

struct ConvGeometry {
  std::size_t batch, channels, height, width;
  std::size_t filters, kernel_h, kernel_w, stride;
  std::size_t out_h, out_w;
};

ConvGeometry conv_geometry(const Shape& input, const Shape& filters, std::size_t stride);
void conv2d(const ConvGeometry& g, std::span<const double> input, std::span<const double> filters,
            std::span<double> out);
void conv2d_grad_input(const ConvGeometry& g, std::span<const double> grad,
                       std::span<const double> filters, std::span<double> out);
void conv2d_grad_filters(const ConvGeometry& g, std::span<const double> grad,
                         std::span<const double> input, std::span<double> out);

}  // namespace kernels

}  // namespace advrl
