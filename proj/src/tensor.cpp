#include "advrl/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "advrl/errors.hpp"

namespace advrl {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

void check_shape(const Shape& shape) {
  if (shape.empty()) throw DimensionError("tensor shape must have at least one dimension");
  for (auto d : shape) {
    if (d == 0) throw DimensionError("tensor shape " + shape_string(shape) + " has a zero dimension");
  }
}

}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  check_shape(shape_);
  data_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  check_shape(shape_);
  if (data_.size() != shape_size(shape_)) {
    throw DimensionError("tensor shape " + shape_string(shape_) + " needs " +
                         std::to_string(shape_size(shape_)) + " values, got " +
                         std::to_string(data_.size()));
  }
}

Tensor Tensor::vector(std::initializer_list<double> values) {
  return Tensor({values.size()}, std::vector<double>(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  if (rows.size() == 0) throw DimensionError("matrix needs at least one row");
  const std::size_t cols = rows.begin()->size();
  std::vector<double> data;
  data.reserve(rows.size() * cols);
  for (const auto& row : rows) {
    if (row.size() != cols) throw DimensionError("ragged matrix rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({rows.size(), cols}, std::move(data));
}

Tensor Tensor::scalar(double value) { return Tensor({1}, std::vector<double>{value}); }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_string(shape_));
  }
  return shape_[axis];
}

double Tensor::item() const {
  if (data_.size() != 1) throw ContractError("item() on tensor of shape " + shape_string(shape_));
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != data_.size()) {
    throw DimensionError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul shape mismatch: " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  Tensor out({a.dim(0), b.dim(1)});
  kernels::matmul(a.data(), b.data(), out.data(), a.dim(0), a.dim(1), b.dim(1));
  return out;
}

Tensor conv2d(const Tensor& input, const Tensor& filters, std::size_t stride) {
  const auto g = kernels::conv_geometry(input.shape(), filters.shape(), stride);
  Shape out_shape = input.rank() == 3 ? Shape{g.filters, g.out_h, g.out_w}
                                      : Shape{g.batch, g.filters, g.out_h, g.out_w};
  Tensor out(std::move(out_shape));
  kernels::conv2d(g, input.data(), filters.data(), out.data());
  return out;
}

Tensor relu(const Tensor& x) {
  Tensor out = x;
  for (auto& v : out.data()) v = v > 0.0 ? v : 0.0;
  return out;
}

namespace kernels {

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> out,
            std::size_t m, std::size_t k, std::size_t n) {
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      const double* brow = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
}

void matmul_grad_a(std::span<const double> grad, std::span<const double> b, std::span<double> out,
                   std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* grow = grad.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double* brow = b.data() + p * n;
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
      out[i * k + p] += acc;
    }
  }
}

void matmul_grad_b(std::span<const double> a, std::span<const double> grad, std::span<double> out,
                   std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* grow = grad.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      double* orow = out.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * grow[j];
    }
  }
}

ConvGeometry conv_geometry(const Shape& input, const Shape& filters, std::size_t stride) {
  if (stride == 0) throw ContractError("conv2d stride must be positive");
  if ((input.size() != 3 && input.size() != 4) || filters.size() != 4) {
    throw DimensionError("conv2d expects c×h×w (or n×c×h×w) input and f×c×kh×kw filters, got " +
                         shape_string(input) + " and " + shape_string(filters));
  }
  const std::size_t off = input.size() == 4 ? 1 : 0;
  ConvGeometry g{};
  g.batch = off ? input[0] : 1;
  g.channels = input[off];
  g.height = input[off + 1];
  g.width = input[off + 2];
  g.filters = filters[0];
  g.kernel_h = filters[2];
  g.kernel_w = filters[3];
  g.stride = stride;
  if (filters[1] != g.channels) {
    throw DimensionError("conv2d channel mismatch: input " + shape_string(input) + ", filters " +
                         shape_string(filters));
  }
  if (g.kernel_h > g.height || g.kernel_w > g.width) {
    throw DimensionError("conv2d kernel larger than input: input " + shape_string(input) +
                         ", filters " + shape_string(filters));
  }
  g.out_h = (g.height - g.kernel_h) / stride + 1;
  g.out_w = (g.width - g.kernel_w) / stride + 1;
  return g;
}

namespace {

// Unrolls the receptive fields of one sample into a (c·kh·kw) × (oh·ow)
// matrix so the conv becomes a small matrix product.
void im2col(const ConvGeometry& g, const double* in, double* col) {
  const std::size_t out_plane = g.out_h * g.out_w;
  std::size_t r = 0;
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel_w; ++kx, ++r) {
        double* row = col + r * out_plane;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const double* src = in + (c * g.height + oy * g.stride + ky) * g.width + kx;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) row[oy * g.out_w + ox] = src[ox * g.stride];
        }
      }
    }
  }
}

void col2im_add(const ConvGeometry& g, const double* col, double* in) {
  const std::size_t out_plane = g.out_h * g.out_w;
  std::size_t r = 0;
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel_w; ++kx, ++r) {
        const double* row = col + r * out_plane;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          double* dst = in + (c * g.height + oy * g.stride + ky) * g.width + kx;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) dst[ox * g.stride] += row[oy * g.out_w + ox];
        }
      }
    }
  }
}

std::size_t col_rows(const ConvGeometry& g) { return g.channels * g.kernel_h * g.kernel_w; }

}  // namespace

void conv2d(const ConvGeometry& g, std::span<const double> input, std::span<const double> filters,
            std::span<double> out) {
  const std::size_t in_size = g.channels * g.height * g.width;
  const std::size_t out_plane = g.out_h * g.out_w;
  const std::size_t rows = col_rows(g);
  std::vector<double> col(rows * out_plane);
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t n = 0; n < g.batch; ++n) {
    im2col(g, input.data() + n * in_size, col.data());
    for (std::size_t f = 0; f < g.filters; ++f) {
      double* o = out.data() + (n * g.filters + f) * out_plane;
      const double* w = filters.data() + f * rows;
      for (std::size_t r = 0; r < rows; ++r) {
        const double wv = w[r];
        const double* crow = col.data() + r * out_plane;
        for (std::size_t p = 0; p < out_plane; ++p) o[p] += wv * crow[p];
      }
    }
  }
}

void conv2d_grad_input(const ConvGeometry& g, std::span<const double> grad,
                       std::span<const double> filters, std::span<double> out) {
  const std::size_t in_size = g.channels * g.height * g.width;
  const std::size_t out_plane = g.out_h * g.out_w;
  const std::size_t rows = col_rows(g);
  std::vector<double> dcol(rows * out_plane);
  for (std::size_t n = 0; n < g.batch; ++n) {
    std::fill(dcol.begin(), dcol.end(), 0.0);
    for (std::size_t f = 0; f < g.filters; ++f) {
      const double* go = grad.data() + (n * g.filters + f) * out_plane;
      const double* w = filters.data() + f * rows;
      for (std::size_t r = 0; r < rows; ++r) {
        const double wv = w[r];
        double* drow = dcol.data() + r * out_plane;
        for (std::size_t p = 0; p < out_plane; ++p) drow[p] += wv * go[p];
      }
    }
    col2im_add(g, dcol.data(), out.data() + n * in_size);
  }
}

void conv2d_grad_filters(const ConvGeometry& g, std::span<const double> grad,
                         std::span<const double> input, std::span<double> out) {
  const std::size_t in_size = g.channels * g.height * g.width;
  const std::size_t out_plane = g.out_h * g.out_w;
  const std::size_t rows = col_rows(g);
  std::vector<double> col(rows * out_plane);
  for (std::size_t n = 0; n < g.batch; ++n) {
    im2col(g, input.data() + n * in_size, col.data());
    for (std::size_t f = 0; f < g.filters; ++f) {
      const double* go = grad.data() + (n * g.filters + f) * out_plane;
      double* dw = out.data() + f * rows;
      for (std::size_t r = 0; r < rows; ++r) {
        const double* crow = col.data() + r * out_plane;
        double acc = 0.0;
        for (std::size_t p = 0; p < out_plane; ++p) acc += go[p] * crow[p];
        dw[r] += acc;
      }
    }
  }
}

}  // namespace kernels

}  // namespace advrl
