#include "retina/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>

namespace retina {

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_numel(shape_) != data_.size()) {
    throw DimensionError("tensor shape " + shape_str(shape_) + " does not match " +
                         std::to_string(data_.size()) + " values");
  }
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values) {
  return Tensor({rows, cols}, std::vector<double>(values));
}

Tensor Tensor::row(std::span<const double> values) {
  return Tensor({1, values.size()}, std::vector<double>(values.begin(), values.end()));
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
  return t;
}

std::size_t Tensor::rows() const {
  if (shape_.size() != 2) throw DimensionError("expected a matrix, got " + shape_str(shape_));
  return shape_[0];
}

std::size_t Tensor::cols() const {
  if (shape_.size() != 2) throw DimensionError("expected a matrix, got " + shape_str(shape_));
  return shape_[1];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != data_.size()) {
    throw DimensionError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  }
  return Tensor(std::move(shape), data_);
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

ParamLeaf::ParamLeaf(std::string leaf_name, Tensor initial)
    : name(std::move(leaf_name)), value(std::move(initial)), grad(value.shape()) {}

void ParamLeaf::zero_grad() {
  if (grad.shape() != value.shape()) grad = Tensor(value.shape());
  grad.fill(0.0);
}

namespace {

void require_matrix(const Tensor& t, const char* what) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(what) + " must be a matrix, got " + shape_str(t.shape()));
  }
}

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

// Register-blocked tile: rows [0, R) x columns [0, 4V) of c += a · b over the
// k rows of this panel. Entries continue their running sum in ascending order.
using v4d = double __attribute__((vector_size(32)));

inline v4d load4(const double* p) {
  v4d v;
  std::memcpy(&v, p, sizeof v);
  return v;
}

template <std::size_t R, std::size_t V>
inline void gemm_tile(const double* __restrict a, std::size_t lda, const double* __restrict b,
                      std::size_t ldb, double* __restrict c, std::size_t ldc, std::size_t k) {
  v4d acc[R][V];
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t v = 0; v < V; ++v) acc[r][v] = load4(c + r * ldc + 4 * v);
  for (std::size_t p = 0; p < k; ++p) {
    v4d bp[V];
    for (std::size_t v = 0; v < V; ++v) bp[v] = load4(b + p * ldb + 4 * v);
    for (std::size_t r = 0; r < R; ++r) {
      const double ar = a[r * lda + p];
      for (std::size_t v = 0; v < V; ++v) acc[r][v] += ar * bp[v];
    }
  }
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t v = 0; v < V; ++v) std::memcpy(c + r * ldc + 4 * v, &acc[r][v], sizeof(v4d));
}

template <std::size_t R>
inline void gemm_column(const double* __restrict a, std::size_t lda, const double* __restrict b,
                        std::size_t ldb, double* __restrict c, std::size_t ldc, std::size_t k) {
  double acc[R];
  for (std::size_t r = 0; r < R; ++r) acc[r] = c[r * ldc];
  for (std::size_t p = 0; p < k; ++p)
    for (std::size_t r = 0; r < R; ++r) acc[r] += a[r * lda + p] * b[p * ldb];
  for (std::size_t r = 0; r < R; ++r) c[r * ldc] = acc[r];
}

template <std::size_t R>
void gemm_rows(const double* a, std::size_t lda, const double* b, double* c, std::size_t k,
               std::size_t n) {
  std::size_t j = 0;
  for (; j + 12 <= n; j += 12) gemm_tile<R, 3>(a, lda, b + j, n, c + j, n, k);
  for (; j + 4 <= n; j += 4) gemm_tile<R, 1>(a, lda, b + j, n, c + j, n, k);
  for (; j < n; ++j) gemm_column<R>(a, lda, b + j, n, c + j, n, k);
}

// c[m×n] = a[m×k] · b[k×n] with c zero on entry; k ascending per output
// entry. Panels of kc rows keep the slice of b cache resident.
void gemm(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
          std::size_t n) {
  constexpr std::size_t R = 4;
  const std::size_t kc = std::max<std::size_t>(64, (32768 / std::max<std::size_t>(n, 1)) & ~std::size_t{7});
  for (std::size_t p0 = 0; p0 < k; p0 += kc) {
    const std::size_t kk = std::min(kc, k - p0);
    const double* bp = b + p0 * n;
    std::size_t i = 0;
    for (; i + R <= m; i += R) gemm_rows<R>(a + i * k + p0, k, bp, c + i * n, kk, n);
    for (; i < m; ++i) gemm_rows<1>(a + i * k + p0, k, bp, c + i * n, kk, n);
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul lhs");
  require_matrix(b, "matmul rhs");
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  Tensor c({a.rows(), b.cols()});
  gemm(a.ptr(), b.ptr(), c.ptr(), a.rows(), a.cols(), b.cols());
  return c;
}

Tensor transpose(const Tensor& a) {
  require_matrix(a, "transpose operand");
  const std::size_t m = a.rows(), n = a.cols();
  Tensor t({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) t.at(j, i) = a.at(i, j);
  return t;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul_nt lhs");
  require_matrix(b, "matmul_nt rhs");
  if (a.cols() != b.cols()) {
    throw DimensionError("matmul_nt: inner dimensions disagree, " + shape_str(a.shape()) +
                         " x " + shape_str(b.shape()) + "^T");
  }
  return matmul(a, transpose(b));
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul_tn lhs");
  require_matrix(b, "matmul_tn rhs");
  if (a.rows() != b.rows()) {
    throw DimensionError("matmul_tn: inner dimensions disagree, " + shape_str(a.shape()) +
                         "^T x " + shape_str(b.shape()));
  }
  return matmul(transpose(a), b);
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same(a, b, "add");
  Tensor c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c[i] += b[i];
  return c;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same(a, b, "sub");
  Tensor c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c[i] -= b[i];
  return c;
}

Tensor scale(const Tensor& a, double s) {
  Tensor c = a;
  for (auto& v : c.data()) v *= s;
  return c;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  require_same(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

Tensor softmax_with_bias(const Tensor& logits, const Tensor& bias) {
  if (logits.rank() == 0) throw DimensionError("softmax_with_bias: scalar input");
  const std::size_t n = logits.shape().back();
  const std::size_t rows = n == 0 ? 0 : logits.size() / n;
  const bool per_entry = !bias.empty() && bias.shape() == logits.shape();
  if (!bias.empty() && !per_entry && bias.size() != n) {
    throw DimensionError("softmax_with_bias: bias " + shape_str(bias.shape()) +
                         " not broadcastable to " + shape_str(logits.shape()));
  }
  Tensor out(logits.shape());
  std::vector<double> z(n);
  for (std::size_t r = 0; r < rows; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      double b = bias.empty() ? 0.0 : (per_entry ? bias[r * n + j] : bias[j]);
      z[j] = logits[r * n + j] + b;
      mx = std::max(mx, z[j]);
    }
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      z[j] = std::exp(z[j] - mx);
      sum += z[j];
    }
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = z[j] / sum;
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& shift, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("layer_norm: eps must be positive");
  if (x.rank() == 0) throw DimensionError("layer_norm: scalar input");
  const std::size_t d = x.shape().back();
  if (gain.size() != d || shift.size() != d) {
    throw DimensionError("layer_norm: affine parameters " + shape_str(gain.shape()) + "/" +
                         shape_str(shift.shape()) + " do not match feature size of " +
                         shape_str(x.shape()));
  }
  const std::size_t rows = d == 0 ? 0 : x.size() / d;
  Tensor out(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.ptr() + r * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += xr[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = (xr[j] - mean) * inv * gain[j] + shift[j];
  }
  return out;
}

Tensor bilinear_sample(const Tensor& field, const Tensor& points) {
  if (field.rank() != 3) {
    throw DimensionError("bilinear_sample: field must be [CxHxW], got " + shape_str(field.shape()));
  }
  if (points.empty()) return Tensor({0, field.dim(0)});
  if (points.rank() != 2 || points.cols() != 2) {
    throw DimensionError("bilinear_sample: points must be [Nx2], got " + shape_str(points.shape()));
  }
  const std::size_t C = field.dim(0), H = field.dim(1), W = field.dim(2);
  if (H == 0 || W == 0) throw DimensionError("bilinear_sample: empty field");
  const std::size_t N = points.rows();
  Tensor out({N, C});
  for (std::size_t n = 0; n < N; ++n) {
    const double u = std::clamp(points.at(n, 0), 0.0, 1.0);
    const double v = std::clamp(points.at(n, 1), 0.0, 1.0);
    const double px = u * static_cast<double>(W - 1);
    const double py = v * static_cast<double>(H - 1);
    const std::size_t x0 = std::min(static_cast<std::size_t>(px), W - 1);
    const std::size_t y0 = std::min(static_cast<std::size_t>(py), H - 1);
    const std::size_t x1 = std::min(x0 + 1, W - 1);
    const std::size_t y1 = std::min(y0 + 1, H - 1);
    const double fx = px - static_cast<double>(x0);
    const double fy = py - static_cast<double>(y0);
    for (std::size_t c = 0; c < C; ++c) {
      const double top = field.at(c, y0, x0) * (1.0 - fx) + (fx > 0.0 ? field.at(c, y0, x1) * fx : 0.0);
      const double bot = field.at(c, y1, x0) * (1.0 - fx) + (fx > 0.0 ? field.at(c, y1, x1) * fx : 0.0);
      out.at(n, c) = fy > 0.0 ? top * (1.0 - fy) + bot * fy : top;
    }
  }
  return out;
}

Tensor resize_bilinear(const Tensor& image, std::size_t target_h, std::size_t target_w) {
  if (image.rank() != 3) {
    throw DimensionError("resize_bilinear: image must be [CxHxW], got " + shape_str(image.shape()));
  }
  if (target_h == 0 || target_w == 0) throw std::invalid_argument("resize_bilinear: empty target");
  const std::size_t C = image.dim(0), H = image.dim(1), W = image.dim(2);
  if (H == target_h && W == target_w) return image;
  Tensor out({C, target_h, target_w});
  auto coord = [](std::size_t i, std::size_t n_out, std::size_t n_in) {
    if (n_out == 1) return 0.5 * static_cast<double>(n_in - 1);
    return static_cast<double>(i) * static_cast<double>(n_in - 1) / static_cast<double>(n_out - 1);
  };
  for (std::size_t y = 0; y < target_h; ++y) {
    const double py = coord(y, target_h, H);
    const std::size_t y0 = std::min(static_cast<std::size_t>(py), H - 1);
    const std::size_t y1 = std::min(y0 + 1, H - 1);
    const double fy = py - static_cast<double>(y0);
    for (std::size_t x = 0; x < target_w; ++x) {
      const double px = coord(x, target_w, W);
      const std::size_t x0 = std::min(static_cast<std::size_t>(px), W - 1);
      const std::size_t x1 = std::min(x0 + 1, W - 1);
      const double fx = px - static_cast<double>(x0);
      for (std::size_t c = 0; c < C; ++c) {
        const double top = image.at(c, y0, x0) * (1.0 - fx) + image.at(c, y0, x1) * fx;
        const double bot = image.at(c, y1, x0) * (1.0 - fx) + image.at(c, y1, x1) * fx;
        out.at(c, y, x) = top * (1.0 - fy) + bot * fy;
      }
    }
  }
  return out;
}

}  // namespace retina
