#include "retina/autograd.hpp"

#include <cmath>
#include <numbers>

namespace retina::ag {

const Tensor& Var::value() const { return tape->value(id); }

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Var Tape::param(ParamLeaf& leaf) {
  Node n;
  n.bound = &leaf.value;
  n.requires_grad = true;
  n.leaf = &leaf;
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Tensor& Tape::grad(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.has_grad) {
    n.grad = Tensor(value(id).shape());
    n.has_grad = true;
  }
  return n.grad;
}

Var Tape::record(Tensor value, std::initializer_list<Var> parents, BackwardFn backward) {
  return record(std::move(value), std::span<const Var>(parents.begin(), parents.size()),
                std::move(backward));
}

Var Tape::record(Tensor value, std::span<const Var> parents, BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  for (const Var& p : parents) n.requires_grad = n.requires_grad || nodes_[p.id].requires_grad;
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

void Tape::backward(Var output) {
  if (value(output.id).size() != 1) {
    throw DimensionError("backward: output must hold a single value, got " +
                         shape_str(value(output.id).shape()));
  }
  grad(output.id)[0] = 1.0;
  for (std::size_t i = output.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.has_grad || !n.requires_grad) continue;
    if (n.backward) n.backward(*this, n.grad);
    if (n.leaf) {
      if (n.leaf->grad.shape() != n.leaf->value.shape()) n.leaf->zero_grad();
      for (std::size_t k = 0; k < n.grad.size(); ++k) n.leaf->grad[k] += n.grad[k];
    }
  }
}

namespace {

void accumulate(Tape& t, Var v, const Tensor& g) {
  if (!t.requires_grad(v.id)) return;
  Tensor& dst = t.grad(v.id);
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

void require_same(Var a, Var b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

}  // namespace

double gelu_value(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_derivative(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

Var matmul(Var a, Var b) {
  Tape& t = *a.tape;
  return t.record(retina::matmul(a.value(), b.value()), {a, b},
                  [a, b](Tape& t, const Tensor& g) {
                    if (t.requires_grad(a.id)) accumulate(t, a, retina::matmul_nt(g, b.value()));
                    if (t.requires_grad(b.id)) accumulate(t, b, retina::matmul_tn(a.value(), g));
                  });
}

Var matmul_nt(Var a, Var b) {
  Tape& t = *a.tape;
  return t.record(retina::matmul_nt(a.value(), b.value()), {a, b},
                  [a, b](Tape& t, const Tensor& g) {
                    if (t.requires_grad(a.id)) accumulate(t, a, retina::matmul(g, b.value()));
                    if (t.requires_grad(b.id)) accumulate(t, b, retina::matmul_tn(g, a.value()));
                  });
}

Var add(Var a, Var b) {
  require_same(a, b, "add");
  Tape& t = *a.tape;
  return t.record(retina::add(a.value(), b.value()), {a, b}, [a, b](Tape& t, const Tensor& g) {
    accumulate(t, a, g);
    accumulate(t, b, g);
  });
}

Var add_row(Var a, Var row) {
  const Tensor& av = a.value();
  const Tensor& rv = row.value();
  const std::size_t n = av.cols();
  if (rv.size() != n) {
    throw DimensionError("add_row: row " + shape_str(rv.shape()) + " does not match " +
                         shape_str(av.shape()));
  }
  Tensor out = av;
  for (std::size_t r = 0; r < av.rows(); ++r)
    for (std::size_t j = 0; j < n; ++j) out.at(r, j) += rv[j];
  Tape& t = *a.tape;
  return t.record(std::move(out), {a, row}, [a, row, n](Tape& t, const Tensor& g) {
    accumulate(t, a, g);
    if (t.requires_grad(row.id)) {
      Tensor& dr = t.grad(row.id);
      const std::size_t m = g.size() / n;
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t j = 0; j < n; ++j) dr[j] += g[r * n + j];
    }
  });
}

Var mul(Var a, Var b) {
  require_same(a, b, "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  Tape& t = *a.tape;
  return t.record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    if (t.requires_grad(a.id)) {
      Tensor& da = t.grad(a.id);
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * b.value()[i];
    }
    if (t.requires_grad(b.id)) {
      Tensor& db = t.grad(b.id);
      for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i] * a.value()[i];
    }
  });
}

Var scale(Var a, double s) {
  Tape& t = *a.tape;
  return t.record(retina::scale(a.value(), s), {a},
                  [a, s](Tape& t, const Tensor& g) { accumulate(t, a, retina::scale(g, s)); });
}

Var gelu(Var a) {
  Tensor out = a.value();
  for (auto& v : out.data()) v = gelu_value(v);
  Tape& t = *a.tape;
  return t.record(std::move(out), {a}, [a](Tape& t, const Tensor& g) {
    Tensor& da = t.grad(a.id);
    const Tensor& x = a.value();
    for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * gelu_derivative(x[i]);
  });
}

Var sigmoid(Var a) {
  Tensor out = a.value();
  for (auto& v : out.data()) v = 1.0 / (1.0 + std::exp(-v));
  Tensor y = out;
  Tape& t = *a.tape;
  return t.record(std::move(out), {a}, [a, y = std::move(y)](Tape& t, const Tensor& g) {
    Tensor& da = t.grad(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * y[i] * (1.0 - y[i]);
  });
}

Var scale_rows(Var a, std::span<const double> factors) {
  const Tensor& av = a.value();
  if (factors.size() != av.rows()) {
    throw DimensionError("scale_rows: " + std::to_string(factors.size()) +
                         " factors for " + shape_str(av.shape()));
  }
  std::vector<double> f(factors.begin(), factors.end());
  Tensor out = av;
  const std::size_t n = av.cols();
  for (std::size_t r = 0; r < av.rows(); ++r)
    for (std::size_t j = 0; j < n; ++j) out.at(r, j) *= f[r];
  Tape& t = *a.tape;
  return t.record(std::move(out), {a}, [a, f = std::move(f), n](Tape& t, const Tensor& g) {
    Tensor& da = t.grad(a.id);
    for (std::size_t r = 0; r < f.size(); ++r)
      for (std::size_t j = 0; j < n; ++j) da[r * n + j] += g[r * n + j] * f[r];
  });
}

Var gather_rows(Var a, std::span<const std::size_t> rows) {
  const Tensor& av = a.value();
  const std::size_t n = av.cols();
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  Tensor out({idx.size(), n});
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= av.rows()) {
      throw DimensionError("gather_rows: row " + std::to_string(idx[r]) + " out of range for " +
                           shape_str(av.shape()));
    }
    std::copy_n(av.ptr() + idx[r] * n, n, out.ptr() + r * n);
  }
  Tape& t = *a.tape;
  return t.record(std::move(out), {a}, [a, idx = std::move(idx), n](Tape& t, const Tensor& g) {
    Tensor& da = t.grad(a.id);
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t j = 0; j < n; ++j) da[idx[r] * n + j] += g[r * n + j];
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  const std::size_t n = parts[0].value().cols();
  std::size_t total = 0;
  for (const Var& p : parts) {
    if (p.value().cols() != n) {
      throw DimensionError("concat_rows: column mismatch " + shape_str(parts[0].shape()) +
                           " vs " + shape_str(p.shape()));
    }
    total += p.value().rows();
  }
  Tensor out({total, n});
  std::size_t off = 0;
  for (const Var& p : parts) {
    std::copy(p.value().data().begin(), p.value().data().end(), out.ptr() + off * n);
    off += p.value().rows();
  }
  std::vector<Var> ps(parts.begin(), parts.end());
  Tape& t = *parts[0].tape;
  return t.record(std::move(out), parts, [ps, n](Tape& t, const Tensor& g) {
    std::size_t off = 0;
    for (const Var& p : ps) {
      const std::size_t m = p.value().rows();
      if (t.requires_grad(p.id)) {
        Tensor& dp = t.grad(p.id);
        for (std::size_t i = 0; i < m * n; ++i) dp[i] += g[off * n + i];
      }
      off += m;
    }
  });
}

Var reshape(Var a, Shape shape) {
  Tape& t = *a.tape;
  return t.record(a.value().reshaped(std::move(shape)), {a},
                  [a](Tape& t, const Tensor& g) {
                    Tensor& da = t.grad(a.id);
                    for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
                  });
}

Var layer_norm(Var x, Var gain, Var shift, double eps) {
  const Tensor& xv = x.value();
  const std::size_t d = xv.cols();
  const std::size_t m = xv.rows();
  Tensor out = retina::layer_norm(xv, gain.value(), shift.value(), eps);
  // Cache normalised activations and inverse deviations for backward.
  Tensor xhat({m, d});
  std::vector<double> inv(m);
  for (std::size_t r = 0; r < m; ++r) {
    const double* xr = xv.ptr() + r * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += xr[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= static_cast<double>(d);
    inv[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) xhat.at(r, j) = (xr[j] - mean) * inv[r];
  }
  Tape& t = *x.tape;
  return t.record(std::move(out), {x, gain, shift},
                  [x, gain, shift, xhat = std::move(xhat), inv = std::move(inv), d, m](
                      Tape& t, const Tensor& g) {
                    const Tensor& gv = gain.value();
                    if (t.requires_grad(gain.id)) {
                      Tensor& dg = t.grad(gain.id);
                      for (std::size_t r = 0; r < m; ++r)
                        for (std::size_t j = 0; j < d; ++j) dg[j] += g[r * d + j] * xhat.at(r, j);
                    }
                    if (t.requires_grad(shift.id)) {
                      Tensor& ds = t.grad(shift.id);
                      for (std::size_t r = 0; r < m; ++r)
                        for (std::size_t j = 0; j < d; ++j) ds[j] += g[r * d + j];
                    }
                    if (t.requires_grad(x.id)) {
                      Tensor& dx = t.grad(x.id);
                      const double dd = static_cast<double>(d);
                      for (std::size_t r = 0; r < m; ++r) {
                        double s1 = 0.0, s2 = 0.0;
                        for (std::size_t j = 0; j < d; ++j) {
                          const double dxh = g[r * d + j] * gv[j];
                          s1 += dxh;
                          s2 += dxh * xhat.at(r, j);
                        }
                        for (std::size_t j = 0; j < d; ++j) {
                          const double dxh = g[r * d + j] * gv[j];
                          dx[r * d + j] += inv[r] / dd * (dd * dxh - s1 - xhat.at(r, j) * s2);
                        }
                      }
                    }
                  });
}

Var l2_normalize_rows(Var a, double eps) {
  const Tensor& av = a.value();
  const std::size_t m = av.rows(), n = av.cols();
  Tensor out({m, n});
  std::vector<double> norms(m);
  for (std::size_t r = 0; r < m; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += av.at(r, j) * av.at(r, j);
    norms[r] = std::max(std::sqrt(s), eps);
    for (std::size_t j = 0; j < n; ++j) out.at(r, j) = av.at(r, j) / norms[r];
  }
  Tensor y = out;
  Tape& t = *a.tape;
  return t.record(std::move(out), {a},
                  [a, y = std::move(y), norms = std::move(norms), n](Tape& t, const Tensor& g) {
                    Tensor& da = t.grad(a.id);
                    for (std::size_t r = 0; r < norms.size(); ++r) {
                      double dot = 0.0;
                      for (std::size_t j = 0; j < n; ++j) dot += y[r * n + j] * g[r * n + j];
                      for (std::size_t j = 0; j < n; ++j)
                        da[r * n + j] += (g[r * n + j] - y[r * n + j] * dot) / norms[r];
                    }
                  });
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  Tape& t = *a.tape;
  return t.record(Tensor({1}, {s}), {a}, [a](Tape& t, const Tensor& g) {
    Tensor& da = t.grad(a.id);
    for (std::size_t i = 0; i < da.size(); ++i) da[i] += g[0];
  });
}

Var sum_squares(Var a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v * v;
  Tape& t = *a.tape;
  return t.record(Tensor({1}, {s}), {a}, [a](Tape& t, const Tensor& g) {
    Tensor& da = t.grad(a.id);
    const Tensor& x = a.value();
    for (std::size_t i = 0; i < da.size(); ++i) da[i] += 2.0 * x[i] * g[0];
  });
}

}  // namespace retina::ag
