#include "tst/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace tst {

namespace {

using Mat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::Matrix<Real, Eigen::Dynamic, 1>;
using MapMat = Eigen::Map<Mat>;
using CMapMat = Eigen::Map<const Mat>;
using RowVecMap = Eigen::Map<Eigen::Matrix<Real, 1, Eigen::Dynamic>>;

MapMat as_matrix(Buffer& v, std::size_t rows, std::size_t cols) {
  return MapMat(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

void record_if_needed(const Tensor& out, std::string_view kind, std::vector<detail::ImplPtr> inputs,
                      Tape::BackwardFn fn) {
  if (out.requires_grad()) active_tape()->record(kind, std::move(inputs), out, std::move(fn));
}

void require_rank(const Tensor& t, std::size_t rank, const char* op, const char* name) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": " + name + " must have rank " + std::to_string(rank) +
                         ", got shape " + shape_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul", "a");
  require_rank(b, 2, "matmul", "b");
  const std::size_t p = a.dim(0), q = a.dim(1), r = b.dim(1);
  if (b.dim(0) != q) {
    throw DimensionError("matmul: inner dimensions differ for " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()));
  }
  Tensor out = make_result({p, r}, {&a, &b});
  auto A = a.impl(), B = b.impl(), C = out.impl();
  as_matrix(C->data, p, r).noalias() = as_matrix(A->data, p, q) * as_matrix(B->data, q, r);
  record_if_needed(out, "matmul", {A, B}, [A, B, C, p, q, r] {
    auto dC = as_matrix(C->grad, p, r);
    if (A->requires_grad) as_matrix(A->grad_buffer(), p, q).noalias() += dC * as_matrix(B->data, q, r).transpose();
    if (B->requires_grad) as_matrix(B->grad_buffer(), q, r).noalias() += as_matrix(A->data, p, q).transpose() * dC;
  });
  return out;
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank(weight, 2, "linear", "weight");
  const std::size_t out_features = weight.dim(0), in_features = weight.dim(1);
  if (x.rank() == 0 || x.shape().back() != in_features) {
    throw DimensionError("linear: input " + shape_string(x.shape()) + " incompatible with weight " +
                         shape_string(weight.shape()));
  }
  if (bias.defined() && bias.shape() != Shape{out_features}) {
    throw DimensionError("linear: bias " + shape_string(bias.shape()) + " for weight " +
                         shape_string(weight.shape()));
  }
  const std::size_t rows = x.numel() / in_features;
  Shape out_shape = x.shape();
  out_shape.back() = out_features;
  Tensor out = make_result(out_shape, {&x, &weight, &bias});
  auto X = x.impl(), W = weight.impl(), C = out.impl();
  detail::ImplPtr Bi = bias.defined() ? bias.impl() : nullptr;
  auto Y = as_matrix(C->data, rows, out_features);
  Y.noalias() = as_matrix(X->data, rows, in_features) * as_matrix(W->data, out_features, in_features).transpose();
  if (Bi) Y.rowwise() += RowVecMap(Bi->data.data(), static_cast<Eigen::Index>(out_features));
  std::vector<detail::ImplPtr> ins{X, W};
  if (Bi) ins.push_back(Bi);
  record_if_needed(out, "linear", std::move(ins), [X, W, Bi, C, rows, in_features, out_features] {
    auto dY = as_matrix(C->grad, rows, out_features);
    if (X->requires_grad) {
      as_matrix(X->grad_buffer(), rows, in_features).noalias() +=
          dY * as_matrix(W->data, out_features, in_features);
    }
    if (W->requires_grad) {
      as_matrix(W->grad_buffer(), out_features, in_features).noalias() +=
          dY.transpose() * as_matrix(X->data, rows, in_features);
    }
    if (Bi && Bi->requires_grad) {
      RowVecMap(Bi->grad_buffer().data(), static_cast<Eigen::Index>(out_features)) += dY.colwise().sum();
    }
  });
  return out;
}

Tensor batched_matmul(const Tensor& a, const Tensor& b, bool transpose_b) {
  require_rank(a, 3, "batched_matmul", "a");
  require_rank(b, 3, "batched_matmul", "b");
  const std::size_t n = a.dim(0), p = a.dim(1), q = a.dim(2);
  const std::size_t bq = transpose_b ? b.dim(2) : b.dim(1);
  const std::size_t r = transpose_b ? b.dim(1) : b.dim(2);
  if (b.dim(0) != n || bq != q) {
    throw DimensionError("batched_matmul: incompatible shapes " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()) + (transpose_b ? " (b transposed)" : ""));
  }
  Tensor out = make_result({n, p, r}, {&a, &b});
  auto A = a.impl(), B = b.impl(), C = out.impl();
  const std::size_t b_rows = transpose_b ? r : q, b_cols = transpose_b ? q : r;
  for (std::size_t i = 0; i < n; ++i) {
    CMapMat Ai(A->data.data() + i * p * q, p, q);
    CMapMat Bi(B->data.data() + i * q * r, b_rows, b_cols);
    MapMat Ci(C->data.data() + i * p * r, p, r);
    if (transpose_b)
      Ci.noalias() = Ai * Bi.transpose();
    else
      Ci.noalias() = Ai * Bi;
  }
  record_if_needed(out, "batched_matmul", {A, B}, [A, B, C, n, p, q, r, b_rows, b_cols, transpose_b] {
    Real* dA = A->requires_grad ? A->grad_buffer().data() : nullptr;
    Real* dB = B->requires_grad ? B->grad_buffer().data() : nullptr;
    for (std::size_t i = 0; i < n; ++i) {
      CMapMat dC(C->grad.data() + i * p * r, p, r);
      CMapMat Ai(A->data.data() + i * p * q, p, q);
      CMapMat Bi(B->data.data() + i * q * r, b_rows, b_cols);
      if (dA) {
        MapMat dAi(dA + i * p * q, p, q);
        if (transpose_b)
          dAi.noalias() += dC * Bi;
        else
          dAi.noalias() += dC * Bi.transpose();
      }
      if (dB) {
        MapMat dBi(dB + i * q * r, b_rows, b_cols);
        if (transpose_b)
          dBi.noalias() += dC.transpose() * Ai;
        else
          dBi.noalias() += Ai.transpose() * dC;
      }
    }
  });
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = make_result(a.shape(), {&a, &b});
  auto A = a.impl(), B = b.impl(), C = out.impl();
  for (std::size_t i = 0; i < C->data.size(); ++i) C->data[i] = A->data[i] + B->data[i];
  record_if_needed(out, "add", {A, B}, [A, B, C] {
    for (auto* in : {A.get(), B.get()}) {
      if (!in->requires_grad) continue;
      auto& g = in->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += C->grad[i];
    }
  });
  return out;
}

Tensor add_broadcast(const Tensor& x, const Tensor& y) {
  const auto& xs = x.shape();
  const auto& ys = y.shape();
  if (ys.size() > xs.size() || !std::equal(ys.begin(), ys.end(), xs.end() - static_cast<std::ptrdiff_t>(ys.size()))) {
    throw DimensionError("add_broadcast: " + shape_string(ys) + " is not a trailing shape of " + shape_string(xs));
  }
  Tensor out = make_result(xs, {&x, &y});
  auto X = x.impl(), Y = y.impl(), C = out.impl();
  const std::size_t inner = Y->data.size();
  const std::size_t outer = inner ? X->data.size() / inner : 0;
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) C->data[o * inner + i] = X->data[o * inner + i] + Y->data[i];
  record_if_needed(out, "add_broadcast", {X, Y}, [X, Y, C, inner, outer] {
    if (X->requires_grad) {
      auto& g = X->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += C->grad[i];
    }
    if (Y->requires_grad) {
      auto& g = Y->grad_buffer();
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < inner; ++i) g[i] += C->grad[o * inner + i];
    }
  });
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out = make_result(a.shape(), {&a, &b});
  auto A = a.impl(), B = b.impl(), C = out.impl();
  for (std::size_t i = 0; i < C->data.size(); ++i) C->data[i] = A->data[i] * B->data[i];
  record_if_needed(out, "mul", {A, B}, [A, B, C] {
    if (A->requires_grad) {
      auto& g = A->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += C->grad[i] * B->data[i];
    }
    if (B->requires_grad) {
      auto& g = B->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += C->grad[i] * A->data[i];
    }
  });
  return out;
}

Tensor scale(const Tensor& x, Real factor) {
  Tensor out = make_result(x.shape(), {&x});
  auto X = x.impl(), C = out.impl();
  for (std::size_t i = 0; i < C->data.size(); ++i) C->data[i] = X->data[i] * factor;
  record_if_needed(out, "scale", {X}, [X, C, factor] {
    auto& g = X->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += C->grad[i] * factor;
  });
  return out;
}

Tensor sum(const Tensor& x) {
  Tensor out = make_result({1}, {&x});
  auto X = x.impl(), C = out.impl();
  Real s = 0;
  for (Real v : X->data) s += v;
  C->data[0] = s;
  record_if_needed(out, "sum", {X}, [X, C] {
    auto& g = X->grad_buffer();
    for (auto& v : g) v += C->grad[0];
  });
  return out;
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw DimensionError("mean of an empty tensor");
  return scale(sum(x), Real(1) / static_cast<Real>(x.numel()));
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_string(x.shape()) + " as " + shape_string(shape));
  }
  Tensor out = make_result(std::move(shape), {&x});
  auto X = x.impl(), C = out.impl();
  C->data = X->data;
  record_if_needed(out, "reshape", {X}, [X, C] {
    auto& g = X->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += C->grad[i];
  });
  return out;
}

Tensor slice_rows(const Tensor& x, std::size_t rows) {
  if (x.rank() == 0 || rows > x.dim(0)) {
    throw DimensionError("slice_rows: " + std::to_string(rows) + " rows requested from " + shape_string(x.shape()));
  }
  Shape shape = x.shape();
  shape[0] = rows;
  Tensor out = make_result(shape, {&x});
  auto X = x.impl(), C = out.impl();
  std::copy_n(X->data.begin(), C->data.size(), C->data.begin());
  record_if_needed(out, "slice_rows", {X}, [X, C] {
    auto& g = X->grad_buffer();
    for (std::size_t i = 0; i < C->grad.size(); ++i) g[i] += C->grad[i];
  });
  return out;
}

Tensor gelu(const Tensor& x) {
  Tensor out = make_result(x.shape(), {&x});
  auto X = x.impl(), C = out.impl();
  constexpr Real inv_sqrt2 = Real(1) / std::numbers::sqrt2_v<Real>;
  for (std::size_t i = 0; i < C->data.size(); ++i) {
    Real v = X->data[i];
    C->data[i] = Real(0.5) * v * (Real(1) + std::erf(v * inv_sqrt2));
  }
  record_if_needed(out, "gelu", {X}, [X, C] {
    constexpr Real inv_sqrt2 = Real(1) / std::numbers::sqrt2_v<Real>;
    const Real inv_sqrt2pi = Real(1) / std::sqrt(Real(2) * std::numbers::pi_v<Real>);
    auto& g = X->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      Real v = X->data[i];
      Real cdf = Real(0.5) * (Real(1) + std::erf(v * inv_sqrt2));
      Real pdf = inv_sqrt2pi * std::exp(Real(-0.5) * v * v);
      g[i] += C->grad[i] * (cdf + v * pdf);
    }
  });
  return out;
}

Tensor softmax_last_dim(const Tensor& x) {
  if (x.rank() == 0 || x.shape().back() == 0) {
    throw DimensionError("softmax_last_dim: empty last axis in " + shape_string(x.shape()));
  }
  Tensor out = make_result(x.shape(), {&x});
  auto X = x.impl(), C = out.impl();
  const std::size_t k = x.shape().back();
  const std::size_t rows = x.numel() / k;
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* in = X->data.data() + r * k;
    Real* o = C->data.data() + r * k;
    Real mx = *std::max_element(in, in + k);
    if (mx == -std::numeric_limits<Real>::infinity())
      throw NumericError("attention row has no finite score (fully masked or overflowed)");
    Real total = 0;
    for (std::size_t j = 0; j < k; ++j) {
      o[j] = std::exp(in[j] - mx);
      total += o[j];
    }
    for (std::size_t j = 0; j < k; ++j) o[j] /= total;
  }
  record_if_needed(out, "softmax", {X}, [X, C, k, rows] {
    auto& g = X->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      const Real* y = C->data.data() + r * k;
      const Real* dy = C->grad.data() + r * k;
      Real dot = 0;
      for (std::size_t j = 0; j < k; ++j) dot += dy[j] * y[j];
      for (std::size_t j = 0; j < k; ++j) g[r * k + j] += y[j] * (dy[j] - dot);
    }
  });
  return out;
}

Tensor dropout(const Tensor& x, Real p, Mode mode, Rng& rng) {
  if (!(p >= 0) || p >= 1) throw std::invalid_argument("dropout probability must lie in [0, 1), got " + std::to_string(p));
  if (mode == Mode::Eval || p == 0) return x;
  Tensor out = make_result(x.shape(), {&x});
  auto X = x.impl(), C = out.impl();
  const Real keep_scale = Real(1) / (Real(1) - p);
  auto factors = std::make_shared<std::vector<Real>>(X->data.size());
  for (std::size_t i = 0; i < factors->size(); ++i) {
    (*factors)[i] = uniform01(rng) < static_cast<double>(p) ? Real(0) : keep_scale;
    C->data[i] = X->data[i] * (*factors)[i];
  }
  record_if_needed(out, "dropout", {X}, [X, C, factors] {
    auto& g = X->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += C->grad[i] * (*factors)[i];
  });
  return out;
}

Tensor batchnorm_timewise(const Tensor& x, std::span<const std::size_t> lengths, const Tensor& gamma,
                          const Tensor& beta, RunningStats& stats, Mode mode) {
  require_rank(x, 3, "batchnorm_timewise", "x");
  const std::size_t B = x.dim(0), T = x.dim(1), d = x.dim(2);
  if (lengths.size() != B) {
    throw DimensionError("batchnorm_timewise: " + std::to_string(lengths.size()) + " lengths for batch of " +
                         std::to_string(B));
  }
  if (gamma.shape() != Shape{d} || beta.shape() != Shape{d}) {
    throw DimensionError("batchnorm_timewise: gamma/beta must have shape [" + std::to_string(d) + "]");
  }
  if (stats.mean.size() != d || stats.var.size() != d) {
    throw DimensionError("batchnorm_timewise: running stats sized for " + std::to_string(stats.mean.size()) +
                         " features, input has " + std::to_string(d));
  }
  std::size_t count = 0;
  for (auto len : lengths) {
    if (len > T) {
      throw DimensionError("batchnorm_timewise: length " + std::to_string(len) + " exceeds time axis " +
                           std::to_string(T));
    }
    count += len;
  }
  if (count == 0) throw NumericError("batchnorm_timewise: no non-padded positions in batch");

  Tensor out = make_result(x.shape(), {&x, &gamma, &beta});
  auto X = x.impl(), G = gamma.impl(), Be = beta.impl(), C = out.impl();
  auto mu = std::make_shared<std::vector<Real>>(d, Real(0));
  auto inv = std::make_shared<std::vector<Real>>(d, Real(0));
  auto clamped = std::make_shared<std::vector<char>>(d, 0);
  auto lens = std::make_shared<std::vector<std::size_t>>(lengths.begin(), lengths.end());

  if (mode == Mode::Train) {
    std::vector<Real> var(d, Real(0));
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t t = 0; t < lengths[b]; ++t) {
        const Real* row = X->data.data() + (b * T + t) * d;
        for (std::size_t f = 0; f < d; ++f) (*mu)[f] += row[f];
      }
    for (auto& v : *mu) v /= static_cast<Real>(count);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t t = 0; t < lengths[b]; ++t) {
        const Real* row = X->data.data() + (b * T + t) * d;
        for (std::size_t f = 0; f < d; ++f) {
          Real c = row[f] - (*mu)[f];
          var[f] += c * c;
        }
      }
    for (std::size_t f = 0; f < d; ++f) {
      var[f] /= static_cast<Real>(count);
      (*clamped)[f] = var[f] < kNormEpsilon;
      (*inv)[f] = Real(1) / std::sqrt(std::max(var[f], kNormEpsilon));
      Real unbiased = count > 1 ? var[f] * static_cast<Real>(count) / static_cast<Real>(count - 1) : var[f];
      stats.mean[f] = (Real(1) - RunningStats::kMomentum) * stats.mean[f] + RunningStats::kMomentum * (*mu)[f];
      stats.var[f] = (Real(1) - RunningStats::kMomentum) * stats.var[f] + RunningStats::kMomentum * unbiased;
    }
  } else {
    for (std::size_t f = 0; f < d; ++f) {
      (*mu)[f] = stats.mean[f];
      (*inv)[f] = Real(1) / std::sqrt(std::max(stats.var[f], kNormEpsilon));
    }
  }

  for (std::size_t i = 0; i < B * T; ++i) {
    const Real* in = X->data.data() + i * d;
    Real* o = C->data.data() + i * d;
    for (std::size_t f = 0; f < d; ++f) o[f] = G->data[f] * (in[f] - (*mu)[f]) * (*inv)[f] + Be->data[f];
  }

  const bool train = mode == Mode::Train;
  record_if_needed(out, "batchnorm_timewise", {X, G, Be}, [X, G, Be, C, mu, inv, clamped, lens, B, T, d, count, train] {
    const auto& dy = C->grad;
    if (G->requires_grad || Be->requires_grad) {
      auto* dg = G->requires_grad ? G->grad_buffer().data() : nullptr;
      auto* db = Be->requires_grad ? Be->grad_buffer().data() : nullptr;
      for (std::size_t i = 0; i < B * T; ++i)
        for (std::size_t f = 0; f < d; ++f) {
          Real g = dy[i * d + f];
          if (dg) dg[f] += g * (X->data[i * d + f] - (*mu)[f]) * (*inv)[f];
          if (db) db[f] += g;
        }
    }
    if (!X->requires_grad) return;
    auto& dx = X->grad_buffer();
    if (!train) {
      for (std::size_t i = 0; i < B * T; ++i)
        for (std::size_t f = 0; f < d; ++f) dx[i * d + f] += dy[i * d + f] * G->data[f] * (*inv)[f];
      return;
    }
    // Padded outputs still depend on the batch statistics, so they feed dvar/dmu.
    std::vector<Real> dvar(d, Real(0)), dmu(d, Real(0));
    for (std::size_t i = 0; i < B * T; ++i)
      for (std::size_t f = 0; f < d; ++f) {
        Real g = dy[i * d + f] * G->data[f];
        Real iv = (*inv)[f];
        if (!(*clamped)[f]) dvar[f] += g * (X->data[i * d + f] - (*mu)[f]) * Real(-0.5) * iv * iv * iv;
        dmu[f] -= g * iv;
      }
    const Real n = static_cast<Real>(count);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t t = 0; t < T; ++t) {
        const bool valid = t < (*lens)[b];
        const std::size_t base = (b * T + t) * d;
        for (std::size_t f = 0; f < d; ++f) {
          Real v = dy[base + f] * G->data[f] * (*inv)[f];
          if (valid) v += dvar[f] * Real(2) * (X->data[base + f] - (*mu)[f]) / n + dmu[f] / n;
          dx[base + f] += v;
        }
      }
  });
  return out;
}

Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta) {
  if (x.rank() == 0 || x.shape().back() == 0) throw DimensionError("layernorm: feature dimension is 0");
  const std::size_t d = x.shape().back();
  if (gamma.shape() != Shape{d} || beta.shape() != Shape{d}) {
    throw DimensionError("layernorm: gamma/beta must have shape [" + std::to_string(d) + "]");
  }
  const std::size_t rows = x.numel() / d;
  Tensor out = make_result(x.shape(), {&x, &gamma, &beta});
  auto X = x.impl(), G = gamma.impl(), Be = beta.impl(), C = out.impl();
  auto xhat = std::make_shared<std::vector<Real>>(X->data.size());
  auto inv = std::make_shared<std::vector<Real>>(rows);
  auto clamped = std::make_shared<std::vector<char>>(rows, 0);
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* in = X->data.data() + r * d;
    Real mu = 0, var = 0;
    for (std::size_t f = 0; f < d; ++f) mu += in[f];
    mu /= static_cast<Real>(d);
    for (std::size_t f = 0; f < d; ++f) var += (in[f] - mu) * (in[f] - mu);
    var /= static_cast<Real>(d);
    (*clamped)[r] = var < kNormEpsilon;
    (*inv)[r] = Real(1) / std::sqrt(std::max(var, kNormEpsilon));
    for (std::size_t f = 0; f < d; ++f) {
      Real h = (in[f] - mu) * (*inv)[r];
      (*xhat)[r * d + f] = h;
      C->data[r * d + f] = G->data[f] * h + Be->data[f];
    }
  }
  record_if_needed(out, "layernorm", {X, G, Be}, [X, G, Be, C, xhat, inv, clamped, rows, d] {
    const auto& dy = C->grad;
    auto* dg = G->requires_grad ? G->grad_buffer().data() : nullptr;
    auto* db = Be->requires_grad ? Be->grad_buffer().data() : nullptr;
    auto* dx = X->requires_grad ? X->grad_buffer().data() : nullptr;
    for (std::size_t r = 0; r < rows; ++r) {
      Real mean_g = 0, mean_gx = 0;
      for (std::size_t f = 0; f < d; ++f) {
        Real g = dy[r * d + f];
        if (dg) dg[f] += g * (*xhat)[r * d + f];
        if (db) db[f] += g;
        Real gg = g * G->data[f];
        mean_g += gg;
        mean_gx += gg * (*xhat)[r * d + f];
      }
      if (!dx) continue;
      mean_g /= static_cast<Real>(d);
      mean_gx /= static_cast<Real>(d);
      if ((*clamped)[r]) mean_gx = 0;
      for (std::size_t f = 0; f < d; ++f) {
        Real gg = dy[r * d + f] * G->data[f];
        dx[r * d + f] += (*inv)[r] * (gg - mean_g - (*xhat)[r * d + f] * mean_gx);
      }
    }
  });
  return out;
}

Tensor split_heads(const Tensor& x, std::size_t heads) {
  require_rank(x, 3, "split_heads", "x");
  const std::size_t B = x.dim(0), T = x.dim(1), d = x.dim(2);
  if (heads == 0 || d % heads != 0) {
    throw DimensionError("split_heads: model dimension " + std::to_string(d) + " not divisible by " +
                         std::to_string(heads) + " heads");
  }
  const std::size_t dk = d / heads;
  Tensor out = make_result({B * heads, T, dk}, {&x});
  auto X = x.impl(), C = out.impl();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t h = 0; h < heads; ++h)
        std::copy_n(X->data.data() + (b * T + t) * d + h * dk, dk, C->data.data() + ((b * heads + h) * T + t) * dk);
  record_if_needed(out, "split_heads", {X}, [X, C, B, T, d, heads, dk] {
    auto& g = X->grad_buffer();
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t h = 0; h < heads; ++h) {
          const Real* src = C->grad.data() + ((b * heads + h) * T + t) * dk;
          Real* dst = g.data() + (b * T + t) * d + h * dk;
          for (std::size_t j = 0; j < dk; ++j) dst[j] += src[j];
        }
  });
  return out;
}

Tensor merge_heads(const Tensor& x, std::size_t heads) {
  require_rank(x, 3, "merge_heads", "x");
  if (heads == 0 || x.dim(0) % heads != 0) {
    throw DimensionError("merge_heads: leading dimension " + std::to_string(x.dim(0)) + " not divisible by " +
                         std::to_string(heads));
  }
  const std::size_t B = x.dim(0) / heads, T = x.dim(1), dk = x.dim(2), d = dk * heads;
  Tensor out = make_result({B, T, d}, {&x});
  auto X = x.impl(), C = out.impl();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t h = 0; h < heads; ++h)
        std::copy_n(X->data.data() + ((b * heads + h) * T + t) * dk, dk, C->data.data() + (b * T + t) * d + h * dk);
  record_if_needed(out, "merge_heads", {X}, [X, C, B, T, d, heads, dk] {
    auto& g = X->grad_buffer();
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t h = 0; h < heads; ++h) {
          const Real* src = C->grad.data() + (b * T + t) * d + h * dk;
          Real* dst = g.data() + ((b * heads + h) * T + t) * dk;
          for (std::size_t j = 0; j < dk; ++j) dst[j] += src[j];
        }
  });
  return out;
}

Tensor add_key_bias(const Tensor& scores, const Tensor& bias, std::size_t heads) {
  require_rank(scores, 3, "add_key_bias", "scores");
  require_rank(bias, 2, "add_key_bias", "bias");
  const std::size_t BH = scores.dim(0), Tq = scores.dim(1), Tk = scores.dim(2);
  if (heads == 0 || bias.dim(0) * heads != BH || bias.dim(1) != Tk) {
    throw DimensionError("add_key_bias: bias " + shape_string(bias.shape()) + " incompatible with scores " +
                         shape_string(scores.shape()) + " and " + std::to_string(heads) + " heads");
  }
  Tensor out = make_result(scores.shape(), {&scores});
  auto S = scores.impl(), Bi = bias.impl(), C = out.impl();
  for (std::size_t i = 0; i < BH; ++i) {
    const Real* brow = Bi->data.data() + (i / heads) * Tk;
    for (std::size_t q = 0; q < Tq; ++q) {
      const std::size_t base = (i * Tq + q) * Tk;
      for (std::size_t k = 0; k < Tk; ++k) C->data[base + k] = S->data[base + k] + brow[k];
    }
  }
  record_if_needed(out, "add_key_bias", {S}, [S, C] {
    auto& g = S->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += C->grad[i];
  });
  return out;
}

std::size_t conv_output_length(std::size_t length, std::size_t kernel, const ConvOptions& options) {
  if (kernel == 0 || options.stride == 0 || options.dilation == 0) {
    throw DimensionError("conv1d: kernel, stride and dilation must be positive");
  }
  const std::size_t span = options.dilation * (kernel - 1) + 1;
  const std::size_t padded = options.padding == ConvPadding::Same ? length + span - 1 : length;
  if (padded < span) {
    throw DimensionError("conv1d: kernel span " + std::to_string(span) + " wider than padded input of length " +
                         std::to_string(padded));
  }
  return (padded - span) / options.stride + 1;
}

Tensor conv1d(const Tensor& x, const Tensor& kernels, const Tensor& bias, const ConvOptions& options) {
  require_rank(x, 3, "conv1d", "x");
  require_rank(kernels, 3, "conv1d", "kernels");
  const std::size_t B = x.dim(0), T = x.dim(1), m = x.dim(2);
  const std::size_t d = kernels.dim(0), k = kernels.dim(1);
  if (kernels.dim(2) != m) {
    throw DimensionError("conv1d: kernels " + shape_string(kernels.shape()) + " expect " +
                         std::to_string(kernels.dim(2)) + " input variables, got " + std::to_string(m));
  }
  if (bias.defined() && bias.shape() != Shape{d}) {
    throw DimensionError("conv1d: bias " + shape_string(bias.shape()) + " for " + std::to_string(d) + " channels");
  }
  const std::size_t To = conv_output_length(T, k, options);
  const std::size_t left = options.padding == ConvPadding::Same ? options.dilation * (k - 1) / 2 : 0;
  const std::size_t km = k * m;

  // im2col: one row of k*m inputs per output position.
  auto cols = std::make_shared<Buffer>(B * To * km, Real(0));
  auto source = [=](std::size_t t_out, std::size_t j) -> std::ptrdiff_t {
    return static_cast<std::ptrdiff_t>(t_out * options.stride + j * options.dilation) -
           static_cast<std::ptrdiff_t>(left);
  };
  const auto& xd = x.values();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < To; ++t)
      for (std::size_t j = 0; j < k; ++j) {
        std::ptrdiff_t s = source(t, j);
        if (s < 0 || s >= static_cast<std::ptrdiff_t>(T)) continue;
        std::copy_n(xd.data() + (b * T + static_cast<std::size_t>(s)) * m, m,
                    cols->data() + (b * To + t) * km + j * m);
      }

  Tensor out = make_result({B, To, d}, {&x, &kernels, &bias});
  auto X = x.impl(), K = kernels.impl(), C = out.impl();
  detail::ImplPtr Bi = bias.defined() ? bias.impl() : nullptr;
  auto Y = as_matrix(C->data, B * To, d);
  Y.noalias() = as_matrix(*cols, B * To, km) * as_matrix(K->data, d, km).transpose();
  if (Bi) Y.rowwise() += RowVecMap(Bi->data.data(), static_cast<Eigen::Index>(d));

  std::vector<detail::ImplPtr> ins{X, K};
  if (Bi) ins.push_back(Bi);
  record_if_needed(out, "conv1d", std::move(ins), [X, K, Bi, C, cols, B, T, To, m, d, k, km, source] {
    auto dY = as_matrix(C->grad, B * To, d);
    if (K->requires_grad) as_matrix(K->grad_buffer(), d, km).noalias() += dY.transpose() * as_matrix(*cols, B * To, km);
    if (Bi && Bi->requires_grad) {
      RowVecMap(Bi->grad_buffer().data(), static_cast<Eigen::Index>(d)) += dY.colwise().sum();
    }
    if (X->requires_grad) {
      Mat dcols = dY * as_matrix(K->data, d, km);
      auto& g = X->grad_buffer();
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t t = 0; t < To; ++t)
          for (std::size_t j = 0; j < k; ++j) {
            std::ptrdiff_t s = source(t, j);
            if (s < 0 || s >= static_cast<std::ptrdiff_t>(T)) continue;
            const Real* src = dcols.data() + (b * To + t) * km + j * m;
            Real* dst = g.data() + (b * T + static_cast<std::size_t>(s)) * m;
            for (std::size_t h = 0; h < m; ++h) dst[h] += src[h];
          }
    }
  });
  return out;
}

Tensor mask_steps(const Tensor& x, std::span<const std::size_t> lengths) {
  require_rank(x, 3, "mask_steps", "x");
  const std::size_t B = x.dim(0), T = x.dim(1), d = x.dim(2);
  if (lengths.size() != B) throw DimensionError("mask_steps: lengths do not match batch size");
  Tensor out = make_result(x.shape(), {&x});
  auto X = x.impl(), C = out.impl();
  auto lens = std::make_shared<std::vector<std::size_t>>(lengths.begin(), lengths.end());
  for (std::size_t b = 0; b < B; ++b) {
    const std::size_t n = std::min(lengths[b], T) * d;
    std::copy_n(X->data.data() + b * T * d, n, C->data.data() + b * T * d);
  }
  record_if_needed(out, "mask_steps", {X}, [X, C, lens, T, d] {
    auto& g = X->grad_buffer();
    for (std::size_t b = 0; b < lens->size(); ++b) {
      const std::size_t n = std::min((*lens)[b], T) * d;
      for (std::size_t i = 0; i < n; ++i) g[b * T * d + i] += C->grad[b * T * d + i];
    }
  });
  return out;
}

Tensor flatten_steps(const Tensor& x, std::size_t steps) {
  require_rank(x, 3, "flatten_steps", "x");
  const std::size_t B = x.dim(0), T = x.dim(1), d = x.dim(2);
  if (T > steps) {
    throw DimensionError("flatten_steps: " + std::to_string(T) + " steps exceed target " + std::to_string(steps));
  }
  Tensor out = make_result({B, steps * d}, {&x});
  auto X = x.impl(), C = out.impl();
  for (std::size_t b = 0; b < B; ++b) std::copy_n(X->data.data() + b * T * d, T * d, C->data.data() + b * steps * d);
  record_if_needed(out, "flatten_steps", {X}, [X, C, B, T, d, steps] {
    auto& g = X->grad_buffer();
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t i = 0; i < T * d; ++i) g[b * T * d + i] += C->grad[b * steps * d + i];
  });
  return out;
}

void set_num_threads(int threads) {
  if (threads < 1) throw std::invalid_argument("thread count must be >= 1");
  Eigen::setNbThreads(threads);
}

int num_threads() { return Eigen::nbThreads(); }

}  // namespace tst
