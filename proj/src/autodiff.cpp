#include "viewsel/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "viewsel/errors.hpp"

namespace viewsel::ad {

std::string shape_string(const std::vector<std::size_t>& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

namespace {

std::size_t product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (const auto d : shape) n *= d;
  return n;
}

[[noreturn]] void shape_fail(const char* op, const std::vector<std::size_t>& a,
                             const std::vector<std::size_t>& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_string(a) + " and " +
                   shape_string(b));
}

}  // namespace

template <class Real>
Tensor<Real>::Tensor(std::vector<std::size_t> shape, Real fill)
    : shape_(std::move(shape)), data_(product(shape_), fill) {}

template <class Real>
Tensor<Real>::Tensor(std::vector<std::size_t> shape, std::vector<Real> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != product(shape_)) {
    throw ShapeError("Tensor: " + std::to_string(data_.size()) + " values for shape " +
                     shape_string(shape_));
  }
}

template <class Real>
void Tensor<Real>::fill(Real value) {
  std::fill(data_.begin(), data_.end(), value);
}

template <class Real>
bool Tensor<Real>::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](Real v) { return std::isfinite(v); });
}

// ---------------------------------------------------------------------------
// Graph

template <class Real>
Var Graph<Real>::push(Tensor<Real> value, std::function<void(Graph&, Var)> backward,
                      const char* op) {
  if (!value.all_finite()) {
    throw NumericError(std::string("non-finite value produced by ") + op);
  }
  nodes_.push_back(Node{std::move(value), {}, std::move(backward), nullptr});
  return Var{nodes_.size() - 1};
}

template <class Real>
Var Graph<Real>::constant(Tensor<Real> value) {
  return push(std::move(value), nullptr, "constant");
}

template <class Real>
Var Graph<Real>::param(Parameter<Real>& p) {
  const Var v = push(p.value, nullptr, p.name.c_str());
  nodes_[v.id].param = &p;
  return v;
}

template <class Real>
Var Graph<Real>::matmul(Var a, Var b) {
  const auto& A = val(a);
  const auto& B = val(b);
  const std::size_t n = A.rows(), k = A.cols(), m = B.cols();
  if (B.rows() != k) shape_fail("matmul", A.shape(), B.shape());
  Tensor<Real> C(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    Real* c = &C(i, 0);
    for (std::size_t p = 0; p < k; ++p) {
      const Real x = A(i, p);
      const Real* brow = &B(p, 0);
      for (std::size_t j = 0; j < m; ++j) c[j] += x * brow[j];
    }
  }
  return push(
      std::move(C),
      [a, b, n, k, m](Graph& gr, Var self) {
        const auto& A = gr.val(a);
        const auto& B = gr.val(b);
        const auto& dC = gr.g(self);
        auto& dA = gr.g(a);
        for (std::size_t i = 0; i < n; ++i) {
          const Real* dc = &dC(i, 0);
          for (std::size_t p = 0; p < k; ++p) {
            const Real* brow = &B(p, 0);
            Real acc = 0;
            for (std::size_t j = 0; j < m; ++j) acc += dc[j] * brow[j];
            dA(i, p) += acc;
          }
        }
        auto& dB = gr.g(b);
        for (std::size_t i = 0; i < n; ++i) {
          const Real* dc = &dC(i, 0);
          for (std::size_t p = 0; p < k; ++p) {
            const Real x = A(i, p);
            Real* db = &dB(p, 0);
            for (std::size_t j = 0; j < m; ++j) db[j] += x * dc[j];
          }
        }
      },
      "matmul");
}

template <class Real>
Var Graph<Real>::matmul_nt(Var a, Var b) {
  const auto& A = val(a);
  const auto& B = val(b);
  const std::size_t n = A.rows(), k = A.cols(), m = B.rows();
  if (B.cols() != k) shape_fail("matmul_nt", A.shape(), B.shape());
  Tensor<Real> C(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    const Real* arow = &A(i, 0);
    for (std::size_t j = 0; j < m; ++j) {
      const Real* brow = &B(j, 0);
      Real acc = 0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      C(i, j) = acc;
    }
  }
  return push(
      std::move(C),
      [a, b, n, k, m](Graph& gr, Var self) {
        const auto& A = gr.val(a);
        const auto& B = gr.val(b);
        const auto& dC = gr.g(self);
        auto& dA = gr.g(a);
        auto& dB = gr.g(b);
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < m; ++j) {
            const Real d = dC(i, j);
            const Real* brow = &B(j, 0);
            const Real* arow = &A(i, 0);
            Real* da = &dA(i, 0);
            Real* db = &dB(j, 0);
            for (std::size_t p = 0; p < k; ++p) {
              da[p] += d * brow[p];
              db[p] += d * arow[p];
            }
          }
        }
      },
      "matmul_nt");
}

namespace {

// Returns true when b broadcasts as a single row over a; throws on mismatch.
template <class Real>
bool row_broadcast(const char* op, const Tensor<Real>& A, const Tensor<Real>& B) {
  if (A.shape() == B.shape()) return false;
  if (B.rows() == 1 && B.cols() == A.cols()) return true;
  shape_fail(op, A.shape(), B.shape());
}

}  // namespace

template <class Real>
Var Graph<Real>::add(Var a, Var b) {
  const auto& A = val(a);
  const auto& B = val(b);
  const bool bcast = row_broadcast("add", A, B);
  const std::size_t cols = A.cols();
  Tensor<Real> C = A;
  for (std::size_t i = 0; i < C.size(); ++i) C[i] += B[bcast ? i % cols : i];
  return push(
      std::move(C),
      [a, b, bcast, cols](Graph& gr, Var self) {
        const auto& dC = gr.g(self);
        auto& dA = gr.g(a);
        auto& dB = gr.g(b);
        for (std::size_t i = 0; i < dC.size(); ++i) {
          dA[i] += dC[i];
          dB[bcast ? i % cols : i] += dC[i];
        }
      },
      "add");
}

template <class Real>
Var Graph<Real>::sub(Var a, Var b) {
  const auto& A = val(a);
  const auto& B = val(b);
  const bool bcast = row_broadcast("sub", A, B);
  const std::size_t cols = A.cols();
  Tensor<Real> C = A;
  for (std::size_t i = 0; i < C.size(); ++i) C[i] -= B[bcast ? i % cols : i];
  return push(
      std::move(C),
      [a, b, bcast, cols](Graph& gr, Var self) {
        const auto& dC = gr.g(self);
        auto& dA = gr.g(a);
        auto& dB = gr.g(b);
        for (std::size_t i = 0; i < dC.size(); ++i) {
          dA[i] += dC[i];
          dB[bcast ? i % cols : i] -= dC[i];
        }
      },
      "sub");
}

template <class Real>
Var Graph<Real>::mul(Var a, Var b) {
  const auto& A = val(a);
  const auto& B = val(b);
  const bool bcast = row_broadcast("mul", A, B);
  const std::size_t cols = A.cols();
  Tensor<Real> C = A;
  for (std::size_t i = 0; i < C.size(); ++i) C[i] *= B[bcast ? i % cols : i];
  return push(
      std::move(C),
      [a, b, bcast, cols](Graph& gr, Var self) {
        const auto& A = gr.val(a);
        const auto& B = gr.val(b);
        const auto& dC = gr.g(self);
        auto& dA = gr.g(a);
        auto& dB = gr.g(b);
        for (std::size_t i = 0; i < dC.size(); ++i) {
          const std::size_t j = bcast ? i % cols : i;
          dA[i] += dC[i] * B[j];
          dB[j] += dC[i] * A[i];
        }
      },
      "mul");
}

template <class Real>
Var Graph<Real>::scale(Var a, Real s) {
  Tensor<Real> C = val(a);
  for (auto& x : C.data()) x *= s;
  return push(
      std::move(C),
      [a, s](Graph& gr, Var self) {
        const auto& dC = gr.g(self);
        auto& dA = gr.g(a);
        for (std::size_t i = 0; i < dC.size(); ++i) dA[i] += s * dC[i];
      },
      "scale");
}

template <class Real>
Var Graph<Real>::layer_norm(Var x, Real eps) {
  if (!(eps > 0)) {
    throw ValidationError("layer_norm: eps must be positive");
  }
  const auto& X = val(x);
  const std::size_t rows = X.rows(), cols = X.cols();
  Tensor<Real> Y(X.shape());
  std::vector<Real> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    Real mu = 0;
    for (std::size_t c = 0; c < cols; ++c) mu += X(r, c);
    mu /= static_cast<Real>(cols);
    Real var = 0;
    for (std::size_t c = 0; c < cols; ++c) {
      const Real d = X(r, c) - mu;
      var += d * d;
    }
    var /= static_cast<Real>(cols);
    inv_std[r] = Real(1) / std::sqrt(var + eps);
    for (std::size_t c = 0; c < cols; ++c) Y(r, c) = (X(r, c) - mu) * inv_std[r];
  }
  return push(
      std::move(Y),
      [x, rows, cols, inv_std = std::move(inv_std)](Graph& gr, Var self) {
        const auto& Y = gr.val(self);
        const auto& dY = gr.g(self);
        auto& dX = gr.g(x);
        const Real n = static_cast<Real>(cols);
        for (std::size_t r = 0; r < rows; ++r) {
          Real mean_dy = 0, mean_dyy = 0;
          for (std::size_t c = 0; c < cols; ++c) {
            mean_dy += dY(r, c);
            mean_dyy += dY(r, c) * Y(r, c);
          }
          mean_dy /= n;
          mean_dyy /= n;
          for (std::size_t c = 0; c < cols; ++c) {
            dX(r, c) += inv_std[r] * (dY(r, c) - mean_dy - Y(r, c) * mean_dyy);
          }
        }
      },
      "layer_norm");
}

template <class Real>
Var Graph<Real>::softmax(Var x, int axis) {
  if (axis != 0 && axis != 1) {
    throw ValidationError("softmax: axis must be 0 or 1");
  }
  const auto& X = val(x);
  const std::size_t rows = X.rows(), cols = X.cols();
  // Work along `len` elements spaced `stride` apart, `count` times.
  const std::size_t len = axis == 1 ? cols : rows;
  const std::size_t count = axis == 1 ? rows : cols;
  const std::size_t stride = axis == 1 ? 1 : cols;
  const std::size_t step = axis == 1 ? cols : 1;
  Tensor<Real> Y(X.shape());
  for (std::size_t s = 0; s < count; ++s) {
    const std::size_t base = s * step;
    Real mx = X[base];
    for (std::size_t i = 1; i < len; ++i) mx = std::max(mx, X[base + i * stride]);
    Real total = 0;
    for (std::size_t i = 0; i < len; ++i) {
      const Real e = std::exp(X[base + i * stride] - mx);
      Y[base + i * stride] = e;
      total += e;
    }
    for (std::size_t i = 0; i < len; ++i) Y[base + i * stride] /= total;
  }
  return push(
      std::move(Y),
      [x, len, count, stride, step](Graph& gr, Var self) {
        const auto& Y = gr.val(self);
        const auto& dY = gr.g(self);
        auto& dX = gr.g(x);
        for (std::size_t s = 0; s < count; ++s) {
          const std::size_t base = s * step;
          Real dot = 0;
          for (std::size_t i = 0; i < len; ++i) {
            dot += dY[base + i * stride] * Y[base + i * stride];
          }
          for (std::size_t i = 0; i < len; ++i) {
            const std::size_t j = base + i * stride;
            dX[j] += Y[j] * (dY[j] - dot);
          }
        }
      },
      "softmax");
}

template <class Real>
Var Graph<Real>::prelu(Var x, Var slope) {
  const auto& X = val(x);
  const auto& A = val(slope);
  if (A.size() != X.cols()) shape_fail("prelu", X.shape(), A.shape());
  const std::size_t cols = X.cols();
  Tensor<Real> Y = X;
  for (std::size_t i = 0; i < Y.size(); ++i) {
    if (!(X[i] > 0)) Y[i] = A[i % cols] * X[i];
  }
  return push(
      std::move(Y),
      [x, slope, cols](Graph& gr, Var self) {
        const auto& X = gr.val(x);
        const auto& A = gr.val(slope);
        const auto& dY = gr.g(self);
        auto& dX = gr.g(x);
        auto& dA = gr.g(slope);
        for (std::size_t i = 0; i < dY.size(); ++i) {
          if (X[i] > 0) {
            dX[i] += dY[i];
          } else {
            dX[i] += A[i % cols] * dY[i];
            dA[i % cols] += X[i] * dY[i];
          }
        }
      },
      "prelu");
}

template <class Real>
Var Graph<Real>::gelu(Var x) {
  Tensor<Real> Y = val(x);
  const Real inv_sqrt2 = Real(1) / std::numbers::sqrt2_v<Real>;
  for (auto& v : Y.data()) v = Real(0.5) * v * (Real(1) + std::erf(v * inv_sqrt2));
  return push(
      std::move(Y),
      [x, inv_sqrt2](Graph& gr, Var self) {
        const auto& X = gr.val(x);
        const auto& dY = gr.g(self);
        auto& dX = gr.g(x);
        const Real inv_sqrt_2pi = inv_sqrt2 * std::numbers::inv_sqrtpi_v<Real>;
        for (std::size_t i = 0; i < dY.size(); ++i) {
          const Real v = X[i];
          const Real cdf = Real(0.5) * (Real(1) + std::erf(v * inv_sqrt2));
          const Real pdf = inv_sqrt_2pi * std::exp(Real(-0.5) * v * v);
          dX[i] += dY[i] * (cdf + v * pdf);
        }
      },
      "gelu");
}

template <class Real>
Var Graph<Real>::dropout(Var x, Real rate, bool train, Rng& rng) {
  if (!(rate >= 0 && rate < 1)) {
    throw ValidationError("dropout: rate must lie in [0, 1)");
  }
  if (!train || rate == 0) {
    return x;
  }
  const auto& X = val(x);
  const Real keep_scale = Real(1) / (Real(1) - rate);
  std::vector<Real> mask(X.size());
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  for (auto& m : mask) m = uniform(rng) < static_cast<double>(rate) ? Real(0) : keep_scale;
  Tensor<Real> Y = X;
  for (std::size_t i = 0; i < Y.size(); ++i) Y[i] *= mask[i];
  return push(
      std::move(Y),
      [x, mask = std::move(mask)](Graph& gr, Var self) {
        const auto& dY = gr.g(self);
        auto& dX = gr.g(x);
        for (std::size_t i = 0; i < dY.size(); ++i) dX[i] += dY[i] * mask[i];
      },
      "dropout");
}

template <class Real>
Var Graph<Real>::mean(Var x, int axis) {
  const auto& X = val(x);
  const std::size_t rows = X.rows(), cols = X.cols();
  if (rows == 0 || cols == 0) {
    throw ShapeError("mean: empty tensor");
  }
  if (axis == 0) {
    Tensor<Real> Y(1, cols);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) Y[c] += X(r, c);
    }
    for (auto& v : Y.data()) v /= static_cast<Real>(rows);
    return push(
        std::move(Y),
        [x, rows, cols](Graph& gr, Var self) {
          const auto& dY = gr.g(self);
          auto& dX = gr.g(x);
          const Real inv = Real(1) / static_cast<Real>(rows);
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < cols; ++c) dX(r, c) += dY[c] * inv;
          }
        },
        "mean");
  }
  if (axis == 1) {
    Tensor<Real> Y(rows, 1);
    for (std::size_t r = 0; r < rows; ++r) {
      Real acc = 0;
      for (std::size_t c = 0; c < cols; ++c) acc += X(r, c);
      Y[r] = acc / static_cast<Real>(cols);
    }
    return push(
        std::move(Y),
        [x, rows, cols](Graph& gr, Var self) {
          const auto& dY = gr.g(self);
          auto& dX = gr.g(x);
          const Real inv = Real(1) / static_cast<Real>(cols);
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < cols; ++c) dX(r, c) += dY[r] * inv;
          }
        },
        "mean");
  }
  throw ValidationError("mean: axis must be 0 or 1");
}

template <class Real>
Var Graph<Real>::sum(Var x) {
  Real acc = 0;
  for (const auto v : val(x).data()) acc += v;
  return push(
      Tensor<Real>::scalar(acc),
      [x](Graph& gr, Var self) {
        const Real d = gr.g(self)[0];
        for (auto& v : gr.g(x).data()) v += d;
      },
      "sum");
}

template <class Real>
Var Graph<Real>::concat_rows(std::span<const Var> parts) {
  if (parts.empty()) {
    throw ShapeError("concat_rows: no inputs");
  }
  const std::size_t cols = val(parts[0]).cols();
  std::size_t rows = 0;
  for (const auto p : parts) {
    if (val(p).cols() != cols) shape_fail("concat_rows", val(parts[0]).shape(), val(p).shape());
    rows += val(p).rows();
  }
  Tensor<Real> Y(rows, cols);
  std::size_t offset = 0;
  for (const auto p : parts) {
    const auto& P = val(p);
    std::copy(P.data().begin(), P.data().end(), Y.data().begin() + offset);
    offset += P.size();
  }
  return push(
      std::move(Y),
      [ids = std::vector<Var>(parts.begin(), parts.end())](Graph& gr, Var self) {
        const auto& dY = gr.g(self);
        std::size_t offset = 0;
        for (const auto p : ids) {
          auto& dP = gr.g(p);
          for (std::size_t i = 0; i < dP.size(); ++i) dP[i] += dY[offset + i];
          offset += dP.size();
        }
      },
      "concat_rows");
}

template <class Real>
Var Graph<Real>::concat_cols(std::span<const Var> parts) {
  if (parts.empty()) {
    throw ShapeError("concat_cols: no inputs");
  }
  const std::size_t rows = val(parts[0]).rows();
  std::size_t cols = 0;
  for (const auto p : parts) {
    if (val(p).rows() != rows) shape_fail("concat_cols", val(parts[0]).shape(), val(p).shape());
    cols += val(p).cols();
  }
  Tensor<Real> Y(rows, cols);
  std::size_t offset = 0;
  for (const auto p : parts) {
    const auto& P = val(p);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < P.cols(); ++c) Y(r, offset + c) = P(r, c);
    }
    offset += P.cols();
  }
  return push(
      std::move(Y),
      [ids = std::vector<Var>(parts.begin(), parts.end()), rows](Graph& gr, Var self) {
        const auto& dY = gr.g(self);
        std::size_t offset = 0;
        for (const auto p : ids) {
          auto& dP = gr.g(p);
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < dP.cols(); ++c) dP(r, c) += dY(r, offset + c);
          }
          offset += dP.cols();
        }
      },
      "concat_cols");
}

template <class Real>
Var Graph<Real>::slice_cols(Var x, std::size_t begin, std::size_t end) {
  const auto& X = val(x);
  if (begin >= end || end > X.cols()) {
    throw ShapeError("slice_cols: bad range [" + std::to_string(begin) + ", " +
                     std::to_string(end) + ") for " + shape_string(X.shape()));
  }
  const std::size_t rows = X.rows(), width = end - begin;
  Tensor<Real> Y(rows, width);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < width; ++c) Y(r, c) = X(r, begin + c);
  }
  return push(
      std::move(Y),
      [x, begin, rows, width](Graph& gr, Var self) {
        const auto& dY = gr.g(self);
        auto& dX = gr.g(x);
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < width; ++c) dX(r, begin + c) += dY(r, c);
        }
      },
      "slice_cols");
}

template <class Real>
Var Graph<Real>::gather_rows(Var table, std::span<const std::size_t> rows) {
  const auto& T = val(table);
  const std::size_t cols = T.cols();
  Tensor<Real> Y(rows.size(), cols);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= T.rows()) {
      throw RangeError("gather_rows: row " + std::to_string(rows[i]) + " out of range [0, " +
                       std::to_string(T.rows()) + ")");
    }
    for (std::size_t c = 0; c < cols; ++c) Y(i, c) = T(rows[i], c);
  }
  return push(
      std::move(Y),
      [table, idx = std::vector<std::size_t>(rows.begin(), rows.end()), cols](Graph& gr,
                                                                             Var self) {
        const auto& dY = gr.g(self);
        auto& dT = gr.g(table);
        for (std::size_t i = 0; i < idx.size(); ++i) {
          for (std::size_t c = 0; c < cols; ++c) dT(idx[i], c) += dY(i, c);
        }
      },
      "gather_rows");
}

template <class Real>
Var Graph<Real>::l1_loss(Var pred, Var target) {
  const auto& P = val(pred);
  const auto& T = val(target);
  if (P.size() != T.size()) shape_fail("l1_loss", P.shape(), T.shape());
  Real acc = 0;
  for (std::size_t i = 0; i < P.size(); ++i) acc += std::abs(P[i] - T[i]);
  return push(
      Tensor<Real>::scalar(acc / static_cast<Real>(P.size())),
      [pred, target](Graph& gr, Var self) {
        const auto& P = gr.val(pred);
        const auto& T = gr.val(target);
        const Real d = gr.g(self)[0] / static_cast<Real>(P.size());
        auto& dP = gr.g(pred);
        auto& dT = gr.g(target);
        for (std::size_t i = 0; i < P.size(); ++i) {
          const Real diff = P[i] - T[i];
          const Real s = diff > 0 ? Real(1) : (diff < 0 ? Real(-1) : Real(0));
          dP[i] += d * s;
          dT[i] -= d * s;
        }
      },
      "l1_loss");
}

template <class Real>
Var Graph<Real>::l2_loss(Var pred, Var target) {
  const auto& P = val(pred);
  const auto& T = val(target);
  if (P.size() != T.size()) shape_fail("l2_loss", P.shape(), T.shape());
  Real acc = 0;
  for (std::size_t i = 0; i < P.size(); ++i) acc += (P[i] - T[i]) * (P[i] - T[i]);
  return push(
      Tensor<Real>::scalar(acc / static_cast<Real>(P.size())),
      [pred, target](Graph& gr, Var self) {
        const auto& P = gr.val(pred);
        const auto& T = gr.val(target);
        const Real d = Real(2) * gr.g(self)[0] / static_cast<Real>(P.size());
        auto& dP = gr.g(pred);
        auto& dT = gr.g(target);
        for (std::size_t i = 0; i < P.size(); ++i) {
          dP[i] += d * (P[i] - T[i]);
          dT[i] -= d * (P[i] - T[i]);
        }
      },
      "l2_loss");
}

template <class Real>
void Graph<Real>::backward(Var loss) {
  if (nodes_.empty() || loss.id >= nodes_.size()) {
    throw StateError("backward: empty tape or unknown loss node");
  }
  if (val(loss).size() != 1) {
    throw ShapeError("backward: loss must be scalar, got " + shape_string(val(loss).shape()));
  }
  for (std::size_t i = 0; i <= loss.id; ++i) {
    nodes_[i].grad = Tensor<Real>(nodes_[i].value.shape());
  }
  nodes_[loss.id].grad[0] = Real(1);
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    if (nodes_[i].backward) nodes_[i].backward(*this, Var{i});
  }
  for (std::size_t i = 0; i <= loss.id; ++i) {
    if (auto* p = nodes_[i].param) {
      auto& dst = p->grad.storage();
      const auto& src = nodes_[i].grad;
      if (dst.size() != src.size()) {
        p->grad = Tensor<Real>(p->value.shape());
      }
      for (std::size_t j = 0; j < src.size(); ++j) p->grad[j] += src[j];
    }
  }
}

// ---------------------------------------------------------------------------

GradCheckResult grad_check(const LossClosure<double>& loss,
                           std::span<Parameter<double>* const> params, double eps) {
  if (!(eps > 0)) {
    throw ValidationError("grad_check: eps must be positive");
  }
  const auto evaluate = [&loss]() {
    Graph<double> g;
    const Var out = loss(g);
    if (g.value(out).size() != 1) {
      throw ShapeError("grad_check: loss must be scalar");
    }
    return g.value(out)[0];
  };

  for (auto* p : params) p->zero_grad();
  double base = 0.0;
  {
    Graph<double> g;
    const Var out = loss(g);
    base = g.value(out)[0];
    g.backward(out);
  }
  if (evaluate() != base) {
    throw DeterminismError("grad_check: loss is not deterministic at a fixed point");
  }

  GradCheckResult result;
  for (auto* p : params) {
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double saved = p->value[i];
      p->value[i] = saved + eps;
      const double up = evaluate();
      p->value[i] = saved - eps;
      const double down = evaluate();
      p->value[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double analytic = p->grad[i];
      const double denom = std::max({1.0, std::abs(analytic), std::abs(numeric)});
      const double err = std::abs(analytic - numeric) / denom;
      ++result.checked;
      if (err > result.max_relative_error) {
        result.max_relative_error = err;
        result.worst_parameter = p->name;
        result.worst_index = i;
      }
    }
  }
  return result;
}

template class Tensor<float>;
template class Tensor<double>;
template class Graph<float>;
template class Graph<double>;

}  // namespace viewsel::ad
