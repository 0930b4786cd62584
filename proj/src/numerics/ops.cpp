#include "cicr/numerics/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

namespace cicr::num {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

constexpr double kExpClamp = 700.0;

enum class Broadcast { Same, Scalar, Row };

Broadcast broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Broadcast::Same;
  if (b.size() == 1) return Broadcast::Scalar;
  if (a.rank() == 2 && b.size() == a.cols() && (b.rank() == 1 || (b.rank() == 2 && b.rows() == 1)))
    return Broadcast::Row;
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) + " and " +
                       shape_str(b.shape()));
}

inline std::size_t b_index(Broadcast kind, std::size_t i, std::size_t cols) {
  switch (kind) {
    case Broadcast::Same: return i;
    case Broadcast::Scalar: return 0;
    case Broadcast::Row: return i % cols;
  }
  return 0;
}

// Elementwise binary op with partials (d out/d a, d out/d b) evaluated per element.
template <typename Fwd, typename Da, typename Db>
Tensor binary(Tape& tape, const Tensor& a, const Tensor& b, const char* name, Fwd fwd, Da da, Db db) {
  const Broadcast kind = broadcast_kind(a, b, name);
  const std::size_t cols = a.rank() == 2 ? a.cols() : a.size();
  Tensor out(a.shape());
  auto av = a.values();
  auto bv = b.values();
  auto ov = out.values_mut();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = fwd(av[i], bv[b_index(kind, i, cols)]);
  if (tape.tracks({&a, &b})) {
    tape.record({a, b}, out, [a, b, out, kind, cols, da, db]() mutable {
      auto g = out.grad();
      auto av = a.values();
      auto bv = b.values();
      if (a.requires_grad()) {
        auto ga = a.grad_mut();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * da(av[i], bv[b_index(kind, i, cols)]);
      }
      if (b.requires_grad()) {
        auto gb = b.grad_mut();
        for (std::size_t i = 0; i < g.size(); ++i) {
          const std::size_t j = b_index(kind, i, cols);
          gb[j] += g[i] * db(av[i], bv[j]);
        }
      }
    });
  }
  return out;
}

// Elementwise unary op; `deriv` receives (input, output).
template <typename Fwd, typename Deriv>
Tensor unary(Tape& tape, const Tensor& x, Fwd fwd, Deriv deriv) {
  Tensor out(x.shape());
  auto xv = x.values();
  auto ov = out.values_mut();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = fwd(xv[i]);
  if (tape.tracks({&x})) {
    tape.record({x}, out, [x, out, deriv]() mutable {
      auto g = out.grad();
      auto xv = x.values();
      auto ov = out.values();
      auto gx = x.grad_mut();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * deriv(xv[i], ov[i]);
    });
  }
  return out;
}

struct AxisLayout {
  std::size_t outer, len, inner;
};

AxisLayout axis_layout(const Tensor& x, std::size_t axis) {
  if (axis >= std::max<std::size_t>(x.rank(), 1))
    throw DimensionError("axis " + std::to_string(axis) + " invalid for shape " + shape_str(x.shape()));
  if (x.rank() == 0) return {1, 1, 1};
  AxisLayout l{1, x.dim(axis), 1};
  for (std::size_t i = 0; i < axis; ++i) l.outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) l.inner *= x.dim(i);
  return l;
}

void require_rank2(const Tensor& x, const char* op) {
  if (x.rank() != 2) throw DimensionError(std::string(op) + " needs a rank-2 tensor, got " + shape_str(x.shape()));
}

}  // namespace

double sigmoid(double x) {
  x = std::clamp(x, -kExpClamp, kExpClamp);
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows())
    throw DimensionError("matmul: cannot multiply " + shape_str(a.shape()) + " by " + shape_str(b.shape()));
  const auto m = a.rows(), k = a.cols(), n = b.cols();
  Tensor out(Shape{m, n});
  MutMap(out.values_mut().data(), m, n).noalias() =
      ConstMap(a.values().data(), m, k) * ConstMap(b.values().data(), k, n);
  if (tape.tracks({&a, &b})) {
    tape.record({a, b}, out, [a, b, out, m, k, n]() mutable {
      ConstMap g(out.grad().data(), m, n);
      if (a.requires_grad())
        MutMap(a.grad_mut().data(), m, k).noalias() += g * ConstMap(b.values().data(), k, n).transpose();
      if (b.requires_grad())
        MutMap(b.grad_mut().data(), k, n).noalias() += ConstMap(a.values().data(), m, k).transpose() * g;
    });
  }
  return out;
}

Tensor transpose(Tape& tape, const Tensor& x) {
  require_rank2(x, "transpose");
  const auto m = x.rows(), n = x.cols();
  Tensor out(Shape{n, m});
  MutMap(out.values_mut().data(), n, m) = ConstMap(x.values().data(), m, n).transpose();
  if (tape.tracks({&x})) {
    tape.record({x}, out, [x, out, m, n]() mutable {
      MutMap(x.grad_mut().data(), m, n) += ConstMap(out.grad().data(), n, m).transpose();
    });
  }
  return out;
}

Tensor reshape(Tape& tape, const Tensor& x, Shape shape) {
  Tensor out = x.reshaped(std::move(shape));
  if (tape.tracks({&x})) {
    tape.record({x}, out, [x, out]() mutable {
      auto g = out.grad();
      auto gx = x.grad_mut();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
  }
  return out;
}

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  return binary(
      tape, a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
  return binary(
      tape, a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  return binary(
      tape, a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor div(Tape& tape, const Tensor& a, const Tensor& b) {
  for (double v : b.values())
    if (v == 0.0) throw ContractError("div: zero divisor");
  return binary(
      tape, a, b, "div", [](double x, double y) { return x / y; }, [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

Tensor minimum(Tape& tape, const Tensor& a, const Tensor& b) {
  return binary(
      tape, a, b, "minimum", [](double x, double y) { return std::min(x, y); },
      [](double x, double y) { return x <= y ? 1.0 : 0.0; }, [](double x, double y) { return x <= y ? 0.0 : 1.0; });
}

Tensor maximum(Tape& tape, const Tensor& a, const Tensor& b) {
  return binary(
      tape, a, b, "maximum", [](double x, double y) { return std::max(x, y); },
      [](double x, double y) { return x >= y ? 1.0 : 0.0; }, [](double x, double y) { return x >= y ? 0.0 : 1.0; });
}

Tensor scale(Tape& tape, const Tensor& x, double factor) {
  return unary(
      tape, x, [factor](double v) { return v * factor; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(Tape& tape, const Tensor& x, double offset) {
  return unary(
      tape, x, [offset](double v) { return v + offset; }, [](double, double) { return 1.0; });
}

Tensor sigmoid(Tape& tape, const Tensor& x) {
  return unary(
      tape, x, [](double v) { return sigmoid(v); }, [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(Tape& tape, const Tensor& x) {
  return unary(
      tape, x, [](double v) { return v > 0 || std::isnan(v) ? v : 0.0; }, [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

Tensor softplus(Tape& tape, const Tensor& x) {
  return unary(
      tape, x, [](double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); },
      [](double v, double) { return sigmoid(v); });
}

Tensor abs(Tape& tape, const Tensor& x) {
  return unary(
      tape, x, [](double v) { return std::abs(v); },
      [](double v, double) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); });
}

Tensor softmax(Tape& tape, const Tensor& x, std::size_t axis) {
  const AxisLayout l = axis_layout(x, axis);
  Tensor out(x.shape());
  auto xv = x.values();
  auto ov = out.values_mut();
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t in = 0; in < l.inner; ++in) {
      const std::size_t base = o * l.len * l.inner + in;
      double mx = xv[base];
      for (std::size_t j = 1; j < l.len; ++j) mx = std::max(mx, xv[base + j * l.inner]);
      double total = 0.0;
      for (std::size_t j = 0; j < l.len; ++j) {
        const double e = std::exp(std::max(xv[base + j * l.inner] - mx, -kExpClamp));
        ov[base + j * l.inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < l.len; ++j) ov[base + j * l.inner] /= total;
    }
  }
  if (tape.tracks({&x})) {
    tape.record({x}, out, [x, out, l]() mutable {
      auto g = out.grad();
      auto y = out.values();
      auto gx = x.grad_mut();
      for (std::size_t o = 0; o < l.outer; ++o) {
        for (std::size_t in = 0; in < l.inner; ++in) {
          const std::size_t base = o * l.len * l.inner + in;
          double dot = 0.0;
          for (std::size_t j = 0; j < l.len; ++j) dot += g[base + j * l.inner] * y[base + j * l.inner];
          for (std::size_t j = 0; j < l.len; ++j) {
            const std::size_t i = base + j * l.inner;
            gx[i] += y[i] * (g[i] - dot);
          }
        }
      }
    });
  }
  return out;
}

Tensor log_softmax(Tape& tape, const Tensor& x, std::size_t axis) {
  const AxisLayout l = axis_layout(x, axis);
  Tensor out(x.shape());
  auto xv = x.values();
  auto ov = out.values_mut();
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t in = 0; in < l.inner; ++in) {
      const std::size_t base = o * l.len * l.inner + in;
      double mx = xv[base];
      for (std::size_t j = 1; j < l.len; ++j) mx = std::max(mx, xv[base + j * l.inner]);
      double total = 0.0;
      for (std::size_t j = 0; j < l.len; ++j) total += std::exp(std::max(xv[base + j * l.inner] - mx, -kExpClamp));
      const double lse = mx + std::log(total);
      for (std::size_t j = 0; j < l.len; ++j) ov[base + j * l.inner] = xv[base + j * l.inner] - lse;
    }
  }
  if (tape.tracks({&x})) {
    tape.record({x}, out, [x, out, l]() mutable {
      auto g = out.grad();
      auto y = out.values();
      auto gx = x.grad_mut();
      for (std::size_t o = 0; o < l.outer; ++o) {
        for (std::size_t in = 0; in < l.inner; ++in) {
          const std::size_t base = o * l.len * l.inner + in;
          double gsum = 0.0;
          for (std::size_t j = 0; j < l.len; ++j) gsum += g[base + j * l.inner];
          for (std::size_t j = 0; j < l.len; ++j) {
            const std::size_t i = base + j * l.inner;
            gx[i] += g[i] - std::exp(y[i]) * gsum;
          }
        }
      }
    });
  }
  return out;
}

Tensor sum(Tape& tape, const Tensor& x) {
  double total = 0.0;
  for (double v : x.values()) total += v;
  Tensor out = Tensor::scalar(total);
  if (tape.tracks({&x})) {
    tape.record({x}, out, [x, out]() mutable {
      const double g = out.grad()[0];
      for (double& gx : x.grad_mut()) gx += g;
    });
  }
  return out;
}

Tensor mean(Tape& tape, const Tensor& x) {
  return scale(tape, sum(tape, x), 1.0 / static_cast<double>(x.size()));
}

Tensor concat(Tape& tape, const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat of zero tensors");
  const Tensor& first = parts.front();
  if (first.rank() == 0 || first.rank() > 2 || axis >= first.rank())
    throw DimensionError("concat: axis " + std::to_string(axis) + " invalid for " + shape_str(first.shape()));

  if (first.rank() == 1 || axis == 0) {
    // Row-major layout: stacking along the leading axis is plain appending.
    Shape shape = first.shape();
    shape[0] = 0;
    for (const auto& p : parts) {
      if (p.rank() != first.rank() || (p.rank() == 2 && p.cols() != first.cols()))
        throw DimensionError("concat: " + shape_str(p.shape()) + " does not stack with " + shape_str(first.shape()));
      shape[0] += p.dim(0);
    }
    std::vector<double> values;
    values.reserve(shape_size(shape));
    for (const auto& p : parts) values.insert(values.end(), p.values().begin(), p.values().end());
    Tensor out(shape, std::move(values));
    bool track = false;
    for (const auto& p : parts) track = track || tape.tracks({&p});
    if (track) {
      tape.record(parts, out, [parts, out]() mutable {
        auto g = out.grad();
        std::size_t offset = 0;
        for (auto& p : parts) {
          if (p.requires_grad()) {
            auto gp = p.grad_mut();
            for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[offset + i];
          }
          offset += p.size();
        }
      });
    }
    return out;
  }

  const std::size_t rows = first.rows();
  std::size_t cols = 0;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.rows() != rows)
      throw DimensionError("concat: " + shape_str(p.shape()) + " does not join with " + shape_str(first.shape()));
    cols += p.cols();
  }
  Tensor out(Shape{rows, cols});
  auto ov = out.values_mut();
  std::size_t c0 = 0;
  for (const auto& p : parts) {
    auto pv = p.values();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(pv.begin() + r * p.cols(), p.cols(), ov.begin() + r * cols + c0);
    c0 += p.cols();
  }
  bool track = false;
  for (const auto& p : parts) track = track || tape.tracks({&p});
  if (track) {
    tape.record(parts, out, [parts, out, rows, cols]() mutable {
      auto g = out.grad();
      std::size_t c0 = 0;
      for (auto& p : parts) {
        if (p.requires_grad()) {
          auto gp = p.grad_mut();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < p.cols(); ++c) gp[r * p.cols() + c] += g[r * cols + c0 + c];
        }
        c0 += p.cols();
      }
    });
  }
  return out;
}

Tensor slice(Tape& tape, const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  if (x.rank() == 0 || x.rank() > 2 || axis >= x.rank() || begin >= end || end > x.dim(axis))
    throw DimensionError("slice [" + std::to_string(begin) + "," + std::to_string(end) + ") on axis " +
                         std::to_string(axis) + " of " + shape_str(x.shape()));
  const std::size_t rows = x.rank() == 2 ? x.rows() : 1;
  const std::size_t cols = x.cols();
  const bool by_row = x.rank() == 2 && axis == 0;
  const std::size_t r0 = by_row ? begin : 0, r1 = by_row ? end : rows;
  const std::size_t c0 = by_row ? 0 : begin, c1 = by_row ? cols : end;
  Shape shape = x.shape();
  shape[axis] = end - begin;
  Tensor out(shape);
  auto xv = x.values();
  auto ov = out.values_mut();
  const std::size_t w = c1 - c0;
  for (std::size_t r = r0; r < r1; ++r) std::copy_n(xv.begin() + r * cols + c0, w, ov.begin() + (r - r0) * w);
  if (tape.tracks({&x})) {
    tape.record({x}, out, [x, out, r0, r1, c0, w, cols]() mutable {
      auto g = out.grad();
      auto gx = x.grad_mut();
      for (std::size_t r = r0; r < r1; ++r)
        for (std::size_t c = 0; c < w; ++c) gx[r * cols + c0 + c] += g[(r - r0) * w + c];
    });
  }
  return out;
}

Tensor layer_norm(Tape& tape, const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (x.rank() == 0 || x.rank() > 2) throw DimensionError("layer_norm needs rank 1 or 2, got " + shape_str(x.shape()));
  const std::size_t rows = x.rows(), n = x.cols();
  if (gain.size() != n || bias.size() != n)
    throw DimensionError("layer_norm: gain " + shape_str(gain.shape()) + " / bias " + shape_str(bias.shape()) +
                         " do not match " + shape_str(x.shape()));
  Tensor out(x.shape());
  std::vector<double> xhat(x.size());
  std::vector<double> inv_std(rows);
  auto xv = x.values();
  auto gv = gain.values();
  auto bv = bias.values();
  auto ov = out.values_mut();
  for (std::size_t r = 0; r < rows; ++r) {
    double mu = 0.0;
    for (std::size_t c = 0; c < n; ++c) mu += xv[r * n + c];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t c = 0; c < n; ++c) var += (xv[r * n + c] - mu) * (xv[r * n + c] - mu);
    var /= static_cast<double>(n);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < n; ++c) {
      const std::size_t i = r * n + c;
      xhat[i] = (xv[i] - mu) * inv_std[r];
      ov[i] = xhat[i] * gv[c] + bv[c];
    }
  }
  if (tape.tracks({&x, &gain, &bias})) {
    tape.record({x, gain, bias}, out,
                [x, gain, bias, out, xhat = std::move(xhat), inv_std = std::move(inv_std), rows, n]() mutable {
                  auto g = out.grad();
                  auto gv = gain.values();
                  if (gain.requires_grad()) {
                    auto gg = gain.grad_mut();
                    for (std::size_t i = 0; i < g.size(); ++i) gg[i % n] += g[i] * xhat[i];
                  }
                  if (bias.requires_grad()) {
                    auto gb = bias.grad_mut();
                    for (std::size_t i = 0; i < g.size(); ++i) gb[i % n] += g[i];
                  }
                  if (x.requires_grad()) {
                    auto gx = x.grad_mut();
                    const double dn = static_cast<double>(n);
                    for (std::size_t r = 0; r < rows; ++r) {
                      double s1 = 0.0, s2 = 0.0;
                      for (std::size_t c = 0; c < n; ++c) {
                        const double d = g[r * n + c] * gv[c];
                        s1 += d;
                        s2 += d * xhat[r * n + c];
                      }
                      for (std::size_t c = 0; c < n; ++c) {
                        const std::size_t i = r * n + c;
                        const double d = g[i] * gv[c];
                        gx[i] += inv_std[r] / dn * (dn * d - s1 - xhat[i] * s2);
                      }
                    }
                  }
                });
  }
  return out;
}

}  // namespace cicr::num
