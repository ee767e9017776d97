#include "eli/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "eli/simd/kernels.hpp"

namespace eli {
namespace {

const char* op_name(Elementwise op) {
  switch (op) {
    case Elementwise::kAdd:
      return "add";
    case Elementwise::kSub:
      return "sub";
    case Elementwise::kMul:
      return "mul";
    case Elementwise::kRelu:
      return "relu";
    case Elementwise::kSigmoid:
      return "sigmoid";
    case Elementwise::kTanh:
      return "tanh";
  }
  return "?";
}

void require_same_graph(Var a, Var b, const char* what) {
  if (a.graph != b.graph) {
    throw std::invalid_argument(std::string(what) + ": operands from different graphs");
  }
}

// Sum of g into a single accumulator slot (scalar broadcast backward).
void accumulate_sum(std::span<double> dst, const Tensor& g, double sign) {
  double s = 0.0;
  for (double v : g.values()) s += v;
  dst[0] += sign * s;
}

Var binary(Elementwise op, Var a, Var b) {
  require_same_graph(a, b, op_name(op));
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const bool same = av.shape() == bv.shape();
  const bool a_bcast = !same && av.rank() == 0;
  const bool b_bcast = !same && bv.rank() == 0;
  if (!same && !a_bcast && !b_bcast) {
    throw std::invalid_argument(std::string(op_name(op)) + ": shape mismatch " +
                                shape_string(av.shape()) + " vs " + shape_string(bv.shape()));
  }
  const Shape out_shape = a_bcast ? bv.shape() : av.shape();
  const std::size_t n = element_count(out_shape);
  std::vector<double> out(n);
  const auto& k = simd::active();
  if (same) {
    switch (op) {
      case Elementwise::kAdd:
        k.add(n, av.data(), bv.data(), out.data());
        break;
      case Elementwise::kSub:
        for (std::size_t i = 0; i < n; ++i) out[i] = av[i] - bv[i];
        break;
      default:
        k.mul(n, av.data(), bv.data(), out.data());
        break;
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      const double x = a_bcast ? av[0] : av[i];
      const double y = b_bcast ? bv[0] : bv[i];
      out[i] = op == Elementwise::kAdd ? x + y : op == Elementwise::kSub ? x - y : x * y;
    }
  }
  Tensor result = Tensor::adopt(out_shape, std::move(out));
  return a.graph->record(
      std::move(result), {a, b},
      [op, av, bv, a_bcast, b_bcast](const Tensor& g, GradSpans grads) {
        const std::size_t n = g.size();
        const auto& k = simd::active();
        auto ga = grads[0];
        auto gb = grads[1];
        if (op == Elementwise::kAdd || op == Elementwise::kSub) {
          const double sb = op == Elementwise::kAdd ? 1.0 : -1.0;
          if (!ga.empty()) {
            if (a_bcast) {
              accumulate_sum(ga, g, 1.0);
            } else {
              k.axpy(n, 1.0, g.data(), ga.data());
            }
          }
          if (!gb.empty()) {
            if (b_bcast) {
              accumulate_sum(gb, g, sb);
            } else {
              k.axpy(n, sb, g.data(), gb.data());
            }
          }
          return;
        }
        if (!ga.empty()) {
          if (a_bcast) {
            double s = 0.0;
            for (std::size_t i = 0; i < n; ++i) s += g[i] * bv[i];
            ga[0] += s;
          } else {
            for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * (b_bcast ? bv[0] : bv[i]);
          }
        }
        if (!gb.empty()) {
          if (b_bcast) {
            double s = 0.0;
            for (std::size_t i = 0; i < n; ++i) s += g[i] * av[i];
            gb[0] += s;
          } else {
            for (std::size_t i = 0; i < n; ++i) gb[i] += g[i] * (a_bcast ? av[0] : av[i]);
          }
        }
      });
}

template <typename Forward, typename Derivative>
Var unary(Var a, Forward forward, Derivative derivative) {
  const Tensor& av = a.value();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = forward(av[i]);
  Tensor result = Tensor::adopt(av.shape(), std::move(out));
  Tensor y = result;
  return a.graph->record(std::move(result), {a},
                         [av, y, derivative](const Tensor& g, GradSpans grads) {
                           auto ga = grads[0];
                           for (std::size_t i = 0; i < ga.size(); ++i) {
                             ga[i] += g[i] * derivative(av[i], y[i]);
                           }
                         });
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t extent = 1;
  std::size_t inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

Var reduce_axis(Reduction op, Var x, std::size_t axis) {
  const Tensor& xv = x.value();
  const AxisSplit s = split_at(xv.shape(), axis);
  if (op == Reduction::kMax && s.extent == 0) {
    throw std::invalid_argument("reduce: max over an empty axis");
  }
  Shape out_shape = xv.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  std::vector<double> out(s.outer * s.inner, 0.0);
  std::vector<std::size_t> argmax;
  if (op == Reduction::kMax) argmax.assign(out.size(), 0);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t dst = o * s.inner + i;
      const double* src = xv.data() + o * s.extent * s.inner + i;
      if (op == Reduction::kMax) {
        double best = src[0];
        std::size_t best_j = 0;
        for (std::size_t j = 1; j < s.extent; ++j) {
          if (src[j * s.inner] > best) {
            best = src[j * s.inner];
            best_j = j;
          }
        }
        out[dst] = best;
        argmax[dst] = best_j;
      } else {
        double acc = 0.0;
        for (std::size_t j = 0; j < s.extent; ++j) acc += src[j * s.inner];
        out[dst] = op == Reduction::kMean ? acc / static_cast<double>(s.extent) : acc;
      }
    }
  }
  return x.graph->record(
      Tensor::adopt(std::move(out_shape), std::move(out)), {x},
      [op, s, argmax = std::move(argmax)](const Tensor& g, GradSpans grads) {
        auto gx = grads[0];
        const double w = op == Reduction::kMean ? 1.0 / static_cast<double>(s.extent) : 1.0;
        for (std::size_t o = 0; o < s.outer; ++o) {
          for (std::size_t i = 0; i < s.inner; ++i) {
            const std::size_t src = o * s.inner + i;
            double* dst = gx.data() + o * s.extent * s.inner + i;
            if (op == Reduction::kMax) {
              dst[argmax[src] * s.inner] += g[src];
            } else {
              for (std::size_t j = 0; j < s.extent; ++j) dst[j * s.inner] += w * g[src];
            }
          }
        }
      });
}

// Output columns [lo, hi) whose input column ox * stride + kx - padding is
// inside [0, width).
std::pair<std::size_t, std::size_t> valid_columns(std::size_t kx, std::size_t stride,
                                                  std::size_t padding, std::size_t width,
                                                  std::size_t out_w) {
  const std::size_t lo = kx >= padding ? 0 : (padding - kx + stride - 1) / stride;
  const std::size_t limit = width + padding - kx;  // ix < width <=> ox * stride < limit
  const std::size_t hi = kx >= width + padding ? 0 : std::min(out_w, (limit + stride - 1) / stride);
  return {std::min(lo, hi), hi};
}

void im2col(const double* x, std::size_t channels, std::size_t height, std::size_t width,
            std::size_t kernel, std::size_t stride, std::size_t padding, std::size_t out_h,
            std::size_t out_w, double* col) {
  const std::size_t plane = out_h * out_w;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t ky = 0; ky < kernel; ++ky) {
      for (std::size_t kx = 0; kx < kernel; ++kx) {
        double* row = col + ((c * kernel + ky) * kernel + kx) * plane;
        const auto [lo, hi] = valid_columns(kx, stride, padding, width, out_w);
        for (std::size_t oy = 0; oy < out_h; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                    static_cast<std::ptrdiff_t>(padding);
          double* dst = row + oy * out_w;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(height)) {
            std::fill(dst, dst + out_w, 0.0);
            continue;
          }
          std::fill(dst, dst + lo, 0.0);
          std::fill(dst + hi, dst + out_w, 0.0);
          // for ox >= lo the input column ox * stride + kx - padding is >= 0
          const double* src = x + (c * height + static_cast<std::size_t>(iy)) * width;
          if (stride == 1) {
            if (lo < hi) std::copy(src + lo + kx - padding, src + hi + kx - padding, dst + lo);
          } else {
            for (std::size_t ox = lo; ox < hi; ++ox) dst[ox] = src[ox * stride + kx - padding];
          }
        }
      }
    }
  }
}

void col2im_add(const double* col, std::size_t channels, std::size_t height, std::size_t width,
                std::size_t kernel, std::size_t stride, std::size_t padding, std::size_t out_h,
                std::size_t out_w, double* x) {
  const std::size_t plane = out_h * out_w;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t ky = 0; ky < kernel; ++ky) {
      for (std::size_t kx = 0; kx < kernel; ++kx) {
        const double* row = col + ((c * kernel + ky) * kernel + kx) * plane;
        const auto [lo, hi] = valid_columns(kx, stride, padding, width, out_w);
        for (std::size_t oy = 0; oy < out_h; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                    static_cast<std::ptrdiff_t>(padding);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(height)) continue;
          double* dst = x + (c * height + static_cast<std::size_t>(iy)) * width;
          const double* src = row + oy * out_w;
          for (std::size_t ox = lo; ox < hi; ++ox) dst[ox * stride + kx - padding] += src[ox];
        }
      }
    }
  }
}

// Softmax of one map into p; returns the expected grid coordinates.
std::pair<double, double> softmax_expectation(const double* a, std::size_t plane,
                                              const std::vector<double>& gx,
                                              const std::vector<double>& gy, double* p) {
  const double peak = *std::max_element(a, a + plane);
  double z = 0.0;
  for (std::size_t i = 0; i < plane; ++i) {
    p[i] = std::exp(a[i] - peak);
    z += p[i];
  }
  double ex = 0.0, ey = 0.0;
  for (std::size_t i = 0; i < plane; ++i) {
    p[i] /= z;
    ex += p[i] * gx[i];
    ey += p[i] * gy[i];
  }
  return {ex, ey};
}

void gemm(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k, const double* a,
          std::size_t lda, const double* b, std::size_t ldb, double beta, double* c,
          std::size_t ldc) {
  simd::GemmArgs g;
  g.trans_a = ta;
  g.trans_b = tb;
  g.m = m;
  g.n = n;
  g.k = k;
  g.a = a;
  g.lda = lda;
  g.b = b;
  g.ldb = ldb;
  g.beta = beta;
  g.c = c;
  g.ldc = ldc;
  simd::active().gemm(g);
}

}  // namespace

Var elementwise(Elementwise op, Var a, std::optional<Var> b) {
  switch (op) {
    case Elementwise::kAdd:
    case Elementwise::kSub:
    case Elementwise::kMul:
      if (!b) throw std::invalid_argument(std::string(op_name(op)) + ": needs two operands");
      return binary(op, a, *b);
    case Elementwise::kRelu:
      return relu(a);
    case Elementwise::kSigmoid:
      return sigmoid(a);
    case Elementwise::kTanh:
      return tanh(a);
  }
  throw std::invalid_argument("elementwise: unknown op");
}

Var add(Var a, Var b) { return binary(Elementwise::kAdd, a, b); }
Var sub(Var a, Var b) { return binary(Elementwise::kSub, a, b); }
Var mul(Var a, Var b) { return binary(Elementwise::kMul, a, b); }

Var relu(Var a) {
  const Tensor& av = a.value();
  std::vector<double> out(av.size());
  simd::active().relu(av.size(), av.data(), out.data());
  return a.graph->record(Tensor::adopt(av.shape(), std::move(out)), {a},
                         [av](const Tensor& g, GradSpans grads) {
                           simd::active().relu_backward(av.size(), av.data(), g.data(),
                                                        grads[0].data());
                         });
}

Var sigmoid(Var a) {
  return unary(a, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Var tanh(Var a) {
  return unary(a, [](double x) { return std::tanh(x); },
               [](double, double y) { return 1.0 - y * y; });
}

Var square(Var a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var scale(Var a, double s) {
  return unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var add_scalar(Var a, double s) {
  return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var matmul(Var a, Var b, bool trans_a, bool trans_b) {
  require_same_graph(a, b, "matmul");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2) {
    throw std::invalid_argument("matmul: operands must be rank 2, got " +
                                shape_string(av.shape()) + " and " + shape_string(bv.shape()));
  }
  const std::size_t m = trans_a ? av.dim(1) : av.dim(0);
  const std::size_t k = trans_a ? av.dim(0) : av.dim(1);
  const std::size_t kb = trans_b ? bv.dim(1) : bv.dim(0);
  const std::size_t n = trans_b ? bv.dim(0) : bv.dim(1);
  if (k != kb) {
    throw std::invalid_argument("matmul: inner extent mismatch " + shape_string(av.shape()) +
                                (trans_a ? "^T" : "") + " vs " + shape_string(bv.shape()) +
                                (trans_b ? "^T" : ""));
  }
  const std::size_t lda = av.dim(1);
  const std::size_t ldb = bv.dim(1);
  std::vector<double> out(m * n);
  gemm(trans_a, trans_b, m, n, k, av.data(), lda, bv.data(), ldb, 0.0, out.data(), n);
  return a.graph->record(
      Tensor::adopt(Shape{m, n}, std::move(out)), {a, b},
      [av, bv, trans_a, trans_b, m, n, k, lda, ldb](const Tensor& g, GradSpans grads) {
        auto ga = grads[0];
        auto gb = grads[1];
        if (!ga.empty()) {
          if (!trans_a) {
            gemm(false, !trans_b, m, k, n, g.data(), n, bv.data(), ldb, 1.0, ga.data(), lda);
          } else {
            gemm(trans_b, true, k, m, n, bv.data(), ldb, g.data(), n, 1.0, ga.data(), lda);
          }
        }
        if (!gb.empty()) {
          if (!trans_b) {
            gemm(!trans_a, false, k, n, m, av.data(), lda, g.data(), n, 1.0, gb.data(), ldb);
          } else {
            gemm(true, trans_a, n, k, m, g.data(), n, av.data(), lda, 1.0, gb.data(), ldb);
          }
        }
      });
}

Var add_bias(Var x, Var bias) {
  require_same_graph(x, bias, "add_bias");
  const Tensor& xv = x.value();
  const Tensor& bv = bias.value();
  if (bv.rank() != 1 || xv.rank() == 0 || xv.shape().back() != bv.dim(0) || xv.rank() > 2) {
    throw std::invalid_argument("add_bias: cannot add bias " + shape_string(bv.shape()) +
                                " to " + shape_string(xv.shape()));
  }
  const std::size_t cols = bv.dim(0);
  const std::size_t rows = xv.size() / std::max<std::size_t>(cols, 1);
  std::vector<double> out(xv.size());
  const auto& k = simd::active();
  for (std::size_t r = 0; r < rows; ++r) {
    k.add(cols, xv.data() + r * cols, bv.data(), out.data() + r * cols);
  }
  return x.graph->record(Tensor::adopt(xv.shape(), std::move(out)), {x, bias},
                         [rows, cols](const Tensor& g, GradSpans grads) {
                           const auto& k = simd::active();
                           if (!grads[0].empty()) k.axpy(g.size(), 1.0, g.data(), grads[0].data());
                           if (!grads[1].empty()) {
                             for (std::size_t r = 0; r < rows; ++r) {
                               k.axpy(cols, 1.0, g.data() + r * cols, grads[1].data());
                             }
                           }
                         });
}

std::size_t conv_output_extent(std::size_t extent, std::size_t kernel, std::size_t stride,
                               std::size_t padding) {
  if (stride == 0) throw std::invalid_argument("conv2d: stride must be positive");
  const std::size_t padded = extent + 2 * padding;
  if (padded < kernel || (padded - kernel) % stride != 0) {
    throw std::invalid_argument("conv2d: non-integral output extent for input " +
                                std::to_string(extent) + ", kernel " + std::to_string(kernel) +
                                ", stride " + std::to_string(stride) + ", padding " +
                                std::to_string(padding));
  }
  return (padded - kernel) / stride + 1;
}

Var conv2d(Var x, Var w, Var bias, std::size_t stride, std::size_t padding) {
  require_same_graph(x, w, "conv2d");
  require_same_graph(x, bias, "conv2d");
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const Tensor& bv = bias.value();
  if (xv.rank() != 3 && xv.rank() != 4) {
    throw std::invalid_argument("conv2d: input must be [C x H x W] or [N x C x H x W], got " +
                                shape_string(xv.shape()));
  }
  if (wv.rank() != 4 || wv.dim(2) != wv.dim(3)) {
    throw std::invalid_argument("conv2d: weight must be [F x C x k x k], got " +
                                shape_string(wv.shape()));
  }
  const bool batched = xv.rank() == 4;
  const std::size_t batch = batched ? xv.dim(0) : 1;
  const std::size_t channels = xv.dim(batched ? 1 : 0);
  const std::size_t height = xv.dim(batched ? 2 : 1);
  const std::size_t width = xv.dim(batched ? 3 : 2);
  const std::size_t filters = wv.dim(0);
  const std::size_t kernel = wv.dim(2);
  if (wv.dim(1) != channels) {
    throw std::invalid_argument("conv2d: channel mismatch, input has " +
                                std::to_string(channels) + ", weight expects " +
                                std::to_string(wv.dim(1)));
  }
  if (bv.rank() != 1 || bv.dim(0) != filters) {
    throw std::invalid_argument("conv2d: bias must be [" + std::to_string(filters) + "], got " +
                                shape_string(bv.shape()));
  }
  const std::size_t out_h = conv_output_extent(height, kernel, stride, padding);
  const std::size_t out_w = conv_output_extent(width, kernel, stride, padding);
  const std::size_t plane = out_h * out_w;
  const std::size_t patch = channels * kernel * kernel;
  const std::size_t in_size = channels * height * width;

  std::vector<double> out(batch * filters * plane);
  std::vector<double> col(patch * plane);
  for (std::size_t b = 0; b < batch; ++b) {
    im2col(xv.data() + b * in_size, channels, height, width, kernel, stride, padding, out_h,
           out_w, col.data());
    double* dst = out.data() + b * filters * plane;
    for (std::size_t f = 0; f < filters; ++f) std::fill(dst + f * plane, dst + (f + 1) * plane, bv[f]);
    gemm(false, false, filters, plane, patch, wv.data(), patch, col.data(), plane, 1.0, dst, plane);
  }
  Shape out_shape = batched ? Shape{batch, filters, out_h, out_w} : Shape{filters, out_h, out_w};
  return x.graph->record(
      Tensor::adopt(std::move(out_shape), std::move(out)), {x, w, bias},
      [=](const Tensor& g, GradSpans grads) {
        auto gx = grads[0];
        auto gw = grads[1];
        auto gb = grads[2];
        std::vector<double> col(patch * plane);
        std::vector<double> dcol;
        if (!gx.empty()) dcol.resize(patch * plane);
        for (std::size_t b = 0; b < batch; ++b) {
          const double* gout = g.data() + b * filters * plane;
          if (!gb.empty()) {
            for (std::size_t f = 0; f < filters; ++f) {
              double s = 0.0;
              for (std::size_t i = 0; i < plane; ++i) s += gout[f * plane + i];
              gb[f] += s;
            }
          }
          if (!gw.empty()) {
            im2col(xv.data() + b * in_size, channels, height, width, kernel, stride, padding,
                   out_h, out_w, col.data());
            gemm(false, true, filters, patch, plane, gout, plane, col.data(), plane, 1.0,
                 gw.data(), patch);
          }
          if (!gx.empty()) {
            gemm(true, false, patch, plane, filters, wv.data(), patch, gout, plane, 0.0,
                 dcol.data(), plane);
            col2im_add(dcol.data(), channels, height, width, kernel, stride, padding, out_h,
                       out_w, gx.data() + b * in_size);
          }
        }
      });
}

Var concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no parts");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) {
    throw std::invalid_argument("concat: axis " + std::to_string(axis) + " out of range for " +
                                shape_string(first));
  }
  Shape out_shape = first;
  out_shape[axis] = 0;
  std::vector<std::size_t> extents;
  for (const Var& p : parts) {
    require_same_graph(parts[0], p, "concat");
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == first[i];
    if (!ok) {
      throw std::invalid_argument("concat: extent mismatch off axis " + std::to_string(axis) +
                                  ": " + shape_string(first) + " vs " + shape_string(s));
    }
    extents.push_back(s[axis]);
    out_shape[axis] += s[axis];
  }
  if (parts.size() == 1) return parts[0];
  const AxisSplit split = split_at(out_shape, axis);
  const std::size_t row = split.extent * split.inner;
  std::vector<double> out(element_count(out_shape));
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const std::size_t chunk = extents[k] * split.inner;
    const double* src = parts[k].value().data();
    for (std::size_t o = 0; o < split.outer; ++o) {
      std::copy(src + o * chunk, src + (o + 1) * chunk, out.data() + o * row + offset);
    }
    offset += chunk;
  }
  return parts[0].graph->record(
      Tensor::adopt(std::move(out_shape), std::move(out)), parts,
      [extents, split, row](const Tensor& g, GradSpans grads) {
        std::size_t offset = 0;
        for (std::size_t k = 0; k < extents.size(); ++k) {
          const std::size_t chunk = extents[k] * split.inner;
          auto gk = grads[k];
          if (!gk.empty()) {
            for (std::size_t o = 0; o < split.outer; ++o) {
              const double* src = g.data() + o * row + offset;
              double* dst = gk.data() + o * chunk;
              for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
            }
          }
          offset += chunk;
        }
      });
}

Var concat(std::initializer_list<Var> parts, std::size_t axis) {
  return concat(std::span<const Var>(parts.begin(), parts.size()), axis);
}

Var slice(Var x, std::size_t axis, std::size_t begin, std::size_t length) {
  const Shape& shape = x.shape();
  if (axis >= shape.size()) {
    throw std::invalid_argument("slice: axis " + std::to_string(axis) + " out of range for " +
                                shape_string(shape));
  }
  if (begin + length > shape[axis]) {
    throw std::invalid_argument("slice: range [" + std::to_string(begin) + ", " +
                                std::to_string(begin + length) + ") exceeds extent " +
                                std::to_string(shape[axis]));
  }
  const AxisSplit split = split_at(shape, axis);
  Shape out_shape = shape;
  out_shape[axis] = length;
  const std::size_t row = split.extent * split.inner;
  const std::size_t chunk = length * split.inner;
  const std::size_t offset = begin * split.inner;
  std::vector<double> out(split.outer * chunk);
  const double* src = x.value().data();
  for (std::size_t o = 0; o < split.outer; ++o) {
    std::copy(src + o * row + offset, src + o * row + offset + chunk, out.data() + o * chunk);
  }
  return x.graph->record(Tensor::adopt(std::move(out_shape), std::move(out)), {x},
                         [split, row, chunk, offset](const Tensor& g, GradSpans grads) {
                           auto gx = grads[0];
                           for (std::size_t o = 0; o < split.outer; ++o) {
                             double* dst = gx.data() + o * row + offset;
                             const double* src = g.data() + o * chunk;
                             for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
                           }
                         });
}

Var reshape(Var x, Shape shape) {
  Tensor result = x.value().reshaped(std::move(shape));
  return x.graph->record(std::move(result), {x}, [](const Tensor& g, GradSpans grads) {
    simd::active().axpy(g.size(), 1.0, g.data(), grads[0].data());
  });
}

Var gather_rows(Var x, std::vector<std::size_t> rows) {
  const Tensor& xv = x.value();
  if (xv.rank() != 2) {
    throw std::invalid_argument("gather_rows: input must be rank 2, got " +
                                shape_string(xv.shape()));
  }
  const std::size_t width = xv.dim(1);
  std::vector<double> out(rows.size() * width);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= xv.dim(0)) {
      throw std::out_of_range("gather_rows: row " + std::to_string(rows[r]) + " of " +
                              std::to_string(xv.dim(0)));
    }
    std::copy(xv.data() + rows[r] * width, xv.data() + (rows[r] + 1) * width,
              out.data() + r * width);
  }
  const std::size_t count = rows.size();
  return x.graph->record(Tensor::adopt(Shape{count, width}, std::move(out)), {x},
                         [rows = std::move(rows), width](const Tensor& g, GradSpans grads) {
                           auto gx = grads[0];
                           for (std::size_t r = 0; r < rows.size(); ++r) {
                             simd::active().axpy(width, 1.0, g.data() + r * width,
                                                 gx.data() + rows[r] * width);
                           }
                         });
}

Var reduce(Reduction op, Var x, std::vector<std::size_t> axes) {
  const std::size_t rank = x.value().rank();
  std::sort(axes.begin(), axes.end());
  for (std::size_t i = 0; i < axes.size(); ++i) {
    if (axes[i] >= rank) {
      throw std::invalid_argument("reduce: invalid axis " + std::to_string(axes[i]) + " for " +
                                  shape_string(x.shape()));
    }
    if (i > 0 && axes[i] == axes[i - 1]) {
      throw std::invalid_argument("reduce: repeated axis " + std::to_string(axes[i]));
    }
  }
  // Innermost axis first, so max ties resolve to the lowest flat index.
  Var out = x;
  for (auto it = axes.rbegin(); it != axes.rend(); ++it) out = reduce_axis(op, out, *it);
  return out;
}

Var sum(Var x) {
  std::vector<std::size_t> axes(x.value().rank());
  std::iota(axes.begin(), axes.end(), 0);
  if (axes.empty()) return x;
  return reduce(Reduction::kSum, x, axes);
}

Var mean(Var x) {
  std::vector<std::size_t> axes(x.value().rank());
  std::iota(axes.begin(), axes.end(), 0);
  if (axes.empty()) return x;
  return reduce(Reduction::kMean, x, axes);
}

Var spatial_softmax(Var features) {
  const Tensor& xv = features.value();
  if (xv.rank() != 3 && xv.rank() != 4) {
    throw std::invalid_argument("spatial_softmax: expected [C x H x W] or [N x C x H x W], got " +
                                shape_string(xv.shape()));
  }
  const bool batched = xv.rank() == 4;
  const std::size_t batch = batched ? xv.dim(0) : 1;
  const std::size_t channels = xv.dim(batched ? 1 : 0);
  const std::size_t height = xv.dim(batched ? 2 : 1);
  const std::size_t width = xv.dim(batched ? 3 : 2);
  if (height == 0 || width == 0) throw std::invalid_argument("spatial_softmax: empty map");
  const std::size_t plane = height * width;
  auto grid = [](std::size_t i, std::size_t extent) {
    return extent > 1 ? -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(extent - 1)
                      : 0.0;
  };
  std::vector<double> gx(plane), gy(plane);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      gx[y * width + x] = grid(x, width);
      gy[y * width + x] = grid(y, height);
    }
  }
  std::vector<double> out(batch * 2 * channels);
  std::vector<double> p(plane);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < channels; ++c) {
      const auto [ex, ey] =
          softmax_expectation(xv.data() + (b * channels + c) * plane, plane, gx, gy, p.data());
      out[b * 2 * channels + c] = ex;
      out[b * 2 * channels + channels + c] = ey;
    }
  }
  Shape out_shape = batched ? Shape{batch, 2 * channels} : Shape{2 * channels};
  return features.graph->record(
      Tensor::adopt(std::move(out_shape), std::move(out)), {features},
      [xv, batch, channels, plane, gx = std::move(gx), gy = std::move(gy)](const Tensor& g,
                                                                           GradSpans grads) {
        auto ga = grads[0];
        std::vector<double> p(plane);
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t c = 0; c < channels; ++c) {
            const std::size_t base = (b * channels + c) * plane;
            const auto [ex, ey] = softmax_expectation(xv.data() + base, plane, gx, gy, p.data());
            const double gex = g[b * 2 * channels + c];
            const double gey = g[b * 2 * channels + channels + c];
            for (std::size_t i = 0; i < plane; ++i) {
              ga[base + i] += p[i] * ((gx[i] - ex) * gex + (gy[i] - ey) * gey);
            }
          }
        }
      });
}

Var mse(Var prediction, Var target, const std::optional<Tensor>& mask) {
  require_same_graph(prediction, target, "mse");
  const Tensor& pv = prediction.value();
  const Tensor& tv = target.value();
  require_same_shape(pv, tv, "mse");
  if (mask) require_same_shape(pv, *mask, "mse mask");
  const std::size_t n = pv.size();
  std::vector<double> weight(n, 1.0);
  if (mask) weight = mask->to_vector();
  const double count = std::accumulate(weight.begin(), weight.end(), 0.0);
  if (!(count > 0.0)) throw std::invalid_argument("mse: mask excludes every element");
  std::vector<double> diff(n);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    diff[i] = weight[i] * (pv[i] - tv[i]);
    loss += diff[i] * (pv[i] - tv[i]);
  }
  loss /= count;
  return prediction.graph->record(
      Tensor::adopt(Shape{}, {loss}), {prediction, target},
      [diff = std::move(diff), count](const Tensor& g, GradSpans grads) {
        const double s = 2.0 * g[0] / count;
        if (!grads[0].empty()) simd::active().axpy(diff.size(), s, diff.data(), grads[0].data());
        if (!grads[1].empty()) simd::active().axpy(diff.size(), -s, diff.data(), grads[1].data());
      });
}

}  // namespace eli
