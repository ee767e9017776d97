#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "eli/autodiff.hpp"

namespace eli {

enum class Elementwise { kAdd, kSub, kMul, kRelu, kSigmoid, kTanh };
enum class Reduction { kSum, kMean, kMax };

/// Binary ops need equal shapes; a rank-0 operand broadcasts against any
/// shape. Unary ops ignore `b`.
Var elementwise(Elementwise op, Var a, std::optional<Var> b = std::nullopt);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var relu(Var a);
Var sigmoid(Var a);
Var tanh(Var a);
Var square(Var a);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }

/// [m x k] . [k x n]; trans flags multiply by the transposed operand.
Var matmul(Var a, Var b, bool trans_a = false, bool trans_b = false);

/// Adds bias [n] to every row of x [r x n] (or to x [n]).
Var add_bias(Var x, Var bias);

/// Cross-correlation. x is [C x H x W] or [N x C x H x W]; w is
/// [F x C x k x k]; bias is [F].
Var conv2d(Var x, Var w, Var bias, std::size_t stride, std::size_t padding);
std::size_t conv_output_extent(std::size_t extent, std::size_t kernel, std::size_t stride,
                               std::size_t padding);

Var concat(std::span<const Var> parts, std::size_t axis);
Var concat(std::initializer_list<Var> parts, std::size_t axis);
Var slice(Var x, std::size_t axis, std::size_t begin, std::size_t length);
Var reshape(Var x, Shape shape);
/// Rows of x [r x d] at `rows` -> [rows.size() x d].
Var gather_rows(Var x, std::vector<std::size_t> rows);

/// Reduces the listed axes (removed from the result shape). Max routes the
/// gradient to the lowest-index maximizer.
Var reduce(Reduction op, Var x, std::vector<std::size_t> axes);
Var sum(Var x);
Var mean(Var x);

/// Per channel: softmax over the H*W map, then expected (x, y) over a
/// coordinate grid spanning [-1, 1]. [C x H x W] -> [2C] packed as all x
/// then all y; [N x C x H x W] -> [N x 2C].
Var spatial_softmax(Var features);

/// Mean over masked-in elements of (a - b)^2; mask has the shape of a with
/// 1 = counted, 0 = excluded. Without a mask every element counts.
Var mse(Var prediction, Var target, const std::optional<Tensor>& mask = std::nullopt);

}  // namespace eli
