#pragma once

#include <vector>

#include "cicr/numerics/tape.hpp"
#include "cicr/numerics/tensor.hpp"

// Differentiable operations. Each one records itself on `tape` when the tape is
// enabled and any input requires gradients; otherwise it is a plain computation.
//
// Binary elementwise ops accept b with a's exact shape, a single-element b
// (scalar broadcast) or, for rank-2 a, a length-cols b broadcast over rows.
namespace cicr::num {

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor transpose(Tape& tape, const Tensor& x);
Tensor reshape(Tape& tape, const Tensor& x, Shape shape);

Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor div(Tape& tape, const Tensor& a, const Tensor& b);
Tensor minimum(Tape& tape, const Tensor& a, const Tensor& b);
Tensor maximum(Tape& tape, const Tensor& a, const Tensor& b);

Tensor scale(Tape& tape, const Tensor& x, double factor);
Tensor add_scalar(Tape& tape, const Tensor& x, double offset);

Tensor sigmoid(Tape& tape, const Tensor& x);
Tensor relu(Tape& tape, const Tensor& x);
Tensor softplus(Tape& tape, const Tensor& x);
Tensor abs(Tape& tape, const Tensor& x);

// Max-subtracted softmax over `axis`.
Tensor softmax(Tape& tape, const Tensor& x, std::size_t axis);
Tensor log_softmax(Tape& tape, const Tensor& x, std::size_t axis);

Tensor sum(Tape& tape, const Tensor& x);
Tensor mean(Tape& tape, const Tensor& x);

// Rank-1 or rank-2 concatenation along `axis`.
Tensor concat(Tape& tape, const std::vector<Tensor>& parts, std::size_t axis);
// Half-open range [begin, end) along `axis` (rank 1 or 2).
Tensor slice(Tape& tape, const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end);

// Normalizes each row of a rank-2 (or the single row of a rank-1) tensor, then
// applies gain and bias of length cols.
Tensor layer_norm(Tape& tape, const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

// Plain sigmoid on a double with the same exponent clamp as the tensor op.
double sigmoid(double x);

}  // namespace cicr::num
