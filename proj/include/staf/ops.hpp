#pragma once

#include <cstdint>
#include <vector>

#include "staf/autodiff.hpp"
#include "staf/tensor.hpp"

namespace staf {

struct LinearLayer {
  Tensor weight;  // {out, in}
  Tensor bias;    // {out}

  LinearLayer() = default;
  LinearLayer(Tensor w, Tensor b);
  std::int64_t in_dim() const { return weight.dim(1); }
  std::int64_t out_dim() const { return weight.dim(0); }
};

// Tape-side mirror of a LinearLayer; holds the weights as (possibly watched)
// graph inputs so one forward definition serves both training and inference.
struct LinearVars {
  Var weight;
  Var bias;
};

LinearVars as_constant(const LinearLayer& layer);

namespace ops {

// Elementwise.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double c);
Var tanh(const Var& a);

// Reductions (fixed left-to-right accumulation).
Var sum(const Var& a);                    // -> {1}
Var norm2(const Var& a);                  // -> {1}, Euclidean norm of the flat buffer
Var average(const std::vector<Var>& xs);  // elementwise mean, all same shape

// Shape manipulation. reshape/slice cover rank-1 plumbing around features.
Var reshape(const Var& a, std::vector<std::int64_t> dims);
Var concat(const std::vector<Var>& xs);                  // rank-1 inputs
Var slice(const Var& a, std::int64_t offset, std::int64_t len);  // rank-1
Var row(const Var& m, std::int64_t i);                   // {r,c} -> {c}
Var stack_rows(const std::vector<Var>& rows);            // k vectors {c} -> {k,c}
Var concat_cols(const Var& a, const Var& b);             // {r,p},{r,q} -> {r,p+q}

// Linear algebra.
Var transpose(const Var& a);
Var matmul(const Var& a, const Var& b);
Var add_rowvec(const Var& m, const Var& v);
// y = W·x + b on a vector {in} -> {out}, or rowwise on a batch {n,in} -> {n,out}.
Var linear(const Var& weight, const Var& bias, const Var& x);
Var softmax_rows(const Var& m);

// Sampling and deconvolution.
// map {C,H,W}; pts {n,2} rows are (x,y) in [-1,1] align-corners coordinates,
// x along width. Out-of-range points clamp to the border (and get zero
// coordinate gradient there). Result {n,C}.
Var bilinear_sample(const Var& map, const Var& pts);
// Transposed convolution, kernel 4, stride 2, padding 1: exactly doubles the
// spatial dims. weight {C_out,C_in,4,4}, bias {C_out}, map {C_in,H,W}.
Var deconv(const Var& weight, const Var& bias, const Var& map);

// Batched axis-angle to rotation, one row each: {K,3} -> {K,9} row-major.
Var rodrigues_rows(const Var& aa);

// y_i = mat3(A_i) · x_i per row: A {n,9}, X {n,3} -> {n,3}.
Var rowwise_transform(const Var& A, const Var& X);

// Weak perspective: {n,3} points, scalar s {1}, shift t {2} -> {n,2},
// out = s * p_xy + t.
Var project_xy(const Var& points, const Var& s, const Var& t);

// Convenience wrappers.
Var linear(const LinearLayer& layer, const Var& x);
Var linear(const LinearVars& layer, const Var& x);

}  // namespace ops
}  // namespace staf
