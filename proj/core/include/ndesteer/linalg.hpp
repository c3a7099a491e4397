#pragma once

#include <span>
#include <vector>

#include "ndesteer/tensor.hpp"

// Numeric kernels for the toy transformer. Reductions accumulate in double
// and round once to f32, which keeps results identical across platforms at
// the tolerances the tests use.
namespace ndesteer::linalg {

double dot(std::span<const float> a, std::span<const float> b);
double norm(std::span<const float> v);

// u.v / (|u||v|); throws ZeroVector if either norm <= 1e-12, ShapeError on
// length mismatch. Result is clamped to [-1, 1].
double cosine_similarity(std::span<const float> u, std::span<const float> v);

// unit-length copy; ZeroVector when the norm is <= 1e-12
std::vector<float> normalized(std::span<const float> v);

// [n x k] * [k x m] -> [n x m]
Tensor matmul(const Tensor& a, const Tensor& b);

// [n x k] * [k x m] + bias[m] broadcast over rows
Tensor affine(const Tensor& x, const Tensor& weight, const Tensor& bias);

// out = xᵀ-style product for a single row: y[m] = x[k] * W[k x m]
std::vector<float> vec_mat(std::span<const float> x, const Tensor& weight);

// row-wise layer normalization with gain and shift (both [d])
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& shift, float eps = 1e-5f);

// tanh-approximated GELU, elementwise
Tensor gelu(const Tensor& x);

// in-place residual add, shapes must match
void add_inplace(Tensor& target, const Tensor& delta);

}  // namespace ndesteer::linalg
