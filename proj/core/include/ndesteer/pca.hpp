#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "ndesteer/tensor.hpp"

namespace ndesteer {

// Leading principal directions of a sample matrix.
//  - each direction has unit norm and dimension d
//  - directions are pairwise orthogonal
//  - explained_variance[i] is the covariance eigenvalue of directions[i],
//    sorted nonincreasing and clamped at zero
struct PrincipalDirections {
    std::vector<std::vector<float>> directions;
    std::vector<double> explained_variance;

    std::size_t count() const noexcept { return directions.size(); }
    std::span<const float> first() const { return directions.front(); }
};

// Top `pca_dim` eigenvectors of the sample covariance of `matrix` ([N x d],
// columns mean-centered, N-1 normalization).
//
// Sign convention: every direction is flipped so that its dot product with
// `orient_hint` is nonnegative. The default hint is the column mean of the
// *uncentered* matrix, i.e. the average row. When the dot product is zero
// (|dot| <= 1e-12 |hint|) the largest-magnitude coordinate is made positive,
// first index winning ties.
//
// Throws ShapeError when N < 2, pca_dim > min(N, d) or the hint has the wrong
// length, ConfigError for pca_dim == 0, and DegenerateVariance when the top
// eigenvalue is <= 1e-12.
PrincipalDirections pca_principal_directions(const Tensor& matrix, std::size_t pca_dim,
                                             std::optional<std::span<const float>> orient_hint = {});

// Eigen-decomposition of a dense symmetric matrix by cyclic Jacobi rotations.
// `a` is row-major n x n. Eigenvalues come back sorted descending; column j
// of `vectors` (row-major n x n) belongs to values[j].
struct SymmetricEigen {
    std::vector<double> values;
    std::vector<double> vectors;
};
SymmetricEigen jacobi_eigen(std::vector<double> a, std::size_t n);

}  // namespace ndesteer
