#include "ndesteer/pca.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "ndesteer/errors.hpp"

namespace ndesteer {

SymmetricEigen jacobi_eigen(std::vector<double> a, std::size_t n) {
    if (a.size() != n * n) throw ShapeError("jacobi_eigen: matrix is not n x n");
    std::vector<double> v(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;

    auto at = [&](std::size_t r, std::size_t c) -> double& { return a[r * n + c]; };

    double total = 0.0;
    for (double x : a) total += x * x;
    const double tol = 1e-30 * std::max(total, 1e-300);

    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) off += at(p, q) * at(p, q);
        if (off <= tol) break;

        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = at(p, q);
                if (apq == 0.0) continue;
                const double theta = (at(q, q) - at(p, p)) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = at(k, p), akq = at(k, q);
                    at(k, p) = c * akp - s * akq;
                    at(k, q) = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = at(p, k), aqk = at(q, k);
                    at(p, k) = c * apk - s * aqk;
                    at(q, k) = s * apk + c * aqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = v[k * n + p], vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t i, std::size_t j) { return at(i, i) > at(j, j); });

    SymmetricEigen out;
    out.values.resize(n);
    out.vectors.resize(n * n);
    for (std::size_t j = 0; j < n; ++j) {
        out.values[j] = at(order[j], order[j]);
        for (std::size_t k = 0; k < n; ++k) out.vectors[k * n + j] = v[k * n + order[j]];
    }
    return out;
}

PrincipalDirections pca_principal_directions(const Tensor& matrix, std::size_t pca_dim,
                                             std::optional<std::span<const float>> orient_hint) {
    const std::size_t n = matrix.rows();
    const std::size_t d = matrix.cols();
    if (n < 2) throw ShapeError("pca: need at least 2 rows, got " + std::to_string(n));
    if (pca_dim == 0) throw ConfigError("pca: pca_dim must be positive");
    if (pca_dim > std::min(n, d)) {
        throw ShapeError("pca: pca_dim " + std::to_string(pca_dim) + " exceeds min(N, d) for " +
                         matrix.shape_string());
    }
    if (orient_hint && orient_hint->size() != d) throw ShapeError("pca: orient hint length");
    matrix.check_finite("pca input");

    std::vector<double> mean(d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const auto r = matrix.row(i);
        for (std::size_t j = 0; j < d; ++j) mean[j] += r[j];
    }
    for (double& m : mean) m /= static_cast<double>(n);

    std::vector<double> centered(n * d);
    for (std::size_t i = 0; i < n; ++i) {
        const auto r = matrix.row(i);
        for (std::size_t j = 0; j < d; ++j) centered[i * d + j] = r[j] - mean[j];
    }

    std::vector<double> cov(d * d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double* x = centered.data() + i * d;
        for (std::size_t p = 0; p < d; ++p) {
            const double xp = x[p];
            if (xp == 0.0) continue;
            for (std::size_t q = p; q < d; ++q) cov[p * d + q] += xp * x[q];
        }
    }
    const double denom = static_cast<double>(n - 1);
    for (std::size_t p = 0; p < d; ++p) {
        for (std::size_t q = p; q < d; ++q) {
            cov[p * d + q] /= denom;
            cov[q * d + p] = cov[p * d + q];
        }
    }

    const SymmetricEigen eig = jacobi_eigen(std::move(cov), d);
    if (!(eig.values[0] > 1e-12)) {
        throw DegenerateVariance("pca: top eigenvalue " + std::to_string(eig.values[0]) +
                                 " <= 1e-12 (rows identical after centering)");
    }

    std::vector<double> hint(d);
    if (orient_hint) {
        for (std::size_t j = 0; j < d; ++j) hint[j] = (*orient_hint)[j];
    } else {
        hint = mean;
    }
    double hint_norm = 0.0;
    for (double h : hint) hint_norm += h * h;
    hint_norm = std::sqrt(hint_norm);

    PrincipalDirections out;
    for (std::size_t c = 0; c < pca_dim; ++c) {
        std::vector<double> dir(d);
        double len = 0.0;
        for (std::size_t k = 0; k < d; ++k) {
            dir[k] = eig.vectors[k * d + c];
            len += dir[k] * dir[k];
        }
        len = std::sqrt(len);
        double proj = 0.0;
        for (std::size_t k = 0; k < d; ++k) {
            dir[k] /= len;
            proj += dir[k] * hint[k];
        }
        bool flip = false;
        if (std::abs(proj) <= 1e-12 * hint_norm) {
            std::size_t best = 0;
            for (std::size_t k = 1; k < d; ++k) {
                if (std::abs(dir[k]) > std::abs(dir[best])) best = k;
            }
            flip = dir[best] < 0.0;
        } else {
            flip = proj < 0.0;
        }
        std::vector<float> f(d);
        for (std::size_t k = 0; k < d; ++k) f[k] = static_cast<float>(flip ? -dir[k] : dir[k]);
        out.directions.push_back(std::move(f));
        out.explained_variance.push_back(std::max(eig.values[c], 0.0));
    }
    return out;
}

}  // namespace ndesteer
