#include "ndesteer/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "ndesteer/errors.hpp"

namespace ndesteer::linalg {

double dot(std::span<const float> a, std::span<const float> b) {
    if (a.size() != b.size()) throw ShapeError("dot: length mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += static_cast<double>(a[i]) * b[i];
    return acc;
}

double norm(std::span<const float> v) { return std::sqrt(dot(v, v)); }

double cosine_similarity(std::span<const float> u, std::span<const float> v) {
    if (u.size() != v.size()) throw ShapeError("cosine_similarity: length mismatch");
    const double nu = norm(u);
    const double nv = norm(v);
    if (nu <= 1e-12 || nv <= 1e-12) throw ZeroVector("cosine_similarity: zero-norm input");
    return std::clamp(dot(u, v) / (nu * nv), -1.0, 1.0);
}

std::vector<float> normalized(std::span<const float> v) {
    const double n = norm(v);
    if (n <= 1e-12) throw ZeroVector("normalized: zero-norm input");
    std::vector<float> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(v[i] / n);
    return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
    if (b.rows() != k) {
        throw ShapeError("matmul: " + a.shape_string() + " x " + b.shape_string());
    }
    Tensor out({n, m});
    std::vector<double> acc(m);
    const auto bd = b.data();
    for (std::size_t i = 0; i < n; ++i) {
        std::fill(acc.begin(), acc.end(), 0.0);
        const auto ar = a.row(i);
        for (std::size_t p = 0; p < k; ++p) {
            const double x = ar[p];
            if (x == 0.0) continue;
            const float* brow = bd.data() + p * m;
            for (std::size_t j = 0; j < m; ++j) acc[j] += x * brow[j];
        }
        auto orow = out.row(i);
        for (std::size_t j = 0; j < m; ++j) orow[j] = static_cast<float>(acc[j]);
    }
    out.check_finite("matmul");
    return out;
}

Tensor affine(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    Tensor out = matmul(x, weight);
    if (bias.size() != out.cols()) throw ShapeError("affine: bias length mismatch");
    const auto bd = bias.data();
    for (std::size_t i = 0; i < out.rows(); ++i) {
        auto r = out.row(i);
        for (std::size_t j = 0; j < r.size(); ++j) r[j] += bd[j];
    }
    out.check_finite("affine");
    return out;
}

std::vector<float> vec_mat(std::span<const float> x, const Tensor& weight) {
    const std::size_t k = weight.rows(), m = weight.cols();
    if (x.size() != k) throw ShapeError("vec_mat: length mismatch");
    std::vector<double> acc(m, 0.0);
    const auto wd = weight.data();
    for (std::size_t p = 0; p < k; ++p) {
        const double xv = x[p];
        const float* wrow = wd.data() + p * m;
        for (std::size_t j = 0; j < m; ++j) acc[j] += xv * wrow[j];
    }
    std::vector<float> out(m);
    for (std::size_t j = 0; j < m; ++j) out[j] = static_cast<float>(acc[j]);
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& shift, float eps) {
    const std::size_t d = x.cols();
    if (gain.size() != d || shift.size() != d) throw ShapeError("layer_norm: parameter length");
    Tensor out({x.rows(), d});
    const auto g = gain.data();
    const auto s = shift.data();
    for (std::size_t i = 0; i < x.rows(); ++i) {
        const auto r = x.row(i);
        double mean = 0.0;
        for (float v : r) mean += v;
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (float v : r) var += (v - mean) * (v - mean);
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + eps);
        auto o = out.row(i);
        for (std::size_t j = 0; j < d; ++j) {
            o[j] = static_cast<float>((r[j] - mean) * inv * g[j] + s[j]);
        }
    }
    out.check_finite("layer_norm");
    return out;
}

Tensor gelu(const Tensor& x) {
    Tensor out = x;
    const double c = std::sqrt(2.0 / std::numbers::pi);
    for (float& v : out.data()) {
        const double z = v;
        v = static_cast<float>(0.5 * z * (1.0 + std::tanh(c * (z + 0.044715 * z * z * z))));
    }
    return out;
}

void add_inplace(Tensor& target, const Tensor& delta) {
    if (target.dims() != delta.dims()) throw ShapeError("add_inplace: shape mismatch");
    auto t = target.data();
    const auto d = delta.data();
    for (std::size_t i = 0; i < t.size(); ++i) t[i] += d[i];
    target.check_finite("residual add");
}

}  // namespace ndesteer::linalg
