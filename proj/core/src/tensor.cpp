#include "ndesteer/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

#include "ndesteer/errors.hpp"

namespace ndesteer {

std::size_t shape_product(std::span<const std::size_t> dims) {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return n;
}

namespace {

void validate_dims(const std::vector<std::size_t>& dims) {
    if (dims.empty()) throw ShapeError("tensor needs at least one dimension");
    for (auto d : dims) {
        if (d == 0) throw ShapeError("tensor dimensions must be positive");
    }
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> dims) : dims_(std::move(dims)) {
    validate_dims(dims_);
    data_.assign(shape_product(dims_), 0.0f);
}

Tensor::Tensor(std::vector<std::size_t> dims, std::vector<float> data)
    : dims_(std::move(dims)), data_(std::move(data)) {
    validate_dims(dims_);
    if (data_.size() != shape_product(dims_)) {
        throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_string());
    }
    check_finite("tensor construction");
}

Tensor Tensor::vector(std::vector<float> values) {
    const std::size_t n = values.size();
    return Tensor({n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<float> data) {
    return Tensor({rows, cols}, std::move(data));
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<float>> rows) {
    if (rows.size() == 0) throw ShapeError("from_rows: no rows");
    const std::size_t cols = rows.begin()->size();
    std::vector<float> data;
    data.reserve(rows.size() * cols);
    for (const auto& r : rows) {
        if (r.size() != cols) throw ShapeError("from_rows: ragged rows");
        data.insert(data.end(), r.begin(), r.end());
    }
    return Tensor({rows.size(), cols}, std::move(data));
}

std::size_t Tensor::dim(std::size_t axis) const {
    if (axis >= dims_.size()) throw ShapeError("axis out of range for shape " + shape_string());
    return dims_[axis];
}

std::size_t Tensor::rows() const {
    if (rank() != 2) throw ShapeError("expected a matrix, got shape " + shape_string());
    return dims_[0];
}

std::size_t Tensor::cols() const {
    if (rank() != 2) throw ShapeError("expected a matrix, got shape " + shape_string());
    return dims_[1];
}

std::span<const float> Tensor::row(std::size_t r) const {
    const std::size_t c = cols();
    if (r >= dims_[0]) throw ShapeError("row index out of range");
    return std::span<const float>(data_).subspan(r * c, c);
}

std::span<float> Tensor::row(std::size_t r) {
    const std::size_t c = cols();
    if (r >= dims_[0]) throw ShapeError("row index out of range");
    return std::span<float>(data_).subspan(r * c, c);
}

float Tensor::at(std::size_t r, std::size_t c) const { return row(r)[c]; }
float& Tensor::at(std::size_t r, std::size_t c) { return row(r)[c]; }

void Tensor::check_finite(const char* context) const {
    for (float v : data_) {
        if (!std::isfinite(v)) throw NumericError(std::string(context) + ": non-finite value");
    }
}

std::string Tensor::shape_string() const {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < dims_.size(); ++i) {
        if (i) os << 'x';
        os << dims_[i];
    }
    os << ']';
    return os.str();
}

bool operator==(const Tensor& a, const Tensor& b) {
    return a.dims_ == b.dims_ && a.data_ == b.data_;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
    if (a.dims() != b.dims()) return false;
    return a.size() == 0 ||
           std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(float)) == 0;
}

}  // namespace ndesteer
