#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace ndesteer {

// Dense row-major f32 array tagged with its shape. A default-constructed
// Tensor is empty (rank 0, no data); every other tensor has at least one
// dimension, all dimensions positive, and only finite values.
class Tensor {
public:
    Tensor() = default;

    // zero-filled tensor of the given shape
    explicit Tensor(std::vector<std::size_t> dims);
    Tensor(std::vector<std::size_t> dims, std::vector<float> data);

    static Tensor zeros(std::vector<std::size_t> dims) { return Tensor(std::move(dims)); }
    static Tensor vector(std::vector<float> values);
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<float> data);
    static Tensor from_rows(std::initializer_list<std::initializer_list<float>> rows);

    const std::vector<std::size_t>& dims() const noexcept { return dims_; }
    std::size_t rank() const noexcept { return dims_.size(); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }
    std::size_t dim(std::size_t axis) const;

    std::span<const float> data() const noexcept { return data_; }
    std::span<float> data() noexcept { return data_; }
    const std::vector<float>& values() const noexcept { return data_; }

    // rank-2 helpers
    std::size_t rows() const;
    std::size_t cols() const;
    std::span<const float> row(std::size_t r) const;
    std::span<float> row(std::size_t r);
    float at(std::size_t r, std::size_t c) const;
    float& at(std::size_t r, std::size_t c);

    // throws NumericError naming `context` if any element is NaN/Inf
    void check_finite(const char* context) const;

    std::string shape_string() const;

    friend bool operator==(const Tensor& a, const Tensor& b);

private:
    std::vector<std::size_t> dims_;
    std::vector<float> data_;
};

// Bitwise comparison of two tensors (shape and the raw bit patterns).
bool bitwise_equal(const Tensor& a, const Tensor& b);

std::size_t shape_product(std::span<const std::size_t> dims);

}  // namespace ndesteer
