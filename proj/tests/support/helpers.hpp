#pragma once

#include <unistd.h>

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <mutex>
#include <random>
#include <string>
#include <vector>

#include "ndesteer/diagnostics.hpp"
#include "ndesteer/rng.hpp"
#include "ndesteer/tensor.hpp"
#include "ndesteer/vlm.hpp"

namespace testing {

// Fresh directory under the system temp dir, removed on destruction.
class temp_dir {
public:
    explicit temp_dir(const std::string& tag) {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("ndesteer_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~temp_dir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    temp_dir(const temp_dir&) = delete;
    temp_dir& operator=(const temp_dir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

// Collects library warnings while alive.
class warning_capture {
public:
    warning_capture() {
        previous_ = ndesteer::set_warning_handler([this](std::string_view m) {
            std::lock_guard lock(mu_);
            messages_.emplace_back(m);
        });
    }
    ~warning_capture() { ndesteer::set_warning_handler(std::move(previous_)); }

    std::vector<std::string> messages() const {
        std::lock_guard lock(mu_);
        return messages_;
    }

private:
    ndesteer::WarningHandler previous_;
    mutable std::mutex mu_;
    std::vector<std::string> messages_;
};

inline std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void spit(const std::filesystem::path& p, const std::string& s) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << s;
}

// Test-side randomness uses the standard engine so it stays independent of
// the library generator.
inline ndesteer::Tensor random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& gen, double scale = 1.0) {
    std::normal_distribution<double> nd(0.0, scale);
    std::vector<float> v(rows * cols);
    for (auto& x : v) x = static_cast<float>(nd(gen));
    return ndesteer::Tensor::matrix(rows, cols, std::move(v));
}

inline std::vector<float> random_unit(std::size_t d, std::mt19937_64& gen) {
    std::normal_distribution<double> nd;
    std::vector<double> v(d);
    double n = 0;
    for (auto& x : v) n += (x = nd(gen)) * x;
    n = std::sqrt(n);
    std::vector<float> out(d);
    for (std::size_t i = 0; i < d; ++i) out[i] = static_cast<float>(v[i] / n);
    return out;
}

// small vocabulary with the reserved tokens
inline std::vector<std::string> tiny_vocab() {
    return {"[UNK]", "[BOS]", "[EOS]", "yes", "no", "is", "there", "a", "dog", "cat", "on", "the", "grass"};
}

inline ndesteer::ToyVlmConfig tiny_config(std::uint64_t seed = 1) {
    ndesteer::ToyVlmConfig c;
    c.d_model = 16;
    c.n_layers = 2;
    c.n_heads = 2;
    c.d_ff = 32;
    c.vocab = tiny_vocab();
    c.image_h = 4;
    c.image_w = 4;
    c.patch = 2;
    c.max_seq = 24;
    c.seed = seed;
    return c;
}

}  // namespace testing
