#pragma once

// Dense row-major float tensor. Shapes follow the (N, C, H, W) convention
// for image-like data; lower ranks are used freely for vectors/matrices.

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <vector>

#include "segface/common.hpp"

namespace segface {

struct Tensor {
    std::vector<int> shape;
    std::vector<float> v;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
        v.assign(static_cast<size_t>(count(shape)), 0.0f);
    }
    Tensor(std::vector<int> s, std::vector<float> data) : shape(std::move(s)), v(std::move(data)) {
        if (static_cast<int64_t>(v.size()) != count(shape))
            throw InvalidInput("tensor data size does not match shape");
    }

    static int64_t count(const std::vector<int>& s) {
        int64_t n = 1;
        for (int d : s) n *= d;
        return n;
    }

    static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }
    static Tensor full(std::vector<int> s, float x) {
        Tensor t(std::move(s));
        std::fill(t.v.begin(), t.v.end(), x);
        return t;
    }
    static Tensor scalar(float x) { return Tensor({1}, {x}); }

    int64_t numel() const { return static_cast<int64_t>(v.size()); }
    bool empty() const { return v.empty(); }
    int dim(int i) const { return shape[static_cast<size_t>(i)]; }
    int rank() const { return static_cast<int>(shape.size()); }

    float* data() { return v.data(); }
    const float* data() const { return v.data(); }

    float& operator[](int64_t i) { return v[static_cast<size_t>(i)]; }
    float operator[](int64_t i) const { return v[static_cast<size_t>(i)]; }

    // Indexed accessors for readable test/oracle code.
    float& at(int i, int j) { return v[static_cast<size_t>(i) * dim(1) + j]; }
    float at(int i, int j) const { return v[static_cast<size_t>(i) * dim(1) + j]; }
    float& at(int i, int j, int k) {
        return v[(static_cast<size_t>(i) * dim(1) + j) * dim(2) + k];
    }
    float at(int i, int j, int k) const {
        return v[(static_cast<size_t>(i) * dim(1) + j) * dim(2) + k];
    }
    float& at(int n, int c, int h, int w) {
        return v[((static_cast<size_t>(n) * dim(1) + c) * dim(2) + h) * dim(3) + w];
    }
    float at(int n, int c, int h, int w) const {
        return v[((static_cast<size_t>(n) * dim(1) + c) * dim(2) + h) * dim(3) + w];
    }

    void fill(float x) { std::fill(v.begin(), v.end(), x); }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (float x : v)
            if (!std::isfinite(x)) return false;
        return true;
    }

    std::string shape_str() const {
        std::ostringstream os;
        os << "(";
        for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
        os << ")";
        return os.str();
    }
};

// Integer grid (e.g. per-pixel class labels) kept separate from float tensors.
struct IntGrid {
    std::vector<int> shape;  // (H, W) or (N, H, W)
    std::vector<int32_t> v;

    IntGrid() = default;
    explicit IntGrid(std::vector<int> s) : shape(std::move(s)) {
        v.assign(static_cast<size_t>(Tensor::count(shape)), 0);
    }
    int dim(int i) const { return shape[static_cast<size_t>(i)]; }
    int64_t numel() const { return static_cast<int64_t>(v.size()); }
    int32_t& at(int i, int j) { return v[static_cast<size_t>(i) * dim(static_cast<int>(shape.size()) - 1) + j]; }
    int32_t at(int i, int j) const { return v[static_cast<size_t>(i) * dim(static_cast<int>(shape.size()) - 1) + j]; }
};

}  // namespace segface
