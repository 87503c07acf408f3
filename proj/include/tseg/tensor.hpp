#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tseg/common.hpp"

namespace tseg {

using Shape = std::vector<std::int64_t>;

inline std::int64_t numel_of(const Shape& s) {
    std::int64_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
}

// Dense row-major tensor with an optional gradient buffer of the same size.
struct Tensor {
    Shape shape;
    std::vector<real_t> data;
    std::vector<real_t> grad;  // empty until ensure_grad()

    Tensor() = default;
    explicit Tensor(Shape s) : shape(std::move(s)), data(static_cast<std::size_t>(numel_of(shape)), real_t(0)) {
        for (auto d : shape)
            if (d <= 0) throw std::invalid_argument("Tensor: non-positive extent in " + shape_str(shape));
    }
    Tensor(Shape s, std::vector<real_t> values) : shape(std::move(s)), data(std::move(values)) {
        if (static_cast<std::int64_t>(data.size()) != numel_of(shape))
            throw std::invalid_argument("Tensor: data length " + std::to_string(data.size()) +
                                        " does not match shape " + shape_str(shape));
    }

    static Tensor zeros(Shape s) { return Tensor(std::move(s)); }
    static Tensor full(Shape s, real_t v) {
        Tensor t(std::move(s));
        std::fill(t.data.begin(), t.data.end(), v);
        return t;
    }
    static Tensor uniform(Shape s, Rng& rng, real_t lo, real_t hi) {
        Tensor t(std::move(s));
        for (auto& v : t.data) v = static_cast<real_t>(rng.uniform(lo, hi));
        return t;
    }

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
    int ndim() const { return static_cast<int>(shape.size()); }
    std::int64_t dim(int i) const { return shape.at(static_cast<std::size_t>(i)); }

    real_t& at(std::int64_t i) { return data[static_cast<std::size_t>(i)]; }
    real_t at(std::int64_t i) const { return data[static_cast<std::size_t>(i)]; }

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), real_t(0));
    }
    void zero_grad() {
        if (!grad.empty()) std::fill(grad.begin(), grad.end(), real_t(0));
    }

    bool all_finite() const {
        for (real_t v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }
};

// NCHW accessors used throughout the layer kernels.
inline std::int64_t idx4(const Shape& s, std::int64_t n, std::int64_t c, std::int64_t y, std::int64_t x) {
    return ((n * s[1] + c) * s[2] + y) * s[3] + x;
}

inline void require_4d(const Tensor& t, const char* who) {
    if (t.ndim() != 4) throw std::invalid_argument(std::string(who) + ": expected a 4-d [N,C,H,W] tensor, got " + shape_str(t.shape));
}

}  // namespace tseg
