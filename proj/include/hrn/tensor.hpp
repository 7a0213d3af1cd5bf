#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

namespace hrn {

// Dense row-major float64 matrix. The whole differentiable core works in
// float64; float32 appears only in checkpoint and trajectory files.
struct Tensor2 {
    int rows = 0;
    int cols = 0;
    std::vector<double> d;

    Tensor2() = default;
    Tensor2(int r, int c) : rows(r), cols(c), d(static_cast<size_t>(r) * c, 0.0) {
        if (r < 0 || c < 0) throw std::invalid_argument("Tensor2: negative shape");
    }

    static Tensor2 zeros(int r, int c) { return Tensor2(r, c); }

    static Tensor2 from(int r, int c, std::initializer_list<double> v) {
        Tensor2 t(r, c);
        if (static_cast<int>(v.size()) != r * c) throw std::invalid_argument("Tensor2: init size");
        std::copy(v.begin(), v.end(), t.d.begin());
        return t;
    }

    double& at(int r, int c) { return d[static_cast<size_t>(r) * cols + c]; }
    double at(int r, int c) const { return d[static_cast<size_t>(r) * cols + c]; }
    double* row(int r) { return d.data() + static_cast<size_t>(r) * cols; }
    const double* row(int r) const { return d.data() + static_cast<size_t>(r) * cols; }

    size_t size() const { return d.size(); }
    bool same_shape(const Tensor2& o) const { return rows == o.rows && cols == o.cols; }

    void zero() { std::fill(d.begin(), d.end(), 0.0); }

    bool finite() const {
        for (double v : d)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

// Uniform fan-in init: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
inline void init_fan_in(Tensor2& t, int fan_in, std::mt19937_64& rng) {
    double bound = 1.0 / std::sqrt(static_cast<double>(fan_in > 0 ? fan_in : 1));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& v : t.d) v = dist(rng);
}

}  // namespace hrn
