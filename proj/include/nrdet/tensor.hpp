#pragma once

#include <algorithm>
#include <cassert>
#include <cstddef>
#include <vector>

namespace nrdet {

/// Dense (channels, height, width) grid of doubles, row-major within a channel.
struct Tensor {
    int c = 0;
    int h = 0;
    int w = 0;
    std::vector<double> v;

    Tensor() = default;
    Tensor(int c_, int h_, int w_) : c(c_), h(h_), w(w_), v(static_cast<std::size_t>(c_) * h_ * w_, 0.0) {}

    std::size_t size() const { return v.size(); }

    double& at(int ci, int y, int x) {
        assert(ci >= 0 && ci < c && y >= 0 && y < h && x >= 0 && x < w);
        return v[(static_cast<std::size_t>(ci) * h + y) * w + x];
    }
    double at(int ci, int y, int x) const {
        assert(ci >= 0 && ci < c && y >= 0 && y < h && x >= 0 && x < w);
        return v[(static_cast<std::size_t>(ci) * h + y) * w + x];
    }

    double* plane(int ci) { return v.data() + static_cast<std::size_t>(ci) * h * w; }
    const double* plane(int ci) const { return v.data() + static_cast<std::size_t>(ci) * h * w; }

    void zero() { std::fill(v.begin(), v.end(), 0.0); }

    bool same_shape(const Tensor& o) const { return c == o.c && h == o.h && w == o.w; }
};

}  // namespace nrdet
