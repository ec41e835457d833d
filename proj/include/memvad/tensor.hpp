#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace memvad {

// Dense float32 NCHW tensor. Small by design: just enough for the nets here.
struct Tensor {
    int n = 0, c = 0, h = 0, w = 0;
    std::vector<float> data;

    Tensor() = default;
    Tensor(int n_, int c_, int h_, int w_)
        : n(n_), c(c_), h(h_), w(w_),
          data(static_cast<std::size_t>(n_) * c_ * h_ * w_, 0.0f) {}

    static Tensor zeros_like(const Tensor& t) { return Tensor(t.n, t.c, t.h, t.w); }

    std::size_t size() const { return data.size(); }
    bool same_shape(const Tensor& o) const {
        return n == o.n && c == o.c && h == o.h && w == o.w;
    }
    std::string shape_str() const {
        return std::to_string(n) + "x" + std::to_string(c) + "x" + std::to_string(h) + "x" +
               std::to_string(w);
    }

    float& at(int in, int ic, int iy, int ix) {
        return data[((static_cast<std::size_t>(in) * c + ic) * h + iy) * w + ix];
    }
    float at(int in, int ic, int iy, int ix) const {
        return data[((static_cast<std::size_t>(in) * c + ic) * h + iy) * w + ix];
    }

    // start of one (sample, channel) plane
    float* plane_ptr(int in, int ic) {
        return data.data() + (static_cast<std::size_t>(in) * c + ic) * h * w;
    }
    const float* plane_ptr(int in, int ic) const {
        return data.data() + (static_cast<std::size_t>(in) * c + ic) * h * w;
    }

    bool all_finite() const;

    // Single-sample view copied out of a batch.
    Tensor slice(int sample) const;
};

// Channel-wise concatenation of two equal-resolution tensors.
Tensor concat_channels(const Tensor& a, const Tensor& b);

// Splits gradient of a concatenation back into the two operands.
void split_channels(const Tensor& grad, int c_a, Tensor* grad_a, Tensor* grad_b);

}  // namespace memvad
