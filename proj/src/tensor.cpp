#include "memvad/tensor.hpp"

#include <cmath>
#include <cstring>

namespace memvad {

bool Tensor::all_finite() const {
    for (float v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

Tensor Tensor::slice(int sample) const {
    Tensor out(1, c, h, w);
    const std::size_t stride = static_cast<std::size_t>(c) * h * w;
    std::memcpy(out.data.data(), data.data() + stride * sample, stride * sizeof(float));
    return out;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    if (a.n != b.n || a.h != b.h || a.w != b.w)
        throw std::invalid_argument("concat_channels: resolution mismatch " + a.shape_str() +
                                    " vs " + b.shape_str());
    Tensor out(a.n, a.c + b.c, a.h, a.w);
    const std::size_t plane = static_cast<std::size_t>(a.h) * a.w;
    for (int s = 0; s < a.n; ++s) {
        std::memcpy(out.data.data() + plane * (static_cast<std::size_t>(s) * out.c),
                    a.data.data() + plane * (static_cast<std::size_t>(s) * a.c),
                    plane * a.c * sizeof(float));
        std::memcpy(out.data.data() + plane * (static_cast<std::size_t>(s) * out.c + a.c),
                    b.data.data() + plane * (static_cast<std::size_t>(s) * b.c),
                    plane * b.c * sizeof(float));
    }
    return out;
}

void split_channels(const Tensor& grad, int c_a, Tensor* grad_a, Tensor* grad_b) {
    const int c_b = grad.c - c_a;
    *grad_a = Tensor(grad.n, c_a, grad.h, grad.w);
    *grad_b = Tensor(grad.n, c_b, grad.h, grad.w);
    const std::size_t plane = static_cast<std::size_t>(grad.h) * grad.w;
    for (int s = 0; s < grad.n; ++s) {
        std::memcpy(grad_a->data.data() + plane * (static_cast<std::size_t>(s) * c_a),
                    grad.data.data() + plane * (static_cast<std::size_t>(s) * grad.c),
                    plane * c_a * sizeof(float));
        std::memcpy(grad_b->data.data() + plane * (static_cast<std::size_t>(s) * c_b),
                    grad.data.data() + plane * (static_cast<std::size_t>(s) * grad.c + c_a),
                    plane * c_b * sizeof(float));
    }
}

}  // namespace memvad
