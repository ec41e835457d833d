#include "memvad/nn.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>

namespace memvad::nn {

namespace {

using ColMat = Eigen::MatrixXf;  // column-major
using RowMap = Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

// col(r, p) with r = (cin*k + ky)*k + kx and p = oy*Wo + ox.
void im2col(const Tensor& x, int sample, int k, int stride, int pad, int ho, int wo,
            ColMat& col) {
    const int cin = x.c;
    col.setZero(cin * k * k, ho * wo);
    for (int c = 0; c < cin; ++c)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                const int r = (c * k + ky) * k + kx;
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= x.h) continue;
                    for (int ox = 0; ox < wo; ++ox) {
                        const int ix = ox * stride - pad + kx;
                        if (ix < 0 || ix >= x.w) continue;
                        col(r, oy * wo + ox) = x.at(sample, c, iy, ix);
                    }
                }
            }
}

void col2im_add(const ColMat& col, int sample, int k, int stride, int pad, int ho, int wo,
                Tensor& dx) {
    const int cin = dx.c;
    for (int c = 0; c < cin; ++c)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                const int r = (c * k + ky) * k + kx;
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= dx.h) continue;
                    for (int ox = 0; ox < wo; ++ox) {
                        const int ix = ox * stride - pad + kx;
                        if (ix < 0 || ix >= dx.w) continue;
                        dx.at(sample, c, iy, ix) += col(r, oy * wo + ox);
                    }
                }
            }
}

float he_std(int fan_in) { return std::sqrt(2.0f / static_cast<float>(fan_in)); }

}  // namespace

Conv2d::Conv2d(std::string name, int in_ch, int out_ch, int ksize, int stride, int pad,
               std::mt19937_64& rng)
    : weight(name + ".weight", static_cast<std::size_t>(out_ch) * in_ch * ksize * ksize),
      bias(name + ".bias", static_cast<std::size_t>(out_ch)),
      in_ch_(in_ch), out_ch_(out_ch), k_(ksize), stride_(stride), pad_(pad) {
    std::normal_distribution<float> g(0.0f, he_std(in_ch * ksize * ksize));
    for (auto& v : weight.value) v = g(rng);
}

Tensor Conv2d::forward(const Tensor& x) {
    if (x.c != in_ch_)
        throw std::invalid_argument(weight.name + ": expected " + std::to_string(in_ch_) +
                                    " input channels, got " + std::to_string(x.c));
    cached_input_ = x;
    const int ho = out_height(x.h), wo = out_width(x.w);
    Tensor out(x.n, out_ch_, ho, wo);
    RowMap w_map(weight.value.data(), out_ch_, in_ch_ * k_ * k_);
    ColMat col;
    for (int s = 0; s < x.n; ++s) {
        im2col(x, s, k_, stride_, pad_, ho, wo, col);
        ColMat y = w_map * col;  // out_ch x (ho*wo)
        for (int c = 0; c < out_ch_; ++c) {
            const float b = bias.value[c];
            float* dst = out.plane_ptr(s, c);
            for (int p = 0; p < ho * wo; ++p) dst[p] = y(c, p) + b;
        }
    }
    return out;
}

Tensor Conv2d::backward(const Tensor& d_out) {
    const Tensor& x = cached_input_;
    const int ho = d_out.h, wo = d_out.w;
    Tensor dx = Tensor::zeros_like(x);
    RowMap w_map(weight.value.data(), out_ch_, in_ch_ * k_ * k_);
    Eigen::Map<Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> dw_map(
        weight.grad.data(), out_ch_, in_ch_ * k_ * k_);
    ColMat col, dy(out_ch_, ho * wo);
    for (int s = 0; s < x.n; ++s) {
        for (int c = 0; c < out_ch_; ++c) {
            const float* src = d_out.plane_ptr(s, c);
            double bsum = 0.0;
            for (int p = 0; p < ho * wo; ++p) {
                dy(c, p) = src[p];
                bsum += src[p];
            }
            bias.grad[c] += static_cast<float>(bsum);
        }
        im2col(x, s, k_, stride_, pad_, ho, wo, col);
        dw_map.noalias() += dy * col.transpose();
        ColMat dcol = w_map.transpose() * dy;  // (in*k*k) x (ho*wo)
        col2im_add(dcol, s, k_, stride_, pad_, ho, wo, dx);
    }
    return dx;
}

BatchNorm2d::BatchNorm2d(std::string n, int channels, double eps, double momentum)
    : gamma(n + ".gamma", channels), beta(n + ".beta", channels),
      running_mean(channels, 0.0f), running_var(channels, 1.0f), name(std::move(n)),
      channels_(channels), eps_(eps), momentum_(momentum) {
    std::fill(gamma.value.begin(), gamma.value.end(), 1.0f);
}

Tensor BatchNorm2d::forward(const Tensor& x, bool train) {
    if (x.c != channels_) throw std::invalid_argument(name + ": channel mismatch");
    const std::size_t plane = static_cast<std::size_t>(x.h) * x.w;
    const std::size_t count = static_cast<std::size_t>(x.n) * plane;
    Tensor out = Tensor::zeros_like(x);
    cached_train_ = train;
    if (train) {
        cached_xhat_ = Tensor::zeros_like(x);
        cached_invstd_.assign(channels_, 0.0);
        for (int c = 0; c < channels_; ++c) {
            double sum = 0.0, sum2 = 0.0;
            for (int s = 0; s < x.n; ++s) {
                const float* src = x.plane_ptr(s, c);
                for (std::size_t p = 0; p < plane; ++p) {
                    sum += src[p];
                    sum2 += static_cast<double>(src[p]) * src[p];
                }
            }
            const double mean = sum / static_cast<double>(count);
            const double var = std::max(0.0, sum2 / static_cast<double>(count) - mean * mean);
            const double invstd = 1.0 / std::sqrt(var + eps_);
            cached_invstd_[c] = invstd;
            const double unbiased =
                count > 1 ? var * static_cast<double>(count) / static_cast<double>(count - 1) : var;
            running_mean[c] = static_cast<float>((1.0 - momentum_) * running_mean[c] +
                                                 momentum_ * mean);
            running_var[c] = static_cast<float>((1.0 - momentum_) * running_var[c] +
                                                momentum_ * unbiased);
            const float g = gamma.value[c], b = beta.value[c];
            for (int s = 0; s < x.n; ++s) {
                const float* src = x.plane_ptr(s, c);
                float* xh = cached_xhat_.plane_ptr(s, c);
                float* dst = out.plane_ptr(s, c);
                for (std::size_t p = 0; p < plane; ++p) {
                    xh[p] = static_cast<float>((src[p] - mean) * invstd);
                    dst[p] = g * xh[p] + b;
                }
            }
        }
    } else {
        cached_xhat_ = Tensor();  // not needed for the eval-mode backward
        eval_invstd_.assign(channels_, 0.0);
        for (int c = 0; c < channels_; ++c) {
            const double invstd = 1.0 / std::sqrt(static_cast<double>(running_var[c]) + eps_);
            eval_invstd_[c] = invstd;
            const float scale = static_cast<float>(gamma.value[c] * invstd);
            const float shift =
                static_cast<float>(beta.value[c] - running_mean[c] * gamma.value[c] * invstd);
            for (int s = 0; s < x.n; ++s) {
                const float* src = x.plane_ptr(s, c);
                float* dst = out.plane_ptr(s, c);
                for (std::size_t p = 0; p < plane; ++p) dst[p] = scale * src[p] + shift;
            }
        }
    }
    return out;
}

Tensor BatchNorm2d::backward(const Tensor& d_out) {
    Tensor dx = Tensor::zeros_like(d_out);
    const std::size_t plane = static_cast<std::size_t>(d_out.h) * d_out.w;
    const std::size_t count = static_cast<std::size_t>(d_out.n) * plane;
    if (!cached_train_)
        throw std::logic_error(name + ": backward called after an eval-mode forward");
    for (int c = 0; c < channels_; ++c) {
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (int s = 0; s < d_out.n; ++s) {
            const float* dy = d_out.plane_ptr(s, c);
            const float* xh = cached_xhat_.plane_ptr(s, c);
            for (std::size_t p = 0; p < plane; ++p) {
                sum_dy += dy[p];
                sum_dy_xhat += static_cast<double>(dy[p]) * xh[p];
            }
        }
        gamma.grad[c] += static_cast<float>(sum_dy_xhat);
        beta.grad[c] += static_cast<float>(sum_dy);
        const double g = gamma.value[c];
        const double invstd = cached_invstd_[c];
        const double n = static_cast<double>(count);
        for (int s = 0; s < d_out.n; ++s) {
            const float* dy = d_out.plane_ptr(s, c);
            const float* xh = cached_xhat_.plane_ptr(s, c);
            float* dst = dx.plane_ptr(s, c);
            for (std::size_t p = 0; p < plane; ++p)
                dst[p] = static_cast<float>(g * invstd / n *
                                            (n * dy[p] - sum_dy - xh[p] * sum_dy_xhat));
        }
    }
    return dx;
}

Tensor ReLU::forward(const Tensor& x) {
    Tensor out = x;
    for (auto& v : out.data) v = v > 0.0f ? v : 0.0f;
    cached_out_ = out;
    return out;
}

Tensor ReLU::backward(const Tensor& d_out) const {
    Tensor dx = d_out;
    for (std::size_t i = 0; i < dx.data.size(); ++i)
        if (cached_out_.data[i] <= 0.0f) dx.data[i] = 0.0f;
    return dx;
}

Tensor HardTanh::forward(const Tensor& x) {
    cached_in_ = x;
    Tensor out = x;
    for (auto& v : out.data) v = std::clamp(v, -1.0f, 1.0f);
    return out;
}

Tensor HardTanh::backward(const Tensor& d_out) const {
    Tensor dx = d_out;
    for (std::size_t i = 0; i < dx.data.size(); ++i) {
        const float v = cached_in_.data[i];
        if (v <= -1.0f || v >= 1.0f) dx.data[i] = 0.0f;
    }
    return dx;
}

Tensor Upsample2x::forward(const Tensor& x) {
    in_h_ = x.h;
    in_w_ = x.w;
    Tensor out(x.n, x.c, x.h * 2, x.w * 2);
    for (int s = 0; s < x.n; ++s)
        for (int c = 0; c < x.c; ++c)
            for (int y = 0; y < out.h; ++y)
                for (int xw = 0; xw < out.w; ++xw)
                    out.at(s, c, y, xw) = x.at(s, c, y / 2, xw / 2);
    return out;
}

Tensor Upsample2x::backward(const Tensor& d_out) const {
    Tensor dx(d_out.n, d_out.c, in_h_, in_w_);
    for (int s = 0; s < d_out.n; ++s)
        for (int c = 0; c < d_out.c; ++c)
            for (int y = 0; y < d_out.h; ++y)
                for (int xw = 0; xw < d_out.w; ++xw)
                    dx.at(s, c, y / 2, xw / 2) += d_out.at(s, c, y, xw);
    return dx;
}

ConvBlock::ConvBlock(const std::string& name, int in_ch, int out_ch, int stride, bool bn,
                     bool relu, std::mt19937_64& rng)
    : conv(name, in_ch, out_ch, 3, stride, 1, rng), has_bn_(bn), has_relu_(relu),
      bn_(name + ".bn", out_ch) {}

Tensor ConvBlock::forward(const Tensor& x, bool train) {
    Tensor out = conv.forward(x);
    if (has_bn_) out = bn_.forward(out, train);
    if (has_relu_) out = relu_.forward(out);
    return out;
}

Tensor ConvBlock::backward(const Tensor& d_out) {
    Tensor g = d_out;
    if (has_relu_) g = relu_.backward(g);
    if (has_bn_) g = bn_.backward(g);
    return conv.backward(g);
}

void ConvBlock::collect(std::vector<Param*>& params, std::vector<BatchNorm2d*>& bns) {
    params.push_back(&conv.weight);
    params.push_back(&conv.bias);
    if (has_bn_) {
        params.push_back(&bn_.gamma);
        params.push_back(&bn_.beta);
        bns.push_back(&bn_);
    }
}

void Adam::step(const std::vector<Param*>& params) {
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (Param* p : params) {
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            const double g = p->grad[i];
            const double m = beta1 * p->adam_m[i] + (1.0 - beta1) * g;
            const double v = beta2 * p->adam_v[i] + (1.0 - beta2) * g * g;
            p->adam_m[i] = static_cast<float>(m);
            p->adam_v[i] = static_cast<float>(v);
            const double mhat = m / bc1, vhat = v / bc2;
            p->value[i] -= static_cast<float>(lr * mhat / (std::sqrt(vhat) + eps));
        }
    }
}

}  // namespace memvad::nn
