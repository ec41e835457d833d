#pragma once

#include "memvad/tensor.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace memvad::nn {

// Learnable flat parameter with its gradient and Adam state.
struct Param {
    std::string name;
    std::vector<float> value;
    std::vector<float> grad;
    std::vector<float> adam_m;
    std::vector<float> adam_v;

    explicit Param(std::string n = {}, std::size_t size = 0)
        : name(std::move(n)), value(size, 0.0f), grad(size, 0.0f), adam_m(size, 0.0f),
          adam_v(size, 0.0f) {}

    void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0f); }
};

// 2-D convolution, square kernel, zero padding. im2col + GEMM.
class Conv2d {
public:
    Conv2d(std::string name, int in_ch, int out_ch, int ksize, int stride, int pad,
           std::mt19937_64& rng);

    Tensor forward(const Tensor& x);
    // Accumulates weight/bias gradients, returns d(loss)/d(input).
    Tensor backward(const Tensor& d_out);

    int out_height(int h) const { return (h + 2 * pad_ - k_) / stride_ + 1; }
    int out_width(int w) const { return (w + 2 * pad_ - k_) / stride_ + 1; }
    int in_channels() const { return in_ch_; }
    int out_channels() const { return out_ch_; }

    Param weight;  // out_ch x in_ch x k x k
    Param bias;    // out_ch

private:
    int in_ch_, out_ch_, k_, stride_, pad_;
    Tensor cached_input_;
};

// Batch normalization over N*H*W per channel. Batch statistics while
// training, running estimates at evaluation.
class BatchNorm2d {
public:
    BatchNorm2d(std::string name, int channels, double eps = 1e-5, double momentum = 0.1);

    Tensor forward(const Tensor& x, bool train);
    Tensor backward(const Tensor& d_out);

    Param gamma;
    Param beta;
    std::vector<float> running_mean;
    std::vector<float> running_var;
    std::string name;

private:
    int channels_;
    double eps_, momentum_;
    Tensor cached_xhat_;
    std::vector<double> cached_invstd_;
    bool cached_train_ = false;
    std::vector<double> eval_invstd_;  // per-channel, for the eval-mode backward
};

struct ReLU {
    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& d_out) const;

private:
    Tensor cached_out_;
};

// Clamp to [-1, 1]; keeps outputs inside the frame range exactly.
struct HardTanh {
    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& d_out) const;

private:
    Tensor cached_in_;
};

// Nearest-neighbour 2x upsampling.
struct Upsample2x {
    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& d_out) const;

private:
    int in_h_ = 0, in_w_ = 0;
};

// Conv -> BN -> ReLU block; BN/ReLU optional for head layers.
class ConvBlock {
public:
    ConvBlock(const std::string& name, int in_ch, int out_ch, int stride, bool bn, bool relu,
              std::mt19937_64& rng);

    Tensor forward(const Tensor& x, bool train);
    Tensor backward(const Tensor& d_out);
    void collect(std::vector<Param*>& params, std::vector<BatchNorm2d*>& bns);

    Conv2d conv;

private:
    bool has_bn_, has_relu_;
    BatchNorm2d bn_;
    ReLU relu_;
};

struct Adam {
    double lr = 2e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::int64_t t = 0;

    void step(const std::vector<Param*>& params);
};

}  // namespace memvad::nn
