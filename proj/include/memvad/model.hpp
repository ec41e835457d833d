#pragma once

#include "memvad/memory_bank.hpp"
#include "memvad/nn.hpp"
#include "memvad/tensor.hpp"

#include <array>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace memvad {

enum class Task { reconstruction, prediction, denoise_reconstruction };

Task task_from_string(const std::string& s);
std::string to_string(Task task);

struct ModelConfig {
    Task task = Task::prediction;
    bool use_memory = true;
    bool use_skips = true;
    int input_frames = 4;  // 4 for prediction, 1 otherwise
    int image_channels = 3;
    int input_size = 256;  // H = W, divisible by 8
    int mem_items = 10;    // M
    int feature_dim = 512; // C: deepest width and memory dimensionality
    double noise_ratio = 0.0;
    bool normalize_queries = false;

    int in_channels() const { return input_frames * image_channels; }
    // Widths of the four encoder stages: {C/8, C/4, C/2, C}, floored at 4.
    std::array<int, 4> stage_widths() const;
    void validate() const;
};

// Defaults that follow from the task (frame count, skip wiring).
ModelConfig default_model_config(Task task);

struct EncodeResult {
    Tensor features;            // N x C x H/8 x W/8
    std::vector<Tensor> skips;  // {skip1 full res, skip2 half, skip3 quarter}; empty without skips
};

// Replaces the tensors fed through skip connections 2 and/or 3 at decode time
// (the deeper, lower-resolution ones).
struct SkipProbe {
    enum class Mode { passthrough, zeros, ones, random };
    Mode skip2 = Mode::passthrough;
    Mode skip3 = Mode::passthrough;
    std::uint64_t seed = 0;
};

SkipProbe::Mode probe_mode_from_string(const std::string& s);

// Per-sample memory artifacts from one forward pass. `queries` are the
// effective queries the correlation saw (normalized when the flag is on).
struct MemoryArtifacts {
    std::vector<QueryMap> queries;
    std::vector<Mat> scores;            // K x M
    std::vector<MatchWeights> match;
    std::vector<UpdateWeights> updatew;
    bool present() const { return !queries.empty(); }
};

struct ForwardResult {
    Tensor output;  // N x image_channels x H x W, clamped to [-1, 1]
    MemoryArtifacts memory;
};

// Auxiliary gradients injected by the trainer, one entry per batch sample.
// Each vector is either empty or has one entry per sample.
struct AuxGrads {
    std::vector<Mat> d_queries;  // K x C, w.r.t. the effective queries
    std::vector<Mat> d_updatew;  // M x K, routed through the per-sample softmax
    std::vector<Mat> d_scores;   // K x M, added to the score gradient directly
};

// Converts per-sample read rows (K x C) back into an N x C x h x w tensor.
Tensor reads_to_tensor(const std::vector<Mat>& reads, int h, int w);

// Depth-wise concatenation [features || read]; throws on shape mismatch.
Tensor fuse(const Tensor& features, const Tensor& read_tensor);

class EncoderDecoder {
public:
    EncoderDecoder(const ModelConfig& config, std::uint64_t seed);

    EncodeResult encode(const Tensor& input, bool train);
    Tensor decode(const Tensor& fused, const std::vector<Tensor>* skips, bool train,
                  const SkipProbe* probe = nullptr);
    ForwardResult forward(const Tensor& input, const MemoryBank* bank, bool train,
                          const SkipProbe* probe = nullptr);

    void zero_grad();
    // Backpropagates d(loss)/d(output) plus optional auxiliary memory-path
    // gradients; fills parameter grads. Requires a previous train-mode forward.
    void backward(const Tensor& d_output, const AuxGrads* aux = nullptr);
    // d(loss)/d(bank items) accumulated by the last backward (M x C).
    const Mat& bank_gradient() const { return bank_grad_; }

    std::vector<nn::Param*> parameters();
    // Named tensors for checkpointing: parameters plus BN running statistics.
    std::vector<std::pair<std::string, std::vector<float>*>> state_entries();

    const ModelConfig& config() const { return config_; }

private:
    Tensor query_grad_to_tensor(const std::vector<Mat>& d_queries, int h, int w) const;

    ModelConfig config_;
    std::vector<nn::ConvBlock> enc_;   // e0..e6
    std::vector<nn::ConvBlock> dec_;   // g0, u1, u2, u3
    std::optional<nn::Conv2d> head_;
    nn::HardTanh out_act_;
    std::array<nn::Upsample2x, 3> up_;

    // forward caches
    bool cached_train_ = false;
    std::vector<Tensor> skip_cache_;
    std::array<bool, 3> skip_overridden_{};  // {unused, skip2, skip3}
    MemoryArtifacts mem_cache_;
    std::vector<QueryMap> raw_query_cache_;  // pre-normalization
    Mat bank_items_cache_;                   // items used in the forward
    int feat_h_ = 0, feat_w_ = 0;
    Mat bank_grad_;
};

// ---- checkpoints -----------------------------------------------------------
// "MVCKPT01" magic, uint32 version, canonical-JSON ModelConfig, named float32
// blobs, then an embedded MEMBANK1 section when the memory is enabled.
struct Checkpoint {
    ModelConfig config;
    std::unique_ptr<EncoderDecoder> model;
    std::optional<MemoryBank> bank;
};

void save_checkpoint(const std::filesystem::path& path, EncoderDecoder& model,
                     const MemoryBank* bank);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::string model_config_to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const std::string& json_text);

}  // namespace memvad
