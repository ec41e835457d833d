#pragma once

#include "memvad/dataset.hpp"
#include "memvad/losses.hpp"
#include "memvad/model.hpp"
#include "memvad/scoring.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace memvad {

// Everything a run needs; settable from JSON and CLI flags.
struct RunConfig {
    // data / outputs
    std::string dataset;
    std::string out = "runs/out";

    // model
    Task task = Task::prediction;
    bool use_memory = true;
    bool use_skips = true;
    int input_size = 256;
    int image_channels = 3;
    int mem_items = 10;
    int feature_dim = 512;
    double noise_ratio = 0.0;
    bool normalize_queries = false;

    // training
    int epochs = 60;
    int batch_size = 4;
    double learning_rate = 2e-4;
    LossWeights loss_weights;
    bool uniform_supervision = false;
    std::string uniform_scope = "per_sample";  // or "batch"
    int checkpoint_interval = 5;

    // evaluation
    double lambda = 0.6;
    bool test_time_update = false;
    std::string normalization_scope = "per_video";  // or "global"
    std::string test_update_gate = "none";          // gated variant not implemented
    std::vector<double> ablation_lambdas;           // 5 entries; empty = lambda everywhere

    // misc
    std::uint64_t seed = 1;
    std::size_t cache_mb = 512;

    void validate() const;
    ModelConfig model_config() const;
    std::string to_json(int indent = -1) const;
    static RunConfig from_json(const std::string& text);
    static RunConfig from_json_file(const std::filesystem::path& path);
    // FNV-1a over the canonical JSON dump, hex string.
    std::string hash() const;
};

// Named presets: the published per-dataset settings plus the desk-scale
// synthetic profiles used by the test suites.
const std::map<std::string, RunConfig>& presets();
RunConfig preset(const std::string& name);

struct TrainResult {
    std::filesystem::path final_checkpoint;
    std::filesystem::path log_csv;
    std::vector<std::filesystem::path> epoch_checkpoints;
    std::vector<double> epoch_total_loss;  // mean total loss per epoch
};

TrainResult train(const RunConfig& config);

struct EvalOptions {
    std::filesystem::path checkpoint;
    std::filesystem::path dataset;  // root containing test/
    std::optional<double> lambda;   // default 0.6; forced to 1 for memoryless models
    bool test_time_update = false;
    NormScope scope = NormScope::per_video;
    std::filesystem::path out_dir;
    int batch_size = 8;
    std::uint64_t seed = 1;
    std::vector<double> lambda_grid;  // extra AUCs swept over the fusion weight
};

struct EvalResult {
    double auc = 0.0;
    double lambda = 0.0;  // effective fusion weight
    std::vector<ScoreSeries> series;
    int degenerate_normalizations = 0;
    std::map<double, double> auc_per_lambda;
    std::filesystem::path scores_csv;
    std::filesystem::path summary_json;
};

EvalResult evaluate(const EvalOptions& options);

struct MemDistResult {
    Eigen::VectorXi counts;
    std::filesystem::path counts_csv;
    std::filesystem::path histogram_png;
};

// Aggregates nearest-item assignment counts over a dataset split with the
// checkpoint's bank. Throws for memoryless checkpoints.
MemDistResult plot_memory_distribution(const std::filesystem::path& checkpoint,
                                       const std::filesystem::path& dataset,
                                       const std::filesystem::path& out_dir,
                                       const std::string& split = "test");

struct EmbedResult {
    int rows = 0;
    std::filesystem::path dump_csv;
    std::filesystem::path projection_png;
};

// Dumps `sample_count` query vectors (seeded sample over all clip/position
// slots) and renders a 2-D PCA projection.
EmbedResult plot_embeddings(const std::filesystem::path& checkpoint,
                            const std::filesystem::path& dataset, int sample_count,
                            std::uint64_t seed, const std::filesystem::path& out_dir);

struct AblationRow {
    bool separateness = false;
    bool compactness = false;
    bool test_time_update = false;
    double lambda = 0.0;
    double auc = 0.0;
    std::string status;  // "ok" or the error text
};

// The five-row on/off grid over {separateness, compactness, test-time update}.
// Rows that fail record their error and the grid continues.
std::vector<AblationRow> run_ablation_suite(const RunConfig& base,
                                            const std::filesystem::path& out_dir);

}  // namespace memvad
