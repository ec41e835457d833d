#include "memvad/pipeline.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

using memvad::RunConfig;

// Shared --config/--preset handling plus common overrides; flag values win
// over whatever the file or preset sets.
struct ConfigArgs {
    std::string config_file;
    std::string preset_name;
    std::string dataset;
    std::string out;
    std::int64_t seed = -1;

    void attach(CLI::App* cmd) {
        cmd->add_option("--config", config_file, "JSON config file");
        cmd->add_option("--preset", preset_name, "named preset (see --list-presets on the root)");
        cmd->add_option("--dataset", dataset, "dataset root directory");
        cmd->add_option("--out", out, "output directory");
        cmd->add_option("--seed", seed, "RNG seed");
    }

    RunConfig resolve() const {
        RunConfig cfg;
        if (!preset_name.empty()) cfg = memvad::preset(preset_name);
        if (!config_file.empty()) cfg = RunConfig::from_json_file(config_file);
        if (!dataset.empty()) cfg.dataset = dataset;
        if (!out.empty()) cfg.out = out;
        if (seed >= 0) cfg.seed = static_cast<std::uint64_t>(seed);
        return cfg;
    }
};

std::vector<double> parse_lambda_grid(const std::string& csv) {
    std::vector<double> grid;
    std::size_t at = 0;
    while (at < csv.size()) {
        std::size_t next = csv.find(',', at);
        if (next == std::string::npos) next = csv.size();
        grid.push_back(std::stod(csv.substr(at, next - at)));
        at = next + 1;
    }
    return grid;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"memvad: memory-guided video anomaly detection toolkit"};
    app.require_subcommand(0, 1);
    bool list_presets = false;
    app.add_flag("--list-presets", list_presets, "print available presets and exit");

    // ---- train ----
    auto* train_cmd = app.add_subcommand("train", "train a model on the train split");
    ConfigArgs train_args;
    train_args.attach(train_cmd);
    std::int64_t epochs_override = -1;
    double lr_override = -1.0;
    train_cmd->add_option("--epochs", epochs_override, "override epoch count");
    train_cmd->add_option("--lr", lr_override, "override learning rate");

    // ---- eval ----
    auto* eval_cmd = app.add_subcommand("eval", "score the test split with a checkpoint");
    ConfigArgs eval_args;
    eval_args.attach(eval_cmd);
    std::string ckpt_path;
    double lambda_override = -1.0;
    bool ttu_flag = false;
    std::string scope_name;
    std::string lambda_grid_csv;
    eval_cmd->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
    eval_cmd->add_option("--lambda", lambda_override, "fusion weight in [0,1]");
    eval_cmd->add_flag("--test-time-update", ttu_flag, "update the memory bank while scoring");
    eval_cmd->add_option("--norm-scope", scope_name, "per_video or global");
    eval_cmd->add_option("--lambda-grid", lambda_grid_csv,
                         "comma-separated lambdas to sweep for extra AUCs");

    // ---- synth ----
    auto* synth_cmd = app.add_subcommand("synth", "generate the synthetic moving-shapes dataset");
    ConfigArgs synth_args;
    synth_args.attach(synth_cmd);
    memvad::SynthDatasetSpec synth_spec;
    synth_cmd->add_option("--canvas", synth_spec.canvas, "canvas side in pixels");
    synth_cmd->add_option("--frames", synth_spec.frames_per_video, "frames per video");
    synth_cmd->add_option("--train-videos", synth_spec.train_videos, "normal training videos");
    synth_cmd->add_option("--test-per-class", synth_spec.test_videos_per_class,
                          "test videos per anomaly class");
    synth_cmd->add_option("--radius", synth_spec.radius, "shape radius / half-side");

    // ---- extract-frames ----
    auto* extract_cmd = app.add_subcommand("extract-frames", "split a video into numbered frames");
    std::string video_path, frames_out;
    extract_cmd->add_option("--video", video_path, "input video file")->required();
    extract_cmd->add_option("--out", frames_out, "output frame directory")->required();

    // ---- plot-memdist ----
    auto* memdist_cmd =
        app.add_subcommand("plot-memdist", "histogram of query-to-item assignments");
    ConfigArgs memdist_args;
    memdist_args.attach(memdist_cmd);
    std::string memdist_ckpt, memdist_split = "test";
    memdist_cmd->add_option("--checkpoint", memdist_ckpt, "checkpoint file")->required();
    memdist_cmd->add_option("--split", memdist_split, "dataset split (train or test)");

    // ---- plot-embed ----
    auto* embed_cmd = app.add_subcommand("plot-embed", "dump sampled queries + 2-D projection");
    ConfigArgs embed_args;
    embed_args.attach(embed_cmd);
    std::string embed_ckpt;
    int embed_samples = 1000;
    embed_cmd->add_option("--checkpoint", embed_ckpt, "checkpoint file")->required();
    embed_cmd->add_option("--samples", embed_samples, "query vectors to dump");

    // ---- ablate ----
    auto* ablate_cmd =
        app.add_subcommand("ablate", "run the 5-row separateness/compactness/update grid");
    ConfigArgs ablate_args;
    ablate_args.attach(ablate_cmd);

    CLI11_PARSE(app, argc, argv);

    try {
        if (list_presets) {
            for (const auto& [name, cfg] : memvad::presets())
                std::cout << name << ": task=" << memvad::to_string(cfg.task)
                          << " memory=" << (cfg.use_memory ? "Y" : "N")
                          << " lambda=" << cfg.lambda << " epochs=" << cfg.epochs
                          << " batch=" << cfg.batch_size << "\n";
            return 0;
        }

        if (train_cmd->parsed()) {
            RunConfig cfg = train_args.resolve();
            if (epochs_override > 0) cfg.epochs = static_cast<int>(epochs_override);
            if (lr_override > 0) cfg.learning_rate = lr_override;
            cfg.validate();
            auto result = memvad::train(cfg);
            std::cout << "checkpoint: " << result.final_checkpoint.string() << "\n"
                      << "log: " << result.log_csv.string() << "\n";
            return 0;
        }

        if (eval_cmd->parsed()) {
            RunConfig cfg = eval_args.resolve();
            memvad::EvalOptions opts;
            opts.checkpoint = ckpt_path;
            opts.dataset = cfg.dataset;
            opts.lambda = lambda_override >= 0.0 ? lambda_override : cfg.lambda;
            opts.test_time_update = ttu_flag || cfg.test_time_update;
            opts.scope = memvad::norm_scope_from_string(
                scope_name.empty() ? cfg.normalization_scope : scope_name);
            opts.out_dir = cfg.out;
            opts.seed = cfg.seed;
            if (!lambda_grid_csv.empty()) opts.lambda_grid = parse_lambda_grid(lambda_grid_csv);
            auto result = memvad::evaluate(opts);
            std::cout << "auc: " << result.auc << " (lambda=" << result.lambda << ")\n";
            for (auto& [l, a] : result.auc_per_lambda)
                std::cout << "  lambda=" << l << " auc=" << a << "\n";
            std::cout << "scores: " << result.scores_csv.string() << "\n"
                      << "summary: " << result.summary_json.string() << "\n";
            return 0;
        }

        if (synth_cmd->parsed()) {
            RunConfig cfg = synth_args.resolve();
            if (cfg.dataset.empty())
                throw std::invalid_argument("synth: --dataset names the output root");
            synth_spec.seed = cfg.seed;
            memvad::write_synth_dataset(cfg.dataset, synth_spec);
            std::cout << "wrote synthetic dataset under " << cfg.dataset << "\n";
            return 0;
        }

        if (extract_cmd->parsed()) {
            const int n = memvad::extract_frames(video_path, frames_out);
            std::cout << "extracted " << n << " frames to " << frames_out << "\n";
            return 0;
        }

        if (memdist_cmd->parsed()) {
            RunConfig cfg = memdist_args.resolve();
            auto result = memvad::plot_memory_distribution(memdist_ckpt, cfg.dataset, cfg.out,
                                                           memdist_split);
            std::cout << "counts: " << result.counts.transpose() << "\n"
                      << "csv: " << result.counts_csv.string() << "\n"
                      << "plot: " << result.histogram_png.string() << "\n";
            return 0;
        }

        if (embed_cmd->parsed()) {
            RunConfig cfg = embed_args.resolve();
            auto result =
                memvad::plot_embeddings(embed_ckpt, cfg.dataset, embed_samples, cfg.seed, cfg.out);
            std::cout << "rows: " << result.rows << "\n"
                      << "dump: " << result.dump_csv.string() << "\n"
                      << "plot: " << result.projection_png.string() << "\n";
            return 0;
        }

        if (ablate_cmd->parsed()) {
            RunConfig cfg = ablate_args.resolve();
            cfg.validate();
            auto rows = memvad::run_ablation_suite(cfg, cfg.out);
            bool ok = true;
            for (const auto& r : rows) ok = ok && r.status == "ok";
            std::cout << "ablation table: " << (std::filesystem::path(cfg.out) / "ablation.csv")
                      << "\n";
            return ok ? 0 : 1;
        }

        std::cout << app.help() << "\n";
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
