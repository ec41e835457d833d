#pragma once

#include "memvad/memory_bank.hpp"
#include "memvad/tensor.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace memvad {

// Per-video score trace. All series share one length; labels are 0/1 and
// refer to the scored (target) frame.
struct ScoreSeries {
    std::string video_id;
    std::vector<int> frame_index;
    std::vector<double> psnr;
    std::vector<double> distance;
    std::vector<double> fused;  // S_t in [0, 1]
    std::vector<int> label;

    std::size_t size() const { return psnr.size(); }
    void validate() const;  // equal lengths, binary labels, fused in [0,1]
};

enum class NormScope { per_video, global };

NormScope norm_scope_from_string(const std::string& s);
std::string to_string(NormScope scope);

// Peak signal-to-noise ratio in dB between two frames in [-1, 1], computed
// on the [0, 1] remapped range. Identical frames return `cap` instead of inf.
double psnr_db(const Tensor& pred, const Tensor& target, double cap = 100.0);

// Mean over queries of the L2 distance to the nearest bank item (nearest by
// the same dot-product ordering the assignment uses).
double query_distance(const QueryMap& qmap, const MemoryBank& bank);

// (x - min) / (max - min); a span below eps returns all zeros instead of
// dividing by zero. `degenerate`, when supplied, reports that the guard hit.
std::vector<double> minmax_normalize(const std::vector<double>& series,
                                     bool* degenerate = nullptr, double eps = 1e-8);

// S_t = lambda * (1 - g(psnr)) + (1 - lambda) * g(distance), g = min-max over
// the given (single-video) series.
std::vector<double> abnormality_score(const std::vector<double>& psnr_series,
                                      const std::vector<double>& dist_series,
                                      double lambda);

// Fills `fused` in every series. per_video applies g within each series;
// global applies one g across the concatenation. Counts min-max degeneracies
// if the pointer is given.
void fuse_scores(std::vector<ScoreSeries>& series, double lambda, NormScope scope,
                 int* degenerate_count = nullptr);

// ROC AUC of the concatenated fused scores against labels, rank-average ties.
// Throws unless both classes are present.
double frame_auc(const std::vector<ScoreSeries>& series);
double frame_auc(const std::vector<double>& scores, const std::vector<int>& labels);

// CSV with header video_id,frame_index,psnr,distance,s_t,label.
void write_scores_csv(const std::vector<ScoreSeries>& series,
                      const std::filesystem::path& path);

}  // namespace memvad
