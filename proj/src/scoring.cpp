#include "memvad/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace memvad {

void ScoreSeries::validate() const {
    const std::size_t n = psnr.size();
    if (frame_index.size() != n || distance.size() != n || label.size() != n ||
        (!fused.empty() && fused.size() != n))
        throw std::invalid_argument("ScoreSeries: series lengths differ for video " + video_id);
    for (int l : label)
        if (l != 0 && l != 1)
            throw std::invalid_argument("ScoreSeries: labels must be 0/1 in video " + video_id);
    for (double s : fused)
        if (!(s >= 0.0 && s <= 1.0))
            throw std::invalid_argument("ScoreSeries: fused score outside [0,1] in video " +
                                        video_id);
}

NormScope norm_scope_from_string(const std::string& s) {
    if (s == "per_video") return NormScope::per_video;
    if (s == "global") return NormScope::global;
    throw std::invalid_argument("unknown normalization scope: " + s);
}

std::string to_string(NormScope scope) {
    return scope == NormScope::per_video ? "per_video" : "global";
}

double psnr_db(const Tensor& pred, const Tensor& target, double cap) {
    if (!pred.same_shape(target))
        throw std::invalid_argument("psnr: shape mismatch " + pred.shape_str() + " vs " +
                                    target.shape_str());
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        // [-1,1] -> [0,1] remap: difference halves
        double d = (static_cast<double>(pred.data[i]) - target.data[i]) * 0.5;
        acc += d * d;
    }
    double mse = acc / static_cast<double>(pred.size());
    if (mse <= 0.0) return cap;
    double value = 10.0 * std::log10(1.0 / mse);
    return std::min(value, cap);
}

double query_distance(const QueryMap& qmap, const MemoryBank& bank) {
    if (qmap.dim() != bank.dim())
        throw std::invalid_argument("query_distance: dimensionality mismatch");
    Mat scores = qmap.queries * bank.items.transpose();
    double acc = 0.0;
    for (int k = 0; k < qmap.count(); ++k) {
        int best = 0;
        for (int m = 1; m < bank.item_count(); ++m)
            if (scores(k, m) > scores(k, best)) best = m;
        acc += (qmap.queries.row(k) - bank.items.row(best)).norm();
    }
    return acc / static_cast<double>(qmap.count());
}

std::vector<double> minmax_normalize(const std::vector<double>& series, bool* degenerate,
                                     double eps) {
    if (series.empty()) throw std::invalid_argument("minmax_normalize: empty series");
    for (double v : series)
        if (!std::isfinite(v))
            throw std::invalid_argument("minmax_normalize: non-finite input");
    auto [mn_it, mx_it] = std::minmax_element(series.begin(), series.end());
    double mn = *mn_it, mx = *mx_it;
    if (degenerate) *degenerate = false;
    if (mx - mn < eps) {
        // the divide-by-zero path: constant series map to all zeros
        if (degenerate) *degenerate = true;
        return std::vector<double>(series.size(), 0.0);
    }
    std::vector<double> out(series.size());
    for (std::size_t i = 0; i < series.size(); ++i) out[i] = (series[i] - mn) / (mx - mn);
    return out;
}

std::vector<double> abnormality_score(const std::vector<double>& psnr_series,
                                      const std::vector<double>& dist_series, double lambda) {
    if (psnr_series.size() != dist_series.size())
        throw std::invalid_argument("abnormality_score: series length mismatch");
    if (!(lambda >= 0.0 && lambda <= 1.0))
        throw std::invalid_argument("abnormality_score: lambda must be in [0,1]");
    auto g_psnr = minmax_normalize(psnr_series);
    auto g_dist = minmax_normalize(dist_series);
    std::vector<double> out(psnr_series.size());
    for (std::size_t t = 0; t < out.size(); ++t)
        out[t] = lambda * (1.0 - g_psnr[t]) + (1.0 - lambda) * g_dist[t];
    return out;
}

void fuse_scores(std::vector<ScoreSeries>& series, double lambda, NormScope scope,
                 int* degenerate_count) {
    if (!(lambda >= 0.0 && lambda <= 1.0))
        throw std::invalid_argument("fuse_scores: lambda must be in [0,1]");
    int degenerates = 0;
    if (scope == NormScope::per_video) {
        for (auto& s : series) {
            bool d1 = false, d2 = false;
            auto g_psnr = minmax_normalize(s.psnr, &d1);
            auto g_dist = minmax_normalize(s.distance, &d2);
            degenerates += static_cast<int>(d1) + static_cast<int>(d2);
            s.fused.resize(s.size());
            for (std::size_t t = 0; t < s.size(); ++t)
                s.fused[t] = lambda * (1.0 - g_psnr[t]) + (1.0 - lambda) * g_dist[t];
        }
    } else {
        std::vector<double> all_psnr, all_dist;
        for (const auto& s : series) {
            all_psnr.insert(all_psnr.end(), s.psnr.begin(), s.psnr.end());
            all_dist.insert(all_dist.end(), s.distance.begin(), s.distance.end());
        }
        bool d1 = false, d2 = false;
        auto g_psnr = minmax_normalize(all_psnr, &d1);
        auto g_dist = minmax_normalize(all_dist, &d2);
        degenerates += static_cast<int>(d1) + static_cast<int>(d2);
        std::size_t at = 0;
        for (auto& s : series) {
            s.fused.resize(s.size());
            for (std::size_t t = 0; t < s.size(); ++t, ++at)
                s.fused[t] = lambda * (1.0 - g_psnr[at]) + (1.0 - lambda) * g_dist[at];
        }
    }
    if (degenerate_count) *degenerate_count = degenerates;
}

double frame_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size())
        throw std::invalid_argument("frame_auc: scores/labels length mismatch");
    std::size_t n_pos = 0, n_neg = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (!std::isfinite(scores[i])) throw std::runtime_error("frame_auc: non-finite score");
        if (labels[i] == 1) ++n_pos;
        else if (labels[i] == 0) ++n_neg;
        else throw std::invalid_argument("frame_auc: labels must be 0/1");
    }
    if (n_pos == 0 || n_neg == 0)
        throw std::invalid_argument("frame_auc: need both classes present");

    // rank-sum with average ranks for ties
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    double pos_rank_sum = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
        double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
        for (std::size_t t = i; t <= j; ++t)
            if (labels[order[t]] == 1) pos_rank_sum += avg_rank;
        i = j + 1;
    }
    double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
    return (pos_rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

double frame_auc(const std::vector<ScoreSeries>& series) {
    std::vector<double> scores;
    std::vector<int> labels;
    for (const auto& s : series) {
        if (s.fused.size() != s.size())
            throw std::invalid_argument("frame_auc: series not fused yet for video " + s.video_id);
        scores.insert(scores.end(), s.fused.begin(), s.fused.end());
        labels.insert(labels.end(), s.label.begin(), s.label.end());
    }
    return frame_auc(scores, labels);
}

void write_scores_csv(const std::vector<ScoreSeries>& series,
                      const std::filesystem::path& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("write_scores_csv: cannot open " + path.string());
    f << "video_id,frame_index,psnr,distance,s_t,label\n";
    f.precision(17);
    for (const auto& s : series)
        for (std::size_t t = 0; t < s.size(); ++t)
            f << s.video_id << ',' << s.frame_index[t] << ',' << s.psnr[t] << ',' << s.distance[t]
              << ',' << s.fused[t] << ',' << s.label[t] << '\n';
    if (!f) throw std::runtime_error("write_scores_csv: write failed for " + path.string());
}

}  // namespace memvad
