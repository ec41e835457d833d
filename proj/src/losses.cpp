#include "memvad/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace memvad {

namespace {

// Nearest and second-nearest item indices by dot-product score.
void two_nearest(const Eigen::RowVectorXd& scores, int* first, int* second) {
    int a = 0, b = 1;
    if (scores(1) > scores(0)) std::swap(a, b);
    for (int m = 2; m < scores.size(); ++m) {
        if (scores(m) > scores(a)) {
            b = a;
            a = m;
        } else if (scores(m) > scores(b)) {
            b = m;
        }
    }
    *first = a;
    *second = b;
}

}  // namespace

void LossWeights::validate() const {
    auto ok = [](double v) { return std::isfinite(v) && v >= 0.0; };
    if (!ok(compact) || !ok(separate) || !ok(uniform) || !ok(margin))
        throw std::invalid_argument("LossWeights: all weights and the margin must be finite and >= 0");
}

double intensity_loss(const Tensor& output, const Tensor& target) {
    if (!output.same_shape(target))
        throw std::invalid_argument("intensity_loss: shape mismatch " + output.shape_str() +
                                    " vs " + target.shape_str());
    double acc = 0.0;
    for (std::size_t i = 0; i < output.size(); ++i) {
        double d = static_cast<double>(output.data[i]) - target.data[i];
        acc += d * d;
    }
    return acc / static_cast<double>(output.size());
}

Tensor intensity_grad(const Tensor& output, const Tensor& target) {
    if (!output.same_shape(target))
        throw std::invalid_argument("intensity_grad: shape mismatch");
    Tensor g = Tensor::zeros_like(output);
    const float scale = 2.0f / static_cast<float>(output.size());
    for (std::size_t i = 0; i < output.size(); ++i)
        g.data[i] = scale * (output.data[i] - target.data[i]);
    return g;
}

double compactness_loss(const QueryMap& qmap, const MemoryBank& bank) {
    Mat scores = qmap.queries * bank.items.transpose();
    double acc = 0.0;
    for (int k = 0; k < qmap.count(); ++k) {
        int best = 0;
        for (int m = 1; m < bank.item_count(); ++m)
            if (scores(k, m) > scores(k, best)) best = m;
        acc += (qmap.queries.row(k) - bank.items.row(best)).squaredNorm();
    }
    return acc / static_cast<double>(qmap.count());
}

Mat compactness_grad_queries(const QueryMap& qmap, const MemoryBank& bank) {
    Mat scores = qmap.queries * bank.items.transpose();
    Mat grad = Mat::Zero(qmap.count(), qmap.dim());
    const double scale = 2.0 / static_cast<double>(qmap.count());
    for (int k = 0; k < qmap.count(); ++k) {
        int best = 0;
        for (int m = 1; m < bank.item_count(); ++m)
            if (scores(k, m) > scores(k, best)) best = m;
        grad.row(k) = scale * (qmap.queries.row(k) - bank.items.row(best));
    }
    return grad;
}

double separateness_loss(const QueryMap& qmap, const MemoryBank& bank, double margin) {
    if (bank.item_count() < 2)
        throw std::invalid_argument("separateness_loss: needs at least two memory items");
    Mat scores = qmap.queries * bank.items.transpose();
    double acc = 0.0;
    for (int k = 0; k < qmap.count(); ++k) {
        int first, second;
        two_nearest(scores.row(k), &first, &second);
        double d1 = (qmap.queries.row(k) - bank.items.row(first)).squaredNorm();
        double d2 = (qmap.queries.row(k) - bank.items.row(second)).squaredNorm();
        acc += std::max(0.0, d1 - d2 + margin);
    }
    return acc / static_cast<double>(qmap.count());
}

Mat separateness_grad_queries(const QueryMap& qmap, const MemoryBank& bank, double margin) {
    if (bank.item_count() < 2)
        throw std::invalid_argument("separateness_grad: needs at least two memory items");
    Mat scores = qmap.queries * bank.items.transpose();
    Mat grad = Mat::Zero(qmap.count(), qmap.dim());
    const double scale = 1.0 / static_cast<double>(qmap.count());
    for (int k = 0; k < qmap.count(); ++k) {
        int first, second;
        two_nearest(scores.row(k), &first, &second);
        double d1 = (qmap.queries.row(k) - bank.items.row(first)).squaredNorm();
        double d2 = (qmap.queries.row(k) - bank.items.row(second)).squaredNorm();
        if (d1 - d2 + margin <= 0.0) continue;  // hinge inactive
        grad.row(k) = scale * 2.0 * (bank.items.row(second) - bank.items.row(first));
    }
    return grad;
}

double total_loss(const LossParts& parts, const LossWeights& weights, bool memory_enabled,
                  bool uniform_enabled) {
    weights.validate();
    double total = parts.intensity;
    if (memory_enabled) {
        total += weights.compact * parts.compactness;
        total += weights.separate * parts.separateness;
        if (uniform_enabled) total += weights.uniform * parts.uniform;
    }
    return total;
}

}  // namespace memvad
