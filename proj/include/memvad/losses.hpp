#pragma once

#include "memvad/memory_bank.hpp"
#include "memvad/tensor.hpp"

namespace memvad {

struct LossWeights {
    double compact = 0.1;
    double separate = 0.1;
    double uniform = 1.0;
    double margin = 1.0;

    void validate() const;  // all finite and >= 0
};

// Individual term values for one training step.
struct LossParts {
    double intensity = 0.0;
    double compactness = 0.0;
    double separateness = 0.0;
    double uniform = 0.0;
};

// Mean squared per-pixel error. Throws on shape mismatch.
double intensity_loss(const Tensor& output, const Tensor& target);
// d(intensity_loss)/d(output) = 2 (output - target) / size.
Tensor intensity_grad(const Tensor& output, const Tensor& target);

// Mean over queries of squared L2 distance to the nearest item (nearest by
// dot product, the same ordering assignment uses).
double compactness_loss(const QueryMap& qmap, const MemoryBank& bank);
Mat compactness_grad_queries(const QueryMap& qmap, const MemoryBank& bank);

// Triplet-style hinge: mean over queries of
// max(0, ||q - p_first||^2 - ||q - p_second||^2 + margin). Requires M >= 2.
double separateness_loss(const QueryMap& qmap, const MemoryBank& bank, double margin);
Mat separateness_grad_queries(const QueryMap& qmap, const MemoryBank& bank, double margin);

// intensity + weighted auxiliary terms; memory terms drop out when the memory
// is disabled, the uniform term when supervision is off.
double total_loss(const LossParts& parts, const LossWeights& weights, bool memory_enabled,
                  bool uniform_enabled);

}  // namespace memvad
