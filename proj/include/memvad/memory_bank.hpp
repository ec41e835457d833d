#pragma once

#include <Eigen/Dense>

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace memvad {

using Mat = Eigen::MatrixXd;

// Bank of M prototype items, one per row, each kept at unit L2 norm.
struct MemoryBank {
    Mat items;  // M x C

    MemoryBank() = default;
    explicit MemoryBank(Mat m);

    int item_count() const { return static_cast<int>(items.rows()); }
    int dim() const { return static_cast<int>(items.cols()); }

    // Gaussian rows normalized to unit length.
    static MemoryBank random(int item_count, int dim, std::uint64_t seed);

    // Throws if M < 2, C < 1, a row is non-finite or off unit norm by > 1e-5.
    void validate() const;
};

// Encoder features flattened to one row per spatial position (K = h * w).
struct QueryMap {
    Mat queries;  // K x C
    int h = 0;
    int w = 0;

    QueryMap() = default;
    QueryMap(Mat q, int h_, int w_);
    explicit QueryMap(Mat q);  // h = K, w = 1

    int count() const { return static_cast<int>(queries.rows()); }
    int dim() const { return static_cast<int>(queries.cols()); }
    void validate() const;  // K >= 1, finite entries
};

// Per-query softmax over items; rows sum to 1.
struct MatchWeights {
    Mat w;  // K x M
};

// Per-item softmax over queries; rows sum to 1.
struct UpdateWeights {
    Mat v;  // M x K
};

// Partition of the K query indices by nearest item.
struct AssignmentSets {
    std::vector<std::vector<int>> sets;  // size M
    std::vector<int> owner;              // size K, owner[k] = argmax item
};

// Raw dot-product scores, one row per query: scores(k, m) = p_m . q_k.
// Throws on dimension mismatch or non-finite input.
Mat correlate(const MemoryBank& bank, const QueryMap& qmap);

// Row-stabilized softmax over items (Eq. 1 direction).
MatchWeights match_weights(const Mat& scores);

// Weighted average of items per query: row k = sum_m w(k,m) p_m.
Mat read(const MemoryBank& bank, const MatchWeights& weights);

// Column-stabilized softmax over queries (Eq. 4 direction), stored M x K.
UpdateWeights update_weights(const Mat& scores);

// Nearest-item partition; ties go to the lowest item index.
AssignmentSets assign_queries(const MatchWeights& weights);

// Moves each item toward its assigned queries and renormalizes.
// Items with an empty assignment set are returned bit-identical.
// Throws if an updated item cancels to zero norm, naming the item.
MemoryBank update(const MemoryBank& bank, const QueryMap& qmap,
                  const UpdateWeights& v, const AssignmentSets& sets);

// counts[m] = |U_m|; sums to K.
Eigen::VectorXi distribution_histogram(const AssignmentSets& sets);

// Mean squared deviation of v from the all-uniform M x K map (every entry 1/K).
double uniform_supervision_loss(const UpdateWeights& v);

// d(uniform_supervision_loss)/dv, same shape as v.
Mat uniform_supervision_grad(const UpdateWeights& v);

// ---- gradient helpers for the differentiable read path -------------------
// Shapes follow the forward ops above; all are exact analytic derivatives.

// dRead -> (dW, dItems_read): dW = dR P^T, dItems = W^T dR.
void read_backward(const MemoryBank& bank, const MatchWeights& weights,
                   const Mat& d_read, Mat* d_weights, Mat* d_items);

// Softmax Jacobian applied row-wise: dS(k,:) = w(k,:) .* (dW(k,:) - <dW(k,:), w(k,:)>).
Mat match_weights_backward(const MatchWeights& weights, const Mat& d_weights);

// Same Jacobian for the M x K orientation; returns dScores as K x M.
Mat update_weights_backward(const UpdateWeights& v, const Mat& d_v);

// dScores -> (dQueries, dItems_corr): dQ = dS P, dP = dS^T Q.
void correlate_backward(const MemoryBank& bank, const QueryMap& qmap,
                        const Mat& d_scores, Mat* d_queries, Mat* d_items);

// L2-normalize every query row (optional cosine-style correlation input).
QueryMap normalize_queries(const QueryMap& qmap);
// Backward of row normalization: maps d(q_hat) to d(q).
Mat normalize_queries_backward(const QueryMap& raw, const Mat& d_normalized);

// ---- serialization --------------------------------------------------------
// File layout, little-endian: "MEMBANK1" magic, uint32 M, uint32 C,
// then M*C float64 items in row-major order.
void save_bank(const MemoryBank& bank, const std::filesystem::path& path);
MemoryBank load_bank(const std::filesystem::path& path);
void write_bank_bytes(const MemoryBank& bank, std::vector<std::uint8_t>& out);
MemoryBank read_bank_bytes(const std::uint8_t* data, std::size_t size, std::size_t* consumed);

// Test hook: bumped by every memory op so feature-gated runs can assert the
// memory path was never entered.
std::atomic<std::uint64_t>& memory_op_count();

}  // namespace memvad
