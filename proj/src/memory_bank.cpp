#include "memvad/memory_bank.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <stdexcept>

namespace memvad {

namespace {

constexpr double kUnitNormTol = 1e-5;
constexpr double kZeroNormEps = 1e-12;

void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

void require_finite(const Mat& m, const char* what) {
    if (!m.allFinite()) throw std::invalid_argument(std::string(what) + " contains non-finite entries");
}

}  // namespace

std::atomic<std::uint64_t>& memory_op_count() {
    static std::atomic<std::uint64_t> count{0};
    return count;
}

MemoryBank::MemoryBank(Mat m) : items(std::move(m)) { validate(); }

MemoryBank MemoryBank::random(int item_count, int dim, std::uint64_t seed) {
    require(item_count >= 2, "MemoryBank: item count must be >= 2");
    require(dim >= 1, "MemoryBank: dimensionality must be >= 1");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Mat items(item_count, dim);
    for (int m = 0; m < item_count; ++m) {
        double norm2 = 0.0;
        do {
            for (int c = 0; c < dim; ++c) items(m, c) = gauss(rng);
            norm2 = items.row(m).squaredNorm();
        } while (norm2 < kZeroNormEps);
        items.row(m) /= std::sqrt(norm2);
    }
    return MemoryBank(std::move(items));
}

void MemoryBank::validate() const {
    require(items.rows() >= 2, "MemoryBank: item count must be >= 2");
    require(items.cols() >= 1, "MemoryBank: dimensionality must be >= 1");
    require_finite(items, "MemoryBank items");
    for (int m = 0; m < items.rows(); ++m) {
        double n = items.row(m).norm();
        if (std::abs(n - 1.0) > kUnitNormTol)
            throw std::invalid_argument("MemoryBank: item " + std::to_string(m) +
                                        " has L2 norm " + std::to_string(n) + ", expected 1");
    }
}

QueryMap::QueryMap(Mat q, int h_, int w_) : queries(std::move(q)), h(h_), w(w_) {
    require(static_cast<long long>(h) * w == queries.rows(),
            "QueryMap: h*w must equal the query count");
    validate();
}

QueryMap::QueryMap(Mat q) : queries(std::move(q)), h(static_cast<int>(queries.rows())), w(1) {
    validate();
}

void QueryMap::validate() const {
    require(queries.rows() >= 1, "QueryMap: need at least one query");
    require_finite(queries, "QueryMap");
}

Mat correlate(const MemoryBank& bank, const QueryMap& qmap) {
    memory_op_count()++;
    require(bank.dim() == qmap.dim(),
            "correlate: bank dimensionality " + std::to_string(bank.dim()) +
                " != query dimensionality " + std::to_string(qmap.dim()));
    require_finite(bank.items, "correlate: bank");
    require_finite(qmap.queries, "correlate: queries");
    return qmap.queries * bank.items.transpose();  // K x M
}

MatchWeights match_weights(const Mat& scores) {
    memory_op_count()++;
    require_finite(scores, "match_weights: scores");
    Mat w(scores.rows(), scores.cols());
    for (int k = 0; k < scores.rows(); ++k) {
        double mx = scores.row(k).maxCoeff();
        Eigen::RowVectorXd e = (scores.row(k).array() - mx).exp();
        w.row(k) = e / e.sum();
    }
    return MatchWeights{std::move(w)};
}

Mat read(const MemoryBank& bank, const MatchWeights& weights) {
    memory_op_count()++;
    require(weights.w.cols() == bank.item_count(),
            "read: weight columns != bank item count");
    return weights.w * bank.items;  // K x C
}

UpdateWeights update_weights(const Mat& scores) {
    memory_op_count()++;
    require_finite(scores, "update_weights: scores");
    const int K = static_cast<int>(scores.rows());
    const int M = static_cast<int>(scores.cols());
    Mat v(M, K);
    for (int m = 0; m < M; ++m) {
        double mx = scores.col(m).maxCoeff();
        Eigen::VectorXd e = (scores.col(m).array() - mx).exp();
        v.row(m) = (e / e.sum()).transpose();
    }
    return UpdateWeights{std::move(v)};
}

AssignmentSets assign_queries(const MatchWeights& weights) {
    memory_op_count()++;
    const int K = static_cast<int>(weights.w.rows());
    const int M = static_cast<int>(weights.w.cols());
    AssignmentSets out;
    out.sets.assign(M, {});
    out.owner.resize(K);
    for (int k = 0; k < K; ++k) {
        int best = 0;
        for (int m = 1; m < M; ++m)
            if (weights.w(k, m) > weights.w(k, best)) best = m;  // strict: ties keep lowest index
        out.owner[k] = best;
        out.sets[best].push_back(k);
    }
    return out;
}

MemoryBank update(const MemoryBank& bank, const QueryMap& qmap,
                  const UpdateWeights& v, const AssignmentSets& sets) {
    memory_op_count()++;
    const int M = bank.item_count();
    require(qmap.dim() == bank.dim(), "update: query dimensionality mismatch");
    require(v.v.rows() == M && v.v.cols() == qmap.count(),
            "update: update-weight shape mismatch");
    require(static_cast<int>(sets.sets.size()) == M, "update: assignment set count != M");

    MemoryBank out;
    out.items = bank.items;
    for (int m = 0; m < M; ++m) {
        if (sets.sets[m].empty()) continue;  // fixpoint: untouched items stay bit-identical
        Eigen::RowVectorXd item = bank.items.row(m);
        for (int k : sets.sets[m]) item += v.v(m, k) * qmap.queries.row(k);
        double n = item.norm();
        if (n < kZeroNormEps)
            throw std::runtime_error("update: item " + std::to_string(m) +
                                     " cancelled to zero norm");
        out.items.row(m) = item / n;
    }
    return out;
}

Eigen::VectorXi distribution_histogram(const AssignmentSets& sets) {
    Eigen::VectorXi counts(static_cast<int>(sets.sets.size()));
    for (int m = 0; m < counts.size(); ++m) counts(m) = static_cast<int>(sets.sets[m].size());
    return counts;
}

double uniform_supervision_loss(const UpdateWeights& v) {
    const double ideal = 1.0 / static_cast<double>(v.v.cols());
    return (v.v.array() - ideal).square().mean();
}

Mat uniform_supervision_grad(const UpdateWeights& v) {
    const double ideal = 1.0 / static_cast<double>(v.v.cols());
    const double scale = 2.0 / static_cast<double>(v.v.size());
    return scale * (v.v.array() - ideal).matrix();
}

void read_backward(const MemoryBank& bank, const MatchWeights& weights,
                   const Mat& d_read, Mat* d_weights, Mat* d_items) {
    if (d_weights) *d_weights = d_read * bank.items.transpose();
    if (d_items) *d_items = weights.w.transpose() * d_read;
}

Mat match_weights_backward(const MatchWeights& weights, const Mat& d_weights) {
    Mat d_scores(weights.w.rows(), weights.w.cols());
    for (int k = 0; k < weights.w.rows(); ++k) {
        double dot = weights.w.row(k).dot(d_weights.row(k));
        d_scores.row(k) =
            (weights.w.row(k).array() * (d_weights.row(k).array() - dot)).matrix();
    }
    return d_scores;
}

Mat update_weights_backward(const UpdateWeights& v, const Mat& d_v) {
    const int M = static_cast<int>(v.v.rows());
    const int K = static_cast<int>(v.v.cols());
    Mat d_scores(K, M);
    for (int m = 0; m < M; ++m) {
        double dot = v.v.row(m).dot(d_v.row(m));
        d_scores.col(m) =
            (v.v.row(m).array() * (d_v.row(m).array() - dot)).matrix().transpose();
    }
    return d_scores;
}

void correlate_backward(const MemoryBank& bank, const QueryMap& qmap,
                        const Mat& d_scores, Mat* d_queries, Mat* d_items) {
    if (d_queries) *d_queries = d_scores * bank.items;
    if (d_items) *d_items = d_scores.transpose() * qmap.queries;
}

QueryMap normalize_queries(const QueryMap& qmap) {
    Mat q = qmap.queries;
    for (int k = 0; k < q.rows(); ++k) {
        double n = q.row(k).norm();
        if (n > kZeroNormEps) q.row(k) /= n;
    }
    QueryMap out;
    out.queries = std::move(q);
    out.h = qmap.h;
    out.w = qmap.w;
    return out;
}

Mat normalize_queries_backward(const QueryMap& raw, const Mat& d_normalized) {
    Mat dq(raw.queries.rows(), raw.queries.cols());
    for (int k = 0; k < raw.queries.rows(); ++k) {
        double n = raw.queries.row(k).norm();
        if (n <= kZeroNormEps) {
            dq.row(k) = d_normalized.row(k);  // normalization was a no-op
            continue;
        }
        Eigen::RowVectorXd qhat = raw.queries.row(k) / n;
        double dot = qhat.dot(d_normalized.row(k));
        dq.row(k) = (d_normalized.row(k) - dot * qhat) / n;
    }
    return dq;
}

namespace {

constexpr char kBankMagic[8] = {'M', 'E', 'M', 'B', 'A', 'N', 'K', '1'};

template <typename T>
void append_le(std::vector<std::uint8_t>& out, T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    std::uint8_t raw[sizeof(T)];
    std::memcpy(raw, &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big)
        std::reverse(std::begin(raw), std::end(raw));
    out.insert(out.end(), std::begin(raw), std::end(raw));
}

template <typename T>
T take_le(const std::uint8_t* data) {
    std::uint8_t raw[sizeof(T)];
    std::memcpy(raw, data, sizeof(T));
    if constexpr (std::endian::native == std::endian::big)
        std::reverse(std::begin(raw), std::end(raw));
    T value;
    std::memcpy(&value, raw, sizeof(T));
    return value;
}

}  // namespace

void write_bank_bytes(const MemoryBank& bank, std::vector<std::uint8_t>& out) {
    out.insert(out.end(), std::begin(kBankMagic), std::end(kBankMagic));
    append_le<std::uint32_t>(out, static_cast<std::uint32_t>(bank.item_count()));
    append_le<std::uint32_t>(out, static_cast<std::uint32_t>(bank.dim()));
    for (int m = 0; m < bank.item_count(); ++m)
        for (int c = 0; c < bank.dim(); ++c) append_le<double>(out, bank.items(m, c));
}

MemoryBank read_bank_bytes(const std::uint8_t* data, std::size_t size, std::size_t* consumed) {
    if (size < 16 || std::memcmp(data, kBankMagic, 8) != 0)
        throw std::runtime_error("bank deserialization: missing MEMBANK1 header");
    const auto M = take_le<std::uint32_t>(data + 8);
    const auto C = take_le<std::uint32_t>(data + 12);
    const std::size_t need = 16 + static_cast<std::size_t>(M) * C * sizeof(double);
    if (size < need) throw std::runtime_error("bank deserialization: truncated file");
    Mat items(M, C);
    const std::uint8_t* p = data + 16;
    for (std::uint32_t m = 0; m < M; ++m)
        for (std::uint32_t c = 0; c < C; ++c, p += sizeof(double))
            items(m, c) = take_le<double>(p);
    if (consumed) *consumed = need;
    MemoryBank bank;
    bank.items = std::move(items);  // bypass validate: serialized banks round-trip bit-exactly
    return bank;
}

void save_bank(const MemoryBank& bank, const std::filesystem::path& path) {
    std::vector<std::uint8_t> bytes;
    write_bank_bytes(bank, bytes);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("save_bank: cannot open " + path.string());
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw std::runtime_error("save_bank: write failed for " + path.string());
}

MemoryBank load_bank(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("load_bank: cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                    std::istreambuf_iterator<char>());
    std::size_t consumed = 0;
    return read_bank_bytes(bytes.data(), bytes.size(), &consumed);
}

}  // namespace memvad
