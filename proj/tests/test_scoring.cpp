#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "memvad/scoring.hpp"
#include "oracles.hpp"

#include <cmath>
#include <random>

using namespace memvad;

namespace {

Tensor const_frame(float v, int h = 4, int w = 4) {
    Tensor t(1, 3, h, w);
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
}

Tensor random_frame(std::mt19937_64& rng, int h = 4, int w = 4) {
    std::uniform_real_distribution<float> u(-1.0f, 1.0f);
    Tensor t(1, 3, h, w);
    for (auto& v : t.data) v = u(rng);
    return t;
}

}  // namespace

TEST_CASE("psnr: worst case (full-range error) is 0 dB") {
    // pred -1, target +1: remapped difference is 1, MSE = peak^2
    CHECK(psnr_db(const_frame(-1.0f), const_frame(1.0f)) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("psnr: MSE of peak^2/100 gives 20 dB") {
    // remapped difference 0.1 everywhere -> MSE = 0.01
    CHECK(psnr_db(const_frame(0.0f), const_frame(0.2f)) == doctest::Approx(20.0).epsilon(1e-6));
}

TEST_CASE("psnr: identical frames hit the cap, random pairs match the formula") {
    CHECK(psnr_db(const_frame(0.3f), const_frame(0.3f)) == doctest::Approx(100.0));

    std::mt19937_64 rng(5);
    for (int i = 0; i < 20; ++i) {
        Tensor a = random_frame(rng), b = random_frame(rng);
        double mse = 0.0;
        for (std::size_t j = 0; j < a.size(); ++j) {
            double d = (static_cast<double>(a.data[j]) - b.data[j]) / 2.0;
            mse += d * d;
        }
        mse /= static_cast<double>(a.size());
        CHECK(psnr_db(a, b) == doctest::Approx(10.0 * std::log10(1.0 / mse)).epsilon(1e-9));
    }
    CHECK_THROWS_AS(psnr_db(const_frame(0, 4, 4), const_frame(0, 8, 8)), std::invalid_argument);
}

TEST_CASE("query_distance: zero on items, d for one query at distance d") {
    std::mt19937_64 rng(7);
    MemoryBank bank;
    bank.items = oracle::random_unit_rows(4, 3, rng);
    QueryMap on_items(bank.items);
    CHECK(query_distance(on_items, bank) == doctest::Approx(0.0).epsilon(1e-12));

    Mat q = bank.items.row(1);
    q *= 3.0;  // collinear: nearest by dot is still item 1, distance 2
    CHECK(query_distance(QueryMap(q), bank) == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("query_distance: matches exhaustive nearest-by-dot oracle") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        MemoryBank bank;
        bank.items = oracle::random_unit_rows(5, 4, rng);
        Mat q = oracle::random_mat(7, 4, rng, 2.0);
        double want = 0.0;
        for (int k = 0; k < q.rows(); ++k)
            want += std::sqrt(oracle::nearest_sq_dist(q.row(k), bank.items));
        want /= static_cast<double>(q.rows());
        CHECK(query_distance(QueryMap(q), bank) == doctest::Approx(want).epsilon(1e-12));
    }
}

TEST_CASE("minmax_normalize: basic ramp and formula oracle") {
    auto out = minmax_normalize({1.0, 2.0, 3.0});
    CHECK(out[0] == doctest::Approx(0.0));
    CHECK(out[1] == doctest::Approx(0.5));
    CHECK(out[2] == doctest::Approx(1.0));

    std::mt19937_64 rng(13);
    std::uniform_real_distribution<double> u(-5.0, 5.0);
    std::vector<double> series(40);
    for (auto& v : series) v = u(rng);
    auto got = minmax_normalize(series);
    const double mn = *std::min_element(series.begin(), series.end());
    const double mx = *std::max_element(series.begin(), series.end());
    for (std::size_t i = 0; i < series.size(); ++i)
        CHECK(got[i] == doctest::Approx((series[i] - mn) / (mx - mn)).epsilon(1e-12));
}

TEST_CASE("minmax_normalize: constant series triggers the guard, never NaN") {
    bool degenerate = false;
    auto out = minmax_normalize({5.0, 5.0, 5.0}, &degenerate);
    CHECK(degenerate);
    for (double v : out) {
        CHECK(v == 0.0);
        CHECK(std::isfinite(v));
    }
    CHECK_THROWS_AS(minmax_normalize({}), std::invalid_argument);
}

TEST_CASE("abnormality_score: lambda extremes") {
    std::vector<double> psnr{30, 20, 10, 25, 35};
    std::vector<double> dist{0.1, 0.5, 0.9, 0.2, 0.0};

    auto s1 = abnormality_score(psnr, dist, 1.0);  // PSNR only
    auto g = minmax_normalize(psnr);
    std::size_t best = std::max_element(psnr.begin(), psnr.end()) - psnr.begin();
    CHECK(s1[best] == doctest::Approx(0.0));  // max-PSNR frame scores 0
    for (std::size_t t = 0; t < psnr.size(); ++t)
        CHECK(s1[t] == doctest::Approx(1.0 - g[t]).epsilon(1e-12));

    auto s0 = abnormality_score(psnr, dist, 0.0);  // distance only
    auto gd = minmax_normalize(dist);
    for (std::size_t t = 0; t < psnr.size(); ++t)
        CHECK(s0[t] == doctest::Approx(gd[t]).epsilon(1e-12));

    CHECK_THROWS_AS(abnormality_score(psnr, {0.1, 0.2}, 0.5), std::invalid_argument);
}

TEST_CASE("abnormality_score: lambda=0.6 hand example") {
    std::vector<double> psnr{30, 20, 10, 25, 35};
    std::vector<double> dist{0.1, 0.5, 0.9, 0.2, 0.0};
    auto s = abnormality_score(psnr, dist, 0.6);
    // g(psnr) = {0.8, 0.4, 0, 0.6, 1}; g(dist) = {1/9, 5/9, 1, 2/9, 0}
    CHECK(s[0] == doctest::Approx(0.6 * 0.2 + 0.4 * (1.0 / 9.0)).epsilon(1e-9));
    CHECK(s[1] == doctest::Approx(0.6 * 0.6 + 0.4 * (5.0 / 9.0)).epsilon(1e-9));
    CHECK(s[2] == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(s[3] == doctest::Approx(0.6 * 0.4 + 0.4 * (2.0 / 9.0)).epsilon(1e-9));
    CHECK(s[4] == doctest::Approx(0.0).epsilon(1e-9));
    for (double v : s) CHECK((v >= 0.0 && v <= 1.0));
}

TEST_CASE("frame_auc: perfect separation, inversion, and errors") {
    CHECK(frame_auc({0.9, 0.8, 0.1, 0.2}, {1, 1, 0, 0}) == doctest::Approx(1.0));
    CHECK(frame_auc({0.1, 0.2, 0.9, 0.8}, {1, 1, 0, 0}) == doctest::Approx(0.0));
    CHECK_THROWS_AS(frame_auc({0.1, 0.2}, {1, 1}), std::invalid_argument);
}

TEST_CASE("frame_auc: matches the pairwise oracle on random instances with ties") {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::bernoulli_distribution coin(0.4);
    for (int trial = 0; trial < 50; ++trial) {
        const int n = 200;
        std::vector<double> scores(n);
        std::vector<int> labels(n);
        bool has0 = false, has1 = false;
        for (int i = 0; i < n; ++i) {
            scores[i] = std::round(u(rng) * 20.0) / 20.0;  // quantized: tie-rich
            labels[i] = coin(rng) ? 1 : 0;
            (labels[i] ? has1 : has0) = true;
        }
        if (!has0 || !has1) { labels[0] = 0; labels[1] = 1; }
        CHECK(frame_auc(scores, labels) ==
              doctest::Approx(oracle::pairwise_auc(scores, labels)).epsilon(1e-9));
    }
}

TEST_CASE("frame_auc: invariant under strictly increasing transforms") {
    std::mt19937_64 rng(19);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> scores(100);
    std::vector<int> labels(100);
    for (int i = 0; i < 100; ++i) {
        scores[i] = u(rng);
        labels[i] = i % 3 == 0 ? 1 : 0;
    }
    const double base = frame_auc(scores, labels);
    std::vector<double> warped = scores;
    for (auto& v : warped) v = std::exp(3.0 * v) + 7.0;
    CHECK(frame_auc(warped, labels) == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("fuse_scores: per-video vs global scope and degenerate counting") {
    std::vector<ScoreSeries> series(2);
    series[0].video_id = "a";
    series[0].frame_index = {0, 1, 2};
    series[0].psnr = {10, 20, 30};
    series[0].distance = {0.5, 0.5, 0.5};  // constant: degenerate under per-video g
    series[0].label = {0, 0, 1};
    series[1].video_id = "b";
    series[1].frame_index = {0, 1};
    series[1].psnr = {15, 25};
    series[1].distance = {0.1, 0.9};
    series[1].label = {1, 0};

    int degenerates = 0;
    auto per_video = series;
    fuse_scores(per_video, 0.5, NormScope::per_video, &degenerates);
    CHECK(degenerates == 1);
    for (const auto& s : per_video)
        for (double v : s.fused) CHECK(std::isfinite(v));

    degenerates = 0;
    auto global = series;
    fuse_scores(global, 0.5, NormScope::global, &degenerates);
    CHECK(degenerates == 0);
    // global g over psnr spans [10,30]: video b's 15 maps to 0.25
    CHECK(global[1].fused[0] ==
          doctest::Approx(0.5 * (1.0 - 0.25) + 0.5 * 0.0).epsilon(1e-12));
}

TEST_CASE("score range stays in [0,1] for any lambda") {
    std::mt19937_64 rng(23);
    std::uniform_real_distribution<double> u(5.0, 45.0);
    for (double lambda : {0.0, 0.3, 0.7, 1.0}) {
        std::vector<double> psnr(20), dist(20);
        for (auto& v : psnr) v = u(rng);
        for (auto& v : dist) v = u(rng) / 50.0;
        for (double s : abnormality_score(psnr, dist, lambda)) CHECK((s >= 0.0 && s <= 1.0));
    }
}

TEST_CASE("monotonicity at lambda=1: higher PSNR never scores higher") {
    std::vector<double> psnr{12, 35, 20, 29, 18};
    std::vector<double> dist{0.4, 0.1, 0.2, 0.9, 0.3};
    auto s = abnormality_score(psnr, dist, 1.0);
    for (std::size_t i = 0; i < psnr.size(); ++i)
        for (std::size_t j = 0; j < psnr.size(); ++j)
            if (psnr[i] > psnr[j]) CHECK(s[i] <= s[j]);
}
