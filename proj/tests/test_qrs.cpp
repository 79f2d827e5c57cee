#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "fragvqa/qrs.hpp"

using namespace fragvqa;
using namespace fragvqa::qrs;

namespace {

// Independent Monte-Carlo estimate of P(coord in Top-K of scores + sigma*Z),
// written against its own draw loop and selection logic.
std::vector<double> mc_topk_probability(const std::vector<double>& scores, int k, double sigma,
                                        int n, std::uint64_t seed) {
    Rng rng(seed);
    const std::size_t m = scores.size();
    std::vector<double> prob(m, 0.0);
    std::vector<std::pair<double, std::size_t>> ranked(m);
    for (int s = 0; s < n; ++s) {
        for (std::size_t j = 0; j < m; ++j)
            ranked[j] = {-(scores[j] + sigma * rng.normal()), j};
        std::sort(ranked.begin(), ranked.end());
        for (int i = 0; i < k; ++i) prob[ranked[static_cast<std::size_t>(i)].second] += 1.0 / n;
    }
    return prob;
}

Tensor vec(const std::vector<double>& v) {
    Tensor t({static_cast<std::int64_t>(v.size())});
    std::copy(v.begin(), v.end(), t.data());
    return t;
}

// Exhaustive best-mean window over all anchors (ties: lowest anchor).
int brute_force_best_window(const Tensor& grid_scores, int grid, int ws) {
    int best = -1;
    double best_sum = -1e300;
    int a = grid - ws + 1;
    for (int ay = 0; ay < a; ++ay)
        for (int ax = 0; ax < a; ++ax) {
            double s = 0;
            for (int y = ay; y < ay + ws; ++y)
                for (int x = ax; x < ax + ws; ++x) s += grid_scores[y * grid + x];
            if (s > best_sum + 1e-15) {
                best_sum = s;
                best = ay * a + ax;
            }
        }
    return best;
}

}  // namespace

TEST_CASE("importance is a row-wise cosine against the quality query") {
    Tensor q({3}, {0.5, -1.0, 2.0});
    Tensor p({4, 3});
    for (int k = 0; k < 4; ++k)
        for (int j = 0; j < 3; ++j) p.at({k, j}) = q[j];
    auto i1 = importance(ad::constant(q), ad::constant(p));
    for (int k = 0; k < 4; ++k) CHECK(i1->value[k] == doctest::Approx(1.0).epsilon(1e-12));

    for (int k = 0; k < 4; ++k)
        for (int j = 0; j < 3; ++j) p.at({k, j}) = -q[j];
    auto i2 = importance(ad::constant(q), ad::constant(p));
    for (int k = 0; k < 4; ++k) CHECK(i2->value[k] == doctest::Approx(-1.0).epsilon(1e-12));
}

TEST_CASE("importance matches an independent dot/norm recomputation") {
    Rng rng(3);
    Tensor q({8});
    Tensor p({16, 8});
    for (int j = 0; j < 8; ++j) q[j] = rng.normal();
    for (std::int64_t i = 0; i < p.numel(); ++i) p[i] = rng.normal();
    auto imp = importance(ad::constant(q), ad::constant(p));
    double qn = 0;
    for (int j = 0; j < 8; ++j) qn += q[j] * q[j];
    qn = std::sqrt(qn);
    for (int k = 0; k < 16; ++k) {
        double dot = 0, pn = 0;
        for (int j = 0; j < 8; ++j) {
            dot += q[j] * p.at({k, j});
            pn += p.at({k, j}) * p.at({k, j});
        }
        CHECK(imp->value[k] == doctest::Approx(dot / (qn * std::sqrt(pn))).epsilon(1e-12));
    }
}

TEST_CASE("fused importance averages the two layer cosines") {
    Tensor q1({2}, {1, 0}), q2({2}, {0, 1});
    Tensor p({2, 2}, {1, 0, 0, 1});
    auto f = importance_fused(ad::constant(q1), ad::constant(p), ad::constant(q2),
                              ad::constant(p));
    CHECK(f->value[0] == doctest::Approx(0.5));  // (1 + 0)/2
    CHECK(f->value[1] == doctest::Approx(0.5));  // (0 + 1)/2
}

TEST_CASE("aggregation: constant maps and the identity layout") {
    auto imp = make_importance_map(ad::constant(Tensor::full({81}, 0.37)), 9);
    aggregate(imp, 7);
    CHECK(imp.layout.count() == 9);
    for (int m = 0; m < 9; ++m)
        CHECK(imp.window_scores->value[m] == doctest::Approx(0.37).epsilon(1e-12));

    aggregate(imp, 1);
    CHECK(imp.layout.count() == 81);
    for (int m = 0; m < 81; ++m) CHECK(imp.window_scores->value[m] == doctest::Approx(0.37));
}

TEST_CASE("window means match a hand summation on an integer map") {
    Tensor grid({16});
    for (int i = 0; i < 16; ++i) grid[i] = static_cast<double>(i);
    auto imp = make_importance_map(ad::constant(grid), 4);
    aggregate(imp, 3);
    REQUIRE(imp.layout.count() == 4);
    // Window anchored at (0,0): rows {0,1,2},{4,5,6},{8,9,10}; sum 45.
    CHECK(imp.window_scores->value[0] == doctest::Approx(45.0 / 9.0).epsilon(1e-12));
    // Anchored at (1,1): {5,6,7,9,10,11,13,14,15}; sum 90.
    CHECK(imp.window_scores->value[3] == doctest::Approx(90.0 / 9.0).epsilon(1e-12));

    SUBCASE("random maps against a brute-force window mean") {
        Rng rng(17);
        for (int trial = 0; trial < 20; ++trial) {
            int g = static_cast<int>(rng.uniform_int(3, 9));
            int ws = static_cast<int>(rng.uniform_int(1, g));
            Tensor scores({static_cast<std::int64_t>(g) * g});
            for (std::int64_t i = 0; i < scores.numel(); ++i) scores[i] = rng.normal();
            auto im = make_importance_map(ad::constant(scores), g);
            aggregate(im, ws);
            int a = g - ws + 1;
            for (int m = 0; m < a * a; ++m) {
                double s = 0;
                for (std::int64_t p : im.layout.window_patches(m)) s += scores[p];
                CHECK(im.window_scores->value[m] ==
                      doctest::Approx(s / (ws * ws)).epsilon(1e-10));
            }
        }
    }
}

TEST_CASE("aggregation rejects oversized windows") {
    auto imp = make_importance_map(ad::constant(Tensor::zeros({16})), 4);
    CHECK_THROWS_AS(aggregate(imp, 5), InvalidArgument);
    CHECK_THROWS_AS(make_importance_map(ad::constant(Tensor::zeros({10})), 3), InvalidArgument);
}

TEST_CASE("zero-noise perturbed Top-K equals the exact indicator") {
    Rng rng(1);
    auto scores = ad::constant(vec({3, 1, 2, 5, 4}));
    auto sel = perturbed_topk(scores, 2, 0.0, 7, rng);
    CHECK(sel.hard_indices == std::vector<std::int64_t>{3, 4});
    for (int i = 0; i < 5; ++i)
        CHECK(sel.soft_indicator->value[i] == ((i == 3 || i == 4) ? 1.0 : 0.0));
}

TEST_CASE("soft indicator matches an independent Monte-Carlo oracle") {
    Rng rng(1);
    auto scores = ad::constant(vec({3, 1, 2}));
    auto sel = perturbed_topk(scores, 2, 0.5, 100000, rng);
    CHECK(sel.hard_indices == std::vector<std::int64_t>{0, 2});
    auto oracle = mc_topk_probability({3, 1, 2}, 2, 0.5, 100000, 999);
    for (int i = 0; i < 3; ++i)
        CHECK(std::abs(sel.soft_indicator->value[i] - oracle[static_cast<std::size_t>(i)]) <
              0.01);
    // Score 0 dominates: its inclusion probability is near 1.
    CHECK(sel.soft_indicator->value[0] > 0.95);
}

TEST_CASE("soft indicator sums to K and stays within [0,1]") {
    Rng rng(5);
    for (int trial = 0; trial < 10; ++trial) {
        int m = static_cast<int>(rng.uniform_int(3, 8));
        int k = static_cast<int>(rng.uniform_int(1, m));
        Tensor s({m});
        for (int i = 0; i < m; ++i) s[i] = rng.normal();
        auto sel = perturbed_topk(ad::constant(s), k, 0.5, 2000, rng);
        double sum = 0;
        for (int i = 0; i < m; ++i) {
            double v = sel.soft_indicator->value[i];
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
            sum += v;
        }
        CHECK(sum == doctest::Approx(static_cast<double>(k)).epsilon(1e-6));
        std::set<std::int64_t> uniq(sel.hard_indices.begin(), sel.hard_indices.end());
        CHECK(uniq.size() == static_cast<std::size_t>(k));
    }
}

TEST_CASE("equal scores spread Top-1 mass uniformly") {
    Rng rng(7);
    auto sel = perturbed_topk(ad::constant(Tensor::full({5}, 0.42)), 1, 0.5, 100000, rng);
    for (int i = 0; i < 5; ++i)
        CHECK(sel.soft_indicator->value[i] == doctest::Approx(0.2).epsilon(0.05));
}

TEST_CASE("hard indices are invariant to positive rescaling") {
    Rng rng(9);
    for (int trial = 0; trial < 20; ++trial) {
        int m = static_cast<int>(rng.uniform_int(4, 11));
        Tensor s({m});
        for (int i = 0; i < m; ++i) s[i] = rng.normal();
        double c = std::exp(rng.normal());
        Tensor cs({m});
        for (int i = 0; i < m; ++i) cs[i] = c * s[i];
        Rng r1(100 + static_cast<std::uint64_t>(trial)), r2(100 + static_cast<std::uint64_t>(trial));
        auto a = perturbed_topk(ad::constant(s), 2, 0.0, 1, r1);
        auto b = perturbed_topk(ad::constant(cs), 2, 0.0, 1, r2);
        CHECK(a.hard_indices == b.hard_indices);
    }
}

TEST_CASE("Monte-Carlo gradient matches common-random-number finite differences") {
    // Same noise stream on all three evaluations; h large enough that a
    // noticeable fraction of samples flips ranking.
    Rng grad_rng(31);
    std::vector<double> base{1.2, 0.4, 0.9, 1.1};
    auto theta = ad::leaf(vec(base), true);
    const int n = 20000;
    auto sel = perturbed_topk(theta, 2, 0.5, n, grad_rng);
    Tensor w({4}, {0.7, -0.3, 0.5, 0.2});
    auto loss = ad::sum_all(ad::mul(sel.soft_indicator, ad::constant(w)));
    ad::backward(loss);

    const double h = 0.1;
    double max_rel = 0;
    for (int j = 0; j < 4; ++j) {
        auto shifted = [&](double d) {
            std::vector<double> th = base;
            th[static_cast<std::size_t>(j)] += d;
            Rng r(31);  // common random numbers with the analytic pass
            ad::NoGradGuard ng;
            auto s = perturbed_topk(ad::constant(vec(th)), 2, 0.5, n, r);
            double v = 0;
            for (int i = 0; i < 4; ++i) v += w[i] * s.soft_indicator->value[i];
            return v;
        };
        double fd = (shifted(h) - shifted(-h)) / (2 * h);
        double ga = theta->grad[j];
        double rel = std::abs(ga - fd) / std::max(0.05, std::abs(ga) + std::abs(fd));
        max_rel = std::max(max_rel, rel);
    }
    CHECK(max_rel < 0.10);
}

TEST_CASE("region selection returns a contiguous block of the winning window") {
    Tensor grid({81});
    for (int i = 0; i < 81; ++i) grid[i] = 0.01 * i;
    // Boost the window anchored at (2,2): uniquely maximal 7x7 mean.
    for (int y = 2; y < 9; ++y)
        for (int x = 2; x < 9; ++x) grid[y * 9 + x] += 1.0;
    auto imp = make_importance_map(ad::constant(grid), 9);
    Rng rng(11);
    auto sel = select_region(imp, 7, 0.0, 1, rng);
    CHECK(sel.selected_window == 8);  // anchor (2,2) of 3 anchors/side
    REQUIRE(sel.hard_indices.size() == 49);
    std::size_t t = 0;
    for (int y = 2; y < 9; ++y)
        for (int x = 2; x < 9; ++x) CHECK(sel.hard_indices[t++] == y * 9 + x);
}

TEST_CASE("full-grid target selects everything with indicator one") {
    auto imp = make_importance_map(ad::constant(Tensor::zeros({16})), 4);
    Rng rng(13);
    auto sel = select_region(imp, 4, 0.5, 50, rng);
    CHECK(sel.selected_window == 0);
    REQUIRE(sel.hard_indices.size() == 16);
    for (int i = 0; i < 16; ++i) CHECK(sel.hard_indices[static_cast<std::size_t>(i)] == i);
    CHECK(sel.soft_indicator->value[0] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("8x8 grid with 7x7 target yields four candidate windows") {
    Rng rng(15);
    Tensor g({64});
    for (int i = 0; i < 64; ++i) g[i] = rng.normal();
    auto imp = make_importance_map(ad::constant(g), 8);
    auto sel = select_region(imp, 7, 0.0, 1, rng);
    CHECK(imp.layout.count() == 4);
    CHECK(sel.hard_indices.size() == 49);
}

TEST_CASE("noise-free selection equals exhaustive enumeration on grids up to 12x12") {
    Rng rng(19);
    for (int grid = 2; grid <= 12; ++grid) {
        for (int trial = 0; trial < 8; ++trial) {
            int ws = static_cast<int>(rng.uniform_int(1, grid));
            Tensor s({static_cast<std::int64_t>(grid) * grid});
            for (std::int64_t i = 0; i < s.numel(); ++i) s[i] = rng.normal();
            auto imp = make_importance_map(ad::constant(s), grid);
            Rng r2(1);
            auto sel = select_region(imp, ws, 0.0, 1, r2);
            CHECK(sel.selected_window == brute_force_best_window(s, grid, ws));
        }
    }
}

TEST_CASE("selected indices always form an axis-aligned square block") {
    Rng rng(23);
    for (int trial = 0; trial < 30; ++trial) {
        int grid = static_cast<int>(rng.uniform_int(3, 10));
        int ws = static_cast<int>(rng.uniform_int(1, grid));
        Tensor s({static_cast<std::int64_t>(grid) * grid});
        for (std::int64_t i = 0; i < s.numel(); ++i) s[i] = rng.normal();
        auto imp = make_importance_map(ad::constant(s), grid);
        auto sel = select_region(imp, ws, 0.5, 30, rng);
        REQUIRE(static_cast<int>(sel.hard_indices.size()) == ws * ws);
        std::int64_t y0 = sel.hard_indices[0] / grid, x0 = sel.hard_indices[0] % grid;
        std::size_t t = 0;
        for (int dy = 0; dy < ws; ++dy)
            for (int dx = 0; dx < ws; ++dx)
                CHECK(sel.hard_indices[t++] == (y0 + dy) * grid + (x0 + dx));
    }
}

TEST_CASE("selection is bit-stable under a fixed seed") {
    Tensor s({9});
    for (int i = 0; i < 9; ++i) s[i] = 0.1 * i;
    Rng a(77), b(77);
    auto sa = perturbed_topk(ad::constant(s), 3, 0.5, 500, a);
    auto sb = perturbed_topk(ad::constant(s), 3, 0.5, 500, b);
    for (int i = 0; i < 9; ++i)
        CHECK(sa.soft_indicator->value[i] == sb.soft_indicator->value[i]);
}

TEST_CASE("selection scale is one forward and routes gradient to the soft path") {
    Tensor g({16});
    for (int i = 0; i < 16; ++i) g[i] = 0.05 * i;
    auto scores = ad::leaf(g, true);
    auto imp = make_importance_map(scores, 4);
    Rng rng(29);
    auto sel = select_region(imp, 3, 0.5, 400, rng);
    auto scale = selection_scale(sel);
    CHECK(scale->value.item() == 1.0);
    auto loss = ad::mul_scalar(scale, 2.5);
    ad::backward(loss);
    // Some gradient must reach the raw patch scores through indicator + pooling.
    double gsum = 0;
    for (int i = 0; i < 16; ++i) gsum += std::abs(scores->grad[i]);
    CHECK(gsum > 0.0);
}

TEST_CASE("invalid selection arguments are rejected") {
    Rng rng(1);
    auto s = ad::constant(Tensor::zeros({4}));
    CHECK_THROWS_AS(perturbed_topk(s, 5, 0.5, 10, rng), InvalidArgument);
    CHECK_THROWS_AS(perturbed_topk(s, 0, 0.5, 10, rng), InvalidArgument);
    CHECK_THROWS_AS(perturbed_topk(s, 2, -0.1, 10, rng), InvalidArgument);
    CHECK_THROWS_AS(perturbed_topk(s, 2, 0.5, 0, rng), InvalidArgument);
    auto imp = make_importance_map(ad::constant(Tensor::zeros({16})), 4);
    CHECK_THROWS_AS(select_region(imp, 5, 0.5, 10, rng), InvalidArgument);
}

TEST_CASE("selection trace exports scores, geometry and indicator") {
    Tensor g({16});
    for (int i = 0; i < 16; ++i) g[i] = 0.1 * i;
    auto imp = make_importance_map(ad::constant(g), 4);
    Rng rng(3);
    auto sel = select_region(imp, 3, 0.0, 1, rng);
    auto j = selection_trace(imp, sel);
    CHECK(j["grid_side"] == 4);
    CHECK(j["window_side"] == 3);
    CHECK(j["patch_scores"].size() == 16);
    CHECK(j["window_scores"].size() == 4);
    CHECK(j["hard_indices"].size() == 9);
    CHECK(j["selected_window"] == 3);  // bottom-right window has the largest mean
    CHECK(j["sigma"] == 0.0);
}
