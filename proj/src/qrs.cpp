#include "fragvqa/qrs.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace fragvqa::qrs {

std::vector<std::int64_t> WindowLayout::window_patches(int m) const {
    check(m >= 0 && m < count(), "window index out of range");
    const int a = anchors_per_side();
    const int ay = m / a, ax = m % a;
    std::vector<std::int64_t> idx;
    idx.reserve(static_cast<std::size_t>(window_side) * window_side);
    for (int y = ay; y < ay + window_side; ++y)
        for (int x = ax; x < ax + window_side; ++x)
            idx.push_back(static_cast<std::int64_t>(y) * grid_side + x);
    return idx;
}

ad::Var importance(const ad::Var& quality, const ad::Var& patches) {
    return ad::cosine_rows(quality, patches);
}

ad::Var importance_fused(const ad::Var& quality1, const ad::Var& patches1,
                         const ad::Var& quality2, const ad::Var& patches2) {
    auto a = importance(quality1, patches1);
    auto b = importance(quality2, patches2);
    return ad::mul_scalar(ad::add(a, b), 0.5);
}

ImportanceMap make_importance_map(ad::Var patch_scores, int grid_side) {
    check(grid_side > 0, "grid side must be positive");
    check(patch_scores && patch_scores->value.numel() ==
                              static_cast<std::int64_t>(grid_side) * grid_side,
          "patch score count must equal grid_side^2");
    ImportanceMap imp;
    imp.patch_scores = std::move(patch_scores);
    imp.grid_side = grid_side;
    return imp;
}

void aggregate(ImportanceMap& imp, int window_side) {
    check(window_side >= 1 && window_side <= imp.grid_side,
          "window must fit within the patch grid");
    WindowLayout layout{imp.grid_side, window_side};
    const int m = layout.count();
    const std::int64_t n = static_cast<std::int64_t>(imp.grid_side) * imp.grid_side;

    Tensor pool({m, n});
    const double w = 1.0 / (static_cast<double>(window_side) * window_side);
    for (int i = 0; i < m; ++i)
        for (std::int64_t p : layout.window_patches(i)) pool.at({i, p}) = w;

    auto col = ad::reshape(imp.patch_scores, {n, 1});
    imp.window_scores = ad::reshape(ad::matmul(ad::constant(std::move(pool)), col), {m});
    imp.layout = layout;
}

std::vector<std::int64_t> hard_topk(const Tensor& scores, int k) {
    const std::int64_t m = scores.numel();
    check(k >= 1 && k <= m, "k must be in [1, score count]");
    std::vector<std::int64_t> order(static_cast<std::size_t>(m));
    std::iota(order.begin(), order.end(), 0);
    std::partial_sort(order.begin(), order.begin() + k, order.end(),
                      [&](std::int64_t a, std::int64_t b) {
                          if (scores[a] != scores[b]) return scores[a] > scores[b];
                          return a < b;
                      });
    order.resize(static_cast<std::size_t>(k));
    std::sort(order.begin(), order.end());
    return order;
}

SelectionResult perturbed_topk(const ad::Var& scores, int k, double sigma, int n_samples,
                               Rng& rng) {
    check(static_cast<bool>(scores), "scores required");
    const std::int64_t m = scores->value.numel();
    check(k >= 1 && k <= m, "k must be in [1, score count]");
    check(sigma >= 0.0, "sigma must be non-negative");
    check(n_samples >= 1, "n_samples must be positive");

    SelectionResult sel;
    sel.hard_indices = hard_topk(scores->value, k);
    sel.sigma = sigma;
    sel.n_samples = n_samples;

    Tensor soft = Tensor::zeros({m});
    if (sigma == 0.0) {
        for (std::int64_t i : sel.hard_indices) soft[i] = 1.0;
        sel.soft_indicator = ad::constant(std::move(soft));
        return sel;
    }

    const bool need_grad = ad::grad_enabled() && scores->requires_grad;
    Tensor jac;  // [m, m]: d soft_i / d score_j
    if (need_grad) jac = Tensor::zeros({m, m});

    std::vector<double> z(static_cast<std::size_t>(m));
    Tensor perturbed({m});
    const double inv_n = 1.0 / static_cast<double>(n_samples);
    for (int s = 0; s < n_samples; ++s) {
        for (std::int64_t j = 0; j < m; ++j) {
            z[static_cast<std::size_t>(j)] = rng.normal();
            perturbed[j] = scores->value[j] + sigma * z[static_cast<std::size_t>(j)];
        }
        auto winners = hard_topk(perturbed, k);
        for (std::int64_t i : winners) {
            soft[i] += inv_n;
            if (need_grad) {
                double* row = &jac.at({i, 0});
                const double scale = inv_n / sigma;
                for (std::int64_t j = 0; j < m; ++j) row[j] += scale * z[static_cast<std::size_t>(j)];
            }
        }
    }

    if (!need_grad) {
        sel.soft_indicator = ad::constant(std::move(soft));
        return sel;
    }
    auto parent = scores;
    sel.soft_indicator = ad::make_node(
        std::move(soft), {parent}, [parent, jac = std::move(jac), m](ad::Node& node) {
            Tensor g = Tensor::zeros({m});
            const double* jd = jac.data();
            for (std::int64_t i = 0; i < m; ++i) {
                const double gi = node.grad[i];
                if (gi == 0.0) continue;
                const double* row = jd + i * m;
                for (std::int64_t j = 0; j < m; ++j) g[j] += gi * row[j];
            }
            ad::add_grad(parent, g);
        });
    return sel;
}

SelectionResult select_region(ImportanceMap& imp, int target_side, double sigma,
                              int n_samples, Rng& rng) {
    check(target_side >= 1 && target_side <= imp.grid_side,
          "target side must fit within the patch grid");
    if (!imp.window_scores || imp.layout.window_side != target_side)
        aggregate(imp, target_side);
    SelectionResult sel = perturbed_topk(imp.window_scores, 1, sigma, n_samples, rng);
    sel.selected_window = static_cast<int>(sel.hard_indices[0]);
    sel.hard_indices = imp.layout.window_patches(sel.selected_window);
    return sel;
}

ad::Var selection_scale(const SelectionResult& sel) {
    check(sel.selected_window >= 0, "selection has no window");
    auto idx = std::make_shared<const std::vector<std::int64_t>>(
        std::vector<std::int64_t>{sel.selected_window});
    auto soft = ad::gather_flat(sel.soft_indicator, idx, {1});
    return ad::straight_through(soft, 1.0);
}

nlohmann::ordered_json selection_trace(const ImportanceMap& imp, const SelectionResult& sel) {
    nlohmann::ordered_json j;
    j["grid_side"] = imp.grid_side;
    j["patch_scores"] = std::vector<double>(
        imp.patch_scores->value.data(),
        imp.patch_scores->value.data() + imp.patch_scores->value.numel());
    if (imp.window_scores) {
        j["window_side"] = imp.layout.window_side;
        j["window_scores"] = std::vector<double>(
            imp.window_scores->value.data(),
            imp.window_scores->value.data() + imp.window_scores->value.numel());
    }
    j["selected_window"] = sel.selected_window;
    j["hard_indices"] = sel.hard_indices;
    j["soft_indicator"] = std::vector<double>(
        sel.soft_indicator->value.data(),
        sel.soft_indicator->value.data() + sel.soft_indicator->value.numel());
    j["sigma"] = sel.sigma;
    j["n_samples"] = sel.n_samples;
    return j;
}

}  // namespace fragvqa::qrs
