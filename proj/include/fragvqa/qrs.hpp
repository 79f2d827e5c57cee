#pragma once

#include <cstdint>
#include <vector>

#include <json.hpp>

#include "fragvqa/autodiff.hpp"
#include "fragvqa/rng.hpp"

namespace fragvqa::qrs {

// Sliding square windows over a square patch grid, stride 1 row-major.
struct WindowLayout {
    int grid_side = 0;
    int window_side = 0;

    int anchors_per_side() const { return grid_side - window_side + 1; }
    int count() const { return anchors_per_side() * anchors_per_side(); }
    // Patch indices covered by window m, ascending row-major.
    std::vector<std::int64_t> window_patches(int m) const;
};

struct ImportanceMap {
    ad::Var patch_scores;   // [N], cosine scores in [-1, 1]
    int grid_side = 0;      // N = grid_side^2
    WindowLayout layout;    // valid after aggregate()
    ad::Var window_scores;  // [layout.count()]
};

struct SelectionResult {
    std::vector<std::int64_t> hard_indices;  // distinct, ascending
    int selected_window = -1;                // -1 when Top-K ran over raw scores
    ad::Var soft_indicator;                  // [M], coordinates in [0, 1], sums to K
    double sigma = 0.0;
    int n_samples = 0;
};

// Per-patch cosine importance of patch rows against the quality query.
// Degenerate (near-zero) vectors score 0 with a warning.
ad::Var importance(const ad::Var& quality, const ad::Var& patches);

// Mean of the single-layer cosines from the two extractor layers.
ad::Var importance_fused(const ad::Var& quality1, const ad::Var& patches1,
                         const ad::Var& quality2, const ad::Var& patches2);

ImportanceMap make_importance_map(ad::Var patch_scores, int grid_side);

// Fills layout/window_scores with per-window means (differentiable average
// pooling over sliding windows).
void aggregate(ImportanceMap& imp, int window_side);

// Plain Top-K of a score vector: value descending, index ascending on ties;
// returned ascending.
std::vector<std::int64_t> hard_topk(const Tensor& scores, int k);

// Forward: exact Top-K of the noise-free scores plus the Monte-Carlo mean of
// K-hot argmax indicators of scores + sigma*Z, Z iid standard normal (drawn
// sample-major, coordinate-ascending; bit-stable for a fixed seed).  Backward
// of the soft indicator uses the perturbed-maximum Jacobian E[Y Z^T]/sigma.
// sigma = 0 short-circuits to the exact indicator with zero gradient.
SelectionResult perturbed_topk(const ad::Var& scores, int k, double sigma, int n_samples,
                               Rng& rng);

// Perturbed Top-1 over aggregated window scores; hard_indices are the winning
// window's patch indices.  Aggregates in place when the layout is missing or
// sized differently.
SelectionResult select_region(ImportanceMap& imp, int target_side, double sigma,
                              int n_samples, Rng& rng);

// Scalar scale for selected features: forward 1, backward flows into the soft
// indicator coordinate of the selected window (straight-through composition).
ad::Var selection_scale(const SelectionResult& sel);

// Scores, window geometry and indicator for visualization tooling.
nlohmann::ordered_json selection_trace(const ImportanceMap& imp, const SelectionResult& sel);

}  // namespace fragvqa::qrs
