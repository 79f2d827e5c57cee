#pragma once

#include <cstdint>
#include <vector>

#include "fragvqa/autodiff.hpp"

namespace fragvqa::metrics {

// Ranked pair: `preferred` must equal `a` or `b` (indices into the score
// table). Homogeneous pairs come from the same source content.
struct RankPair {
    std::int64_t a = 0;
    std::int64_t b = 0;
    std::int64_t preferred = 0;
    bool homogeneous = false;
};

struct ScorePairSet {
    std::vector<double> predictions;
    std::vector<double> targets;
    std::vector<RankPair> pairs;
};

// 1-based average ranks; ties share the mean of their positions.
std::vector<double> average_ranks(const std::vector<double>& x);

// Spearman: Pearson correlation of average ranks.
double srocc(const std::vector<double>& x, const std::vector<double>& y);

// Pearson correlation. With logistic_map, a 4-parameter logistic curve is
// fitted from x to y first and the correlation is taken on the mapped values;
// a failed fit falls back to the raw correlation with a warning.
double plcc(const std::vector<double>& x, const std::vector<double>& y, bool logistic_map = false);

// (1 - PLCC) / 2, differentiable in pred. Standard-deviation terms carry an
// epsilon so a momentarily constant prediction batch stays finite.
ad::Var plcc_loss(const ad::Var& pred, const std::vector<double>& mos);

struct RankAccuracy {
    double overall = 0.0;
    double homogeneous = 0.0;
    double non_homogeneous = 0.0;
    std::int64_t n_overall = 0;
    std::int64_t n_homogeneous = 0;
    std::int64_t n_non_homogeneous = 0;
};

// Fraction of pairs whose predicted order matches the annotation; an exact
// predicted tie counts as incorrect. Classes with no pairs report NaN.
RankAccuracy rank_accuracy(const std::vector<RankPair>& pairs,
                           const std::vector<double>& predictions);

}  // namespace fragvqa::metrics
