#pragma once

#include <string>
#include <utility>

#include "fragvqa/nn.hpp"

namespace fragvqa::modulation {

// Fusion variants from the ablation grid.  kCaSm is the full content
// modulation path (cross attention + spatial scale/offset); kCasaCm is the
// full distortion path (cross + self attention + channel scale/offset from
// feature statistics).
enum class Variant {
    kCa,       // F_s + zero-init projection of MHCA output
    kSm,       // spatial scale/offset straight from row-aligned memory
    kCaCm,     // MHCA then channel modulation from warped statistics
    kCasa,     // F_s + zero-init projection of MHSA(MHCA(...))
    kCm,       // channel modulation from raw memory statistics
    kCasaSm,   // attention chain then spatial modulation
    kConcat,   // channel concat + zero-init linear fusion, residual
    kCaSm,     // full content-adaptive modulation
    kCasaCm,   // full distortion-aware modulation
};

Variant variant_from_string(const std::string& kind);
std::string to_string(Variant v);

// Per-channel mean and population std over rows: x [S,C] -> ([1,C], [1,C]).
// eps sits inside the square root.
std::pair<ad::Var, ad::Var> row_stats(const ad::Var& x, double eps = 1e-5);

// Injects memory tokens into backbone features, preserving the feature shape.
// Scale generators start at 1 and offsets at 0 (zero weights, scale bias 1),
// so every variant is the identity at initialization.
class Modulator {
public:
    Modulator(nn::ParamSet& ps, const std::string& name, Variant variant, int dim, int heads,
              int kv_dim);

    // f_s: [S, dim]; memory: [N, kv_dim].  kSm/kConcat require N == S.
    ad::Var forward(const ad::Var& f_s, const ad::Var& memory) const;

    Variant variant() const { return variant_; }
    int dim() const { return dim_; }
    int kv_dim() const { return kv_dim_; }

private:
    ad::Var attended(const ad::Var& f_s, const ad::Var& memory) const;

    Variant variant_;
    int dim_ = 0;
    int kv_dim_ = 0;
    nn::Attention mhca_;
    nn::Attention mhsa_;
    nn::Linear scale_gen_;   // -> 1 (spatial) or -> dim (channel)
    nn::Linear offset_gen_;
    nn::Linear proj_;        // zero-init output path for kCa/kCasa/kConcat
};

// The two modulators used by the full model.
Modulator make_cam(nn::ParamSet& ps, const std::string& name, int dim, int heads, int kv_dim);
Modulator make_dam(nn::ParamSet& ps, const std::string& name, int dim, int heads, int kv_dim);

}  // namespace fragvqa::modulation
