#pragma once

#include <array>
#include <functional>
#include <string>
#include <vector>

#include "fragvqa/nn.hpp"

namespace fragvqa::backbone {

struct StageSpec {
    int depth = 0;
    int width = 0;
    std::array<int, 3> window{1, 1, 1};  // (t, h, w) tokens per attention window
    int heads = 1;
};

// Size lives in configuration so one implementation serves both the
// paper-scale geometry and a seconds-fast desk profile.
struct BackboneSpec {
    std::array<int, 3> patch_embed{2, 4, 4};
    int in_channels = 1;
    std::vector<StageSpec> stages;
    std::vector<int> injection_stages;  // stage ids whose outputs pass the hook
    int head_hidden = 0;                // 0: final stage width
    int mlp_ratio = 4;

    int final_width() const { return stages.empty() ? 0 : stages.back().width; }
    static BackboneSpec desk();
    static BackboneSpec paper();
};

// 3D shifted-window attention regressor.  Blocks are pre-norm; odd blocks in
// each stage shift by half a window (cyclic shift + additive attention mask);
// stages are joined by 2x2 spatial patch merging.  The head is a 2-layer MLP
// on mean-pooled tokens; zero_init_head pins its output layer to zero so the
// initial score is exactly 0.
class Backbone {
public:
    // tokens: [S, width] output of stage `stage` laid out row-major over grid.
    using Hook = std::function<ad::Var(const ad::Var& tokens, int stage,
                                       const std::array<std::int64_t, 3>& grid)>;

    Backbone(nn::ParamSet& ps, const std::string& name, BackboneSpec spec,
             bool zero_init_head = false);

    // clip: [T, H, W, in_channels].  Returns a scalar quality score.
    ad::Var forward(const Tensor& clip, const Hook& hook = {}) const;

    // Token grid of stage `stage` for an input of the given (T, H, W).
    std::array<std::int64_t, 3> token_grid(int stage,
                                           const std::array<std::int64_t, 3>& input_thw) const;

    const BackboneSpec& spec() const { return spec_; }

private:
    struct Block {
        nn::LayerNorm ln1, ln2;
        nn::Linear wq, wk, wv, wo, fc1, fc2;
    };
    struct Stage {
        std::vector<Block> blocks;
        nn::LayerNorm merge_ln;  // set on all but the last stage
        nn::Linear merge;
    };

    BackboneSpec spec_;
    nn::Linear embed_;
    nn::LayerNorm embed_ln_;
    std::vector<Stage> stages_;
    nn::LayerNorm final_ln_;
    nn::Linear head1_, head2_;
};

}  // namespace fragvqa::backbone
