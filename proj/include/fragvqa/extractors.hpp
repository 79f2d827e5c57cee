#pragma once

#include <memory>
#include <string>
#include <vector>

#include "fragvqa/fragments.hpp"
#include "fragvqa/nn.hpp"

namespace fragvqa::extractors {

struct LayerTokens {
    Tensor cls;      // [C_c]
    Tensor patches;  // [N, C_c]
};

// Tokens from the last two encoder layers of one keyframe.
struct SemanticTokens {
    LayerTokens l1, l2;
    int keyframe_index = 0;
};

struct DistortionFeatures {
    Tensor features;  // [K, C_d], one row per fragment
    int pattern_label = -1;
};

struct AdapterSpec {
    std::vector<int> widths;  // in, bottleneck, out
    bool residual = true;
};

// Frozen semantic tokenizer interface. Implementations register their weights
// as frozen parameters so training audits can prove they never move.
class SemanticExtractor {
public:
    virtual ~SemanticExtractor() = default;
    virtual SemanticTokens extract(const Tensor& frame, int keyframe_index) const = 0;
    virtual int input_size() const = 0;
    virtual int patch_size() const = 0;
    virtual int in_channels() const = 0;
    virtual int width() const = 0;
    int patch_grid_side() const { return input_size() / patch_size(); }
    int patch_count() const { return patch_grid_side() * patch_grid_side(); }
};

// Two independent hash-seeded linear patch embeddings stand in for the last
// two layers of a pretrained encoder; the class token is the patch mean.
class ToySemanticExtractor : public SemanticExtractor {
public:
    ToySemanticExtractor(nn::ParamSet& ps, const std::string& name, int input_size, int patch,
                         int channels, int width);
    SemanticTokens extract(const Tensor& frame, int keyframe_index) const override;
    int input_size() const override { return input_size_; }
    int patch_size() const override { return patch_; }
    int in_channels() const override { return channels_; }
    int width() const override { return width_; }
    void save(const std::string& path) const;

private:
    int input_size_, patch_, channels_, width_;
    ad::Var proj_l1_, proj_l2_;  // [patch*patch*C, width], frozen
};

class DistortionExtractor {
public:
    virtual ~DistortionExtractor() = default;
    virtual Tensor extract_fragment(const Tensor& fragment) const = 0;  // [C_d]
    virtual int feature_width() const = 0;
    virtual int fragment_h() const = 0;
    virtual int fragment_w() const = 0;
};

// Degradation statistics (mean, spread, gradient energies, high-frequency
// energy, temporal difference, blockiness ratios) zero-padded to C_d.
class ToyDistortionExtractor : public DistortionExtractor {
public:
    ToyDistortionExtractor(int fragment_h, int fragment_w, int width = 128);
    Tensor extract_fragment(const Tensor& fragment) const override;
    int feature_width() const override { return width_; }
    int fragment_h() const override { return frag_h_; }
    int fragment_w() const override { return frag_w_; }
    static constexpr int kStatCount = 8;

private:
    int frag_h_, frag_w_, width_;
};

// First frame of each of n equal temporal segments (floor boundaries).
std::vector<int> select_keyframes(std::int64_t t, int n_keyframes);

std::vector<SemanticTokens> extract_semantic(const SemanticExtractor& ex,
                                             const std::vector<Tensor>& keyframe_frames,
                                             const std::vector<int>& keyframe_indices);

DistortionFeatures extract_distortion(const DistortionExtractor& ex,
                                      const fragments::FragmentGrid& fg);

// Bottleneck MLP with GELU between layers and a zero-initialized final layer:
// residual adapters start as the identity, plain ones start at zero.
class Adapter {
public:
    Adapter() = default;
    Adapter(nn::ParamSet& ps, const std::string& name, AdapterSpec spec);
    ad::Var forward(const ad::Var& x) const;  // [rows, in] -> [rows, out]
    const AdapterSpec& spec() const { return spec_; }

private:
    AdapterSpec spec_;
    nn::Linear l1_, l2_;
};

ad::Var quality_adapt(const Adapter& adapter, const ad::Var& cls);
ad::Var distortion_adapt(const Adapter& adapter, const ad::Var& features);

// Supervised contrastive objective over L2-normalized features; positives are
// same-pattern entries. Anchors without positives are skipped; fewer than two
// distinct patterns (or no positive pair at all) is undefined.
ad::Var distortion_contrastive_loss(const ad::Var& features, const std::vector<int>& pattern_labels,
                                    double temperature = 0.1);

// Area mean for integer downscales, bilinear otherwise; used to bring frames
// to an extractor's native resolution.
Tensor resize_frame(const Tensor& frame, std::int64_t out_h, std::int64_t out_w);

}  // namespace fragvqa::extractors
