#pragma once

#include <memory>
#include <vector>

#include "fragvqa/backbone.hpp"
#include "fragvqa/extractors.hpp"
#include "fragvqa/fragments.hpp"
#include "fragvqa/modulation.hpp"
#include "fragvqa/qrs.hpp"

namespace fragvqa::model {

// Component toggles plus sampling geometry. With region selection on, a
// full_grid_side^2 fragment grid is sampled and a target_side^2 sub-grid is
// gathered; with it off, fragments are sampled directly at target geometry.
// Either way the backbone sees a target_side-sized composite.
struct ModelConfig {
    bool qrs = true;
    bool cam = true;
    bool dam = true;
    modulation::Variant cam_variant = modulation::Variant::kCaSm;
    modulation::Variant dam_variant = modulation::Variant::kCasaCm;
    backbone::BackboneSpec backbone = backbone::BackboneSpec::desk();
    bool zero_init_head = false;

    int full_grid_side = 8;
    int target_side = 4;
    int fragment_h = 8, fragment_w = 8;
    int num_frames = 8;
    int frame_interval = 1;
    int n_keyframes = 2;

    int qa_bottleneck = 8;
    int da_bottleneck = 8;
    double sigma = 0.5;      // selection noise while training
    int topk_samples = 100;  // Monte-Carlo samples while training
};

struct ClipOutput {
    ad::Var score;           // scalar quality prediction
    ad::Var dist_embedding;  // [1, C_d] mean adapted distortion features
    qrs::SelectionResult selection;
    ad::Var importance;              // [N] patch scores; null when selection is off
    fragments::VideoTensor composite;  // the gathered clip that was scored
};

// Full evaluator: frozen extractors with trainable adapters feed region
// selection and the two modulation paths around one shared backbone. The
// straight-through selection scale multiplies the first injection stage's
// tokens, so the selector trains from the quality loss alone.
class KsvqeModel {
public:
    KsvqeModel(nn::ParamSet& ps, ModelConfig cfg,
               std::shared_ptr<const extractors::SemanticExtractor> semantic,
               std::shared_ptr<const extractors::DistortionExtractor> distortion);

    // Samples fragments, extracts features, selects the region, and scores.
    // `train` enables selection noise; evaluation takes the exact argmax.
    ClipOutput score_clip(const fragments::VideoTensor& video, Rng& rng, bool train) const;

    // Assembly on precomputed features. composite must be the gathered clip
    // of selection.hard_indices; distortion rows align one-to-one with them.
    ad::Var forward(const fragments::VideoTensor& composite,
                    const std::vector<extractors::SemanticTokens>& semantic,
                    const extractors::DistortionFeatures& distortion,
                    const qrs::SelectionResult& selection) const;

    const ModelConfig& config() const { return cfg_; }
    const backbone::Backbone& net() const { return net_; }
    const extractors::SemanticExtractor& semantic_extractor() const { return *sem_; }
    const extractors::DistortionExtractor& distortion_extractor() const { return *dist_; }

private:
    ad::Var adapt_tokens(const Tensor& rows) const;       // quality adapter
    ad::Var adapt_distortion(const Tensor& rows) const;   // distortion adapter
    ad::Var fused_importance(const std::vector<extractors::SemanticTokens>& sems) const;

    ModelConfig cfg_;
    std::shared_ptr<const extractors::SemanticExtractor> sem_;
    std::shared_ptr<const extractors::DistortionExtractor> dist_;
    int cam_stage_ = -1, dam_stage_ = -1;
    extractors::Adapter qa_, da_;
    modulation::Modulator cam_, dam_;
    backbone::Backbone net_;
};

}  // namespace fragvqa::model
