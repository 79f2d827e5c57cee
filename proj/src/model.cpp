#include "fragvqa/model.hpp"

#include <cmath>
#include <utility>

namespace fragvqa::model {

namespace {

int first_injection(const backbone::BackboneSpec& s) {
    check(!s.injection_stages.empty(), "model needs at least one injection stage");
    return s.injection_stages.front();
}

int last_injection(const backbone::BackboneSpec& s) {
    check(!s.injection_stages.empty(), "model needs at least one injection stage");
    return s.injection_stages.back();
}

Tensor frame_at(const Tensor& frames, std::int64_t t) {
    Tensor f({frames.size(1), frames.size(2), frames.size(3)});
    const double* src = frames.data() + t * f.numel();
    double* dst = f.data();
    for (std::int64_t i = 0; i < f.numel(); ++i) dst[i] = src[i];
    return f;
}

qrs::SelectionResult full_grid_selection(int side) {
    qrs::SelectionResult sel;
    sel.hard_indices.resize(static_cast<std::size_t>(side) * side);
    for (std::size_t i = 0; i < sel.hard_indices.size(); ++i)
        sel.hard_indices[i] = static_cast<std::int64_t>(i);
    sel.selected_window = 0;
    sel.soft_indicator = ad::constant(Tensor::ones({1}));
    return sel;
}

}  // namespace

KsvqeModel::KsvqeModel(nn::ParamSet& ps, ModelConfig cfg,
                       std::shared_ptr<const extractors::SemanticExtractor> semantic,
                       std::shared_ptr<const extractors::DistortionExtractor> distortion)
    : cfg_(std::move(cfg)),
      sem_(std::move(semantic)),
      dist_(std::move(distortion)),
      cam_stage_(first_injection(cfg_.backbone)),
      dam_stage_(last_injection(cfg_.backbone)),
      qa_(ps, "model.qa", {{sem_->width(), cfg_.qa_bottleneck, sem_->width()}, true}),
      da_(ps, "model.da",
          {{dist_->feature_width(), cfg_.da_bottleneck, dist_->feature_width()}, true}),
      cam_(ps, "model.cam", cfg_.cam_variant, cfg_.backbone.stages[cam_stage_].width,
           cfg_.backbone.stages[cam_stage_].heads, sem_->width()),
      dam_(ps, "model.dam", cfg_.dam_variant, cfg_.backbone.stages[dam_stage_].width,
           cfg_.backbone.stages[dam_stage_].heads, dist_->feature_width()),
      net_(ps, "model.bb", cfg_.backbone, cfg_.zero_init_head) {
    check(cfg_.target_side > 0 && cfg_.target_side <= cfg_.full_grid_side,
          "target side must fit inside the sampled grid");
    check(cfg_.fragment_h > 0 && cfg_.fragment_w > 0 && cfg_.num_frames > 0 &&
              cfg_.n_keyframes > 0,
          "sampling geometry must be positive");
    if (cfg_.qrs)
        check(sem_->patch_grid_side() == cfg_.full_grid_side,
              "region selection needs one semantic patch per fragment");
}

ad::Var KsvqeModel::adapt_tokens(const Tensor& rows) const {
    return extractors::quality_adapt(qa_, ad::constant(rows));
}

ad::Var KsvqeModel::adapt_distortion(const Tensor& rows) const {
    return extractors::distortion_adapt(da_, ad::constant(rows));
}

// Mean over keyframes of the two-layer cosine importance, adapter applied to
// class and patch tokens of both layers.
ad::Var KsvqeModel::fused_importance(
    const std::vector<extractors::SemanticTokens>& sems) const {
    check(!sems.empty(), "importance needs at least one keyframe");
    const std::int64_t c = sem_->width();
    ad::Var acc;
    for (const auto& s : sems) {
        auto cls1 = ad::reshape(adapt_tokens(s.l1.cls.reshaped({1, c})), {c});
        auto cls2 = ad::reshape(adapt_tokens(s.l2.cls.reshaped({1, c})), {c});
        auto fused = qrs::importance_fused(cls1, adapt_tokens(s.l1.patches), cls2,
                                           adapt_tokens(s.l2.patches));
        acc = acc ? ad::add(acc, fused) : fused;
    }
    return ad::mul_scalar(acc, 1.0 / static_cast<double>(sems.size()));
}

ad::Var KsvqeModel::forward(const fragments::VideoTensor& composite,
                            const std::vector<extractors::SemanticTokens>& semantic,
                            const extractors::DistortionFeatures& distortion,
                            const qrs::SelectionResult& selection) const {
    const std::int64_t k = static_cast<std::int64_t>(selection.hard_indices.size());
    check(k > 0, "selection is empty");
    const auto side = static_cast<std::int64_t>(std::llround(std::sqrt(static_cast<double>(k))));
    check(side * side == k, "selection cardinality must be a perfect square");
    check(composite.h() == side * cfg_.fragment_h && composite.w() == side * cfg_.fragment_w,
          "composite size does not match the selected fragment count");
    check(distortion.features.rank() == 2 && distortion.features.size(0) == k,
          "distortion features misaligned with selected fragments");
    if (cfg_.cam) check(!semantic.empty(), "content modulation needs key-frame tokens");

    ad::Var sem_mem;
    if (cfg_.cam) {
        std::vector<ad::Var> parts;  // keyframes stacked along rows
        parts.reserve(semantic.size());
        for (const auto& s : semantic) parts.push_back(adapt_tokens(s.l2.patches));
        sem_mem = parts.size() == 1 ? parts[0] : ad::concat_rows(parts);
    }
    ad::Var dist_mem;
    if (cfg_.dam) dist_mem = adapt_distortion(distortion.features);

    auto scale = ad::reshape(qrs::selection_scale(selection), {1, 1});
    auto hook = [&](const ad::Var& tokens, int stage, const std::array<std::int64_t, 3>&) {
        auto x = tokens;
        if (stage == cam_stage_) {
            x = ad::mul(x, scale);  // straight-through region weight
            if (cfg_.cam) x = cam_.forward(x, sem_mem);
        }
        if (cfg_.dam && stage == dam_stage_) x = dam_.forward(x, dist_mem);
        return x;
    };
    return net_.forward(composite.frames, hook);
}

ClipOutput KsvqeModel::score_clip(const fragments::VideoTensor& video, Rng& rng,
                                  bool train) const {
    auto sampled = fragments::temporal_sample(video, cfg_.num_frames, cfg_.frame_interval, rng);
    fragments::GridSpec grid{cfg_.qrs ? cfg_.full_grid_side : cfg_.target_side,
                             cfg_.fragment_h, cfg_.fragment_w};
    auto frags = fragments::partition_and_sample(sampled, grid, rng);
    auto full = fragments::compose(frags);

    std::vector<extractors::SemanticTokens> sems;
    if (cfg_.cam || cfg_.qrs) {
        auto kf = extractors::select_keyframes(full.t(), cfg_.n_keyframes);
        std::vector<Tensor> frames;
        frames.reserve(kf.size());
        for (int ki : kf) {
            Tensor f = frame_at(full.frames, ki);
            if (f.size(0) != sem_->input_size() || f.size(1) != sem_->input_size())
                f = extractors::resize_frame(f, sem_->input_size(), sem_->input_size());
            frames.push_back(std::move(f));
        }
        sems = extractors::extract_semantic(*sem_, frames, kf);
    }

    ClipOutput out;
    fragments::FragmentGrid chosen;
    if (cfg_.qrs) {
        auto map = qrs::make_importance_map(fused_importance(sems), cfg_.full_grid_side);
        out.selection = qrs::select_region(map, cfg_.target_side, train ? cfg_.sigma : 0.0,
                                           train ? cfg_.topk_samples : 1, rng);
        out.importance = map.patch_scores;
        chosen = fragments::gather_selected(frags, out.selection.hard_indices);
    } else {
        out.selection = full_grid_selection(cfg_.target_side);
        chosen = std::move(frags);
    }

    out.composite = fragments::compose(chosen);
    auto dfeat = extractors::extract_distortion(*dist_, chosen);
    auto adapted = adapt_distortion(dfeat.features);
    out.dist_embedding = ad::mul_scalar(ad::sum_axis(adapted, 0, true),
                                        1.0 / static_cast<double>(adapted->value.size(0)));
    out.score = forward(out.composite, sems, dfeat, out.selection);
    return out;
}

}  // namespace fragvqa::model
