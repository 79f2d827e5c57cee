#include "fragvqa/extractors.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "fragvqa/io.hpp"

namespace fragvqa::extractors {

namespace {

// Per-frame luminance: channel mean at every pixel.
Tensor luminance(const Tensor& block) {
    std::int64_t t = block.size(0), h = block.size(1), w = block.size(2), c = block.size(3);
    Tensor lum({t, h, w});
    const double* p = block.data();
    double* q = lum.data();
    for (std::int64_t i = 0; i < t * h * w; ++i) {
        double s = 0.0;
        for (std::int64_t k = 0; k < c; ++k) s += p[i * c + k];
        q[i] = s / static_cast<double>(c);
    }
    return lum;
}

// Largest per-phase boundary gradient relative to the mean gradient; flags
// grids of discontinuities at a fixed stride regardless of crop offset.
double blockiness_ratio(const std::vector<double>& boundary_sums,
                        const std::vector<std::int64_t>& boundary_counts, double mean_grad) {
    if (mean_grad <= 0.0) return 0.0;
    double best = 0.0;
    for (std::size_t phi = 0; phi < boundary_sums.size(); ++phi) {
        if (boundary_counts[phi] == 0) continue;
        best = std::max(best, boundary_sums[phi] / static_cast<double>(boundary_counts[phi]));
    }
    return best / (mean_grad + 1e-12);
}

constexpr int kBlockStride = 8;

}  // namespace

ToySemanticExtractor::ToySemanticExtractor(nn::ParamSet& ps, const std::string& name,
                                           int input_size, int patch, int channels, int width)
    : input_size_(input_size), patch_(patch), channels_(channels), width_(width) {
    check(input_size >= 1 && patch >= 1 && channels >= 1 && width >= 1,
          "semantic extractor dimensions must be positive");
    check(input_size % patch == 0, "patch size must divide the native input size");
    std::int64_t in_dim = static_cast<std::int64_t>(patch) * patch * channels;
    double std = 1.0 / std::sqrt(static_cast<double>(in_dim));
    Rng r1 = ps.init_rng(name + ".layer1");
    Rng r2 = ps.init_rng(name + ".layer2");
    proj_l1_ = ps.add(name + ".layer1.w", nn::init_normal(r1, {in_dim, width}, std), /*frozen=*/true);
    proj_l2_ = ps.add(name + ".layer2.w", nn::init_normal(r2, {in_dim, width}, std), /*frozen=*/true);
}

SemanticTokens ToySemanticExtractor::extract(const Tensor& frame, int keyframe_index) const {
    check(frame.rank() == 3 && frame.size(0) == input_size_ && frame.size(1) == input_size_ &&
              frame.size(2) == channels_,
          "frame does not match the extractor's native resolution");
    int g = patch_grid_side();
    std::int64_t n = patch_count();
    std::int64_t in_dim = static_cast<std::int64_t>(patch_) * patch_ * channels_;

    Tensor pixels({n, in_dim});
    const double* src = frame.data();
    for (int py = 0; py < g; ++py)
        for (int px = 0; px < g; ++px) {
            double* row = pixels.data() + (static_cast<std::int64_t>(py) * g + px) * in_dim;
            std::int64_t o = 0;
            for (int y = 0; y < patch_; ++y)
                for (int x = 0; x < patch_; ++x)
                    for (int c = 0; c < channels_; ++c)
                        row[o++] = src[((static_cast<std::int64_t>(py) * patch_ + y) * input_size_ +
                                        px * static_cast<std::int64_t>(patch_) + x) *
                                           channels_ +
                                       c];
        }

    SemanticTokens out;
    out.keyframe_index = keyframe_index;
    for (int layer = 0; layer < 2; ++layer) {
        const Tensor& w = layer == 0 ? proj_l1_->value : proj_l2_->value;
        Tensor tokens = matmul(pixels, w);
        Tensor cls({static_cast<std::int64_t>(width_)});
        for (std::int64_t j = 0; j < width_; ++j) {
            double s = 0.0;
            for (std::int64_t i = 0; i < n; ++i) s += tokens[i * width_ + j];
            cls[j] = s / static_cast<double>(n);
        }
        LayerTokens& dst = layer == 0 ? out.l1 : out.l2;
        dst.patches = std::move(tokens);
        dst.cls = std::move(cls);
    }
    return out;
}

void ToySemanticExtractor::save(const std::string& path) const {
    io::Archive a;
    a.meta["kind"] = "toy_semantic";
    a.meta["input_size"] = input_size_;
    a.meta["patch"] = patch_;
    a.meta["channels"] = channels_;
    a.meta["width"] = width_;
    a.meta["layers"] = 2;
    a.tensors.emplace_back("layer1.w", proj_l1_->value);
    a.tensors.emplace_back("layer2.w", proj_l2_->value);
    io::save_tensor_archive(path, a);
}

ToyDistortionExtractor::ToyDistortionExtractor(int fragment_h, int fragment_w, int width)
    : frag_h_(fragment_h), frag_w_(fragment_w), width_(width) {
    check(width >= kStatCount, "distortion width must hold the statistics vector");
}

Tensor ToyDistortionExtractor::extract_fragment(const Tensor& fragment) const {
    check(fragment.rank() == 4, "fragment must be T x h x w x C");
    check(fragment.size(1) == frag_h_ && fragment.size(2) == frag_w_,
          "fragment size does not match the extractor's expected size");
    Tensor lum = luminance(fragment);
    std::int64_t t = lum.size(0), h = lum.size(1), w = lum.size(2);
    const double* p = lum.data();
    std::int64_t npix = t * h * w;

    double mean = 0.0;
    for (std::int64_t i = 0; i < npix; ++i) mean += p[i];
    mean /= static_cast<double>(npix);
    double var = 0.0;
    for (std::int64_t i = 0; i < npix; ++i) var += (p[i] - mean) * (p[i] - mean);
    var /= static_cast<double>(npix);

    double grad_h = 0.0, grad_v = 0.0, lap = 0.0, tdiff = 0.0;
    std::vector<double> bh_sum(kBlockStride, 0.0), bv_sum(kBlockStride, 0.0);
    std::vector<std::int64_t> bh_cnt(kBlockStride, 0), bv_cnt(kBlockStride, 0);
    std::int64_t n_gh = 0, n_gv = 0, n_lap = 0, n_td = 0;

    for (std::int64_t ti = 0; ti < t; ++ti) {
        const double* f = p + ti * h * w;
        for (std::int64_t y = 0; y < h; ++y)
            for (std::int64_t x = 0; x + 1 < w; ++x) {
                double d = std::abs(f[y * w + x + 1] - f[y * w + x]);
                grad_h += d;
                ++n_gh;
                std::size_t phi = static_cast<std::size_t>((x + 1) % kBlockStride);
                bh_sum[phi] += d;
                ++bh_cnt[phi];
            }
        for (std::int64_t y = 0; y + 1 < h; ++y)
            for (std::int64_t x = 0; x < w; ++x) {
                double d = std::abs(f[(y + 1) * w + x] - f[y * w + x]);
                grad_v += d;
                ++n_gv;
                std::size_t phi = static_cast<std::size_t>((y + 1) % kBlockStride);
                bv_sum[phi] += d;
                ++bv_cnt[phi];
            }
        for (std::int64_t y = 1; y + 1 < h; ++y)
            for (std::int64_t x = 1; x + 1 < w; ++x) {
                double l = f[(y - 1) * w + x] + f[(y + 1) * w + x] + f[y * w + x - 1] +
                           f[y * w + x + 1] - 4.0 * f[y * w + x];
                lap += l * l;
                ++n_lap;
            }
        if (ti + 1 < t) {
            const double* g = p + (ti + 1) * h * w;
            for (std::int64_t i = 0; i < h * w; ++i) {
                tdiff += std::abs(g[i] - f[i]);
                ++n_td;
            }
        }
    }
    double mean_gh = n_gh ? grad_h / static_cast<double>(n_gh) : 0.0;
    double mean_gv = n_gv ? grad_v / static_cast<double>(n_gv) : 0.0;

    Tensor out({static_cast<std::int64_t>(width_)});
    out[0] = mean;
    out[1] = std::sqrt(var);
    out[2] = mean_gh;
    out[3] = mean_gv;
    out[4] = n_lap ? lap / static_cast<double>(n_lap) : 0.0;
    out[5] = n_td ? tdiff / static_cast<double>(n_td) : 0.0;
    out[6] = blockiness_ratio(bh_sum, bh_cnt, mean_gh);
    out[7] = blockiness_ratio(bv_sum, bv_cnt, mean_gv);
    return out;
}

std::vector<int> select_keyframes(std::int64_t t, int n_keyframes) {
    check(n_keyframes >= 1, "need at least one keyframe");
    check(static_cast<std::int64_t>(n_keyframes) <= t, "more keyframes than frames");
    std::vector<int> out(static_cast<std::size_t>(n_keyframes));
    for (int j = 0; j < n_keyframes; ++j)
        out[static_cast<std::size_t>(j)] =
            static_cast<int>(static_cast<std::int64_t>(j) * t / n_keyframes);
    return out;
}

std::vector<SemanticTokens> extract_semantic(const SemanticExtractor& ex,
                                             const std::vector<Tensor>& keyframe_frames,
                                             const std::vector<int>& keyframe_indices) {
    check(keyframe_frames.size() == keyframe_indices.size(),
          "keyframe frame/index count mismatch");
    std::vector<SemanticTokens> out;
    out.reserve(keyframe_frames.size());
    for (std::size_t i = 0; i < keyframe_frames.size(); ++i)
        out.push_back(ex.extract(keyframe_frames[i], keyframe_indices[i]));
    return out;
}

DistortionFeatures extract_distortion(const DistortionExtractor& ex,
                                      const fragments::FragmentGrid& fg) {
    check(!fg.fragments.empty(), "empty fragment grid");
    std::int64_t k = static_cast<std::int64_t>(fg.fragments.size());
    std::int64_t cd = ex.feature_width();
    DistortionFeatures out;
    out.features = Tensor({k, cd});
    for (std::int64_t i = 0; i < k; ++i) {
        Tensor f = ex.extract_fragment(fg.fragments[static_cast<std::size_t>(i)]);
        std::copy(f.data(), f.data() + cd, out.features.data() + i * cd);
    }
    return out;
}

Adapter::Adapter(nn::ParamSet& ps, const std::string& name, AdapterSpec spec) : spec_(std::move(spec)) {
    check(spec_.widths.size() == 3, "adapter takes exactly three widths");
    for (int w : spec_.widths) check(w >= 1, "adapter widths must be positive");
    if (spec_.residual)
        check(spec_.widths[0] == spec_.widths[2], "residual adapter needs equal in/out widths");
    l1_ = nn::Linear(ps, name + ".down", spec_.widths[0], spec_.widths[1], nn::Init::kXavier);
    l2_ = nn::Linear(ps, name + ".up", spec_.widths[1], spec_.widths[2], nn::Init::kZero);
}

ad::Var Adapter::forward(const ad::Var& x) const {
    check(x->value.rank() == 2 && x->value.size(1) == spec_.widths[0],
          "adapter input width mismatch");
    auto y = l2_.forward(ad::gelu(l1_.forward(x)));
    return spec_.residual ? ad::add(x, y) : y;
}

ad::Var quality_adapt(const Adapter& adapter, const ad::Var& cls) {
    return adapter.forward(cls);
}

ad::Var distortion_adapt(const Adapter& adapter, const ad::Var& features) {
    return adapter.forward(features);
}

ad::Var distortion_contrastive_loss(const ad::Var& features, const std::vector<int>& pattern_labels,
                                    double temperature) {
    check(features->value.rank() == 2, "contrastive loss expects a [B, D] feature batch");
    std::int64_t b = features->value.size(0);
    check(static_cast<std::size_t>(b) == pattern_labels.size(), "label count mismatch");
    check(b >= 2, "contrastive loss needs a batch of at least 2");
    check(temperature > 0.0, "temperature must be positive");

    std::set<int> distinct(pattern_labels.begin(), pattern_labels.end());
    if (distinct.size() < 2)
        throw UndefinedValue("contrastive loss undefined for a single-pattern batch");

    // Positive-pair weights: 1/|P(i)| rows, averaged over anchors that have
    // at least one positive.
    Tensor pos_w({b, b});
    Tensor offdiag({b, b});
    std::int64_t anchors = 0;
    for (std::int64_t i = 0; i < b; ++i) {
        std::int64_t npos = 0;
        for (std::int64_t j = 0; j < b; ++j) {
            offdiag[i * b + j] = i == j ? 0.0 : 1.0;
            if (i != j && pattern_labels[static_cast<std::size_t>(i)] ==
                              pattern_labels[static_cast<std::size_t>(j)])
                ++npos;
        }
        if (npos > 0) ++anchors;
        for (std::int64_t j = 0; j < b; ++j)
            pos_w[i * b + j] = (i != j && npos > 0 &&
                                pattern_labels[static_cast<std::size_t>(i)] ==
                                    pattern_labels[static_cast<std::size_t>(j)])
                                   ? 1.0 / static_cast<double>(npos)
                                   : 0.0;
    }
    if (anchors == 0) throw UndefinedValue("contrastive loss undefined without positive pairs");

    const double eps = 1e-12;
    auto norm2 = ad::sum_axis(ad::square(features), -1, true);
    auto z = ad::divide(features, ad::vsqrt(ad::add_scalar(norm2, eps)));
    auto sims = ad::mul_scalar(ad::matmul(z, ad::transpose(z)), 1.0 / temperature);

    auto masked_exp = ad::mul(ad::vexp(sims), ad::constant(offdiag));
    auto log_denom = ad::vlog(ad::sum_axis(masked_exp, -1, true));  // [B,1]
    auto log_prob = ad::sub(sims, log_denom);
    auto weighted = ad::mul(log_prob, ad::constant(pos_w));
    return ad::mul_scalar(ad::sum_all(weighted), -1.0 / static_cast<double>(anchors));
}

Tensor resize_frame(const Tensor& frame, std::int64_t out_h, std::int64_t out_w) {
    check(frame.rank() == 3, "resize_frame expects H x W x C");
    std::int64_t h = frame.size(0), w = frame.size(1), c = frame.size(2);
    check(out_h >= 1 && out_w >= 1, "resize target must be positive");
    if (h == out_h && w == out_w) return frame;
    Tensor out({out_h, out_w, c});
    const double* src = frame.data();
    double* dst = out.data();
    if (h % out_h == 0 && w % out_w == 0) {
        std::int64_t by = h / out_h, bx = w / out_w;
        double inv = 1.0 / static_cast<double>(by * bx);
        for (std::int64_t y = 0; y < out_h; ++y)
            for (std::int64_t x = 0; x < out_w; ++x)
                for (std::int64_t k = 0; k < c; ++k) {
                    double s = 0.0;
                    for (std::int64_t dy = 0; dy < by; ++dy)
                        for (std::int64_t dx = 0; dx < bx; ++dx)
                            s += src[((y * by + dy) * w + x * bx + dx) * c + k];
                    dst[(y * out_w + x) * c + k] = s * inv;
                }
        return out;
    }
    for (std::int64_t y = 0; y < out_h; ++y) {
        double sy = (static_cast<double>(y) + 0.5) * static_cast<double>(h) /
                        static_cast<double>(out_h) - 0.5;
        std::int64_t y0 = static_cast<std::int64_t>(std::floor(sy));
        double fy = sy - static_cast<double>(y0);
        std::int64_t y0c = std::clamp<std::int64_t>(y0, 0, h - 1);
        std::int64_t y1c = std::clamp<std::int64_t>(y0 + 1, 0, h - 1);
        for (std::int64_t x = 0; x < out_w; ++x) {
            double sx = (static_cast<double>(x) + 0.5) * static_cast<double>(w) /
                            static_cast<double>(out_w) - 0.5;
            std::int64_t x0 = static_cast<std::int64_t>(std::floor(sx));
            double fx = sx - static_cast<double>(x0);
            std::int64_t x0c = std::clamp<std::int64_t>(x0, 0, w - 1);
            std::int64_t x1c = std::clamp<std::int64_t>(x0 + 1, 0, w - 1);
            for (std::int64_t k = 0; k < c; ++k) {
                double v00 = src[(y0c * w + x0c) * c + k], v01 = src[(y0c * w + x1c) * c + k];
                double v10 = src[(y1c * w + x0c) * c + k], v11 = src[(y1c * w + x1c) * c + k];
                dst[(y * out_w + x) * c + k] =
                    (1 - fy) * ((1 - fx) * v00 + fx * v01) + fy * ((1 - fx) * v10 + fx * v11);
            }
        }
    }
    return out;
}

}  // namespace fragvqa::extractors
