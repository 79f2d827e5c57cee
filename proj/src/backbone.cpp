#include "fragvqa/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

namespace fragvqa::backbone {

BackboneSpec BackboneSpec::desk() {
    BackboneSpec s;
    s.patch_embed = {2, 4, 4};
    s.in_channels = 1;
    s.stages = {{2, 32, {4, 8, 8}, 4}, {2, 64, {4, 4, 4}, 8}};
    s.injection_stages = {0, 1};
    return s;
}

BackboneSpec BackboneSpec::paper() {
    BackboneSpec s;
    s.patch_embed = {2, 4, 4};
    s.in_channels = 3;
    s.stages = {{2, 96, {8, 7, 7}, 3},
                {2, 192, {8, 7, 7}, 6},
                {6, 384, {8, 7, 7}, 12},
                {2, 768, {8, 7, 7}, 24}};
    s.injection_stages = {2, 3};
    return s;
}

namespace {

using Grid = std::array<std::int64_t, 3>;

struct WindowPlan {
    std::int64_t n_windows = 0;
    std::int64_t window_len = 0;
    // dest slot (window, l) -> source token index under the cyclic shift
    std::vector<std::int64_t> src_token;
    // token s -> (window, l) it lands in
    std::vector<std::int64_t> dest_window, dest_slot;
    std::shared_ptr<Tensor> mask;  // [nW, L, L] additive, null when unshifted
};

int zone(std::int64_t pos, std::int64_t size, std::int64_t window, std::int64_t shift) {
    if (shift == 0) return 0;
    if (pos < size - window) return 0;
    if (pos < size - shift) return 1;
    return 2;
}

WindowPlan make_window_plan(const Grid& grid, const std::array<int, 3>& window, bool shifted) {
    const std::int64_t t = grid[0], h = grid[1], w = grid[2];
    const std::int64_t wt = window[0], wh = window[1], ww = window[2];
    check(t % wt == 0 && h % wh == 0 && w % ww == 0,
          "attention window must divide the token grid");
    std::array<std::int64_t, 3> sh{0, 0, 0};
    if (shifted) {
        // No shift along axes fully covered by one window.
        sh = {wt < t ? wt / 2 : 0, wh < h ? wh / 2 : 0, ww < w ? ww / 2 : 0};
    }
    WindowPlan plan;
    plan.window_len = wt * wh * ww;
    plan.n_windows = (t / wt) * (h / wh) * (w / ww);
    const std::int64_t s_total = t * h * w;
    plan.src_token.resize(static_cast<std::size_t>(s_total));
    plan.dest_window.resize(static_cast<std::size_t>(s_total));
    plan.dest_slot.resize(static_cast<std::size_t>(s_total));

    std::vector<int> zones;
    const bool any_shift = sh[0] || sh[1] || sh[2];
    if (any_shift) zones.resize(static_cast<std::size_t>(s_total));

    for (std::int64_t dt = 0; dt < t; ++dt)
        for (std::int64_t dh = 0; dh < h; ++dh)
            for (std::int64_t dw = 0; dw < w; ++dw) {
                const std::int64_t win =
                    ((dt / wt) * (h / wh) + dh / wh) * (w / ww) + dw / ww;
                const std::int64_t slot =
                    ((dt % wt) * wh + dh % wh) * ww + dw % ww;
                const std::int64_t st = (dt + sh[0]) % t;
                const std::int64_t shh = (dh + sh[1]) % h;
                const std::int64_t sw = (dw + sh[2]) % w;
                const std::int64_t src = (st * h + shh) * w + sw;
                const std::int64_t flat = win * plan.window_len + slot;
                plan.src_token[static_cast<std::size_t>(flat)] = src;
                plan.dest_window[static_cast<std::size_t>(src)] = win;
                plan.dest_slot[static_cast<std::size_t>(src)] = slot;
                if (any_shift)
                    zones[static_cast<std::size_t>(flat)] =
                        (zone(dt, t, wt, sh[0]) * 3 + zone(dh, h, wh, sh[1])) * 3 +
                        zone(dw, w, ww, sh[2]);
            }

    if (any_shift) {
        const std::int64_t len = plan.window_len;
        plan.mask = std::make_shared<Tensor>(Tensor::zeros({plan.n_windows, len, len}));
        double* m = plan.mask->data();
        for (std::int64_t win = 0; win < plan.n_windows; ++win) {
            const int* zw = zones.data() + win * len;
            double* mw = m + win * len * len;
            for (std::int64_t a = 0; a < len; ++a)
                for (std::int64_t b = 0; b < len; ++b)
                    if (zw[a] != zw[b]) mw[a * len + b] = -1e9;
        }
    }
    return plan;
}

// Per-head windowed attention: q is pre-scaled by 1/sqrt(dh).
ad::Var window_attention(const ad::Var& q, const ad::Var& k, const ad::Var& v,
                         const WindowPlan& plan, int heads) {
    const std::int64_t s = q->value.size(0), c = q->value.size(1);
    const std::int64_t dh = c / heads, len = plan.window_len;
    const std::int64_t batch = plan.n_windows * heads;

    auto fwd_idx = std::make_shared<std::vector<std::int64_t>>();
    fwd_idx->reserve(static_cast<std::size_t>(s * c));
    for (std::int64_t win = 0; win < plan.n_windows; ++win)
        for (int head = 0; head < heads; ++head)
            for (std::int64_t l = 0; l < len; ++l) {
                const std::int64_t base =
                    plan.src_token[static_cast<std::size_t>(win * len + l)] * c + head * dh;
                for (std::int64_t d = 0; d < dh; ++d) fwd_idx->push_back(base + d);
            }
    auto qh = ad::gather_flat(q, fwd_idx, {batch, len, dh});
    auto kh = ad::gather_flat(k, fwd_idx, {batch, len, dh});
    auto vh = ad::gather_flat(v, fwd_idx, {batch, len, dh});

    auto logits = ad::bmm_nt(qh, kh);
    auto attn = plan.mask ? ad::masked_softmax_last(logits, plan.mask, heads)
                          : ad::softmax_last(logits);
    auto ctx = ad::bmm(attn, vh);  // [batch, len, dh]

    auto inv_idx = std::make_shared<std::vector<std::int64_t>>();
    inv_idx->reserve(static_cast<std::size_t>(s * c));
    for (std::int64_t tok = 0; tok < s; ++tok) {
        const std::int64_t win = plan.dest_window[static_cast<std::size_t>(tok)];
        const std::int64_t slot = plan.dest_slot[static_cast<std::size_t>(tok)];
        for (std::int64_t ch = 0; ch < c; ++ch) {
            const std::int64_t head = ch / dh, d = ch % dh;
            inv_idx->push_back(((win * heads + head) * len + slot) * dh + d);
        }
    }
    return ad::gather_flat(ctx, inv_idx, {s, c});
}

}  // namespace

Backbone::Backbone(nn::ParamSet& ps, const std::string& name, BackboneSpec spec,
                   bool zero_init_head)
    : spec_(std::move(spec)) {
    check(!spec_.stages.empty(), "backbone needs at least one stage");
    const auto& pe = spec_.patch_embed;
    check(pe[0] > 0 && pe[1] > 0 && pe[2] > 0 && spec_.in_channels > 0,
          "patch embed dims must be positive");
    for (int id : spec_.injection_stages)
        check(id >= 0 && id < static_cast<int>(spec_.stages.size()),
              "injection stage out of range");

    const std::int64_t patch_elems =
        static_cast<std::int64_t>(pe[0]) * pe[1] * pe[2] * spec_.in_channels;
    embed_ = nn::Linear(ps, name + ".embed", patch_elems, spec_.stages[0].width);
    embed_ln_ = nn::LayerNorm(ps, name + ".embed_ln", spec_.stages[0].width);

    for (std::size_t si = 0; si < spec_.stages.size(); ++si) {
        const auto& st = spec_.stages[si];
        check(st.depth > 0 && st.width > 0 && st.heads > 0 && st.width % st.heads == 0,
              "stage width must divide evenly into heads");
        Stage stage;
        const std::string sn = name + ".s" + std::to_string(si);
        for (int d = 0; d < st.depth; ++d) {
            const std::string bn = sn + ".b" + std::to_string(d);
            Block blk;
            blk.ln1 = nn::LayerNorm(ps, bn + ".ln1", st.width);
            blk.ln2 = nn::LayerNorm(ps, bn + ".ln2", st.width);
            blk.wq = nn::Linear(ps, bn + ".wq", st.width, st.width);
            blk.wk = nn::Linear(ps, bn + ".wk", st.width, st.width);
            blk.wv = nn::Linear(ps, bn + ".wv", st.width, st.width);
            blk.wo = nn::Linear(ps, bn + ".wo", st.width, st.width);
            blk.fc1 = nn::Linear(ps, bn + ".fc1", st.width, st.width * spec_.mlp_ratio);
            blk.fc2 = nn::Linear(ps, bn + ".fc2", st.width * spec_.mlp_ratio, st.width);
            stage.blocks.push_back(std::move(blk));
        }
        if (si + 1 < spec_.stages.size()) {
            stage.merge_ln = nn::LayerNorm(ps, sn + ".merge_ln", 4 * st.width);
            stage.merge = nn::Linear(ps, sn + ".merge", 4 * st.width,
                                     spec_.stages[si + 1].width);
        }
        stages_.push_back(std::move(stage));
    }

    const int cw = spec_.final_width();
    const int hidden = spec_.head_hidden > 0 ? spec_.head_hidden : cw;
    final_ln_ = nn::LayerNorm(ps, name + ".final_ln", cw);
    head1_ = nn::Linear(ps, name + ".head1", cw, hidden);
    head2_ = nn::Linear(ps, name + ".head2", hidden, 1,
                        zero_init_head ? nn::Init::kZero : nn::Init::kSmallNormal);
}

std::array<std::int64_t, 3> Backbone::token_grid(int stage, const Grid& input_thw) const {
    check(stage >= 0 && stage < static_cast<int>(spec_.stages.size()), "stage out of range");
    Grid g{input_thw[0] / spec_.patch_embed[0], input_thw[1] / spec_.patch_embed[1],
           input_thw[2] / spec_.patch_embed[2]};
    for (int s = 0; s < stage; ++s) {
        g[1] /= 2;
        g[2] /= 2;
    }
    return g;
}

ad::Var Backbone::forward(const Tensor& clip, const Hook& hook) const {
    check(clip.rank() == 4, "clip must be [T, H, W, C]");
    const std::int64_t t = clip.size(0), h = clip.size(1), w = clip.size(2),
                       cin = clip.size(3);
    const auto& pe = spec_.patch_embed;
    check(cin == spec_.in_channels, "clip channel count mismatch");
    check(t % pe[0] == 0 && h % pe[1] == 0 && w % pe[2] == 0,
          "clip dims must be divisible by the patch embed size");

    Grid grid{t / pe[0], h / pe[1], w / pe[2]};
    const std::int64_t s0 = grid[0] * grid[1] * grid[2];
    const std::int64_t pelems = static_cast<std::int64_t>(pe[0]) * pe[1] * pe[2] * cin;
    Tensor patches({s0, pelems});
    {
        double* out = patches.data();
        const double* in = clip.data();
        std::int64_t row = 0;
        for (std::int64_t gt = 0; gt < grid[0]; ++gt)
            for (std::int64_t gh = 0; gh < grid[1]; ++gh)
                for (std::int64_t gw = 0; gw < grid[2]; ++gw, ++row) {
                    double* dst = out + row * pelems;
                    for (std::int64_t dt = 0; dt < pe[0]; ++dt)
                        for (std::int64_t dh = 0; dh < pe[1]; ++dh)
                            for (std::int64_t dw = 0; dw < pe[2]; ++dw)
                                for (std::int64_t ch = 0; ch < cin; ++ch)
                                    *dst++ = in[(((gt * pe[0] + dt) * h +
                                                  gh * pe[1] + dh) *
                                                     w +
                                                 gw * pe[2] + dw) *
                                                    cin +
                                                ch];
                }
    }
    auto x = embed_ln_.forward(embed_.forward(ad::constant(std::move(patches))));

    for (std::size_t si = 0; si < stages_.size(); ++si) {
        const auto& st = spec_.stages[si];
        const double qscale = 1.0 / std::sqrt(static_cast<double>(st.width / st.heads));
        for (std::size_t d = 0; d < stages_[si].blocks.size(); ++d) {
            const Block& blk = stages_[si].blocks[d];
            WindowPlan plan = make_window_plan(grid, st.window, d % 2 == 1);
            auto xn = blk.ln1.forward(x);
            auto attn = window_attention(ad::mul_scalar(blk.wq.forward(xn), qscale),
                                         blk.wk.forward(xn), blk.wv.forward(xn), plan,
                                         st.heads);
            x = ad::add(x, blk.wo.forward(attn));
            auto mn = blk.ln2.forward(x);
            x = ad::add(x, blk.fc2.forward(ad::gelu(blk.fc1.forward(mn))));
        }

        if (hook &&
            std::find(spec_.injection_stages.begin(), spec_.injection_stages.end(),
                      static_cast<int>(si)) != spec_.injection_stages.end()) {
            x = hook(x, static_cast<int>(si), grid);
            check(x->value.size(0) == grid[0] * grid[1] * grid[2] &&
                      x->value.size(1) == st.width,
                  "injection hook must preserve token shape");
        }

        if (si + 1 < stages_.size()) {
            check(grid[1] % 2 == 0 && grid[2] % 2 == 0,
                  "token grid must be even for patch merging");
            const std::int64_t c = st.width;
            const std::int64_t sm = grid[0] * (grid[1] / 2) * (grid[2] / 2);
            auto idx = std::make_shared<std::vector<std::int64_t>>();
            idx->reserve(static_cast<std::size_t>(sm * 4 * c));
            for (std::int64_t gt = 0; gt < grid[0]; ++gt)
                for (std::int64_t gh = 0; gh < grid[1] / 2; ++gh)
                    for (std::int64_t gw = 0; gw < grid[2] / 2; ++gw)
                        for (int sub = 0; sub < 4; ++sub) {
                            const std::int64_t tok =
                                (gt * grid[1] + gh * 2 + sub / 2) * grid[2] + gw * 2 +
                                sub % 2;
                            for (std::int64_t ch = 0; ch < c; ++ch)
                                idx->push_back(tok * c + ch);
                        }
            auto merged = ad::gather_flat(x, idx, {sm, 4 * c});
            x = stages_[si].merge.forward(stages_[si].merge_ln.forward(merged));
            grid = {grid[0], grid[1] / 2, grid[2] / 2};
        }
    }

    auto pooled = ad::mul_scalar(ad::sum_axis(final_ln_.forward(x), 0, true),
                                 1.0 / static_cast<double>(x->value.size(0)));
    auto score = head2_.forward(ad::gelu(head1_.forward(pooled)));
    return ad::reshape(score, {});
}

}  // namespace fragvqa::backbone
