#include "fragvqa/nn.hpp"

#include <cmath>

namespace fragvqa::nn {

ad::Var ParamSet::add(const std::string& name, Tensor init, bool frozen) {
    check(find(name) == nullptr, "duplicate parameter name: " + name);
    auto v = ad::leaf(std::move(init), !frozen);
    items_.push_back(Param{name, v, frozen});
    return v;
}

const Param* ParamSet::find(const std::string& name) const {
    for (const auto& p : items_)
        if (p.name == name) return &p;
    return nullptr;
}

void ParamSet::zero_grads() {
    for (auto& p : items_) p.var->grad = Tensor();
}

std::int64_t ParamSet::count_trainable() const {
    std::int64_t n = 0;
    for (const auto& p : items_)
        if (!p.frozen) n += p.var->value.numel();
    return n;
}

std::vector<std::pair<std::string, Tensor>> ParamSet::state() const {
    std::vector<std::pair<std::string, Tensor>> out;
    out.reserve(items_.size());
    for (const auto& p : items_) out.emplace_back(p.name, p.var->value);
    return out;
}

void ParamSet::load_state(const std::vector<std::pair<std::string, Tensor>>& state) {
    for (const auto& [name, t] : state) {
        const Param* p = find(name);
        check(p != nullptr, "load_state: unknown parameter " + name);
        check(p->var->value.same_shape(t),
              "load_state: shape mismatch for " + name + ": " + p->var->value.shape_str() +
                  " vs " + t.shape_str());
        const_cast<Param*>(p)->var->value = t;
    }
}

Tensor init_normal(Rng& rng, std::vector<std::int64_t> shape, double stddev) {
    Tensor t(std::move(shape));
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = rng.normal(0.0, stddev);
    return t;
}

Tensor init_xavier(Rng& rng, std::int64_t fan_in, std::int64_t fan_out) {
    double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Tensor t({fan_in, fan_out});
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-bound, bound);
    return t;
}

Linear::Linear(ParamSet& ps, const std::string& name, std::int64_t in, std::int64_t out,
               Init init, bool frozen) {
    Rng rng = ps.init_rng(name);
    Tensor wt;
    switch (init) {
        case Init::kXavier: wt = init_xavier(rng, in, out); break;
        case Init::kZero: wt = Tensor::zeros({in, out}); break;
        case Init::kSmallNormal: wt = init_normal(rng, {in, out}, 0.02); break;
    }
    w = ps.add(name + ".w", std::move(wt), frozen);
    b = ps.add(name + ".b", Tensor::zeros({out}), frozen);
}

ad::Var Linear::forward(const ad::Var& x) const { return ad::add(ad::matmul(x, w), b); }

LayerNorm::LayerNorm(ParamSet& ps, const std::string& name, std::int64_t width, bool frozen) {
    gamma = ps.add(name + ".gamma", Tensor::ones({width}), frozen);
    beta = ps.add(name + ".beta", Tensor::zeros({width}), frozen);
}

ad::Var LayerNorm::forward(const ad::Var& x) const {
    double inv_c = 1.0 / static_cast<double>(x->value.shape().back());
    auto mu = ad::mul_scalar(ad::sum_axis(x, -1, true), inv_c);
    auto xc = ad::sub(x, mu);
    auto var = ad::mul_scalar(ad::sum_axis(ad::square(xc), -1, true), inv_c);
    auto y = ad::divide(xc, ad::vsqrt(ad::add_scalar(var, eps)));
    return ad::add(ad::mul(y, gamma), beta);
}

ad::Var split_heads(const ad::Var& x, int heads) {
    check(x->value.rank() == 2, "split_heads expects rank-2 input");
    std::int64_t s = x->value.size(0), d = x->value.size(1);
    check(d % heads == 0, "split_heads: width not divisible by head count");
    std::int64_t dh = d / heads;
    auto idx = std::make_shared<std::vector<std::int64_t>>();
    idx->reserve(static_cast<std::size_t>(s * d));
    for (int h = 0; h < heads; ++h)
        for (std::int64_t i = 0; i < s; ++i)
            for (std::int64_t j = 0; j < dh; ++j) idx->push_back(i * d + h * dh + j);
    return ad::gather_flat(x, idx, {heads, s, dh});
}

ad::Var merge_heads(const ad::Var& x) {
    check(x->value.rank() == 3, "merge_heads expects rank-3 input");
    std::int64_t h = x->value.size(0), s = x->value.size(1), dh = x->value.size(2);
    auto idx = std::make_shared<std::vector<std::int64_t>>();
    idx->reserve(static_cast<std::size_t>(h * s * dh));
    for (std::int64_t i = 0; i < s; ++i)
        for (std::int64_t hh = 0; hh < h; ++hh)
            for (std::int64_t j = 0; j < dh; ++j) idx->push_back((hh * s + i) * dh + j);
    return ad::gather_flat(x, idx, {s, h * dh});
}

Attention::Attention(ParamSet& ps, const std::string& name, int dim_, int heads_, int kv_dim_,
                     bool frozen)
    : dim(dim_), heads(heads_), kv_dim(kv_dim_) {
    check(dim % heads == 0, "attention width must be divisible by head count");
    wq = Linear(ps, name + ".wq", dim, dim, Init::kXavier, frozen);
    wk = Linear(ps, name + ".wk", kv_dim, dim, Init::kXavier, frozen);
    wv = Linear(ps, name + ".wv", kv_dim, dim, Init::kXavier, frozen);
    wo = Linear(ps, name + ".wo", dim, dim, Init::kXavier, frozen);
}

ad::Var Attention::forward(const ad::Var& q, const ad::Var& kv) const {
    check(q->value.rank() == 2 && q->value.size(1) == dim, "attention: bad query shape");
    check(kv->value.rank() == 2 && kv->value.size(1) == kv_dim, "attention: bad kv shape");
    std::int64_t dh = dim / heads;
    auto qh = split_heads(wq.forward(q), heads);
    auto kh = split_heads(wk.forward(kv), heads);
    auto vh = split_heads(wv.forward(kv), heads);
    auto logits = ad::mul_scalar(ad::bmm_nt(qh, kh), 1.0 / std::sqrt(static_cast<double>(dh)));
    auto attn = ad::softmax_last(logits);
    auto ctx = merge_heads(ad::bmm(attn, vh));
    return wo.forward(ctx);
}

AdamW::AdamW(ParamSet& params, AdamWConfig cfg) : params_(params), cfg_(cfg) {
    m_.resize(params_.items().size());
    v_.resize(params_.items().size());
}

void AdamW::step() {
    ++t_;
    double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    auto& items = params_.items();
    // Late-added parameters get moment slots on demand.
    if (m_.size() < items.size()) {
        m_.resize(items.size());
        v_.resize(items.size());
    }
    for (std::size_t i = 0; i < items.size(); ++i) {
        auto& p = items[i];
        if (p.frozen) continue;
        Tensor& val = p.var->value;
        if (m_[i].numel() != val.numel()) {
            m_[i] = Tensor::zeros(val.shape());
            v_[i] = Tensor::zeros(val.shape());
        }
        const bool has_grad = p.var->has_grad();
        const double* g = has_grad ? p.var->grad.data() : nullptr;
        double* pm = m_[i].data();
        double* pv = v_[i].data();
        double* px = val.data();
        std::int64_t n = val.numel();
        for (std::int64_t j = 0; j < n; ++j) {
            double gj = g ? g[j] : 0.0;
            pm[j] = cfg_.beta1 * pm[j] + (1.0 - cfg_.beta1) * gj;
            pv[j] = cfg_.beta2 * pv[j] + (1.0 - cfg_.beta2) * gj * gj;
            double mhat = pm[j] / bc1;
            double vhat = pv[j] / bc2;
            px[j] -= cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * px[j]);
        }
    }
}

}  // namespace fragvqa::nn
