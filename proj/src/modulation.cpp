#include "fragvqa/modulation.hpp"

namespace fragvqa::modulation {

Variant variant_from_string(const std::string& kind) {
    if (kind == "CA") return Variant::kCa;
    if (kind == "SM") return Variant::kSm;
    if (kind == "CA+CM") return Variant::kCaCm;
    if (kind == "CASA") return Variant::kCasa;
    if (kind == "CM") return Variant::kCm;
    if (kind == "CASA+SM") return Variant::kCasaSm;
    if (kind == "concat") return Variant::kConcat;
    if (kind == "CA+SM" || kind == "CaM") return Variant::kCaSm;
    if (kind == "CASA+CM" || kind == "DaM") return Variant::kCasaCm;
    throw InvalidArgument("unknown modulation variant: " + kind);
}

std::string to_string(Variant v) {
    switch (v) {
        case Variant::kCa: return "CA";
        case Variant::kSm: return "SM";
        case Variant::kCaCm: return "CA+CM";
        case Variant::kCasa: return "CASA";
        case Variant::kCm: return "CM";
        case Variant::kCasaSm: return "CASA+SM";
        case Variant::kConcat: return "concat";
        case Variant::kCaSm: return "CA+SM";
        case Variant::kCasaCm: return "CASA+CM";
    }
    throw InvalidArgument("unknown modulation variant value");
}

std::pair<ad::Var, ad::Var> row_stats(const ad::Var& x, double eps) {
    check(x->value.rank() == 2, "row_stats expects a rank-2 input");
    const double inv_s = 1.0 / static_cast<double>(x->value.size(0));
    auto mean = ad::mul_scalar(ad::sum_axis(x, 0, true), inv_s);
    auto centered = ad::sub(x, mean);
    auto var = ad::mul_scalar(ad::sum_axis(ad::square(centered), 0, true), inv_s);
    return {mean, ad::vsqrt(ad::add_scalar(var, eps))};
}

namespace {

bool uses_mhca(Variant v) {
    return v != Variant::kSm && v != Variant::kCm && v != Variant::kConcat;
}
bool uses_mhsa(Variant v) {
    return v == Variant::kCasa || v == Variant::kCasaSm || v == Variant::kCasaCm;
}
bool spatial_mod(Variant v) {
    return v == Variant::kSm || v == Variant::kCaSm || v == Variant::kCasaSm;
}
bool channel_mod(Variant v) {
    return v == Variant::kCm || v == Variant::kCaCm || v == Variant::kCasaCm;
}

}  // namespace

Modulator::Modulator(nn::ParamSet& ps, const std::string& name, Variant variant, int dim,
                     int heads, int kv_dim)
    : variant_(variant), dim_(dim), kv_dim_(kv_dim) {
    check(dim > 0 && kv_dim > 0, "modulator widths must be positive");
    if (uses_mhca(variant)) mhca_ = nn::Attention(ps, name + ".mhca", dim, heads, kv_dim);
    if (uses_mhsa(variant)) mhsa_ = nn::Attention(ps, name + ".mhsa", dim, heads, dim);

    // Generators read raw memory when no attention precedes them.
    const int gen_in = uses_mhca(variant) ? dim : kv_dim;
    if (spatial_mod(variant_) || channel_mod(variant_)) {
        const int gen_out = spatial_mod(variant_) ? 1 : dim;
        scale_gen_ = nn::Linear(ps, name + ".scale", gen_in, gen_out, nn::Init::kZero);
        offset_gen_ = nn::Linear(ps, name + ".offset", gen_in, gen_out, nn::Init::kZero);
        ps.find(name + ".scale.b")->var->value.fill(1.0);
    }
    if (variant_ == Variant::kCa || variant_ == Variant::kCasa)
        proj_ = nn::Linear(ps, name + ".proj", dim, dim, nn::Init::kZero);
    if (variant_ == Variant::kConcat)
        proj_ = nn::Linear(ps, name + ".proj", dim + kv_dim, dim, nn::Init::kZero);
}

ad::Var Modulator::attended(const ad::Var& f_s, const ad::Var& memory) const {
    auto warped = mhca_.forward(f_s, memory);
    if (uses_mhsa(variant_)) warped = mhsa_.forward(warped, warped);
    return warped;
}

ad::Var Modulator::forward(const ad::Var& f_s, const ad::Var& memory) const {
    check(f_s->value.rank() == 2 && f_s->value.size(1) == dim_,
          "backbone feature width mismatch");
    check(memory->value.rank() == 2 && memory->value.size(1) == kv_dim_,
          "memory width mismatch");

    switch (variant_) {
        case Variant::kCa:
        case Variant::kCasa:
            return ad::add(f_s, proj_.forward(attended(f_s, memory)));
        case Variant::kConcat: {
            check(memory->value.size(0) == f_s->value.size(0),
                  "concat fusion requires row-aligned memory");
            auto cat = ad::concat_rows({ad::transpose(f_s), ad::transpose(memory)});
            return ad::add(f_s, proj_.forward(ad::transpose(cat)));
        }
        default: break;
    }

    ad::Var source;  // what the generators read
    if (uses_mhca(variant_)) {
        source = attended(f_s, memory);
    } else {
        if (spatial_mod(variant_))
            check(memory->value.size(0) == f_s->value.size(0),
                  "spatial modulation requires row-aligned memory");
        source = memory;
    }

    ad::Var scale, offset;
    if (spatial_mod(variant_)) {
        scale = scale_gen_.forward(source);    // [S,1]
        offset = offset_gen_.forward(source);  // [S,1]
    } else {
        auto [mean, stdev] = row_stats(source);
        scale = scale_gen_.forward(stdev);    // [1,dim]
        offset = offset_gen_.forward(mean);   // [1,dim]
    }
    return ad::add(ad::mul(scale, f_s), offset);
}

Modulator make_cam(nn::ParamSet& ps, const std::string& name, int dim, int heads, int kv_dim) {
    return Modulator(ps, name, Variant::kCaSm, dim, heads, kv_dim);
}

Modulator make_dam(nn::ParamSet& ps, const std::string& name, int dim, int heads, int kv_dim) {
    return Modulator(ps, name, Variant::kCasaCm, dim, heads, kv_dim);
}

}  // namespace fragvqa::modulation
