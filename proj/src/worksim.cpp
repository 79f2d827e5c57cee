#include "fragvqa/worksim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>

namespace fragvqa::worksim {
namespace {

constexpr int kBlock = 8;
constexpr double kPi = 3.14159265358979323846;

// Surrogate strengths. These shape pixels only; the analytic pseudo-MOS never
// looks at them, so they stay code constants.
constexpr double kTranscodeQ0 = 0.02;
constexpr double kDenoiseSigma = 0.7;
constexpr double kDeblurSigma = 0.8;
constexpr double kDeblurAmount = 0.8;
constexpr double kPrepGlobalSigma = 0.6;
constexpr double kPrepRoiSigma = 1.0;

double clamp01(double v) { return std::min(1.0, std::max(0.0, v)); }

void clamp01_inplace(Tensor& t) {
    double* p = t.data();
    for (std::int64_t i = 0; i < t.numel(); ++i) p[i] = clamp01(p[i]);
}

void check_frames(const Tensor& frames) {
    check(frames.rank() == 4, "worksim: expected frames shaped T x H x W x C");
    check(frames.size(1) % kBlock == 0 && frames.size(2) % kBlock == 0,
          "worksim: frame sides must be multiples of the 8-pixel block");
}

// Center half-window, the region localized references confine their quality
// signal to and the region the ROI preprocess leaves untouched.
struct Window {
    std::int64_t y0, y1, x0, x1;
    bool contains(std::int64_t y, std::int64_t x) const {
        return y >= y0 && y < y1 && x >= x0 && x < x1;
    }
};

Window center_window(std::int64_t h, std::int64_t w) {
    return {h / 4, h - h / 4, w / 4, w - w / 4};
}

std::vector<double> gaussian_kernel(double sigma) {
    int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        double v = std::exp(-0.5 * i * i / (sigma * sigma));
        k[static_cast<std::size_t>(i + radius)] = v;
        sum += v;
    }
    for (double& v : k) v /= sum;
    return k;
}

// Separable blur with clamp-to-edge padding, applied per frame and channel.
Tensor gaussian_blur(const Tensor& frames, double sigma) {
    if (sigma <= 0.0) return frames;
    auto k = gaussian_kernel(sigma);
    int radius = static_cast<int>(k.size() / 2);
    std::int64_t t = frames.size(0), h = frames.size(1), w = frames.size(2),
                 c = frames.size(3);
    Tensor tmp = frames;
    Tensor out = frames;
    for (std::int64_t f = 0; f < t; ++f) {
        for (std::int64_t ch = 0; ch < c; ++ch) {
            auto px = [&](const Tensor& src, std::int64_t y, std::int64_t x) {
                y = std::clamp<std::int64_t>(y, 0, h - 1);
                x = std::clamp<std::int64_t>(x, 0, w - 1);
                return src[((f * h + y) * w + x) * c + ch];
            };
            for (std::int64_t y = 0; y < h; ++y)
                for (std::int64_t x = 0; x < w; ++x) {
                    double acc = 0.0;
                    for (int i = -radius; i <= radius; ++i)
                        acc += k[static_cast<std::size_t>(i + radius)] *
                               px(frames, y, x + i);
                    tmp[((f * h + y) * w + x) * c + ch] = acc;
                }
            for (std::int64_t y = 0; y < h; ++y)
                for (std::int64_t x = 0; x < w; ++x) {
                    double acc = 0.0;
                    for (int i = -radius; i <= radius; ++i)
                        acc += k[static_cast<std::size_t>(i + radius)] *
                               px(tmp, y + i, x);
                    out[((f * h + y) * w + x) * c + ch] = acc;
                }
        }
    }
    return out;
}

// Orthonormal 8x8 DCT-II basis.
const std::array<std::array<double, kBlock>, kBlock>& dct_basis() {
    static const auto basis = [] {
        std::array<std::array<double, kBlock>, kBlock> m{};
        for (int k = 0; k < kBlock; ++k) {
            double scale = std::sqrt((k == 0 ? 1.0 : 2.0) / kBlock);
            for (int n = 0; n < kBlock; ++n)
                m[static_cast<std::size_t>(k)][static_cast<std::size_t>(n)] =
                    scale * std::cos(kPi * (2 * n + 1) * k / (2.0 * kBlock));
        }
        return m;
    }();
    return basis;
}

// Unsharp mask; partially inverts a blur impairment.
Tensor deblur_surrogate(const Tensor& frames) {
    Tensor soft = gaussian_blur(frames, kDeblurSigma);
    Tensor out = frames;
    for (std::int64_t i = 0; i < out.numel(); ++i)
        out[i] = clamp01(frames[i] + kDeblurAmount * (frames[i] - soft[i]));
    return out;
}

// 3x3 box filter on the one-pixel strips either side of block boundaries;
// partially inverts blockiness while leaving block interiors untouched.
Tensor deartifact_surrogate(const Tensor& frames) {
    std::int64_t t = frames.size(0), h = frames.size(1), w = frames.size(2),
                 c = frames.size(3);
    Tensor out = frames;
    for (std::int64_t f = 0; f < t; ++f)
        for (std::int64_t y = 0; y < h; ++y)
            for (std::int64_t x = 0; x < w; ++x) {
                bool strip = (y % kBlock == 0 || y % kBlock == kBlock - 1 ||
                              x % kBlock == 0 || x % kBlock == kBlock - 1);
                if (!strip) continue;
                for (std::int64_t ch = 0; ch < c; ++ch) {
                    double acc = 0.0;
                    for (std::int64_t dy = -1; dy <= 1; ++dy)
                        for (std::int64_t dx = -1; dx <= 1; ++dx) {
                            std::int64_t yy = std::clamp<std::int64_t>(y + dy, 0, h - 1);
                            std::int64_t xx = std::clamp<std::int64_t>(x + dx, 0, w - 1);
                            acc += frames[((f * h + yy) * w + xx) * c + ch];
                        }
                    out[((f * h + y) * w + x) * c + ch] = acc / 9.0;
                }
            }
    return out;
}

// Blur restricted to the surround; the ROI keeps its high frequencies.
Tensor roi_attenuate(const Tensor& frames, double sigma) {
    Tensor soft = gaussian_blur(frames, sigma);
    std::int64_t t = frames.size(0), h = frames.size(1), w = frames.size(2),
                 c = frames.size(3);
    Window win = center_window(h, w);
    Tensor out = frames;
    for (std::int64_t f = 0; f < t; ++f)
        for (std::int64_t y = 0; y < h; ++y)
            for (std::int64_t x = 0; x < w; ++x)
                if (!win.contains(y, x))
                    for (std::int64_t ch = 0; ch < c; ++ch) {
                        std::int64_t i = ((f * h + y) * w + x) * c + ch;
                        out[i] = soft[i];
                    }
    return out;
}

double tool_share(Enhancement e, const ReferenceParams& p) {
    switch (e) {
        case Enhancement::kDeblur: return p.share_blur;
        case Enhancement::kDenoise: return p.share_noise;
        case Enhancement::kDeartifact: return p.share_block;
        case Enhancement::kNone: return 0.0;
    }
    return 0.0;
}

ReferenceParams draw_params(QualityTier tier, const WorksimConfig& cfg, Rng& rng) {
    ReferenceParams p;
    p.tier = tier;
    p.localized = cfg.localized;
    if (tier == QualityTier::kHigh) {
        p.base_quality = rng.uniform(cfg.high_base_min, cfg.high_base_max);
        double d = 5.0 - p.base_quality;
        p.blur_sigma = 0.4 * d;
        p.noise_sigma = 0.02 * d;
        return p;
    }
    p.base_quality = rng.uniform(cfg.low_base_min, cfg.low_base_max);
    // Heterogeneous impairment mix: random shares over blur / noise /
    // blockiness, scaled by the ground-truth severity.
    double u1 = rng.uniform(0.15, 1.0);
    double u2 = rng.uniform(0.15, 1.0);
    double u3 = rng.uniform(0.15, 1.0);
    double total = u1 + u2 + u3;
    p.share_blur = u1 / total;
    p.share_noise = u2 / total;
    p.share_block = u3 / total;
    double severity = (5.0 - p.base_quality) / 1.9;
    p.blur_sigma = 2.2 * p.share_blur * severity;
    p.noise_sigma = 0.16 * p.share_noise * severity;
    p.block_delta = 0.55 * p.share_block * severity;
    return p;
}

std::string format_id(const char* prefix, int index) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%s%03d", prefix, index);
    return buf;
}

}  // namespace

std::string to_string(QualityTier t) {
    return t == QualityTier::kHigh ? "high" : "low";
}

std::string to_string(Enhancement e) {
    switch (e) {
        case Enhancement::kNone: return "none";
        case Enhancement::kDeartifact: return "deartifact";
        case Enhancement::kDenoise: return "denoise";
        case Enhancement::kDeblur: return "deblur";
    }
    return "none";
}

std::string to_string(Preprocess p) {
    switch (p) {
        case Preprocess::kNone: return "none";
        case Preprocess::kGlobal: return "global";
        case Preprocess::kRoi: return "roi";
    }
    return "none";
}

QualityTier parse_tier(const std::string& s) {
    if (s == "high") return QualityTier::kHigh;
    if (s == "low") return QualityTier::kLow;
    throw InvalidArgument("worksim: unknown quality tier '" + s + "'");
}

Enhancement parse_enhancement(const std::string& s) {
    if (s == "none") return Enhancement::kNone;
    if (s == "deartifact") return Enhancement::kDeartifact;
    if (s == "denoise") return Enhancement::kDenoise;
    if (s == "deblur") return Enhancement::kDeblur;
    throw InvalidArgument("worksim: unknown enhancement '" + s + "'");
}

Preprocess parse_preprocess(const std::string& s) {
    if (s == "none") return Preprocess::kNone;
    if (s == "global") return Preprocess::kGlobal;
    if (s == "roi") return Preprocess::kRoi;
    throw InvalidArgument("worksim: unknown preprocess '" + s + "'");
}

void WorkflowRecipe::validate() const {
    check(qp_interval >= 0 && qp_interval < kNumIntervals,
          "worksim: qp interval out of range");
    auto [lo, hi] = kQpIntervals[static_cast<std::size_t>(qp_interval)];
    check(qp >= lo && qp <= hi, "worksim: qp outside its interval");
    if (tier == QualityTier::kHigh) {
        check(enhancement == Enhancement::kNone && preprocess == Preprocess::kNone,
              "worksim: high-tier recipes are transcode-only");
    } else {
        check(enhancement != Enhancement::kNone,
              "worksim: low-tier recipes carry exactly one enhancement tool");
    }
}

int WorkflowRecipe::group() const {
    if (tier == QualityTier::kHigh) return 1;
    return preprocess == Preprocess::kNone ? 2 : 3;
}

std::string WorkflowRecipe::pattern_label() const {
    std::string label;
    if (enhancement != Enhancement::kNone) label += to_string(enhancement) + "+";
    if (preprocess != Preprocess::kNone) label += to_string(preprocess) + "+";
    label += "qp" + std::to_string(qp_interval);
    return label;
}

void WorksimConfig::validate() const {
    check(n_refs >= 2, "worksim: need at least two references");
    check(clips_per_ref >= 1, "worksim: need at least one clip per reference");
    check(frames >= 1, "worksim: need at least one frame");
    check(height >= kBlock && width >= kBlock && height % kBlock == 0 &&
              width % kBlock == 0,
          "worksim: frame sides must be positive multiples of the 8-pixel block");
    check(high_fraction > 0.0 && high_fraction < 1.0,
          "worksim: both quality tiers must be populated");
    check(train_fraction > 0.0 && train_fraction < 1.0,
          "worksim: both splits must be populated");
    check(rank_pairs_per_kind >= 0, "worksim: negative rank-pair count");
    check(low_base_min >= 1.0 && low_base_max >= low_base_min &&
              high_base_min >= low_base_max && high_base_max >= high_base_min &&
              high_base_max <= 5.0,
          "worksim: base-quality ranges must be ordered inside [1, 5]");
    check(qp_penalty[0] >= 0.0 && prep_bonus[0] >= 0.0,
          "worksim: negative coefficients");
    for (int i = 0; i + 1 < kNumIntervals; ++i) {
        check(qp_penalty[static_cast<std::size_t>(i + 1)] >
                  qp_penalty[static_cast<std::size_t>(i)],
              "worksim: qp penalties must increase strictly");
        check(prep_bonus[static_cast<std::size_t>(i + 1)] >=
                  prep_bonus[static_cast<std::size_t>(i)],
              "worksim: preprocess bonuses must be non-decreasing");
    }
    check(recovery_base >= 0.0 && recovery_match >= 0.0,
          "worksim: negative recovery coefficients");

    // Structural margins. Without them the three corpus orderings would be
    // statistical claims about random group composition instead of theorems.
    check(recovery_base > qp_penalty[1],
          "worksim: recovery must exceed the second interval's penalty so "
          "enhanced clips beat their base quality there");
    check(high_base_min - qp_penalty[5] >= 1.0,
          "worksim: last-interval penalty would clamp high-tier scores");
    check(low_base_min - qp_penalty[5] + recovery_base >= 1.0,
          "worksim: last-interval penalty would clamp low-tier scores");
    for (int i = 0; i < kNumIntervals; ++i) {
        double top = low_base_max - qp_penalty[static_cast<std::size_t>(i)] +
                     recovery_base + recovery_match +
                     prep_bonus[static_cast<std::size_t>(i)];
        check(top <= 5.0, "worksim: coefficients would clamp scores at the ceiling");
    }
    // Group cells mix references, so group-3-minus-group-2 at interval i is
    // prep_bonus[i] plus a composition error bounded by the base span plus the
    // full recovery-match span, either sign. The last interval's bonus must
    // clear every other interval by twice that bound.
    double bound = (low_base_max - low_base_min) + recovery_match;
    for (int i = 0; i + 1 < kNumIntervals; ++i)
        check(prep_bonus[5] - prep_bonus[static_cast<std::size_t>(i)] >
                  2.0 * bound,
              "worksim: preprocess bonus at the last interval must dominate "
              "composition error");
}

io::Json WorksimConfig::to_json() const {
    io::Json j;
    j["n_refs"] = n_refs;
    j["clips_per_ref"] = clips_per_ref;
    j["frames"] = frames;
    j["height"] = height;
    j["width"] = width;
    j["high_fraction"] = high_fraction;
    j["train_fraction"] = train_fraction;
    j["localized"] = localized;
    j["rank_pairs_per_kind"] = rank_pairs_per_kind;
    j["qp_penalty"] = qp_penalty;
    j["prep_bonus"] = prep_bonus;
    j["recovery_base"] = recovery_base;
    j["recovery_match"] = recovery_match;
    j["low_base_min"] = low_base_min;
    j["low_base_max"] = low_base_max;
    j["high_base_min"] = high_base_min;
    j["high_base_max"] = high_base_max;
    return j;
}

WorksimConfig WorksimConfig::from_json(const io::Json& j) {
    WorksimConfig c;
    c.n_refs = j.value("n_refs", c.n_refs);
    c.clips_per_ref = j.value("clips_per_ref", c.clips_per_ref);
    c.frames = j.value("frames", c.frames);
    c.height = j.value("height", c.height);
    c.width = j.value("width", c.width);
    c.high_fraction = j.value("high_fraction", c.high_fraction);
    c.train_fraction = j.value("train_fraction", c.train_fraction);
    c.localized = j.value("localized", c.localized);
    c.rank_pairs_per_kind = j.value("rank_pairs_per_kind", c.rank_pairs_per_kind);
    if (j.contains("qp_penalty")) c.qp_penalty = j.at("qp_penalty");
    if (j.contains("prep_bonus")) c.prep_bonus = j.at("prep_bonus");
    c.recovery_base = j.value("recovery_base", c.recovery_base);
    c.recovery_match = j.value("recovery_match", c.recovery_match);
    c.low_base_min = j.value("low_base_min", c.low_base_min);
    c.low_base_max = j.value("low_base_max", c.low_base_max);
    c.high_base_min = j.value("high_base_min", c.high_base_min);
    c.high_base_max = j.value("high_base_max", c.high_base_max);
    c.validate();
    return c;
}

int sample_qp(int interval, Rng& rng) {
    check(interval >= 0 && interval < kNumIntervals,
          "worksim: qp interval out of range");
    auto [lo, hi] = kQpIntervals[static_cast<std::size_t>(interval)];
    return static_cast<int>(rng.uniform_int(lo, hi));
}

WorkflowRecipe build_recipe(QualityTier tier, Rng& rng) {
    int interval = static_cast<int>(rng.uniform_int(0, kNumIntervals - 1));
    return build_recipe(tier, interval, rng);
}

WorkflowRecipe build_recipe(QualityTier tier, int interval, Rng& rng) {
    WorkflowRecipe r;
    r.tier = tier;
    if (tier == QualityTier::kLow) {
        constexpr std::array<Enhancement, 3> kPool{
            Enhancement::kDeartifact, Enhancement::kDenoise, Enhancement::kDeblur};
        r.enhancement = kPool[static_cast<std::size_t>(rng.uniform_int(0, 2))];
        if (rng.uniform() < 0.5)
            r.preprocess =
                rng.uniform() < 0.5 ? Preprocess::kGlobal : Preprocess::kRoi;
    }
    r.qp_interval = interval;
    r.qp = sample_qp(interval, rng);
    r.validate();
    return r;
}

double transcode_delta(int qp) {
    return kTranscodeQ0 * std::exp2((qp - 16) / 6.0);
}

Tensor quantize_dct(const Tensor& frames, double delta) {
    check_frames(frames);
    if (delta <= 0.0) return frames;
    const auto& basis = dct_basis();
    std::int64_t t = frames.size(0), h = frames.size(1), w = frames.size(2),
                 c = frames.size(3);
    Tensor out = frames;
    double block[kBlock][kBlock], coef[kBlock][kBlock], tmp[kBlock][kBlock];
    for (std::int64_t f = 0; f < t; ++f)
        for (std::int64_t ch = 0; ch < c; ++ch)
            for (std::int64_t by = 0; by < h; by += kBlock)
                for (std::int64_t bx = 0; bx < w; bx += kBlock) {
                    for (int y = 0; y < kBlock; ++y)
                        for (int x = 0; x < kBlock; ++x)
                            block[y][x] =
                                frames[((f * h + by + y) * w + bx + x) * c + ch];
                    // coef = C * block * C^T, quantized, then inverted.
                    for (int y = 0; y < kBlock; ++y)
                        for (int x = 0; x < kBlock; ++x) {
                            double acc = 0.0;
                            for (int n = 0; n < kBlock; ++n)
                                acc += basis[static_cast<std::size_t>(y)]
                                            [static_cast<std::size_t>(n)] *
                                       block[n][x];
                            tmp[y][x] = acc;
                        }
                    for (int y = 0; y < kBlock; ++y)
                        for (int x = 0; x < kBlock; ++x) {
                            double acc = 0.0;
                            for (int n = 0; n < kBlock; ++n)
                                acc += tmp[y][n] * basis[static_cast<std::size_t>(x)]
                                                        [static_cast<std::size_t>(n)];
                            coef[y][x] = delta * std::round(acc / delta);
                        }
                    for (int y = 0; y < kBlock; ++y)
                        for (int x = 0; x < kBlock; ++x) {
                            double acc = 0.0;
                            for (int n = 0; n < kBlock; ++n)
                                acc += basis[static_cast<std::size_t>(n)]
                                            [static_cast<std::size_t>(y)] *
                                       coef[n][x];
                            tmp[y][x] = acc;
                        }
                    for (int y = 0; y < kBlock; ++y)
                        for (int x = 0; x < kBlock; ++x) {
                            double acc = 0.0;
                            for (int n = 0; n < kBlock; ++n)
                                acc += tmp[y][n] * basis[static_cast<std::size_t>(n)]
                                                        [static_cast<std::size_t>(x)];
                            out[((f * h + by + y) * w + bx + x) * c + ch] = acc;
                        }
                }
    return out;
}

double blockiness_energy(const Tensor& frames) {
    check_frames(frames);
    std::int64_t t = frames.size(0), h = frames.size(1), w = frames.size(2),
                 c = frames.size(3);
    double boundary = 0.0, interior = 0.0;
    std::int64_t nb = 0, ni = 0;
    auto px = [&](std::int64_t f, std::int64_t y, std::int64_t x, std::int64_t ch) {
        return frames[((f * h + y) * w + x) * c + ch];
    };
    for (std::int64_t f = 0; f < t; ++f)
        for (std::int64_t ch = 0; ch < c; ++ch) {
            for (std::int64_t y = 0; y < h; ++y)
                for (std::int64_t x = 1; x < w; ++x) {
                    double d = std::abs(px(f, y, x, ch) - px(f, y, x - 1, ch));
                    if (x % kBlock == 0) { boundary += d; ++nb; }
                    else { interior += d; ++ni; }
                }
            for (std::int64_t y = 1; y < h; ++y)
                for (std::int64_t x = 0; x < w; ++x) {
                    double d = std::abs(px(f, y, x, ch) - px(f, y - 1, x, ch));
                    if (y % kBlock == 0) { boundary += d; ++nb; }
                    else { interior += d; ++ni; }
                }
        }
    check(nb > 0 && ni > 0, "worksim: frame too small for blockiness statistic");
    return boundary / static_cast<double>(nb) - interior / static_cast<double>(ni);
}

VideoTensor apply(const WorkflowRecipe& recipe, const VideoTensor& reference,
                  Rng&) {
    recipe.validate();
    check_frames(reference.frames);
    Tensor cur = reference.frames;
    switch (recipe.enhancement) {
        case Enhancement::kNone: break;
        case Enhancement::kDenoise: cur = gaussian_blur(cur, kDenoiseSigma); break;
        case Enhancement::kDeblur: cur = deblur_surrogate(cur); break;
        case Enhancement::kDeartifact: cur = deartifact_surrogate(cur); break;
    }
    switch (recipe.preprocess) {
        case Preprocess::kNone: break;
        case Preprocess::kGlobal: cur = gaussian_blur(cur, kPrepGlobalSigma); break;
        case Preprocess::kRoi: cur = roi_attenuate(cur, kPrepRoiSigma); break;
    }
    cur = quantize_dct(cur, transcode_delta(recipe.qp));
    clamp01_inplace(cur);
    return VideoTensor{cur, reference.frame_interval, reference.source_id};
}

double pseudo_mos(const WorkflowRecipe& recipe, const ReferenceParams& params,
                  const WorksimConfig& config) {
    recipe.validate();
    check(params.tier == recipe.tier, "worksim: recipe tier does not match reference");
    double mos = params.base_quality -
                 config.qp_penalty[static_cast<std::size_t>(recipe.qp_interval)];
    if (recipe.enhancement != Enhancement::kNone)
        mos += config.recovery_base +
               config.recovery_match * tool_share(recipe.enhancement, params);
    if (recipe.preprocess != Preprocess::kNone)
        mos += config.prep_bonus[static_cast<std::size_t>(recipe.qp_interval)];
    return std::min(5.0, std::max(1.0, mos));
}

VideoTensor make_reference(const std::string& id, const ReferenceParams& params,
                           const WorksimConfig& config, Rng& rng) {
    std::int64_t t = config.frames, h = config.height, w = config.width;
    // Band-limited drifting gratings.
    struct Grating { double amp, fx, fy, phase, speed; };
    std::vector<Grating> gratings(4);
    for (auto& g : gratings) {
        g.amp = rng.uniform(0.06, 0.14);
        g.fx = rng.uniform(-6.0, 6.0);
        g.fy = rng.uniform(-6.0, 6.0);
        g.phase = rng.uniform(0.0, 2.0 * kPi);
        g.speed = rng.uniform(-0.6, 0.6);
    }
    // Drifting rectangles and disks give the frames edges and objects.
    struct Shape { bool disk; double cy, cx, size, value, vy, vx; };
    std::vector<Shape> shapes(5);
    for (std::size_t s = 0; s < shapes.size(); ++s) {
        auto& sh = shapes[s];
        sh.disk = s >= 3;
        sh.cy = rng.uniform(0.2, 0.8) * static_cast<double>(h);
        sh.cx = rng.uniform(0.2, 0.8) * static_cast<double>(w);
        sh.size = rng.uniform(static_cast<double>(h) / 10.0,
                              static_cast<double>(h) / 4.0);
        double mag = rng.uniform(0.12, 0.3);
        sh.value = rng.uniform() < 0.5 ? -mag : mag;
        sh.vy = rng.uniform(-1.0, 1.0);
        sh.vx = rng.uniform(-1.0, 1.0);
    }
    Window win = center_window(h, w);
    Tensor clean = Tensor::zeros({t, h, w, 1});
    for (std::int64_t f = 0; f < t; ++f)
        for (std::int64_t y = 0; y < h; ++y)
            for (std::int64_t x = 0; x < w; ++x) {
                double v = 0.5;
                for (const auto& g : gratings)
                    v += g.amp * std::sin(2.0 * kPi *
                                              (g.fx * static_cast<double>(x) /
                                                   static_cast<double>(w) +
                                               g.fy * static_cast<double>(y) /
                                                   static_cast<double>(h)) +
                                          g.phase +
                                          g.speed * static_cast<double>(f));
                for (const auto& sh : shapes) {
                    double dy = static_cast<double>(y) -
                                (sh.cy + sh.vy * static_cast<double>(f));
                    double dx = static_cast<double>(x) -
                                (sh.cx + sh.vx * static_cast<double>(f));
                    bool inside = sh.disk
                                      ? dy * dy + dx * dx <= sh.size * sh.size
                                      : std::abs(dy) <= sh.size &&
                                            std::abs(dx) <= sh.size;
                    if (inside) v += sh.value;
                }
                if (params.localized && !win.contains(y, x)) v = 0.5;
                clean[(f * h + y) * w + x] = clamp01(v);
            }

    // Base impairments: blur, then sensor noise, then blockiness. Localized
    // references keep the flat surround untouched so all quality signal stays
    // inside the center window.
    Tensor degraded = clean;
    if (params.blur_sigma > 0.0)
        degraded = gaussian_blur(degraded, params.blur_sigma);
    if (params.noise_sigma > 0.0)
        for (std::int64_t i = 0; i < degraded.numel(); ++i)
            degraded[i] += rng.normal(0.0, params.noise_sigma);
    if (params.block_delta > 0.0)
        degraded = quantize_dct(degraded, params.block_delta);
    clamp01_inplace(degraded);
    if (params.localized)
        for (std::int64_t f = 0; f < t; ++f)
            for (std::int64_t y = 0; y < h; ++y)
                for (std::int64_t x = 0; x < w; ++x)
                    if (!win.contains(y, x))
                        degraded[(f * h + y) * w + x] = clean[(f * h + y) * w + x];
    return VideoTensor{degraded, 1, id};
}

std::vector<std::int64_t> CorpusManifest::clip_shape() const {
    return {config.frames, config.height, config.width, 1};
}

io::Json CorpusManifest::to_json() const {
    io::Json j;
    j["config"] = config.to_json();
    j["clip_shape"] = clip_shape();
    io::Json refs = io::Json::array();
    for (const auto& r : references) {
        io::Json e;
        e["id"] = r.id;
        e["tier"] = to_string(r.params.tier);
        e["localized"] = r.params.localized;
        e["blur_sigma"] = r.params.blur_sigma;
        e["noise_sigma"] = r.params.noise_sigma;
        e["block_delta"] = r.params.block_delta;
        e["share_blur"] = r.params.share_blur;
        e["share_noise"] = r.params.share_noise;
        e["share_block"] = r.params.share_block;
        e["base_quality"] = r.params.base_quality;
        e["path"] = r.path;
        e["seed"] = r.seed;
        e["split"] = r.split;
        refs.push_back(std::move(e));
    }
    j["references"] = std::move(refs);
    io::Json clips_json = io::Json::array();
    for (const auto& c : clips) {
        io::Json e;
        e["id"] = c.id;
        e["reference"] = c.reference;
        e["tier"] = to_string(c.recipe.tier);
        e["enhancement"] = to_string(c.recipe.enhancement);
        e["preprocess"] = to_string(c.recipe.preprocess);
        e["qp_interval"] = c.recipe.qp_interval;
        e["qp"] = c.recipe.qp;
        e["pattern"] = c.recipe.pattern_label();
        e["group"] = c.recipe.group();
        e["mos"] = c.mos;
        e["path"] = c.path;
        e["seed"] = c.seed;
        e["split"] = c.split;
        clips_json.push_back(std::move(e));
    }
    j["clips"] = std::move(clips_json);
    return j;
}

CorpusManifest CorpusManifest::from_json(const io::Json& j) {
    CorpusManifest m;
    try {
        m.config = WorksimConfig::from_json(j.at("config"));
        for (const auto& e : j.at("references")) {
            ReferenceRecord r;
            r.id = e.at("id");
            r.params.tier = parse_tier(e.at("tier"));
            r.params.localized = e.at("localized");
            r.params.blur_sigma = e.at("blur_sigma");
            r.params.noise_sigma = e.at("noise_sigma");
            r.params.block_delta = e.at("block_delta");
            r.params.share_blur = e.at("share_blur");
            r.params.share_noise = e.at("share_noise");
            r.params.share_block = e.at("share_block");
            r.params.base_quality = e.at("base_quality");
            r.path = e.at("path");
            r.seed = e.at("seed");
            r.split = e.at("split");
            m.references.push_back(std::move(r));
        }
        for (const auto& e : j.at("clips")) {
            ClipRecord c;
            c.id = e.at("id");
            c.reference = e.at("reference");
            c.recipe.tier = parse_tier(e.at("tier"));
            c.recipe.enhancement = parse_enhancement(e.at("enhancement"));
            c.recipe.preprocess = parse_preprocess(e.at("preprocess"));
            c.recipe.qp_interval = e.at("qp_interval");
            c.recipe.qp = e.at("qp");
            c.recipe.validate();
            c.mos = e.at("mos");
            c.path = e.at("path");
            c.seed = e.at("seed");
            c.split = e.at("split");
            m.clips.push_back(std::move(c));
        }
    } catch (const io::Json::exception& e) {
        throw IoError(std::string("worksim: malformed manifest: ") + e.what());
    } catch (const InvalidArgument& e) {
        throw IoError(std::string("worksim: malformed manifest: ") + e.what());
    }
    return m;
}

TrendReport corpus_trends(const CorpusManifest& manifest) {
    std::unordered_map<std::string, const ReferenceParams*> params;
    for (const auto& r : manifest.references) params.emplace(r.id, &r.params);

    std::array<std::array<double, kNumIntervals>, 3> sum{};
    std::array<double, kNumIntervals> base_sum{};
    TrendReport rep;
    for (const auto& c : manifest.clips) {
        auto it = params.find(c.reference);
        check(it != params.end(), "worksim: clip references unknown video");
        std::size_t g = static_cast<std::size_t>(c.recipe.group() - 1);
        std::size_t i = static_cast<std::size_t>(c.recipe.qp_interval);
        sum[g][i] += c.mos;
        rep.count[g][i] += 1;
        if (g == 1) base_sum[i] += it->second->base_quality;
    }
    rep.complete = true;
    for (std::size_t g = 0; g < 3; ++g)
        for (std::size_t i = 0; i < kNumIntervals; ++i) {
            if (rep.count[g][i] == 0) {
                rep.mean[g][i] = std::numeric_limits<double>::quiet_NaN();
                rep.complete = false;
            } else {
                rep.mean[g][i] = sum[g][i] / rep.count[g][i];
            }
            if (g == 1)
                rep.group2_base[i] = rep.count[g][i] == 0
                                         ? std::numeric_limits<double>::quiet_NaN()
                                         : base_sum[i] / rep.count[g][i];
        }
    if (!rep.complete) return rep;

    rep.group1_strictly_decreasing = true;
    for (std::size_t i = 0; i + 1 < kNumIntervals; ++i)
        if (!(rep.mean[0][i] > rep.mean[0][i + 1]))
            rep.group1_strictly_decreasing = false;
    rep.enhancement_beats_base_low_qp =
        rep.mean[1][0] > rep.group2_base[0] && rep.mean[1][1] > rep.group2_base[1];
    rep.preprocess_gap_largest_last = true;
    double last_gap = rep.mean[2][5] - rep.mean[1][5];
    for (std::size_t i = 0; i + 1 < kNumIntervals; ++i)
        if (!(last_gap > rep.mean[2][i] - rep.mean[1][i]))
            rep.preprocess_gap_largest_last = false;
    return rep;
}

std::vector<RankPair> select_rank_pairs(const CorpusManifest& manifest,
                                        Rng& rng) {
    const auto& clips = manifest.clips;
    std::vector<RankPair> out;
    auto make_pair = [&](const ClipRecord& a, const ClipRecord& b, bool homog) {
        RankPair p;
        p.clip_a = a.id;
        p.clip_b = b.id;
        p.preferred = a.mos > b.mos ? a.id : b.id;
        p.homogeneous = homog;
        return p;
    };

    // Homogeneous: same reference, compression level order contradicts the
    // pseudo-MOS order (adaptive enhancement or preprocessing flipped it).
    std::map<std::string, std::vector<const ClipRecord*>> by_ref;
    for (const auto& c : clips) by_ref[c.reference].push_back(&c);
    std::vector<RankPair> homog;
    for (const auto& [ref, group] : by_ref)
        for (std::size_t i = 0; i < group.size(); ++i)
            for (std::size_t j = i + 1; j < group.size(); ++j) {
                const auto& a = *group[i];
                const auto& b = *group[j];
                double dm = a.mos - b.mos;
                if (a.recipe.qp == b.recipe.qp || std::abs(dm) < 1e-9) continue;
                if ((a.recipe.qp - b.recipe.qp) * dm > 0.0)
                    homog.push_back(make_pair(a, b, true));
            }
    rng.shuffle(homog);
    std::size_t want = static_cast<std::size_t>(manifest.config.rank_pairs_per_kind);
    if (homog.size() > want) homog.resize(want);
    if (homog.size() < want)
        emit_warning("worksim: only " + std::to_string(homog.size()) +
                     " homogeneous rank pairs available");
    out.insert(out.end(), homog.begin(), homog.end());

    // Non-homogeneous: different references, pseudo-MOS within half a point.
    std::set<std::pair<std::string, std::string>> seen;
    std::size_t found = 0, attempts = 0;
    std::size_t cap = 400 * std::max<std::size_t>(want, 1);
    while (found < want && attempts < cap && clips.size() >= 2) {
        ++attempts;
        const auto& a = clips[static_cast<std::size_t>(
            rng.uniform_int(0, static_cast<std::int64_t>(clips.size()) - 1))];
        const auto& b = clips[static_cast<std::size_t>(
            rng.uniform_int(0, static_cast<std::int64_t>(clips.size()) - 1))];
        if (a.reference == b.reference) continue;
        double dm = std::abs(a.mos - b.mos);
        if (dm >= 0.5 || dm < 1e-9) continue;
        auto key = a.id < b.id ? std::make_pair(a.id, b.id)
                               : std::make_pair(b.id, a.id);
        if (!seen.insert(key).second) continue;
        out.push_back(make_pair(a, b, false));
        ++found;
    }
    if (found < want)
        emit_warning("worksim: only " + std::to_string(found) +
                     " non-homogeneous rank pairs found");
    return out;
}

void save_rank_pairs(const std::string& path, const std::vector<RankPair>& pairs) {
    std::ostringstream os;
    os << "clip_a,clip_b,preferred,homogeneous\n";
    for (const auto& p : pairs)
        os << p.clip_a << ',' << p.clip_b << ',' << p.preferred << ','
           << (p.homogeneous ? 1 : 0) << '\n';
    io::save_text(path, os.str());
}

std::vector<RankPair> load_rank_pairs(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw IoError(path + ": empty rank-pair file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "clip_a,clip_b,preferred,homogeneous")
        throw IoError(path + ": expected rank-pair header");
    std::vector<RankPair> pairs;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string field;
        while (std::getline(ss, field, ',')) f.push_back(field);
        if (f.size() != 4) throw IoError(path + ": expected four fields per row");
        RankPair p;
        p.clip_a = f[0];
        p.clip_b = f[1];
        p.preferred = f[2];
        if (f[3] == "1") p.homogeneous = true;
        else if (f[3] == "0") p.homogeneous = false;
        else throw IoError(path + ": homogeneous flag must be 0 or 1");
        if (p.preferred != p.clip_a && p.preferred != p.clip_b)
            throw IoError(path + ": preferred clip is not part of the pair");
        pairs.push_back(std::move(p));
    }
    return pairs;
}

CorpusManifest generate_corpus(const WorksimConfig& config,
                               const std::string& out_dir, std::uint64_t seed) {
    config.validate();
    io::ensure_dir(out_dir);
    io::ensure_dir(out_dir + "/refs");
    io::ensure_dir(out_dir + "/clips");

    CorpusManifest m;
    m.config = config;

    Rng master(derive_seed(seed, "worksim/corpus"));
    int n_high = static_cast<int>(
        std::llround(config.high_fraction * config.n_refs));
    n_high = std::clamp(n_high, 1, config.n_refs - 1);
    std::vector<int> order(static_cast<std::size_t>(config.n_refs));
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    master.shuffle(order);
    std::vector<QualityTier> tier(order.size(), QualityTier::kLow);
    for (int k = 0; k < n_high; ++k)
        tier[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])] =
            QualityTier::kHigh;

    // Stratified split keeps both tiers represented on each side; every clip
    // of a reference inherits its reference's split.
    std::vector<std::string> split(order.size());
    for (QualityTier tr : {QualityTier::kHigh, QualityTier::kLow}) {
        std::vector<int> members;
        for (std::size_t r = 0; r < tier.size(); ++r)
            if (tier[r] == tr) members.push_back(static_cast<int>(r));
        master.shuffle(members);
        std::size_t n_train = static_cast<std::size_t>(std::llround(
            config.train_fraction * static_cast<double>(members.size())));
        n_train = std::clamp<std::size_t>(n_train, 1, members.size() - 1);
        for (std::size_t k = 0; k < members.size(); ++k)
            split[static_cast<std::size_t>(members[k])] =
                k < n_train ? "train" : "test";
    }

    std::vector<VideoTensor> videos;
    videos.reserve(order.size());
    for (int r = 0; r < config.n_refs; ++r) {
        ReferenceRecord rec;
        rec.id = format_id("r", r);
        rec.seed = derive_seed(seed, "worksim/ref", static_cast<std::uint64_t>(r));
        rec.split = split[static_cast<std::size_t>(r)];
        Rng rr(rec.seed);
        rec.params = draw_params(tier[static_cast<std::size_t>(r)], config, rr);
        VideoTensor vid = make_reference(rec.id, rec.params, config, rr);
        rec.path = "refs/" + rec.id + ".bin";
        io::save_clip_f32(out_dir + "/" + rec.path, vid.frames);
        videos.push_back(std::move(vid));
        m.references.push_back(std::move(rec));
    }

    for (int r = 0; r < config.n_refs; ++r) {
        const auto& ref = m.references[static_cast<std::size_t>(r)];
        for (int c = 0; c < config.clips_per_ref; ++c) {
            ClipRecord clip;
            clip.id = ref.id + "_c" + std::to_string(c);
            clip.reference = ref.id;
            clip.seed = derive_seed(
                seed, "worksim/clip",
                static_cast<std::uint64_t>(r) * 100000u +
                    static_cast<std::uint64_t>(c));
            clip.split = ref.split;
            Rng cr(clip.seed);
            clip.recipe = build_recipe(ref.params.tier, c % kNumIntervals, cr);
            clip.mos = pseudo_mos(clip.recipe, ref.params, config);
            VideoTensor processed =
                apply(clip.recipe, videos[static_cast<std::size_t>(r)], cr);
            clip.path = "clips/" + clip.id + ".bin";
            io::save_clip_f32(out_dir + "/" + clip.path, processed.frames);
            m.clips.push_back(std::move(clip));
        }
    }

    TrendReport trends = corpus_trends(m);
    if (trends.complete) {
        check(trends.group1_strictly_decreasing,
              "worksim: generated corpus lost the monotone quality trend");
        check(trends.enhancement_beats_base_low_qp,
              "worksim: generated corpus lost the enhancement recovery trend");
        check(trends.preprocess_gap_largest_last,
              "worksim: generated corpus lost the preprocessing rescue trend");
    } else {
        emit_warning(
            "worksim: corpus too small to populate every group-interval cell; "
            "quality trends not asserted");
    }

    Rng pr(derive_seed(seed, "worksim/pairs"));
    save_rank_pairs(out_dir + "/rank_pairs.csv", select_rank_pairs(m, pr));
    save_manifest(out_dir + "/manifest.json", m);
    return m;
}

void save_manifest(const std::string& path, const CorpusManifest& m) {
    io::save_json(path, m.to_json());
}

CorpusManifest load_manifest(const std::string& path) {
    return CorpusManifest::from_json(io::load_json(path));
}

}  // namespace fragvqa::worksim
