#include <doctest.h>

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "fragvqa/common.hpp"
#include "fragvqa/io.hpp"
#include "fragvqa/rng.hpp"
#include "fragvqa/worksim.hpp"

using namespace fragvqa;
using namespace fragvqa::worksim;

namespace {

struct WarningCapture {
    std::vector<std::string> messages;
    WarningCapture() {
        set_warning_handler([this](const std::string& m) { messages.push_back(m); });
    }
    ~WarningCapture() { set_warning_handler({}); }
};

std::string temp_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("worksim_" + name);
    std::filesystem::remove_all(p);
    return p.string();
}

// Small frames keep corpus tests fast; the pseudo-MOS math never looks at
// pixel sizes.
WorksimConfig small_config(int n_refs) {
    WorksimConfig c;
    c.n_refs = n_refs;
    c.frames = 2;
    c.height = 32;
    c.width = 32;
    return c;
}

double psnr(const Tensor& a, const Tensor& b) {
    REQUIRE(a.numel() == b.numel());
    double mse = 0.0;
    for (std::int64_t i = 0; i < a.numel(); ++i) {
        double d = a[i] - b[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.numel());
    return 10.0 * std::log10(1.0 / mse);
}

VideoTensor clean_reference(std::uint64_t seed, const WorksimConfig& cfg) {
    Rng rng(seed);
    ReferenceParams p;
    p.tier = QualityTier::kHigh;
    p.base_quality = 5.0;
    return make_reference("clean", p, cfg, rng);
}

WorkflowRecipe transcode_only(int interval, int qp) {
    WorkflowRecipe r;
    r.tier = QualityTier::kHigh;
    r.qp_interval = interval;
    r.qp = qp;
    return r;
}

WorkflowRecipe enhanced(Enhancement tool, int interval, int qp,
                        Preprocess prep = Preprocess::kNone) {
    WorkflowRecipe r;
    r.tier = QualityTier::kLow;
    r.enhancement = tool;
    r.preprocess = prep;
    r.qp_interval = interval;
    r.qp = qp;
    return r;
}

}  // namespace

TEST_CASE("qp draws stay inside their interval") {
    for (int i = 0; i < kNumIntervals; ++i) {
        auto [lo, hi] = kQpIntervals[static_cast<std::size_t>(i)];
        Rng rng(100 + static_cast<std::uint64_t>(i));
        int seen_lo = 0, seen_hi = 0;
        for (int n = 0; n < 500; ++n) {
            int qp = sample_qp(i, rng);
            REQUIRE(qp >= lo);
            REQUIRE(qp <= hi);
            seen_lo += qp == lo;
            seen_hi += qp == hi;
        }
        CHECK(seen_lo > 0);
        CHECK(seen_hi > 0);
    }

    // The draw is exactly one uniform integer over the interval bounds, so a
    // replayed generator must reproduce the sequence.
    Rng a(424242), b(424242);
    for (int n = 0; n < 200; ++n) {
        int i = n % kNumIntervals;
        auto [lo, hi] = kQpIntervals[static_cast<std::size_t>(i)];
        CHECK(sample_qp(i, a) == static_cast<int>(b.uniform_int(lo, hi)));
    }

    Rng rng(1);
    CHECK_THROWS_AS((void)sample_qp(-1, rng), InvalidArgument);
    CHECK_THROWS_AS((void)sample_qp(6, rng), InvalidArgument);
}

TEST_CASE("recipes follow the tier rules") {
    SUBCASE("high tier transcodes only") {
        Rng rng(7);
        std::set<int> intervals;
        for (int n = 0; n < 600; ++n) {
            WorkflowRecipe r = build_recipe(QualityTier::kHigh, rng);
            CHECK(r.enhancement == Enhancement::kNone);
            CHECK(r.preprocess == Preprocess::kNone);
            CHECK(r.group() == 1);
            CHECK(r.pattern_label() == "qp" + std::to_string(r.qp_interval));
            auto [lo, hi] = kQpIntervals[static_cast<std::size_t>(r.qp_interval)];
            CHECK(r.qp >= lo);
            CHECK(r.qp <= hi);
            intervals.insert(r.qp_interval);
        }
        CHECK(intervals.size() == 6);
    }

    SUBCASE("low tier draws one tool and preprocesses half the time") {
        Rng rng(8);
        int n = 10000;
        int with_prep = 0, roi = 0;
        std::map<Enhancement, int> tools;
        for (int k = 0; k < n; ++k) {
            WorkflowRecipe r = build_recipe(QualityTier::kLow, rng);
            REQUIRE(r.enhancement != Enhancement::kNone);
            tools[r.enhancement]++;
            if (r.preprocess != Preprocess::kNone) {
                ++with_prep;
                roi += r.preprocess == Preprocess::kRoi;
                CHECK(r.group() == 3);
            } else {
                CHECK(r.group() == 2);
            }
            // The label names the tool, the optional preprocess, and the
            // interval, in application order.
            std::string want = to_string(r.enhancement) + "+";
            if (r.preprocess != Preprocess::kNone)
                want += to_string(r.preprocess) + "+";
            want += "qp" + std::to_string(r.qp_interval);
            CHECK(r.pattern_label() == want);
        }
        double prep_freq = static_cast<double>(with_prep) / n;
        CHECK(prep_freq > 0.48);
        CHECK(prep_freq < 0.52);
        double roi_freq = static_cast<double>(roi) / with_prep;
        CHECK(roi_freq > 0.45);
        CHECK(roi_freq < 0.55);
        for (auto [tool, count] : tools) {
            double f = static_cast<double>(count) / n;
            CHECK(f > 0.31);
            CHECK(f < 0.36);
        }
    }

    SUBCASE("invalid recipes are rejected") {
        WorkflowRecipe r = transcode_only(0, 16);
        r.enhancement = Enhancement::kDenoise;
        CHECK_THROWS_AS(r.validate(), InvalidArgument);

        WorkflowRecipe low = enhanced(Enhancement::kDeblur, 2, 33);
        low.enhancement = Enhancement::kNone;
        CHECK_THROWS_AS(low.validate(), InvalidArgument);

        CHECK_THROWS_AS(transcode_only(0, 24).validate(), InvalidArgument);
        CHECK_THROWS_AS(transcode_only(6, 47).validate(), InvalidArgument);

        Rng rng(3);
        WorkflowRecipe pinned = build_recipe(QualityTier::kLow, 4, rng);
        CHECK(pinned.qp_interval == 4);
        CHECK(pinned.qp >= 40);
        CHECK(pinned.qp <= 43);
    }
}

TEST_CASE("pseudo scores respect the workflow structure") {
    WorksimConfig cfg;
    ReferenceParams low;
    low.tier = QualityTier::kLow;
    low.base_quality = 3.2;
    low.share_blur = 0.5;
    low.share_noise = 0.3;
    low.share_block = 0.2;
    ReferenceParams high;
    high.base_quality = 4.8;

    SUBCASE("hand-computed value") {
        WorkflowRecipe r = enhanced(Enhancement::kDenoise, 4, 41, Preprocess::kGlobal);
        // 3.2 - 1.45 + 0.35 + 0.1 * 0.3 + 0.70
        CHECK(pseudo_mos(r, low, cfg) == doctest::Approx(2.83).epsilon(1e-12));
        CHECK(pseudo_mos(transcode_only(3, 38), high, cfg) ==
              doctest::Approx(4.8 - 0.95).epsilon(1e-12));
    }

    SUBCASE("monotone in qp interval for a fixed chain, exhaustively") {
        double prev_high = 6.0, prev_low = 6.0;
        for (int i = 0; i < kNumIntervals; ++i) {
            int qp = kQpIntervals[static_cast<std::size_t>(i)].first;
            double mh = pseudo_mos(transcode_only(i, qp), high, cfg);
            double ml = pseudo_mos(enhanced(Enhancement::kDeblur, i, qp), low, cfg);
            CHECK(mh < prev_high);
            CHECK(ml < prev_low);
            prev_high = mh;
            prev_low = ml;
        }
        double first = pseudo_mos(transcode_only(0, 16), high, cfg);
        double last = pseudo_mos(transcode_only(5, 44), high, cfg);
        CHECK(first > last);
    }

    SUBCASE("enhancement lifts low-qp clips above their base quality") {
        for (int i : {0, 1}) {
            int qp = kQpIntervals[static_cast<std::size_t>(i)].first;
            for (Enhancement tool : {Enhancement::kDeartifact, Enhancement::kDenoise,
                                     Enhancement::kDeblur})
                CHECK(pseudo_mos(enhanced(tool, i, qp), low, cfg) > low.base_quality);
        }
    }

    SUBCASE("preprocessing rescue peaks at the last interval") {
        auto gap = [&](int i) {
            int qp = kQpIntervals[static_cast<std::size_t>(i)].first;
            return pseudo_mos(enhanced(Enhancement::kDenoise, i, qp,
                                       Preprocess::kRoi),
                              low, cfg) -
                   pseudo_mos(enhanced(Enhancement::kDenoise, i, qp), low, cfg);
        };
        double last = gap(5);
        CHECK(last > gap(0));
        for (int i = 0; i < 5; ++i) CHECK(last > gap(i));
    }

    SUBCASE("scores are clamped into the rating range") {
        ReferenceParams awful = low;
        awful.base_quality = 1.2;
        CHECK(pseudo_mos(enhanced(Enhancement::kDenoise, 5, 47), awful, cfg) == 1.0);
        ReferenceParams stellar = low;
        stellar.base_quality = 5.0;
        CHECK(pseudo_mos(enhanced(Enhancement::kDenoise, 0, 16, Preprocess::kRoi),
                         stellar, cfg) <= 5.0);
    }

    SUBCASE("tier mismatch is rejected") {
        CHECK_THROWS_AS((void)pseudo_mos(transcode_only(0, 16), low, cfg),
                        InvalidArgument);
        CHECK_THROWS_AS(
            (void)pseudo_mos(enhanced(Enhancement::kDenoise, 0, 16), high, cfg),
            InvalidArgument);
    }

    SUBCASE("coefficient margins are enforced") {
        WorksimConfig bad = cfg;
        bad.recovery_base = 0.2;  // below the second interval's penalty
        CHECK_THROWS_AS(bad.validate(), InvalidArgument);

        bad = cfg;
        bad.prep_bonus[5] = bad.prep_bonus[4] + 0.1;  // inside composition noise
        CHECK_THROWS_AS(bad.validate(), InvalidArgument);

        bad = cfg;
        bad.qp_penalty[3] = bad.qp_penalty[2];  // not strictly increasing
        CHECK_THROWS_AS(bad.validate(), InvalidArgument);

        bad = cfg;
        bad.qp_penalty[5] = 4.0;  // would clamp high-tier scores at the floor
        CHECK_THROWS_AS(bad.validate(), InvalidArgument);

        bad = cfg;
        bad.height = 30;  // not a block multiple
        CHECK_THROWS_AS(bad.validate(), InvalidArgument);

        bad = cfg;
        bad.low_base_max = bad.high_base_min + 0.5;  // overlapping tiers
        CHECK_THROWS_AS(bad.validate(), InvalidArgument);

        bad = cfg;
        bad.n_refs = 1;
        CHECK_THROWS_AS(bad.validate(), InvalidArgument);

        bad = cfg;
        bad.high_fraction = 1.0;
        CHECK_THROWS_AS(bad.validate(), InvalidArgument);
    }
}

TEST_CASE("compression artifacts grow with qp") {
    WorksimConfig cfg;
    VideoTensor ref = clean_reference(11, cfg);

    SUBCASE("blockiness rises from the first to the last interval") {
        for (std::uint64_t seed : {5ull, 6ull}) {
            Rng rng(seed);
            WorkflowRecipe lo = transcode_only(0, sample_qp(0, rng));
            WorkflowRecipe hi = transcode_only(5, sample_qp(5, rng));
            double b_lo = blockiness_energy(apply(lo, ref, rng).frames);
            double b_hi = blockiness_energy(apply(hi, ref, rng).frames);
            CHECK(b_hi > b_lo);
            CHECK(b_hi > 0.02);
        }
    }

    SUBCASE("zero quantizer strength is the identity") {
        Tensor out = quantize_dct(ref.frames, 0.0);
        REQUIRE(out.numel() == ref.frames.numel());
        for (std::int64_t i = 0; i < out.numel(); ++i)
            CHECK(out[i] == ref.frames[i]);
    }

    SUBCASE("processing is deterministic") {
        Rng r1(9), r2(9);
        WorkflowRecipe rec = enhanced(Enhancement::kDeblur, 3, 37, Preprocess::kRoi);
        Tensor a = apply(rec, ref, r1).frames;
        Tensor b = apply(rec, ref, r2).frames;
        for (std::int64_t i = 0; i < a.numel(); ++i) REQUIRE(a[i] == b[i]);

        WorkflowRecipe other = rec;
        other.qp = 39;
        Tensor c = apply(other, ref, r1).frames;
        bool differs = false;
        for (std::int64_t i = 0; i < a.numel(); ++i) differs |= a[i] != c[i];
        CHECK(differs);
    }
}

TEST_CASE("enhancement surrogates recover their matching impairments") {
    WorksimConfig cfg;
    VideoTensor clean = clean_reference(21, cfg);
    // Same qp for both paths so only the enhancement differs.
    WorkflowRecipe plain = transcode_only(1, 24);
    Rng rng(5);

    SUBCASE("denoise raises fidelity on a noisy reference") {
        Rng nr(3);
        Tensor noisy = clean.frames;
        for (std::int64_t i = 0; i < noisy.numel(); ++i)
            noisy[i] = std::min(1.0, std::max(0.0, noisy[i] + nr.normal(0.0, 0.12)));
        VideoTensor nv{noisy, 1, "noisy"};
        double un = psnr(clean.frames, apply(plain, nv, rng).frames);
        double en = psnr(clean.frames,
                         apply(enhanced(Enhancement::kDenoise, 1, 24), nv, rng).frames);
        CHECK(en - un > 2.0);
    }

    SUBCASE("deblur raises fidelity on a blurred reference") {
        ReferenceParams p;
        p.tier = QualityTier::kLow;
        p.blur_sigma = 1.3;
        p.share_blur = 1.0;
        p.base_quality = 3.2;
        Rng rr(21);  // same texture as `clean`
        VideoTensor blurred = make_reference("clean", p, cfg, rr);
        double un = psnr(clean.frames, apply(plain, blurred, rng).frames);
        double en = psnr(clean.frames,
                         apply(enhanced(Enhancement::kDeblur, 1, 24), blurred, rng).frames);
        CHECK(en - un > 0.3);
    }

    SUBCASE("deartifact reduces blockiness on a blocky reference") {
        Tensor blocky = quantize_dct(clean.frames, 0.3);
        VideoTensor bv{blocky, 1, "blocky"};
        Tensor un = apply(plain, bv, rng).frames;
        Tensor en = apply(enhanced(Enhancement::kDeartifact, 1, 24), bv, rng).frames;
        CHECK(psnr(clean.frames, en) - psnr(clean.frames, un) > 0.1);
        CHECK(blockiness_energy(un) - blockiness_energy(en) > 0.02);
    }
}

TEST_CASE("corpus generation is deterministic and countable") {
    WarningCapture warnings;
    WorksimConfig cfg = small_config(10);
    std::string dir_a = temp_dir("det_a");
    std::string dir_b = temp_dir("det_b");
    CorpusManifest a = generate_corpus(cfg, dir_a, 77);
    CorpusManifest b = generate_corpus(cfg, dir_b, 77);

    SUBCASE("same seed reproduces the corpus bit for bit") {
        CHECK(a.to_json().dump() == b.to_json().dump());
        Tensor ta = io::load_clip_f32(dir_a + "/" + a.clips[17].path, a.clip_shape());
        Tensor tb = io::load_clip_f32(dir_b + "/" + b.clips[17].path, b.clip_shape());
        for (std::int64_t i = 0; i < ta.numel(); ++i) REQUIRE(ta[i] == tb[i]);

        CorpusManifest c = generate_corpus(cfg, temp_dir("det_c"), 78);
        bool some_mos_differs = false;
        for (std::size_t k = 0; k < c.clips.size(); ++k)
            some_mos_differs |= c.clips[k].mos != a.clips[k].mos;
        CHECK(some_mos_differs);
    }

    SUBCASE("counts, split, and labels") {
        CHECK(a.references.size() == 10);
        CHECK(a.clips.size() == 60);

        std::map<std::string, std::string> ref_split;
        std::map<std::string, QualityTier> ref_tier;
        int train_refs = 0;
        std::set<std::string> train_tiers, test_tiers;
        for (const auto& r : a.references) {
            ref_split[r.id] = r.split;
            ref_tier[r.id] = r.params.tier;
            train_refs += r.split == "train";
            (r.split == "train" ? train_tiers : test_tiers)
                .insert(to_string(r.params.tier));
            CHECK(std::filesystem::exists(dir_a + "/" + r.path));
        }
        CHECK(train_refs == 8);
        CHECK(train_tiers.size() == 2);
        CHECK(test_tiers.size() == 2);

        for (const auto& c : a.clips) {
            // Clips always follow their reference's split: the partition is
            // by content, never by clip.
            CHECK(c.split == ref_split.at(c.reference));
            CHECK(c.recipe.tier == ref_tier.at(c.reference));
            CHECK(c.mos >= 1.0);
            CHECK(c.mos <= 5.0);
            CHECK((c.recipe.group() >= 1 && c.recipe.group() <= 3));
            if (c.recipe.tier == QualityTier::kLow) {
                int tools = 0;
                for (const char* t : {"deartifact", "denoise", "deblur"})
                    tools += c.recipe.pattern_label().find(t) != std::string::npos;
                CHECK(tools == 1);
            } else {
                CHECK(c.recipe.group() == 1);
            }
            CHECK(std::filesystem::exists(dir_a + "/" + c.path));
        }

        Tensor clip = io::load_clip_f32(dir_a + "/" + a.clips[0].path, a.clip_shape());
        CHECK(clip.size(0) == cfg.frames);
        CHECK(clip.size(1) == cfg.height);
        CHECK(clip.size(2) == cfg.width);
    }
}

TEST_CASE("generated corpora exhibit the workflow quality trends") {
    WarningCapture warnings;
    for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
        WorksimConfig cfg = small_config(20);
        cfg.localized = seed == 3;  // trends are independent of localization
        CorpusManifest m =
            generate_corpus(cfg, temp_dir("trend_" + std::to_string(seed)), seed);
        TrendReport rep = corpus_trends(m);
        REQUIRE(rep.complete);
        CHECK(rep.group1_strictly_decreasing);
        CHECK(rep.enhancement_beats_base_low_qp);
        CHECK(rep.preprocess_gap_largest_last);

        // Recompute the group means from the manifest rows alone.
        std::map<std::string, double> base;
        for (const auto& r : m.references) base[r.id] = r.params.base_quality;
        std::array<std::array<double, 6>, 3> sum{};
        std::array<std::array<int, 6>, 3> cnt{};
        std::array<double, 6> base_sum{};
        for (const auto& c : m.clips) {
            auto g = static_cast<std::size_t>(c.recipe.group() - 1);
            auto i = static_cast<std::size_t>(c.recipe.qp_interval);
            sum[g][i] += c.mos;
            cnt[g][i] += 1;
            if (g == 1) base_sum[i] += base.at(c.reference);
        }
        for (std::size_t g = 0; g < 3; ++g)
            for (std::size_t i = 0; i < 6; ++i) {
                REQUIRE(cnt[g][i] == rep.count[g][i]);
                REQUIRE(cnt[g][i] > 0);
                CHECK(rep.mean[g][i] ==
                      doctest::Approx(sum[g][i] / cnt[g][i]).epsilon(1e-12));
            }
        for (std::size_t i = 0; i + 1 < 6; ++i)
            CHECK(sum[0][i] / cnt[0][i] > sum[0][i + 1] / cnt[0][i + 1]);
        for (std::size_t i : {std::size_t{0}, std::size_t{1}})
            CHECK(sum[1][i] / cnt[1][i] > base_sum[i] / cnt[1][i]);
        double last_gap = sum[2][5] / cnt[2][5] - sum[1][5] / cnt[1][5];
        for (std::size_t i = 0; i < 5; ++i)
            CHECK(last_gap > sum[2][i] / cnt[2][i] - sum[1][i] / cnt[1][i]);
    }
}

TEST_CASE("localized references confine the quality signal") {
    WorksimConfig cfg;
    cfg.localized = true;
    cfg.frames = 4;
    ReferenceParams p;
    p.tier = QualityTier::kHigh;
    p.localized = true;
    p.base_quality = 4.6;
    p.blur_sigma = 0.16;
    p.noise_sigma = 0.008;
    Rng rng(41);
    VideoTensor ref = make_reference("loc", p, cfg, rng);

    std::int64_t h = ref.h(), w = ref.w();
    auto inside = [&](std::int64_t y, std::int64_t x) {
        return y >= h / 4 && y < h - h / 4 && x >= w / 4 && x < w - w / 4;
    };

    // The surround is exactly flat in the reference.
    for (std::int64_t f = 0; f < ref.t(); ++f)
        for (std::int64_t y = 0; y < h; ++y)
            for (std::int64_t x = 0; x < w; ++x)
                if (!inside(y, x)) REQUIRE(ref.frames[(f * h + y) * w + x] == 0.5);

    // A transcode-only clip may shift the flat surround by a per-block DC
    // offset but adds no structure there; the center carries all variance.
    WorkflowRecipe rec = transcode_only(5, 47);
    Tensor out = apply(rec, ref, rng).frames;
    double out_min = 1e9, out_max = -1e9;
    double inside_var = 0.0, inside_mean = 0.0;
    std::int64_t n_in = 0;
    for (std::int64_t f = 0; f < ref.t(); ++f)
        for (std::int64_t y = 0; y < h; ++y)
            for (std::int64_t x = 0; x < w; ++x) {
                double d = out[(f * h + y) * w + x] - ref.frames[(f * h + y) * w + x];
                if (inside(y, x)) {
                    inside_mean += d;
                    inside_var += d * d;
                    ++n_in;
                } else {
                    out_min = std::min(out_min, d);
                    out_max = std::max(out_max, d);
                }
            }
    CHECK(out_max - out_min < 1e-9);
    CHECK(inside_var / static_cast<double>(n_in) > 1e-5);
}

TEST_CASE("manifest and rank pairs round-trip") {
    WarningCapture warnings;
    WorksimConfig cfg = small_config(12);
    std::string dir = temp_dir("roundtrip");
    CorpusManifest m = generate_corpus(cfg, dir, 99);

    SUBCASE("manifest file reloads to the same content") {
        CorpusManifest re = load_manifest(dir + "/manifest.json");
        CHECK(re.to_json().dump() == m.to_json().dump());
    }

    SUBCASE("rank pairs reference real clips with consistent preferences") {
        std::map<std::string, const ClipRecord*> by_id;
        for (const auto& c : m.clips) by_id[c.id] = &c;
        auto pairs = load_rank_pairs(dir + "/rank_pairs.csv");
        REQUIRE(!pairs.empty());
        int homog = 0;
        for (const auto& p : pairs) {
            REQUIRE(by_id.count(p.clip_a) == 1);
            REQUIRE(by_id.count(p.clip_b) == 1);
            const auto& a = *by_id[p.clip_a];
            const auto& b = *by_id[p.clip_b];
            const auto& better = p.preferred == p.clip_a ? a : b;
            const auto& worse = p.preferred == p.clip_a ? b : a;
            CHECK(better.mos > worse.mos);
            if (p.homogeneous) {
                ++homog;
                CHECK(a.reference == b.reference);
                // The inversion that makes the pair interesting: stronger
                // compression yet higher score.
                CHECK(better.recipe.qp > worse.recipe.qp);
            } else {
                CHECK(a.reference != b.reference);
                CHECK(std::abs(a.mos - b.mos) < 0.5);
            }
        }
        CHECK(homog > 0);
        CHECK(homog < static_cast<int>(pairs.size()));
    }

    SUBCASE("malformed files are rejected") {
        std::string bad = dir + "/bad.csv";
        io::save_text(bad, "clip_a,clip_b,winner,homogeneous\n");
        CHECK_THROWS_AS((void)load_rank_pairs(bad), IoError);
        io::save_text(bad, "clip_a,clip_b,preferred,homogeneous\nx,y,x\n");
        CHECK_THROWS_AS((void)load_rank_pairs(bad), IoError);
        io::save_text(bad, "clip_a,clip_b,preferred,homogeneous\nx,y,x,2\n");
        CHECK_THROWS_AS((void)load_rank_pairs(bad), IoError);
        io::save_text(bad, "clip_a,clip_b,preferred,homogeneous\nx,y,z,1\n");
        CHECK_THROWS_AS((void)load_rank_pairs(bad), IoError);
        CHECK_THROWS_AS((void)load_rank_pairs(dir + "/missing.csv"), IoError);

        io::Json broken = m.to_json();
        broken["clips"][0]["tier"] = "medium";
        io::save_json(dir + "/broken.json", broken);
        CHECK_THROWS_AS((void)load_manifest(dir + "/broken.json"), IoError);
        CHECK_THROWS_AS((void)load_manifest(dir + "/absent.json"), IoError);
    }

    SUBCASE("config json honors partial overrides") {
        WorksimConfig c = WorksimConfig::from_json(m.config.to_json());
        CHECK(c.to_json().dump() == m.config.to_json().dump());

        io::Json partial;
        partial["n_refs"] = 12;
        partial["localized"] = true;
        WorksimConfig d = WorksimConfig::from_json(partial);
        CHECK(d.n_refs == 12);
        CHECK(d.localized);
        CHECK(d.clips_per_ref == WorksimConfig{}.clips_per_ref);

        io::Json invalid = m.config.to_json();
        invalid["qp_penalty"] = {0.1, 0.1, 0.2, 0.3, 0.4, 0.5};
        CHECK_THROWS_AS((void)WorksimConfig::from_json(invalid), InvalidArgument);
    }
}
