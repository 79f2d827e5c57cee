#pragma once

// Synthetic processed-video corpus generator. Mimics a UGC transcoding
// pipeline at desk scale: procedural texture references with known base
// degradations, enhancement / preprocessing / compression surrogates, and an
// analytic pseudo-MOS whose group-level orderings hold by construction.
//
// Workflow shapes. High-quality references are transcoded directly; low
// quality references first pass one enhancement tool (de-artifact, denoise,
// deblur), then optional preprocessing (global or ROI high-frequency
// attenuation, probability 0.5), then transcoding. The QP range 16..47 is
// split into six intervals and each clip draws one QP from its interval.
//
// Every generated corpus is checked for three orderings before it is
// written: mean pseudo-MOS of the transcode-only group strictly decreases
// over the six intervals; enhanced clips beat their references' base quality
// at the two lowest-QP intervals; and the preprocessed group's margin over
// the unpreprocessed group peaks at the last interval.

#include "fragvqa/common.hpp"
#include "fragvqa/fragments.hpp"
#include "fragvqa/io.hpp"
#include "fragvqa/rng.hpp"
#include "fragvqa/tensor.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace fragvqa::worksim {

using fragments::VideoTensor;

enum class QualityTier { kHigh, kLow };
enum class Enhancement { kNone, kDeartifact, kDenoise, kDeblur };
enum class Preprocess { kNone, kGlobal, kRoi };

std::string to_string(QualityTier t);
std::string to_string(Enhancement e);
std::string to_string(Preprocess p);
QualityTier parse_tier(const std::string& s);
Enhancement parse_enhancement(const std::string& s);
Preprocess parse_preprocess(const std::string& s);

// One processing chain. High tier means transcode-only; low tier always
// carries exactly one enhancement tool and may add preprocessing before the
// final transcode. qp must lie inside its interval.
struct WorkflowRecipe {
    QualityTier tier = QualityTier::kHigh;
    Enhancement enhancement = Enhancement::kNone;
    Preprocess preprocess = Preprocess::kNone;
    int qp_interval = 0;  // 0..5
    int qp = 16;

    void validate() const;
    // 1: transcode only, 2: enhance + transcode, 3: enhance + preprocess +
    // transcode.
    int group() const;
    // Canonical chain string, e.g. "qp2", "denoise+qp4", "deblur+roi+qp5".
    // Clips sharing a label went through the same processing pattern.
    std::string pattern_label() const;
};

// Known quality ground truth for one reference. Strengths drive the pixel
// surrogates; shares (summing to 1 for low tier) say which impairment
// dominates and how well a matching enhancement tool can recover it.
struct ReferenceParams {
    QualityTier tier = QualityTier::kHigh;
    bool localized = false;  // impairments confined to the center window
    double blur_sigma = 0.0;
    double noise_sigma = 0.0;
    double block_delta = 0.0;
    double share_blur = 0.0;
    double share_noise = 0.0;
    double share_block = 0.0;
    double base_quality = 5.0;  // pseudo-MOS of the untouched reference
};

// Pseudo-MOS coefficients and corpus shape. The coefficients live here, not
// in code, so a config file can recalibrate them; validate() enforces the
// margins that make the three corpus orderings structural rather than
// statistical. Group means mix references with different base qualities and
// recovery bonuses, so each ordering must survive the worst adversarial
// composition of a group cell; the checks below bound that composition error
// by the base-quality span plus the recovery span and require the coefficient
// margins to exceed twice the bound.
struct WorksimConfig {
    int n_refs = 50;
    int clips_per_ref = 6;  // interval of clip c is c mod 6
    int frames = 8;
    int height = 64;
    int width = 64;
    double high_fraction = 0.5;
    double train_fraction = 0.8;  // split partitions by reference id
    bool localized = false;
    int rank_pairs_per_kind = 25;

    // mos = base - qp_penalty[i] (+ recovery_base + recovery_match * share)
    //       (+ prep_bonus[i]), clamped to [1, 5].
    std::array<double, 6> qp_penalty{0.05, 0.22, 0.55, 0.95, 1.45, 2.10};
    std::array<double, 6> prep_bonus{0.0, 0.05, 0.12, 0.25, 0.70, 1.40};
    double recovery_base = 0.35;
    double recovery_match = 0.10;
    double low_base_min = 3.1;  // base-quality draw ranges per tier
    double low_base_max = 3.3;
    double high_base_min = 4.5;
    double high_base_max = 5.0;

    void validate() const;
    io::Json to_json() const;
    static WorksimConfig from_json(const io::Json& j);
};

// QP intervals, inclusive bounds.
constexpr int kNumIntervals = 6;
constexpr std::array<std::pair<int, int>, kNumIntervals> kQpIntervals{
    {{16, 23}, {24, 31}, {32, 35}, {36, 39}, {40, 43}, {44, 47}}};

int sample_qp(int interval, Rng& rng);

// High tier: transcode-only at a uniformly drawn interval. Low tier: uniform
// tool from the three-way pool, preprocessing with probability 0.5 (global or
// ROI equally likely), then a drawn interval. The two-argument form draws the
// interval itself; the pinned form is what corpus generation uses to cover
// every interval.
WorkflowRecipe build_recipe(QualityTier tier, Rng& rng);
WorkflowRecipe build_recipe(QualityTier tier, int interval, Rng& rng);

// Uniform quantizer step for the compression surrogate: 0.02 at qp 16,
// doubling every six qp.
double transcode_delta(int qp);

// Cascade transcode(preprocess(enhance(x))). Deterministic; the rng parameter
// is part of the processing interface but the surrogates consume no draws.
VideoTensor apply(const WorkflowRecipe& recipe, const VideoTensor& reference,
                  Rng& rng);

// Blockwise 8x8 DCT quantization with uniform step delta; delta <= 0 is the
// identity hook. H and W must be multiples of 8.
Tensor quantize_dct(const Tensor& frames, double delta);

// Mean absolute jump across 8-pixel block boundaries minus the same statistic
// at interior offsets. Rises with quantization strength.
double blockiness_energy(const Tensor& frames);

double pseudo_mos(const WorkflowRecipe& recipe, const ReferenceParams& params,
                  const WorksimConfig& config);

// Procedural reference: drifting band-limited gratings plus geometric shapes,
// degraded per params. Localized references keep a flat surround so all
// quality signal sits in the center half-window.
VideoTensor make_reference(const std::string& id, const ReferenceParams& params,
                           const WorksimConfig& config, Rng& rng);

struct ReferenceRecord {
    std::string id;
    ReferenceParams params;
    std::string path;  // relative to the corpus root
    std::uint64_t seed = 0;
    std::string split;  // "train" or "test"
};

struct ClipRecord {
    std::string id;
    std::string reference;
    WorkflowRecipe recipe;
    double mos = 0.0;
    std::string path;
    std::uint64_t seed = 0;
    std::string split;
};

struct RankPair {
    std::string clip_a;
    std::string clip_b;
    std::string preferred;  // id of the higher pseudo-MOS clip
    bool homogeneous = false;
};

struct CorpusManifest {
    WorksimConfig config;
    std::vector<ReferenceRecord> references;
    std::vector<ClipRecord> clips;

    std::vector<std::int64_t> clip_shape() const;
    io::Json to_json() const;
    static CorpusManifest from_json(const io::Json& j);
};

// Per-group per-interval pseudo-MOS means and the three ordering checks.
// complete is false when some required cell has no clips (tiny corpora);
// the orderings are only asserted when complete.
struct TrendReport {
    std::array<std::array<double, kNumIntervals>, 3> mean{};  // [group-1][i]
    std::array<std::array<int, kNumIntervals>, 3> count{};
    std::array<double, kNumIntervals> group2_base{};  // mean ref base quality
    bool group1_strictly_decreasing = false;
    bool enhancement_beats_base_low_qp = false;  // intervals 0 and 1
    bool preprocess_gap_largest_last = false;
    bool complete = false;
};

TrendReport corpus_trends(const CorpusManifest& manifest);

// Writes refs/<id>.bin, clips/<id>.bin, manifest.json and rank_pairs.csv
// under out_dir, asserting the trend orderings when computable.
CorpusManifest generate_corpus(const WorksimConfig& config,
                               const std::string& out_dir, std::uint64_t seed);

void save_manifest(const std::string& path, const CorpusManifest& m);
CorpusManifest load_manifest(const std::string& path);

std::vector<RankPair> select_rank_pairs(const CorpusManifest& manifest,
                                        Rng& rng);
void save_rank_pairs(const std::string& path,
                     const std::vector<RankPair>& pairs);
std::vector<RankPair> load_rank_pairs(const std::string& path);

}  // namespace fragvqa::worksim
