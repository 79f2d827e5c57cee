#pragma once

#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fragvqa/tensor.hpp"

namespace fragvqa::subjective {

// Observers x videos rating table with a presence mask. Ratings are on
// [1, 5] in 0.5 steps; absent cells hold 0 with mask 0.
struct RatingMatrix {
    Tensor scores;   // [O, V]
    Tensor present;  // [O, V], entries 0 or 1
    std::vector<std::string> observer_ids;
    std::vector<std::string> video_ids;

    std::int64_t observers() const { return scores.rank() == 2 ? scores.size(0) : 0; }
    std::int64_t videos() const { return scores.rank() == 2 ? scores.size(1) : 0; }
    bool has(std::int64_t o, std::int64_t v) const { return present.at({o, v}) != 0.0; }
    void validate() const;  // shape, mask, range/step invariants
};

// Per-observer agreement with the leave-one-out consensus.
struct GateEntry {
    std::string observer;
    double srocc = 0.0;
    double plcc = 0.0;
    bool retrain = false;  // either correlation below threshold
};
struct GateReport {
    double threshold = 0.7;
    std::vector<GateEntry> entries;
};

// Observer screening counts: ratings beyond alpha standard deviations of the
// per-video mean, tallied over the videos the observer rated.
struct ScreenEntry {
    std::string observer;
    int p = 0;              // rated above the range
    int q = 0;              // rated below the range
    int rated = 0;          // J: screenable videos this observer rated
    double ratio = 0.0;     // |p - q| / (p + q), 0 when p + q == 0
    double fraction = 0.0;  // (p + q) / J
    bool rejected = false;
};
struct ScreenReport {
    bool strict_transcription = false;
    std::vector<double> alpha;  // per video; 0 marks a skipped video
    std::vector<ScreenEntry> entries;
};

struct Removal {
    std::string observer;
    std::string video;
    double score = 0.0;
};

struct MosEntry {
    std::string video;
    double mos = 0.0;
    int ratings = 0;
    bool scorable = false;
};

struct CleanResult {
    GateReport gate;  // informative: flagged observers retrain, data stays
    ScreenReport screening;
    std::vector<Removal> trimmed;
    std::vector<MosEntry> mos;
    RatingMatrix cleaned;
};

// Correlation of each observer against the mean of the other observers on
// commonly rated videos. Flags (not removes) observers under the threshold.
GateReport observer_gate(const RatingMatrix& rm, double threshold = 0.7);

// Screening counts P/Q per observer. alpha per video is 2 when the rating
// kurtosis is normal-like (within [2, 4]) and sqrt(20) otherwise. Videos with
// fewer than two ratings are skipped with a warning; zero-variance videos are
// skipped silently (a zero-width band would count every rating on both
// sides). The default counts below-range ratings against the symmetric lower
// bound (<= mean - alpha*std); strict_transcription compares against the
// upper bound instead, reproducing a sign typo in the published description
// of the procedure, and exists for the transcription-agreement test.
ScreenReport bt500_screen(const RatingMatrix& rm, bool strict_transcription = false);

// Drops every rating of the rejected observers.
RatingMatrix apply_screen(const RatingMatrix& rm, const ScreenReport& report);

// Removes ratings outside the open 95% interval (mean - delta, mean + delta),
// delta = 1.96 * sample_std / sqrt(N), computed once from pre-trim statistics.
// Zero-variance and single-rating videos keep all ratings.
std::pair<RatingMatrix, std::vector<Removal>> ci_trim(const RatingMatrix& rm);

// Mean of surviving ratings; videos with none are marked unscorable.
std::vector<MosEntry> compute_mos(const RatingMatrix& rm);

// gate -> screen -> trim -> MOS. Rejected observers' rows are dropped from
// the cleaned table; trimmed cells are masked out.
CleanResult clean(const RatingMatrix& rm, bool strict_transcription = false);

// CSV rows "observer_id,video_id,score" with a header line.
RatingMatrix load_ratings_csv(const std::string& path);
void save_ratings_csv(const RatingMatrix& rm, const std::string& path);
void save_mos_csv(const std::vector<MosEntry>& mos, const std::string& path);
nlohmann::ordered_json report_json(const CleanResult& r);

}  // namespace fragvqa::subjective
