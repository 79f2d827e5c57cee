#include "fragvqa/subjective.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <unordered_map>

#include "fragvqa/common.hpp"
#include "fragvqa/io.hpp"
#include "fragvqa/metrics.hpp"

namespace fragvqa::subjective {
namespace {

constexpr double kRatioCut = 0.3;     // below: extremes are balanced, not bias
constexpr double kFractionCut = 0.05; // above: extremes are frequent enough
constexpr double kCi95 = 1.96;

struct ColumnStats {
    int n = 0;
    double mean = 0.0;
    double sample_std = 0.0;  // N-1 denominator; 0 when n < 2
    double alpha = 0.0;       // screening width multiplier
};

ColumnStats column_stats(const RatingMatrix& rm, std::int64_t v) {
    ColumnStats cs;
    const std::int64_t o_count = rm.observers();
    const std::int64_t vids = rm.videos();
    const double* s = rm.scores.data();
    double sum = 0.0;
    for (std::int64_t o = 0; o < o_count; ++o) {
        if (!rm.has(o, v)) continue;
        sum += s[o * vids + v];
        ++cs.n;
    }
    if (cs.n == 0) return cs;
    cs.mean = sum / cs.n;
    double ss = 0.0, m4 = 0.0;
    for (std::int64_t o = 0; o < o_count; ++o) {
        if (!rm.has(o, v)) continue;
        double d = s[o * vids + v] - cs.mean;
        ss += d * d;
        m4 += d * d * d * d;
    }
    if (cs.n >= 2) cs.sample_std = std::sqrt(ss / (cs.n - 1));
    double m2 = ss / cs.n;
    m4 /= cs.n;
    // Normal-like columns screen at 2 sigma, heavier or lighter tails at
    // sqrt(20). Zero-variance columns take the normal branch; they are
    // excluded from screening anyway.
    double kurt = m2 <= 1e-12 ? 2.0 : m4 / (m2 * m2);
    cs.alpha = (kurt >= 2.0 && kurt <= 4.0) ? 2.0 : std::sqrt(20.0);
    return cs;
}

void check_unique(const std::vector<std::string>& ids, const std::string& what) {
    auto sorted = ids;
    std::sort(sorted.begin(), sorted.end());
    check(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end(),
          "duplicate " + what + " id in rating matrix");
}

}  // namespace

void RatingMatrix::validate() const {
    check(scores.rank() == 2, "rating matrix must be [observers, videos]");
    check(present.same_shape(scores), "presence mask shape " + present.shape_str() +
                                          " does not match scores " + scores.shape_str());
    check(observer_ids.size() == static_cast<std::size_t>(observers()),
          "observer id count does not match matrix rows");
    check(video_ids.size() == static_cast<std::size_t>(videos()),
          "video id count does not match matrix columns");
    check_unique(observer_ids, "observer");
    check_unique(video_ids, "video");
    const double* p = present.data();
    const double* s = scores.data();
    for (std::int64_t i = 0; i < scores.numel(); ++i) {
        check(p[i] == 0.0 || p[i] == 1.0, "presence mask entries must be 0 or 1");
        if (p[i] == 0.0) continue;
        check(s[i] >= 1.0 && s[i] <= 5.0, "rating " + std::to_string(s[i]) + " outside [1, 5]");
        check(std::abs(2.0 * s[i] - std::round(2.0 * s[i])) < 1e-9,
              "rating " + std::to_string(s[i]) + " is not a multiple of 0.5");
    }
}

GateReport observer_gate(const RatingMatrix& rm, double threshold) {
    rm.validate();
    check(rm.observers() >= 3, "observer gate needs at least three observers");
    GateReport rep;
    rep.threshold = threshold;
    for (std::int64_t i = 0; i < rm.observers(); ++i) {
        std::vector<double> own, others;
        for (std::int64_t v = 0; v < rm.videos(); ++v) {
            if (!rm.has(i, v)) continue;
            double sum = 0.0;
            int n = 0;
            for (std::int64_t o = 0; o < rm.observers(); ++o) {
                if (o == i || !rm.has(o, v)) continue;
                sum += rm.scores.at({o, v});
                ++n;
            }
            if (n == 0) continue;
            own.push_back(rm.scores.at({i, v}));
            others.push_back(sum / n);
        }
        check(own.size() >= 2, "observer " + rm.observer_ids[i] +
                                   " shares fewer than two videos with the rest of the panel");
        GateEntry e;
        e.observer = rm.observer_ids[i];
        try {
            e.srocc = metrics::srocc(own, others);
            e.plcc = metrics::plcc(own, others);
        } catch (const UndefinedValue&) {
            emit_warning("observer " + rm.observer_ids[i] +
                         " has a constant comparison; agreement recorded as 0");
            e.srocc = 0.0;
            e.plcc = 0.0;
        }
        e.retrain = e.srocc < threshold || e.plcc < threshold;
        rep.entries.push_back(std::move(e));
    }
    return rep;
}

ScreenReport bt500_screen(const RatingMatrix& rm, bool strict_transcription) {
    rm.validate();
    const std::int64_t o_count = rm.observers();
    const std::int64_t v_count = rm.videos();
    ScreenReport rep;
    rep.strict_transcription = strict_transcription;
    rep.alpha.assign(static_cast<std::size_t>(v_count), 0.0);

    std::vector<ColumnStats> stats(static_cast<std::size_t>(v_count));
    std::vector<char> screenable(static_cast<std::size_t>(v_count), 0);
    for (std::int64_t v = 0; v < v_count; ++v) {
        auto& cs = stats[static_cast<std::size_t>(v)];
        cs = column_stats(rm, v);
        if (cs.n == 1) {
            emit_warning("video " + rm.video_ids[static_cast<std::size_t>(v)] +
                         " has a single rating; screening skips it");
            continue;
        }
        if (cs.n < 2 || cs.sample_std <= 0.0) continue;
        screenable[static_cast<std::size_t>(v)] = 1;
        rep.alpha[static_cast<std::size_t>(v)] = cs.alpha;
    }

    for (std::int64_t i = 0; i < o_count; ++i) {
        ScreenEntry e;
        e.observer = rm.observer_ids[static_cast<std::size_t>(i)];
        for (std::int64_t v = 0; v < v_count; ++v) {
            if (!screenable[static_cast<std::size_t>(v)] || !rm.has(i, v)) continue;
            const auto& cs = stats[static_cast<std::size_t>(v)];
            ++e.rated;
            double u = rm.scores.at({i, v});
            double hi = cs.mean + cs.alpha * cs.sample_std;
            double lo = strict_transcription ? hi : cs.mean - cs.alpha * cs.sample_std;
            if (u >= hi) ++e.p;
            if (u <= lo) ++e.q;
        }
        int pq = e.p + e.q;
        e.ratio = pq == 0 ? 0.0 : std::abs(e.p - e.q) / static_cast<double>(pq);
        e.fraction = e.rated == 0 ? 0.0 : static_cast<double>(pq) / e.rated;
        e.rejected = pq > 0 && e.ratio < kRatioCut && e.fraction > kFractionCut;
        rep.entries.push_back(std::move(e));
    }
    return rep;
}

RatingMatrix apply_screen(const RatingMatrix& rm, const ScreenReport& report) {
    rm.validate();
    check(report.entries.size() == static_cast<std::size_t>(rm.observers()),
          "screening report does not cover every observer");
    RatingMatrix out = rm;
    for (std::int64_t i = 0; i < rm.observers(); ++i) {
        const auto& e = report.entries[static_cast<std::size_t>(i)];
        check(e.observer == rm.observer_ids[static_cast<std::size_t>(i)],
              "screening report observer order does not match the matrix");
        if (!e.rejected) continue;
        for (std::int64_t v = 0; v < rm.videos(); ++v) {
            out.present.at({i, v}) = 0.0;
            out.scores.at({i, v}) = 0.0;
        }
    }
    return out;
}

std::pair<RatingMatrix, std::vector<Removal>> ci_trim(const RatingMatrix& rm) {
    rm.validate();
    RatingMatrix out = rm;
    std::vector<Removal> removed;
    for (std::int64_t v = 0; v < rm.videos(); ++v) {
        auto cs = column_stats(rm, v);
        // Single ratings and zero-variance columns stay; a zero-width open
        // interval would otherwise discard every rating.
        if (cs.n < 2 || cs.sample_std <= 0.0) continue;
        double delta = kCi95 * cs.sample_std / std::sqrt(static_cast<double>(cs.n));
        for (std::int64_t o = 0; o < rm.observers(); ++o) {
            if (!rm.has(o, v)) continue;
            double u = rm.scores.at({o, v});
            if (u > cs.mean - delta && u < cs.mean + delta) continue;
            out.present.at({o, v}) = 0.0;
            out.scores.at({o, v}) = 0.0;
            removed.push_back({rm.observer_ids[static_cast<std::size_t>(o)],
                               rm.video_ids[static_cast<std::size_t>(v)], u});
        }
    }
    return {std::move(out), std::move(removed)};
}

std::vector<MosEntry> compute_mos(const RatingMatrix& rm) {
    rm.validate();
    std::vector<MosEntry> out;
    for (std::int64_t v = 0; v < rm.videos(); ++v) {
        MosEntry e;
        e.video = rm.video_ids[static_cast<std::size_t>(v)];
        double sum = 0.0;
        for (std::int64_t o = 0; o < rm.observers(); ++o) {
            if (!rm.has(o, v)) continue;
            sum += rm.scores.at({o, v});
            ++e.ratings;
        }
        e.scorable = e.ratings > 0;
        e.mos = e.scorable ? sum / e.ratings : 0.0;
        if (!e.scorable)
            emit_warning("video " + e.video + " has no surviving ratings; marked unscorable");
        out.push_back(std::move(e));
    }
    return out;
}

CleanResult clean(const RatingMatrix& rm, bool strict_transcription) {
    CleanResult r;
    r.gate = observer_gate(rm);  // flagged observers retrain; their data stays
    r.screening = bt500_screen(rm, strict_transcription);
    RatingMatrix screened = apply_screen(rm, r.screening);
    auto [trimmed, log] = ci_trim(screened);
    r.trimmed = std::move(log);
    r.mos = compute_mos(trimmed);

    // Rejected observers leave the cleaned table entirely so a re-run sees
    // only surviving panelists.
    std::vector<std::int64_t> keep;
    for (std::int64_t i = 0; i < rm.observers(); ++i)
        if (!r.screening.entries[static_cast<std::size_t>(i)].rejected) keep.push_back(i);
    if (keep.size() == static_cast<std::size_t>(rm.observers())) {
        r.cleaned = std::move(trimmed);
        return r;
    }
    const std::int64_t v_count = rm.videos();
    RatingMatrix kept;
    kept.scores = Tensor::zeros({static_cast<std::int64_t>(keep.size()), v_count});
    kept.present = Tensor::zeros({static_cast<std::int64_t>(keep.size()), v_count});
    kept.video_ids = rm.video_ids;
    for (std::size_t row = 0; row < keep.size(); ++row) {
        kept.observer_ids.push_back(rm.observer_ids[static_cast<std::size_t>(keep[row])]);
        for (std::int64_t v = 0; v < v_count; ++v) {
            kept.scores.at({static_cast<std::int64_t>(row), v}) = trimmed.scores.at({keep[row], v});
            kept.present.at({static_cast<std::int64_t>(row), v}) = trimmed.present.at({keep[row], v});
        }
    }
    r.cleaned = std::move(kept);
    return r;
}

namespace {

constexpr const char* kRatingsHeader = "observer_id,video_id,score";

std::string strip_cr(std::string line) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return line;
}

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) out.push_back(field);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

}  // namespace

RatingMatrix load_ratings_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open ratings file: " + path);
    std::string line;
    if (!std::getline(in, line) || strip_cr(line) != kRatingsHeader)
        throw IoError(path + ": expected header '" + kRatingsHeader + "'");

    std::vector<std::string> observers, videos;
    std::unordered_map<std::string, std::int64_t> o_index, v_index;
    struct Cell {
        std::int64_t o, v;
        double score;
    };
    std::vector<Cell> cells;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        line = strip_cr(line);
        if (line.empty()) continue;
        auto f = split_fields(line);
        if (f.size() != 3)
            throw IoError(path + ":" + std::to_string(lineno) + ": expected 3 fields, got " +
                          std::to_string(f.size()));
        double score = 0.0;
        try {
            std::size_t pos = 0;
            score = std::stod(f[2], &pos);
            if (pos != f[2].size()) throw std::invalid_argument(f[2]);
        } catch (const std::exception&) {
            throw IoError(path + ":" + std::to_string(lineno) + ": bad score '" + f[2] + "'");
        }
        auto intern = [](const std::string& id, std::vector<std::string>& ids,
                         std::unordered_map<std::string, std::int64_t>& index) {
            auto [it, fresh] = index.try_emplace(id, static_cast<std::int64_t>(ids.size()));
            if (fresh) ids.push_back(id);
            return it->second;
        };
        cells.push_back({intern(f[0], observers, o_index), intern(f[1], videos, v_index), score});
    }
    if (cells.empty()) throw IoError(path + ": no ratings");

    const auto o_count = static_cast<std::int64_t>(observers.size());
    const auto v_count = static_cast<std::int64_t>(videos.size());
    RatingMatrix rm;
    rm.scores = Tensor::zeros({o_count, v_count});
    rm.present = Tensor::zeros({o_count, v_count});
    rm.observer_ids = std::move(observers);
    rm.video_ids = std::move(videos);
    for (const auto& c : cells) {
        if (rm.present.at({c.o, c.v}) != 0.0)
            throw IoError(path + ": duplicate rating for observer " + rm.observer_ids[c.o] +
                          ", video " + rm.video_ids[c.v]);
        rm.present.at({c.o, c.v}) = 1.0;
        rm.scores.at({c.o, c.v}) = c.score;
    }
    try {
        rm.validate();
    } catch (const InvalidArgument& e) {
        throw IoError(path + ": " + e.what());
    }
    return rm;
}

void save_ratings_csv(const RatingMatrix& rm, const std::string& path) {
    rm.validate();
    std::ostringstream out;
    out << kRatingsHeader << "\n" << std::fixed << std::setprecision(1);
    for (std::int64_t o = 0; o < rm.observers(); ++o)
        for (std::int64_t v = 0; v < rm.videos(); ++v)
            if (rm.has(o, v))
                out << rm.observer_ids[static_cast<std::size_t>(o)] << ','
                    << rm.video_ids[static_cast<std::size_t>(v)] << ',' << rm.scores.at({o, v})
                    << '\n';
    io::save_text(path, out.str());
}

void save_mos_csv(const std::vector<MosEntry>& mos, const std::string& path) {
    std::ostringstream out;
    out << "video_id,mos,ratings\n" << std::setprecision(10);
    for (const auto& e : mos) {
        out << e.video << ',';
        if (e.scorable)
            out << e.mos;
        else
            out << "nan";
        out << ',' << e.ratings << '\n';
    }
    io::save_text(path, out.str());
}

nlohmann::ordered_json report_json(const CleanResult& r) {
    nlohmann::ordered_json j;
    j["gate"]["threshold"] = r.gate.threshold;
    j["gate"]["observers"] = nlohmann::ordered_json::array();
    for (const auto& e : r.gate.entries)
        j["gate"]["observers"].push_back(
            {{"observer", e.observer}, {"srocc", e.srocc}, {"plcc", e.plcc}, {"retrain", e.retrain}});
    j["screening"]["strict_transcription"] = r.screening.strict_transcription;
    j["screening"]["alpha"] = r.screening.alpha;
    j["screening"]["observers"] = nlohmann::ordered_json::array();
    for (const auto& e : r.screening.entries)
        j["screening"]["observers"].push_back({{"observer", e.observer},
                                               {"p", e.p},
                                               {"q", e.q},
                                               {"rated", e.rated},
                                               {"ratio", e.ratio},
                                               {"fraction", e.fraction},
                                               {"rejected", e.rejected}});
    j["trimmed"] = nlohmann::ordered_json::array();
    for (const auto& t : r.trimmed)
        j["trimmed"].push_back({{"observer", t.observer}, {"video", t.video}, {"score", t.score}});
    j["mos"] = nlohmann::ordered_json::array();
    for (const auto& e : r.mos) {
        nlohmann::ordered_json m{{"video", e.video}, {"ratings", e.ratings}, {"scorable", e.scorable}};
        if (e.scorable)
            m["mos"] = e.mos;
        else
            m["mos"] = nullptr;
        j["mos"].push_back(std::move(m));
    }
    return j;
}

}  // namespace fragvqa::subjective
