#include "fragvqa/metrics.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace fragvqa::metrics {

namespace {

void check_vectors(const std::vector<double>& x, const std::vector<double>& y) {
    check(x.size() == y.size(), "metric inputs must have equal length");
    check(x.size() >= 2, "metric inputs need at least two entries");
}

bool is_constant(const std::vector<double>& x) {
    for (double v : x)
        if (v != x[0]) return false;
    return true;
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    double mx = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
    double my = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        double dx = x[i] - mx, dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx <= 0.0 || syy <= 0.0) throw UndefinedValue("correlation undefined for constant input");
    return sxy / std::sqrt(sxx * syy);
}

struct Logistic4 {
    double b1, b2, b3, b4;
    double eval(double x) const { return b2 + (b1 - b2) / (1.0 + std::exp(-(x - b3) / b4)); }
};

// Levenberg-Marquardt over the 4 curve parameters. Returns false when the fit
// diverges or goes non-finite; callers fall back to the raw correlation.
bool fit_logistic4(const std::vector<double>& x, const std::vector<double>& y, Logistic4& out) {
    std::size_t n = x.size();
    double ymin = *std::min_element(y.begin(), y.end());
    double ymax = *std::max_element(y.begin(), y.end());
    double mx = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
    double sx = 0.0;
    for (double v : x) sx += (v - mx) * (v - mx);
    sx = std::sqrt(sx / static_cast<double>(n));
    if (sx <= 0.0) return false;

    Logistic4 p{ymax, ymin, mx, sx};
    if (pearson(x, y) < 0.0) std::swap(p.b1, p.b2);

    auto sse = [&](const Logistic4& q) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double r = q.eval(x[i]) - y[i];
            s += r * r;
        }
        return s;
    };

    double cur = sse(p);
    if (!std::isfinite(cur)) return false;
    double lambda = 1e-3;
    for (int iter = 0; iter < 200; ++iter) {
        Eigen::Matrix4d jtj = Eigen::Matrix4d::Zero();
        Eigen::Vector4d jtr = Eigen::Vector4d::Zero();
        for (std::size_t i = 0; i < n; ++i) {
            double t = (x[i] - p.b3) / p.b4;
            double s = 1.0 / (1.0 + std::exp(-t));
            double r = p.b2 + (p.b1 - p.b2) * s - y[i];
            double ds = s * (1.0 - s);
            Eigen::Vector4d j;
            j << s, 1.0 - s, -(p.b1 - p.b2) * ds / p.b4, -(p.b1 - p.b2) * ds * t / p.b4;
            jtj += j * j.transpose();
            jtr += j * r;
        }
        Eigen::Matrix4d damped = jtj + lambda * Eigen::Matrix4d::Identity();
        Eigen::Vector4d delta = damped.ldlt().solve(-jtr);
        if (!delta.allFinite()) return false;
        Logistic4 trial{p.b1 + delta[0], p.b2 + delta[1], p.b3 + delta[2], p.b4 + delta[3]};
        if (std::abs(trial.b4) < 1e-12) {
            lambda *= 10.0;
            continue;
        }
        double trial_sse = sse(trial);
        if (std::isfinite(trial_sse) && trial_sse <= cur) {
            double gain = cur - trial_sse;
            p = trial;
            cur = trial_sse;
            lambda = std::max(lambda * 0.3, 1e-12);
            if (gain < 1e-14 * (1.0 + cur)) break;
        } else {
            lambda *= 10.0;
            if (lambda > 1e12) break;
        }
    }
    if (!std::isfinite(cur) || !std::isfinite(p.b1) || !std::isfinite(p.b4)) return false;
    out = p;
    return true;
}

}  // namespace

std::vector<double> average_ranks(const std::vector<double>& x) {
    std::size_t n = x.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    std::vector<double> ranks(n, 0.0);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && x[order[j + 1]] == x[order[i]]) ++j;
        double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
        i = j + 1;
    }
    return ranks;
}

double srocc(const std::vector<double>& x, const std::vector<double>& y) {
    check_vectors(x, y);
    if (is_constant(x) || is_constant(y))
        throw UndefinedValue("correlation undefined for constant input");
    return pearson(average_ranks(x), average_ranks(y));
}

double plcc(const std::vector<double>& x, const std::vector<double>& y, bool logistic_map) {
    check_vectors(x, y);
    if (is_constant(x) || is_constant(y))
        throw UndefinedValue("correlation undefined for constant input");
    if (!logistic_map) return pearson(x, y);

    Logistic4 curve{};
    if (!fit_logistic4(x, y, curve)) {
        emit_warning("logistic fit did not converge; falling back to raw correlation");
        return pearson(x, y);
    }
    std::vector<double> mapped(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) mapped[i] = curve.eval(x[i]);
    if (is_constant(mapped)) {
        emit_warning("logistic fit collapsed to a constant; falling back to raw correlation");
        return pearson(x, y);
    }
    return pearson(mapped, y);
}

ad::Var plcc_loss(const ad::Var& pred, const std::vector<double>& mos) {
    check(pred->value.rank() == 1, "plcc_loss expects a rank-1 prediction batch");
    std::int64_t b = pred->value.size(0);
    check(b >= 2, "plcc_loss needs a batch of at least 2");
    check(static_cast<std::size_t>(b) == mos.size(), "plcc_loss batch size mismatch");

    const double eps = 1e-12;
    double inv_b = 1.0 / static_cast<double>(b);
    auto y = ad::constant(Tensor({b}, std::vector<double>(mos)));

    auto xc = ad::sub(pred, ad::mul_scalar(ad::sum_all(pred), inv_b));
    auto yc = ad::sub(y, ad::mul_scalar(ad::sum_all(y), inv_b));
    auto cov = ad::mul_scalar(ad::sum_all(ad::mul(xc, yc)), inv_b);
    auto sx = ad::vsqrt(ad::add_scalar(ad::mul_scalar(ad::sum_all(ad::square(xc)), inv_b), eps));
    auto sy = ad::vsqrt(ad::add_scalar(ad::mul_scalar(ad::sum_all(ad::square(yc)), inv_b), eps));
    auto r = ad::divide(cov, ad::mul(sx, sy));
    return ad::mul_scalar(ad::add_scalar(ad::neg(r), 1.0), 0.5);
}

RankAccuracy rank_accuracy(const std::vector<RankPair>& pairs,
                           const std::vector<double>& predictions) {
    RankAccuracy acc;
    std::int64_t ok_all = 0, ok_h = 0, ok_nh = 0;
    std::int64_t n = static_cast<std::int64_t>(predictions.size());
    for (const auto& p : pairs) {
        check(p.a >= 0 && p.a < n && p.b >= 0 && p.b < n,
              "rank pair references a missing prediction");
        check(p.preferred == p.a || p.preferred == p.b,
              "rank pair preference must name one of its members");
        std::int64_t other = p.preferred == p.a ? p.b : p.a;
        bool correct = predictions[static_cast<std::size_t>(p.preferred)] >
                       predictions[static_cast<std::size_t>(other)];
        ++acc.n_overall;
        ok_all += correct;
        if (p.homogeneous) {
            ++acc.n_homogeneous;
            ok_h += correct;
        } else {
            ++acc.n_non_homogeneous;
            ok_nh += correct;
        }
    }
    auto frac = [](std::int64_t ok, std::int64_t total) {
        return total == 0 ? std::numeric_limits<double>::quiet_NaN()
                          : static_cast<double>(ok) / static_cast<double>(total);
    };
    acc.overall = frac(ok_all, acc.n_overall);
    acc.homogeneous = frac(ok_h, acc.n_homogeneous);
    acc.non_homogeneous = frac(ok_nh, acc.n_non_homogeneous);
    return acc;
}

}  // namespace fragvqa::metrics
