#include "camal/stats.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "camal/common.hpp"
#include "camal/rng.hpp"

namespace camal::stats {

void TrialMatrix::validate() const {
    if (values.empty()) throw DomainError("trial matrix needs at least one stratum");
    size_t kk = values[0].size();
    if (kk < 2) throw DomainError("trial matrix needs at least two trials per stratum");
    for (const auto& row : values) {
        if (row.size() != kk) throw ShapeError("ragged trial matrix");
        for (double v : row)
            if (!std::isfinite(v)) throw NumericError("non-finite trial value");
    }
    if (!stratum_labels.empty() && stratum_labels.size() != values.size())
        throw ShapeError("stratum label count mismatch");
}

TrialMatrix read_trial_matrix_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open trial matrix " + path);
    TrialMatrix tm;
    std::string line;
    bool header = true;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (header) {  // header row of trial indices
            header = false;
            continue;
        }
        std::istringstream row(line);
        std::string cell;
        std::vector<double> vals;
        bool first = true;
        while (std::getline(row, cell, ',')) {
            if (first) {
                tm.stratum_labels.push_back(cell);
                first = false;
            } else {
                try {
                    vals.push_back(std::stod(cell));
                } catch (...) {
                    throw DataError("non-numeric cell '" + cell + "' in " + path);
                }
            }
        }
        tm.values.push_back(std::move(vals));
    }
    tm.validate();
    return tm;
}

void write_trial_matrix_csv(const TrialMatrix& tm, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path);
    out << "stratum";
    for (size_t j = 0; j < tm.k(); ++j) out << ",trial" << j;
    out << "\n";
    for (size_t i = 0; i < tm.m(); ++i) {
        out << (i < tm.stratum_labels.size() ? tm.stratum_labels[i] : std::to_string(i));
        for (double v : tm.values[i]) out << "," << v;
        out << "\n";
    }
}

// ---------------------------------------------------------------------------
// Wilcoxon signed-rank
// ---------------------------------------------------------------------------

std::vector<double> midranks(const std::vector<double>& v) {
    size_t n = v.size();
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(n);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
        double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (size_t t = i; t <= j; ++t) ranks[order[t]] = avg;
        i = j + 1;
    }
    return ranks;
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

namespace {

// Exact one-tailed P(W- <= observed) for the null where each |d| gets a
// random sign. Midranks can be half-integers, so everything runs on doubled
// ranks (integers); counts are tallied by subset-sum convolution, which is
// equivalent to enumerating all 2^n sign patterns.
double wsrt_exact_p(const std::vector<double>& ranks, double r_minus) {
    size_t n = ranks.size();
    std::vector<int64_t> r2(n);
    int64_t total = 0;
    for (size_t i = 0; i < n; ++i) {
        r2[i] = static_cast<int64_t>(std::llround(ranks[i] * 2.0));
        total += r2[i];
    }
    std::vector<double> count(static_cast<size_t>(total + 1), 0.0);
    count[0] = 1.0;
    for (size_t i = 0; i < n; ++i)
        for (int64_t s = total; s >= r2[i]; --s)
            count[static_cast<size_t>(s)] += count[static_cast<size_t>(s - r2[i])];
    int64_t target = static_cast<int64_t>(std::llround(r_minus * 2.0));
    double below = 0.0;
    for (int64_t s = 0; s <= std::min(target, total); ++s) below += count[static_cast<size_t>(s)];
    return below / std::pow(2.0, static_cast<double>(n));
}

}  // namespace

TestOutcome wsrt_one_tailed(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size())
        throw DataError("wsrt: unpaired inputs (" + std::to_string(a.size()) + " vs " +
                        std::to_string(b.size()) + " entries)");
    std::vector<double> d;
    for (size_t i = 0; i < a.size(); ++i) {
        double di = a[i] - b[i];
        if (di != 0.0) d.push_back(di);
    }
    size_t n = d.size();
    if (n < 5)
        throw DataError("wsrt: fewer than 5 nonzero paired differences (" + std::to_string(n) + ")");

    std::vector<double> absd(n);
    for (size_t i = 0; i < n; ++i) absd[i] = std::abs(d[i]);
    std::vector<double> ranks = midranks(absd);

    double r_plus = 0.0, r_minus = 0.0;
    for (size_t i = 0; i < n; ++i) (d[i] > 0 ? r_plus : r_minus) += ranks[i];

    TestOutcome out;
    out.statistic = std::min(r_plus, r_minus);
    out.n_effective = static_cast<int>(n);

    if (n <= 20) {
        out.method = "wsrt-exact";
        out.p_value = wsrt_exact_p(ranks, r_minus);
    } else {
        out.method = "wsrt-normal";
        double nn = static_cast<double>(n);
        double mean = nn * (nn + 1.0) / 4.0;
        // tie correction: sum over groups of (t^3 - t) / 48
        double tie_corr = 0.0;
        std::vector<double> sorted = absd;
        std::sort(sorted.begin(), sorted.end());
        size_t i = 0;
        while (i < sorted.size()) {
            size_t j = i;
            while (j + 1 < sorted.size() && sorted[j + 1] == sorted[i]) ++j;
            double t = static_cast<double>(j - i + 1);
            tie_corr += (t * t * t - t) / 48.0;
            i = j + 1;
        }
        double var = nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0 - tie_corr;
        double z = (r_minus - mean + 0.5) / std::sqrt(var);
        out.p_value = normal_cdf(z);
    }
    out.significant_at_05 = out.p_value < 0.05;
    return out;
}

// ---------------------------------------------------------------------------
// stratified bootstrap
// ---------------------------------------------------------------------------

BootstrapResult stratified_bootstrap(const TrialMatrix& tm, const Aggregator& agg,
                                     int n_resamples, double ci_level, uint64_t seed) {
    tm.validate();
    if (n_resamples < 1000) throw ConfigError("bootstrap needs at least 1000 resamples");
    if (!(ci_level > 0.0 && ci_level < 1.0)) throw ConfigError("ci_level must lie in (0,1)");
    size_t m = tm.m(), k = tm.k();

    BootstrapResult res;
    res.point = agg(tm);

    std::vector<double> samples(static_cast<size_t>(n_resamples));
    TrialMatrix draw = tm;
    for (int r = 0; r < n_resamples; ++r) {
        Rng rng = Rng::substream(seed, static_cast<uint64_t>(r));
        for (size_t i = 0; i < m; ++i)
            for (size_t j = 0; j < k; ++j)
                draw.values[i][j] = tm.values[i][rng.uniform_int(k)];
        try {
            samples[static_cast<size_t>(r)] = agg(draw);
        } catch (const std::exception& e) {
            throw Error("aggregator failed on resample " + std::to_string(r) + ": " + e.what());
        }
    }
    std::sort(samples.begin(), samples.end());
    auto quantile = [&](double q) {
        double pos = q * (static_cast<double>(samples.size()) - 1.0);
        size_t lo = static_cast<size_t>(std::floor(pos));
        size_t hi = std::min(samples.size() - 1, lo + 1);
        double w = pos - static_cast<double>(lo);
        return samples[lo] * (1.0 - w) + samples[hi] * w;
    };
    double tail = (1.0 - ci_level) / 2.0;
    res.ci_low = quantile(tail);
    res.ci_high = quantile(1.0 - tail);
    // the percentile interval brackets the resample distribution; widen to
    // the point estimate if an extreme aggregator lands outside
    res.ci_low = std::min(res.ci_low, res.point);
    res.ci_high = std::max(res.ci_high, res.point);
    return res;
}

// ---------------------------------------------------------------------------
// probability of improvement
// ---------------------------------------------------------------------------

double poi(const TrialMatrix& x, const TrialMatrix& y) {
    x.validate();
    y.validate();
    if (x.m() != y.m() || x.k() != y.k())
        throw ShapeError("poi: trial matrices must share m and k");
    size_t m = x.m(), k = x.k();
    // numerator in half-point units so the total is an exact integer
    int64_t num = 0;
    for (size_t i = 0; i < m; ++i)
        for (size_t a = 0; a < k; ++a)
            for (size_t b = 0; b < k; ++b) {
                double xa = x.values[i][a], yb = y.values[i][b];
                num += (xa > yb) ? 2 : (xa == yb ? 1 : 0);
            }
    int64_t den = static_cast<int64_t>(2 * m * k * k);
    // canonical orientation keeps poi(X,Y) + poi(Y,X) == 1 exact in floats
    if (2 * num <= den) return static_cast<double>(num) / static_cast<double>(den);
    return 1.0 - static_cast<double>(den - num) / static_cast<double>(den);
}

Aggregator poi_against(const TrialMatrix& y) {
    return [y](const TrialMatrix& x) { return poi(x, y); };
}

PoiDecision poi_with_ci(const TrialMatrix& x, const TrialMatrix& y, int n_resamples,
                        double ci_level, uint64_t seed) {
    BootstrapResult b = stratified_bootstrap(x, poi_against(y), n_resamples, ci_level, seed);
    PoiDecision d;
    d.point = b.point;
    d.ci_low = b.ci_low;
    d.ci_high = b.ci_high;
    d.significant = d.point > 0.5 && !(b.ci_low <= 0.5 && 0.5 <= b.ci_high);
    return d;
}

// ---------------------------------------------------------------------------
// correlations
// ---------------------------------------------------------------------------

namespace {

std::optional<double> pearson_impl(const std::vector<double>& xs, const std::vector<double>& ys) {
    size_t n = xs.size();
    double mx = 0, my = 0;
    for (size_t i = 0; i < n; ++i) {
        mx += xs[i];
        my += ys[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxx = 0, syy = 0, sxy = 0;
    for (size_t i = 0; i < n; ++i) {
        double dx = xs[i] - mx, dy = ys[i] - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if (sxx == 0.0 || syy == 0.0) return std::nullopt;
    return sxy / std::sqrt(sxx * syy);
}

}  // namespace

CorrelationPair correlations(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size() || xs.size() < 2)
        throw DomainError("correlations need two equal-length series of size >= 2");
    CorrelationPair out;
    out.pearson = pearson_impl(xs, ys);
    out.spearman = pearson_impl(midranks(xs), midranks(ys));
    return out;
}

}  // namespace camal::stats
