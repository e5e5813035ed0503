#pragma once

// Nonparametric statistics for paired and multi-trial comparisons: one-tailed
// Wilcoxon signed-rank test, stratified bootstrap confidence intervals,
// probability of improvement, and rank/linear correlations.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace camal::stats {

// m strata (environments/settings) x k trials
struct TrialMatrix {
    std::vector<std::string> stratum_labels;  // size m
    std::vector<std::vector<double>> values;  // m rows of k trials

    size_t m() const { return values.size(); }
    size_t k() const { return values.empty() ? 0 : values[0].size(); }
    void validate() const;
};

TrialMatrix read_trial_matrix_csv(const std::string& path);
void write_trial_matrix_csv(const TrialMatrix& tm, const std::string& path);

struct TestOutcome {
    double statistic = 0.0;
    double p_value = 1.0;
    std::string method;
    int n_effective = 0;
    bool significant_at_05 = false;
};

// One-tailed test of whether `a` exceeds `b`. Zero differences are dropped;
// |d| are ranked with midranks; T = min(R+, R-). Exact p for n <= 20,
// normal approximation with continuity correction beyond.
TestOutcome wsrt_one_tailed(const std::vector<double>& a, const std::vector<double>& b);

using Aggregator = std::function<double(const TrialMatrix&)>;

struct BootstrapResult {
    double point = 0.0;
    double ci_low = 0.0, ci_high = 0.0;
};

// Percentile bootstrap: each resample draws k trials per stratum with
// replacement. Deterministic given the seed, resample order independent.
BootstrapResult stratified_bootstrap(const TrialMatrix& tm, const Aggregator& agg,
                                     int n_resamples, double ci_level, uint64_t seed);

// Probability of improvement of X over Y (Mann-Whitney pairwise win rate,
// ties counted one half), averaged over strata. Guarantees
// poi(X,Y) + poi(Y,X) == 1 exactly.
double poi(const TrialMatrix& x, const TrialMatrix& y);
Aggregator poi_against(const TrialMatrix& y);

struct PoiDecision {
    double point;
    double ci_low, ci_high;
    bool significant;  // point > 0.5 and 0.5 outside the CI
};
PoiDecision poi_with_ci(const TrialMatrix& x, const TrialMatrix& y, int n_resamples,
                        double ci_level, uint64_t seed);

struct CorrelationPair {
    std::optional<double> spearman;  // empty == undefined (zero variance)
    std::optional<double> pearson;
};

// Pearson on raw values; Spearman as Pearson on midranks. Zero variance in
// either series yields "undefined", never NaN.
CorrelationPair correlations(const std::vector<double>& xs, const std::vector<double>& ys);

// midranks (average ranks for ties), 1-based
std::vector<double> midranks(const std::vector<double>& v);

double normal_cdf(double z);

}  // namespace camal::stats
