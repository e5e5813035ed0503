#pragma once

// Quantitative evaluation: attention alignment (IoU at threshold tau),
// faithfulness (removal/insertion curves with AUC), the perturbation-based
// regularizer study, and plain accuracy.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "camal/datasets.hpp"
#include "camal/models.hpp"
#include "camal/stats.hpp"
#include "camal/tensor.hpp"

namespace camal::eval {

inline constexpr double kDefaultTau = 0.7;

// strict threshold: 1 where H > tau
std::vector<uint8_t> binarize_attention(const float* h, int64_t n, double tau);

// |a & b| / |a | b|; 0 when both masks are empty
double iou(const std::vector<uint8_t>& a, const std::vector<uint8_t>& b);

struct AlignmentRecord {
    std::string sample_id;
    double iou = 0.0;
    double tau = kDefaultTau;
};

struct AlignmentSummary {
    std::vector<AlignmentRecord> records;
    double mean = 0.0, stddev = 0.0;
};

AlignmentSummary alignment_eval(models::Model& model, const data::Dataset& ds,
                                const std::vector<int>& test_idxs, double tau = kDefaultTau,
                                const std::string& layer_id = "", int64_t batch = 32);

double accuracy_eval(models::Model& model, const data::Dataset& ds,
                     const std::vector<int>& test_idxs, int64_t batch = 32);

// ---------------------------------------------------------------------------
// faithfulness
// ---------------------------------------------------------------------------

enum class FaithMode { Removal, Insertion };

struct FaithfulnessCurve {
    FaithMode mode = FaithMode::Removal;
    std::vector<double> k_grid;      // percentages, 0..100
    std::vector<double> confidence;  // ground-truth-class softmax at each k
    double auc = 0.0;                // trapezoid over k/100
};

std::vector<double> default_k_grid();  // {0,5,...,100}

FaithfulnessCurve faithfulness_eval(models::Model& model, const data::Dataset& ds, int sample_idx,
                                    FaithMode mode, const std::vector<double>& k_grid,
                                    const std::string& layer_id = "");

struct FaithfulnessSuite {
    std::vector<double> k_grid;
    // one per sampled item, paired across modes
    std::vector<FaithfulnessCurve> removal, insertion;
    std::vector<std::string> sample_ids;
    std::vector<double> mean_removal, mean_insertion;
    std::vector<double> removal_lo, removal_hi, insertion_lo, insertion_hi;  // 95% bands
    double mean_removal_auc = 0.0, mean_insertion_auc = 0.0;
};

// Samples per_class items per class from the test split (seeded), runs both
// modes, aggregates mean curves with bootstrap confidence bands.
FaithfulnessSuite representative_faithfulness_suite(models::Model& model, const data::Dataset& ds,
                                                    const std::vector<int>& test_idxs,
                                                    int per_class, uint64_t seed,
                                                    const std::vector<double>& k_grid,
                                                    const std::string& layer_id = "");

// ---------------------------------------------------------------------------
// mask perturbations and the regularizer response study
// ---------------------------------------------------------------------------

enum class PerturbKind { Shift, Erode, Dilate };
std::string to_string(PerturbKind k);

struct PerturbSeq {
    std::vector<int> severities;             // the ones that survived
    std::vector<std::vector<uint8_t>> maps;  // simulated attention, binary
    bool truncated = false;
};

// shift: translation right by severity pixels (zero fill); erode/dilate:
// square structuring element of radius severity. Severity 0 is the identity.
PerturbSeq perturb_masks(const std::vector<uint8_t>& mask, int64_t H, int64_t W, PerturbKind kind,
                         const std::vector<int>& severities);

std::vector<int> default_severities(PerturbKind kind);

enum class Regularizer { Camal, SuppressOnly };
std::string to_string(Regularizer r);

double regularizer_response(Regularizer reg, const std::vector<uint8_t>& mask,
                            const std::vector<uint8_t>& attention, int64_t H, int64_t W);

struct PerturbationSeries {
    std::string mask_id;
    PerturbKind kind;
    Regularizer regularizer;
    std::vector<int> severities;
    std::vector<double> responses;
    stats::CorrelationPair correlations;  // undefined iff zero-variance response
    bool truncated = false;
};

struct StudyCell {  // one (kind, regularizer) aggregate
    PerturbKind kind;
    Regularizer regularizer;
    int n_defined = 0, n_undefined = 0, n_skipped = 0;
    std::optional<double> spearman_mean, spearman_std;
    std::optional<double> pearson_mean, pearson_std;
};

struct StudyReport {
    std::vector<PerturbationSeries> series;
    std::vector<StudyCell> cells;
};

StudyReport regularizer_response_study(const data::Dataset& ds,
                                       const std::vector<PerturbKind>& kinds,
                                       const std::vector<Regularizer>& regularizers);

}  // namespace camal::eval
