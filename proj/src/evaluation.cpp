#include "camal/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "camal/attention.hpp"
#include "camal/common.hpp"
#include "camal/regularizers.hpp"
#include "camal/rng.hpp"

namespace camal::eval {

std::vector<uint8_t> binarize_attention(const float* h, int64_t n, double tau) {
    std::vector<uint8_t> out(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) out[static_cast<size_t>(i)] = (h[i] > tau) ? 1 : 0;
    return out;
}

double iou(const std::vector<uint8_t>& a, const std::vector<uint8_t>& b) {
    if (a.size() != b.size()) throw ShapeError("iou: mask size mismatch");
    int64_t inter = 0, uni = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        bool av = a[i] != 0, bv = b[i] != 0;
        inter += (av && bv);
        uni += (av || bv);
    }
    if (uni == 0) return 0.0;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

// ---------------------------------------------------------------------------
// model-side helpers
// ---------------------------------------------------------------------------

namespace {

// normalized, mask-resolution attention maps for a batch of samples
attention::AttentionMapBatch attention_for(models::Model& model, const data::Dataset& ds,
                                           const std::vector<int>& idxs,
                                           const std::string& layer_id) {
    autograd::GradModeGuard mode(true);  // extraction needs the graph
    Tensor images = data::image_batch(ds, idxs, /*eval_view=*/true);
    auto fc = model.forward_with_capture(images, layer_id);
    auto sel = models::ScalarTargetSelector::ground_truth(data::label_batch(ds, idxs));
    Tensor scalars = models::select_scalar(fc.logits, sel);
    Tensor grads = models::gradients_for_summed_target(fc.features, scalars,
                                                       /*retain_higher_order=*/false);
    autograd::NoGradGuard ng;
    Tensor cam = attention::gradcam_batch(constant_like(fc.features), constant_like(grads));
    auto norm = attention::normalize_minmax(cam);
    return attention::upsample_to(norm, ds.height, ds.width);
}

std::vector<double> softmax_row(const float* logits, int64_t C) {
    double mx = logits[0];
    for (int64_t c = 1; c < C; ++c) mx = std::max(mx, static_cast<double>(logits[c]));
    std::vector<double> p(static_cast<size_t>(C));
    double sum = 0.0;
    for (int64_t c = 0; c < C; ++c) {
        p[static_cast<size_t>(c)] = std::exp(static_cast<double>(logits[c]) - mx);
        sum += p[static_cast<size_t>(c)];
    }
    for (auto& v : p) v /= sum;
    return p;
}

}  // namespace

AlignmentSummary alignment_eval(models::Model& model, const data::Dataset& ds,
                                const std::vector<int>& test_idxs, double tau,
                                const std::string& layer_id, int64_t batch) {
    if (!(tau > 0.0 && tau < 1.0)) throw ConfigError("tau must lie in (0,1)");
    AlignmentSummary summary;
    int64_t hw = ds.height * ds.width;
    for (size_t start = 0; start < test_idxs.size(); start += static_cast<size_t>(batch)) {
        std::vector<int> chunk(test_idxs.begin() + static_cast<long>(start),
                               test_idxs.begin() +
                                   static_cast<long>(std::min(test_idxs.size(),
                                                              start + static_cast<size_t>(batch))));
        auto maps = attention_for(model, ds, chunk, layer_id);
        for (size_t b = 0; b < chunk.size(); ++b) {
            const auto& s = ds.samples[static_cast<size_t>(chunk[b])];
            auto hmask = binarize_attention(maps.values.data() + static_cast<int64_t>(b) * hw, hw, tau);
            summary.records.push_back({s.id, iou(hmask, s.mask), tau});
        }
    }
    double mean = 0.0;
    for (const auto& r : summary.records) mean += r.iou;
    mean /= static_cast<double>(summary.records.size());
    double var = 0.0;
    for (const auto& r : summary.records) var += (r.iou - mean) * (r.iou - mean);
    summary.mean = mean;
    summary.stddev = summary.records.size() > 1
                         ? std::sqrt(var / static_cast<double>(summary.records.size() - 1))
                         : 0.0;
    return summary;
}

double accuracy_eval(models::Model& model, const data::Dataset& ds,
                     const std::vector<int>& test_idxs, int64_t batch) {
    autograd::NoGradGuard ng;
    int64_t correct = 0;
    for (size_t start = 0; start < test_idxs.size(); start += static_cast<size_t>(batch)) {
        std::vector<int> chunk(test_idxs.begin() + static_cast<long>(start),
                               test_idxs.begin() +
                                   static_cast<long>(std::min(test_idxs.size(),
                                                              start + static_cast<size_t>(batch))));
        Tensor images = data::image_batch(ds, chunk, /*eval_view=*/true);
        Tensor logits = model.forward(images);
        int64_t C = logits.dim(1);
        for (size_t b = 0; b < chunk.size(); ++b) {
            const float* row = logits.data() + static_cast<int64_t>(b) * C;
            int64_t best = 0;
            for (int64_t c = 1; c < C; ++c)
                if (row[c] > row[best]) best = c;
            correct += (best == ds.samples[static_cast<size_t>(chunk[b])].label);
        }
    }
    return static_cast<double>(correct) / static_cast<double>(test_idxs.size());
}

// ---------------------------------------------------------------------------
// faithfulness
// ---------------------------------------------------------------------------

std::vector<double> default_k_grid() {
    std::vector<double> k;
    for (int v = 0; v <= 100; v += 5) k.push_back(v);
    return k;
}

namespace {

void validate_k_grid(const std::vector<double>& k) {
    if (k.size() < 2 || k.front() != 0.0 || k.back() != 100.0)
        throw ConfigError("k_grid must start at 0 and end at 100");
    for (size_t i = 1; i < k.size(); ++i)
        if (k[i] <= k[i - 1]) throw ConfigError("k_grid must be strictly increasing");
}

// pixel order: attention descending, ties broken by row-major index
std::vector<int64_t> rank_pixels(const float* h, int64_t n) {
    std::vector<int64_t> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int64_t a, int64_t b) { return h[a] > h[b]; });
    return order;
}

double trapezoid_auc(const std::vector<double>& k, const std::vector<double>& y) {
    double auc = 0.0;
    for (size_t i = 1; i < k.size(); ++i)
        auc += (k[i] - k[i - 1]) / 100.0 * (y[i] + y[i - 1]) / 2.0;
    return auc;
}

}  // namespace

FaithfulnessCurve faithfulness_eval(models::Model& model, const data::Dataset& ds, int sample_idx,
                                    FaithMode mode, const std::vector<double>& k_grid,
                                    const std::string& layer_id) {
    validate_k_grid(k_grid);
    const auto& sample = ds.samples[static_cast<size_t>(sample_idx)];
    int64_t H = ds.height, W = ds.width, P = H * W;

    auto maps = attention_for(model, ds, {sample_idx}, layer_id);
    std::vector<int64_t> order = rank_pixels(maps.values.data(), P);

    // one batched forward over all k points
    int64_t nk = static_cast<int64_t>(k_grid.size());
    std::vector<float> batch(static_cast<size_t>(nk * 3 * P));
    for (int64_t ki = 0; ki < nk; ++ki) {
        int64_t n_sel = static_cast<int64_t>(std::llround(k_grid[static_cast<size_t>(ki)] / 100.0 *
                                                          static_cast<double>(P)));
        float* img = batch.data() + ki * 3 * P;
        if (mode == FaithMode::Removal) {
            std::copy(sample.eval_image.begin(), sample.eval_image.end(), img);
            for (int64_t r = 0; r < n_sel; ++r) {
                int64_t px = order[static_cast<size_t>(r)];
                for (int64_t c = 0; c < 3; ++c) img[c * P + px] = 0.0f;
            }
        } else {
            std::fill(img, img + 3 * P, 0.0f);
            for (int64_t r = 0; r < n_sel; ++r) {
                int64_t px = order[static_cast<size_t>(r)];
                for (int64_t c = 0; c < 3; ++c)
                    img[c * P + px] = sample.eval_image[static_cast<size_t>(c * P + px)];
            }
        }
    }

    autograd::NoGradGuard ng;
    Tensor images = from_data({nk, 3, H, W}, std::move(batch));
    Tensor logits = model.forward(images);
    int64_t C = logits.dim(1);

    FaithfulnessCurve curve;
    curve.mode = mode;
    curve.k_grid = k_grid;
    for (int64_t ki = 0; ki < nk; ++ki) {
        auto p = softmax_row(logits.data() + ki * C, C);
        curve.confidence.push_back(p[static_cast<size_t>(sample.label)]);
    }
    curve.auc = trapezoid_auc(curve.k_grid, curve.confidence);
    return curve;
}

FaithfulnessSuite representative_faithfulness_suite(models::Model& model, const data::Dataset& ds,
                                                    const std::vector<int>& test_idxs,
                                                    int per_class, uint64_t seed,
                                                    const std::vector<double>& k_grid,
                                                    const std::string& layer_id) {
    validate_k_grid(k_grid);
    std::vector<std::vector<int>> by_class(static_cast<size_t>(ds.n_classes));
    for (int idx : test_idxs)
        by_class[static_cast<size_t>(ds.samples[static_cast<size_t>(idx)].label)].push_back(idx);

    FaithfulnessSuite suite;
    suite.k_grid = k_grid;
    Rng rng(seed ^ 0xfa17ULL);
    std::vector<int> class_of_pick;
    for (int c = 0; c < ds.n_classes; ++c) {
        auto& pool = by_class[static_cast<size_t>(c)];
        if (pool.empty())
            throw DataError("class " + std::to_string(c) + " has no samples in the test split");
        std::sort(pool.begin(), pool.end());
        rng.shuffle(pool);
        int take = std::min<int>(per_class, static_cast<int>(pool.size()));
        if (take < per_class)
            throw DataError("class " + std::to_string(c) + " has fewer than per_class samples");
        for (int i = 0; i < take; ++i) {
            int idx = pool[static_cast<size_t>(i)];
            suite.sample_ids.push_back(ds.samples[static_cast<size_t>(idx)].id);
            class_of_pick.push_back(c);
            suite.removal.push_back(
                faithfulness_eval(model, ds, idx, FaithMode::Removal, k_grid, layer_id));
            suite.insertion.push_back(
                faithfulness_eval(model, ds, idx, FaithMode::Insertion, k_grid, layer_id));
        }
    }

    size_t nk = k_grid.size(), ns = suite.removal.size();
    auto aggregate = [&](const std::vector<FaithfulnessCurve>& curves, std::vector<double>& mean,
                         std::vector<double>& lo, std::vector<double>& hi) {
        mean.assign(nk, 0.0);
        lo.assign(nk, 0.0);
        hi.assign(nk, 0.0);
        for (size_t ki = 0; ki < nk; ++ki) {
            // stratified bootstrap band over samples; with one sample per
            // class the strata collapse into a single pooled stratum
            stats::TrialMatrix tm;
            if (per_class >= 2) {
                for (int c = 0; c < ds.n_classes; ++c) {
                    std::vector<double> row;
                    for (size_t s = 0; s < ns; ++s)
                        if (class_of_pick[s] == c) row.push_back(curves[s].confidence[ki]);
                    tm.stratum_labels.push_back("class" + std::to_string(c));
                    tm.values.push_back(std::move(row));
                }
            } else {
                std::vector<double> row;
                for (size_t s = 0; s < ns; ++s) row.push_back(curves[s].confidence[ki]);
                tm.stratum_labels.push_back("all");
                tm.values.push_back(std::move(row));
            }
            auto agg = [](const stats::TrialMatrix& t) {
                double acc = 0.0;
                size_t n = 0;
                for (const auto& r : t.values)
                    for (double v : r) {
                        acc += v;
                        ++n;
                    }
                return acc / static_cast<double>(n);
            };
            auto b = stats::stratified_bootstrap(tm, agg, 1000, 0.95,
                                                 0xb00157ULL + static_cast<uint64_t>(ki));
            mean[ki] = b.point;
            lo[ki] = b.ci_low;
            hi[ki] = b.ci_high;
        }
    };
    aggregate(suite.removal, suite.mean_removal, suite.removal_lo, suite.removal_hi);
    aggregate(suite.insertion, suite.mean_insertion, suite.insertion_lo, suite.insertion_hi);
    suite.mean_removal_auc = trapezoid_auc(suite.k_grid, suite.mean_removal);
    suite.mean_insertion_auc = trapezoid_auc(suite.k_grid, suite.mean_insertion);
    return suite;
}

// ---------------------------------------------------------------------------
// perturbations
// ---------------------------------------------------------------------------

std::string to_string(PerturbKind k) {
    switch (k) {
        case PerturbKind::Shift: return "shift";
        case PerturbKind::Erode: return "erode";
        default: return "dilate";
    }
}

std::string to_string(Regularizer r) {
    return r == Regularizer::Camal ? "camal" : "suppress_only";
}

std::vector<int> default_severities(PerturbKind kind) {
    if (kind == PerturbKind::Shift) return {1, 2, 4, 8, 16};
    return {1, 2, 3, 4};
}

namespace {

std::vector<uint8_t> shift_mask(const std::vector<uint8_t>& m, int64_t H, int64_t W, int s) {
    std::vector<uint8_t> out(m.size(), 0);
    for (int64_t y = 0; y < H; ++y)
        for (int64_t x = s; x < W; ++x)
            out[static_cast<size_t>(y * W + x)] = m[static_cast<size_t>(y * W + x - s)];
    return out;
}

std::vector<uint8_t> morph(const std::vector<uint8_t>& m, int64_t H, int64_t W, int r,
                           bool dilate) {
    std::vector<uint8_t> out(m.size());
    for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x) {
            bool hit = dilate ? false : true;
            for (int64_t dy = -r; dy <= r; ++dy) {
                for (int64_t dx = -r; dx <= r; ++dx) {
                    int64_t yy = y + dy, xx = x + dx;
                    bool v = (yy >= 0 && yy < H && xx >= 0 && xx < W)
                                 ? m[static_cast<size_t>(yy * W + xx)] != 0
                                 : false;  // outside counts as background
                    if (dilate && v) { hit = true; break; }
                    if (!dilate && !v) { hit = false; break; }
                }
                if (dilate == hit) break;
            }
            out[static_cast<size_t>(y * W + x)] = hit ? 1 : 0;
        }
    return out;
}

bool degenerate(const std::vector<uint8_t>& m) {
    bool any0 = false, any1 = false;
    for (uint8_t v : m) {
        any0 = any0 || v == 0;
        any1 = any1 || v != 0;
        if (any0 && any1) return false;
    }
    return true;
}

}  // namespace

PerturbSeq perturb_masks(const std::vector<uint8_t>& mask, int64_t H, int64_t W, PerturbKind kind,
                         const std::vector<int>& severities) {
    if (degenerate(mask)) throw DomainError("perturb_masks: degenerate input mask");
    for (size_t i = 1; i < severities.size(); ++i)
        if (severities[i] <= severities[i - 1])
            throw ConfigError("severities must be strictly increasing");
    PerturbSeq seq;
    for (int s : severities) {
        if (s < 0) throw ConfigError("negative severity");
        std::vector<uint8_t> h;
        if (s == 0) h = mask;
        else if (kind == PerturbKind::Shift) h = shift_mask(mask, H, W, s);
        else h = morph(mask, H, W, s, kind == PerturbKind::Dilate);
        if (degenerate(h)) {
            seq.truncated = true;
            break;
        }
        seq.severities.push_back(s);
        seq.maps.push_back(std::move(h));
    }
    return seq;
}

double regularizer_response(Regularizer reg, const std::vector<uint8_t>& mask,
                            const std::vector<uint8_t>& att, int64_t H, int64_t W) {
    autograd::NoGradGuard ng;
    std::vector<float> hv(att.size()), mv(mask.size());
    for (size_t i = 0; i < att.size(); ++i) hv[i] = att[i] ? 1.0f : 0.0f;
    for (size_t i = 0; i < mask.size(); ++i) mv[i] = mask[i] ? 1.0f : 0.0f;
    Tensor Ht = from_data({1, H, W}, std::move(hv));
    Tensor Mt = from_data({1, H, W}, std::move(mv));
    if (reg == Regularizer::Camal) return reg::camal_term(reg::alpha_beta(Ht, Mt)).item();
    return reg::suppress_only_term(Ht, Mt).item();
}

StudyReport regularizer_response_study(const data::Dataset& ds,
                                       const std::vector<PerturbKind>& kinds,
                                       const std::vector<Regularizer>& regularizers) {
    StudyReport report;
    for (PerturbKind kind : kinds) {
        std::vector<int> severities = default_severities(kind);
        for (Regularizer reg : regularizers) {
            StudyCell cell;
            cell.kind = kind;
            cell.regularizer = reg;
            std::vector<double> spears, pears;
            for (const auto& s : ds.samples) {
                PerturbSeq seq = perturb_masks(s.mask, ds.height, ds.width, kind, severities);
                if (seq.severities.size() < 2) {
                    ++cell.n_skipped;
                    continue;
                }
                PerturbationSeries series;
                series.mask_id = s.id;
                series.kind = kind;
                series.regularizer = reg;
                series.severities = seq.severities;
                series.truncated = seq.truncated;
                for (size_t i = 0; i < seq.maps.size(); ++i)
                    series.responses.push_back(
                        regularizer_response(reg, s.mask, seq.maps[i], ds.height, ds.width));
                std::vector<double> sev_d(series.severities.begin(), series.severities.end());
                series.correlations = stats::correlations(sev_d, series.responses);
                if (series.correlations.spearman) {
                    spears.push_back(*series.correlations.spearman);
                    pears.push_back(series.correlations.pearson.value_or(0.0));
                    ++cell.n_defined;
                } else {
                    ++cell.n_undefined;
                }
                report.series.push_back(std::move(series));
            }
            auto mean_std = [](const std::vector<double>& v,
                               std::optional<double>& mo, std::optional<double>& so) {
                if (v.empty()) {
                    mo.reset();
                    so.reset();
                    return;
                }
                double mean = 0.0;
                for (double x : v) mean += x;
                mean /= static_cast<double>(v.size());
                double var = 0.0;
                for (double x : v) var += (x - mean) * (x - mean);
                mo = mean;
                so = v.size() > 1 ? std::sqrt(var / static_cast<double>(v.size() - 1)) : 0.0;
            };
            mean_std(spears, cell.spearman_mean, cell.spearman_std);
            mean_std(pears, cell.pearson_mean, cell.pearson_std);
            report.cells.push_back(cell);
        }
    }
    return report;
}

}  // namespace camal::eval
