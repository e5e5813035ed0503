#pragma once

// Grad-CAM attention for a whole mini-batch from captured features and
// summed-scalar gradients, plus the per-sample oracle used for equivalence
// testing and overhead baselines.

#include <string>

#include "camal/models.hpp"
#include "camal/tensor.hpp"

namespace camal::attention {

// Per-sample spatial heatmaps in [0,1].
struct AttentionMapBatch {
    Tensor values;  // B x H x W
    int64_t source_h = 0, source_w = 0;  // pre-upsampling grid
};

// Raw CAM: per sample, w_k = spatial mean of grads over hxw and
// cam = relu((1/K) * sum_k w_k * A_k). Differentiable in both inputs.
Tensor gradcam_batch(const Tensor& features, const Tensor& grads);

// Proposition-1 oracle: one batch forward, then B isolated backward passes,
// one per sample scalar. Evaluation-only (gradients are not retained).
Tensor gradcam_per_sample_oracle(models::Model& model, const Tensor& images,
                                 const models::ScalarTargetSelector& sel,
                                 const std::string& layer_id = "");

// Per-sample (x - min) / (max - min); an all-constant sample maps to zeros.
AttentionMapBatch normalize_minmax(const Tensor& raw_cam);

// Bilinear upsampling to mask resolution (never downsamples).
AttentionMapBatch upsample_to(const AttentionMapBatch& maps, int64_t H, int64_t W);

// number of all-constant (degenerate) samples in the most recent
// normalize_minmax input, for instrumentation
int64_t count_degenerate(const Tensor& raw_cam);

// grayscale 8-bit PNG, value = round(255 * H)
void export_png(const AttentionMapBatch& maps, int64_t sample, const std::string& path);
// raw float32 container with shape header (see README for the layout)
void export_raw(const AttentionMapBatch& maps, const std::string& path);
Tensor import_raw(const std::string& path);

}  // namespace camal::attention
