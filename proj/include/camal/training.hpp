#pragma once

// Training under three supervision methods: vanilla (task loss only), camal
// (ground-truth masks), and prior (external pseudo-masks), plus a value-style
// scalar-target probe demonstrating task agnosticism.

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "camal/datasets.hpp"
#include "camal/models.hpp"
#include "camal/nn.hpp"

namespace camal::train {

enum class Method { Vanilla, Camal, Prior };
std::string to_string(Method m);
Method method_from_string(const std::string& s);

struct TrainConfig {
    Method method = Method::Camal;
    std::string pseudo_mask_dir;  // required for prior
    int epochs = 30;
    int64_t batch_size = 32;
    float learning_rate = 1e-3f;
    float weight_decay = 0.01f;
    float lambda = 1.0f;
    uint64_t seed = 7;
    std::string model_name = "tiny_cnn";
    std::string capture_layer;        // empty = model default
    bool detach_cam_weights = false;  // treat CAM weights w_k as constants

    void validate() const;
};

struct StepLog {
    int64_t step = 0;
    double task_loss = 0.0, camal_term = 0.0, alpha_mean = 0.0, beta_mean = 0.0, total = 0.0;
};

struct RunArtifacts {
    std::vector<StepLog> log;
    int fold = -1;
    int64_t steps = 0;
    double total_seconds = 0.0, extraction_seconds = 0.0;
    int64_t degenerate_cam_samples = 0;
    int64_t backward_passes = 0;
    std::unique_ptr<models::Model> model;  // trained weights live here
};

// Trains on the fold's training split. Vanilla skips every attention step
// and its cost; camal/prior run the identical pipeline and differ only in
// where the mask batch comes from.
RunArtifacts train_classifier(const TrainConfig& cfg, const data::Dataset& ds,
                              const data::FoldPlan& plan, int fold);

// Same pipeline with the value head as the scalar target and the mask-area
// fraction as a synthetic regression task (task loss = MSE).
RunArtifacts train_scalar_target_probe(const TrainConfig& cfg, const data::Dataset& ds);

}  // namespace camal::train
