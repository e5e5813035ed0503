#pragma once

// Synthetic benchmark with exact ground-truth masks and an optional spurious
// corner tag; on-disk image+mask directory loading; deterministic stratified
// k-fold splits.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "camal/tensor.hpp"

namespace camal::data {

struct MaskedSample {
    std::string id;
    int label = 0;
    int64_t height = 0, width = 0;
    std::vector<float> image;       // 3xHxW, train-time view
    std::vector<float> eval_image;  // 3xHxW, test-time view (tag decorrelated)
    std::vector<uint8_t> mask;      // HxW in {0,1}, never degenerate
};

struct Dataset {
    int64_t height = 0, width = 0;
    int n_classes = 0;
    std::vector<MaskedSample> samples;
};

struct SyntheticSpec {
    int64_t image_size = 64;
    int n_classes = 3;
    int samples_per_class = 60;
    double clutter_density = 0.5;       // scales the number of distractor marks
    double spurious_correlation = 0.9;  // P(class-indicative corner tag in the train view)
    uint64_t seed = 7;
};

// Each sample renders one class-determined shape (disc / triangle / cross /
// square / diamond) at random pose over clutter; the mask is the exact shape
// footprint. With probability spurious_correlation a corner tag indicating
// the label is drawn into the train view; the eval view carries a tag for a
// uniformly random class instead (never the mask).
Dataset generate_synthetic(const SyntheticSpec& spec);

// Directory layout: root/images/<stem>.png, root/masks/<stem>.png,
// root/labels.csv (stem,label). An optional root/images_eval/ provides
// test-time views (synthetic exports use it for decorrelated tags).
Dataset load_directory(const std::string& root, int64_t resize_to = 256, int64_t crop_to = 224);

// Writes `ds` in the directory layout above (plus images_eval/ when any
// sample's views differ). Refuses non-empty out_dir unless force.
void export_directory(const Dataset& ds, const std::string& out_dir, bool force = false);

// pseudo-mask files for the prior method: pseudo_masks/<stem>.png
std::map<std::string, std::vector<uint8_t>> load_pseudo_masks(const std::string& dir,
                                                              const Dataset& ds);
void export_pseudo_masks(const Dataset& ds, const std::string& dir, int shift_px, int dilate_r);

struct FoldPlan {
    int k = 0;
    uint64_t seed = 0;
    std::map<std::string, int> assignments;  // sample_id -> fold index

    std::vector<int> train_indices(const Dataset& ds, int fold) const;
    std::vector<int> test_indices(const Dataset& ds, int fold) const;
};

FoldPlan make_folds(const Dataset& ds, int k, uint64_t seed);

// batching helpers
Tensor image_batch(const Dataset& ds, const std::vector<int>& idxs, bool eval_view);
Tensor mask_batch(const Dataset& ds, const std::vector<int>& idxs);
Tensor mask_batch_from(const Dataset& ds, const std::vector<int>& idxs,
                       const std::map<std::string, std::vector<uint8_t>>& source);
std::vector<int64_t> label_batch(const Dataset& ds, const std::vector<int>& idxs);

}  // namespace camal::data
