#pragma once

// Model backend: differentiable reference models that expose a forward pass
// capturing an intermediate spatial feature-map batch, plus the gradient
// plumbing used for batch-level attention extraction.

#include <memory>
#include <string>
#include <vector>

#include "camal/nn.hpp"
#include "camal/tensor.hpp"

namespace camal::models {

// Which per-sample scalar drives attention extraction.
struct ScalarTargetSelector {
    enum class Mode { GroundTruthLogit, ValueHead, CustomIndex };
    Mode mode = Mode::GroundTruthLogit;
    std::vector<int64_t> indices;  // class indices for logit modes

    static ScalarTargetSelector ground_truth(std::vector<int64_t> labels) {
        return {Mode::GroundTruthLogit, std::move(labels)};
    }
    static ScalarTargetSelector value_head() { return {Mode::ValueHead, {}}; }
    static ScalarTargetSelector custom(std::vector<int64_t> idx) {
        return {Mode::CustomIndex, std::move(idx)};
    }
};

// How a token sequence maps onto a spatial grid.
struct SpatialReshapeRule {
    enum class Kind { DropLeadingToken, Identity, None };
    Kind kind = Kind::None;
    int64_t h = 0, w = 0;
};

struct ForwardCapture {
    Tensor logits;    // B x C
    Tensor value;     // B (scalar regression head)
    Tensor features;  // B x K x h x w, ancestors of logits and value
    std::string layer_id;
};

class Model {
public:
    virtual ~Model() = default;
    virtual std::string name() const = 0;
    virtual int64_t n_classes() const = 0;
    virtual std::vector<std::string> capture_layers() const = 0;
    virtual std::string default_capture_layer() const = 0;
    // layer_id empty -> default capture layer
    virtual ForwardCapture forward_with_capture(const Tensor& images,
                                                const std::string& layer_id = "") = 0;
    virtual nn::NamedParams named_parameters() const = 0;

    std::vector<Tensor> parameters() const;
    // plain forward, no capture bookkeeping
    Tensor forward(const Tensor& images);
};

// B x N x C sequence -> B x C x h x w spatial maps
Tensor tokens_to_spatial(const Tensor& seq, const SpatialReshapeRule& rule);
// inverse of tokens_to_spatial (without the dropped token)
Tensor spatial_to_tokens(const Tensor& fmap);

// one scalar per sample from logits (or a value batch)
Tensor select_scalar(const Tensor& logits_or_values, const ScalarTargetSelector& sel);

// Gradients of sum_b(scalars_b) w.r.t. the captured features: exactly one
// backward traversal regardless of batch size. With retain_higher_order the
// result stays differentiable w.r.t. model parameters.
Tensor gradients_for_summed_target(const Tensor& features, const Tensor& scalars,
                                   bool retain_higher_order);

// Small convolutional classifier: stride-2 conv stack, GAP head, plus a
// scalar value head. Capture layers: conv1..convN (post-activation).
class TinyConvNet : public Model {
public:
    TinyConvNet(int64_t n_classes, uint64_t seed, std::vector<int> widths = {16, 32, 32},
                int in_channels = 3);
    std::string name() const override { return "tiny_cnn"; }
    int64_t n_classes() const override { return n_classes_; }
    std::vector<std::string> capture_layers() const override;
    std::string default_capture_layer() const override;
    ForwardCapture forward_with_capture(const Tensor& images, const std::string& layer_id) override;
    nn::NamedParams named_parameters() const override;

private:
    int64_t n_classes_;
    std::vector<nn::Conv2d> convs_;
    nn::Linear head_, value_head_;
};

// Small patch-tokenizing transformer classifier. Keeps a leading
// classification token (so N = h*w + 1 and the drop-leading-token rule
// applies); heads read the mean of the patch tokens. Capture layers:
// block1..blockN, exposed as spatial maps via tokens_to_spatial.
class TinyPatchTransformer : public Model {
public:
    TinyPatchTransformer(int64_t n_classes, uint64_t seed, int64_t image_size = 64,
                         int64_t patch = 16, int64_t dim = 48, int depth = 2, int heads = 4);
    std::string name() const override { return "tiny_vit"; }
    int64_t n_classes() const override { return n_classes_; }
    std::vector<std::string> capture_layers() const override;
    std::string default_capture_layer() const override;
    ForwardCapture forward_with_capture(const Tensor& images, const std::string& layer_id) override;
    nn::NamedParams named_parameters() const override;
    int64_t grid() const { return grid_; }

private:
    struct Block {
        nn::LayerNorm ln1, ln2;
        nn::Linear wq, wk, wv, wo, fc1, fc2;
    };
    Tensor run_block(const Block& blk, const Tensor& x) const;

    int64_t n_classes_, image_size_, patch_, dim_, grid_;
    int depth_, heads_;
    Tensor patch_embed_w_, patch_embed_b_;  // dim x (3*p*p), dim
    Tensor cls_token_, pos_embed_;
    std::vector<Block> blocks_;
    nn::LayerNorm final_ln_;
    nn::Linear head_, value_head_;
};

struct ModelConfig {
    std::string name = "tiny_cnn";
    int64_t n_classes = 3;
    int64_t image_size = 64;
    uint64_t seed = 0;
};

std::unique_ptr<Model> make_model(const ModelConfig& cfg);

}  // namespace camal::models
