#include "camal/models.hpp"

#include <cmath>

#include "camal/common.hpp"

namespace camal::models {

std::vector<Tensor> Model::parameters() const {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_parameters()) out.push_back(t);
    return out;
}

Tensor Model::forward(const Tensor& images) { return forward_with_capture(images, "").logits; }

// ---------------------------------------------------------------------------
// token reshaping
// ---------------------------------------------------------------------------

Tensor tokens_to_spatial(const Tensor& seq, const SpatialReshapeRule& rule) {
    if (seq.rank() != 3) throw ShapeError("tokens_to_spatial expects BxNxC");
    int64_t B = seq.dim(0), N = seq.dim(1), C = seq.dim(2);
    int64_t hw = rule.h * rule.w;
    Tensor tokens;
    switch (rule.kind) {
        case SpatialReshapeRule::Kind::DropLeadingToken:
            if (N != hw + 1)
                throw ShapeError("drop-leading-token needs N == h*w+1, got N=" + std::to_string(N) +
                                 " for grid " + std::to_string(rule.h) + "x" + std::to_string(rule.w));
            tokens = slice(seq, 1, 1, N - 1);
            break;
        case SpatialReshapeRule::Kind::Identity:
            if (N != hw)
                throw ShapeError("identity reshape needs N == h*w, got N=" + std::to_string(N) +
                                 " for grid " + std::to_string(rule.h) + "x" + std::to_string(rule.w));
            tokens = seq;
            break;
        case SpatialReshapeRule::Kind::None:
            throw ShapeError("reshape rule 'none' defines no spatial mapping");
    }
    Tensor chan_major = permute(tokens, {0, 2, 1});  // B x C x hw
    return reshape(chan_major, {B, C, rule.h, rule.w});
}

Tensor spatial_to_tokens(const Tensor& fmap) {
    if (fmap.rank() != 4) throw ShapeError("spatial_to_tokens expects BxCxhxw");
    int64_t B = fmap.dim(0), C = fmap.dim(1), hw = fmap.dim(2) * fmap.dim(3);
    return permute(reshape(fmap, {B, C, hw}), {0, 2, 1});
}

// ---------------------------------------------------------------------------
// scalar selection and summed-target gradients
// ---------------------------------------------------------------------------

Tensor select_scalar(const Tensor& logits_or_values, const ScalarTargetSelector& sel) {
    switch (sel.mode) {
        case ScalarTargetSelector::Mode::GroundTruthLogit:
        case ScalarTargetSelector::Mode::CustomIndex: {
            if (logits_or_values.rank() != 2) throw ShapeError("select_scalar expects BxC logits");
            return take_per_row(logits_or_values, sel.indices);
        }
        case ScalarTargetSelector::Mode::ValueHead: {
            if (logits_or_values.rank() == 1) return logits_or_values;
            if (logits_or_values.rank() == 2 && logits_or_values.dim(1) == 1)
                return reshape(logits_or_values, {logits_or_values.dim(0)});
            throw ShapeError("value-head selection expects a B or Bx1 batch");
        }
    }
    throw Error("unreachable selector mode");
}

Tensor gradients_for_summed_target(const Tensor& features, const Tensor& scalars,
                                   bool retain_higher_order) {
    Tensor summed = sum_all(scalars);
    auto gs = grad(summed, {features}, /*create_graph=*/retain_higher_order,
                   /*allow_unused=*/false);
    return gs[0];
}

// ---------------------------------------------------------------------------
// TinyConvNet
// ---------------------------------------------------------------------------

TinyConvNet::TinyConvNet(int64_t n_classes, uint64_t seed, std::vector<int> widths,
                         int in_channels)
    : n_classes_(n_classes) {
    Rng rng(seed ^ 0x544e43ULL);
    int cin = in_channels;
    for (int w : widths) {
        convs_.emplace_back(cin, w, 3, 2, 1, rng);
        cin = w;
    }
    head_ = nn::Linear(cin, n_classes, rng, std::sqrt(1.0f / static_cast<float>(cin)));
    value_head_ = nn::Linear(cin, 1, rng, std::sqrt(1.0f / static_cast<float>(cin)));
}

std::vector<std::string> TinyConvNet::capture_layers() const {
    std::vector<std::string> names;
    for (size_t i = 0; i < convs_.size(); ++i) names.push_back("conv" + std::to_string(i + 1));
    return names;
}

std::string TinyConvNet::default_capture_layer() const {
    return "conv" + std::to_string(convs_.size());
}

ForwardCapture TinyConvNet::forward_with_capture(const Tensor& images,
                                                 const std::string& layer_id) {
    if (images.rank() != 4) throw ShapeError("expected Bx3xHxW image batch");
    std::string want = layer_id.empty() ? default_capture_layer() : layer_id;
    auto layers = capture_layers();
    int capture_at = -1;
    for (size_t i = 0; i < layers.size(); ++i)
        if (layers[i] == want) capture_at = static_cast<int>(i);
    if (capture_at < 0)
        throw ConfigError("unknown capture layer '" + want + "' for model " + name());

    Tensor x = images;
    Tensor captured;
    for (size_t i = 0; i < convs_.size(); ++i) {
        x = relu(convs_[i].forward(x));
        if (static_cast<int>(i) == capture_at) captured = x;
    }
    // global average pool
    int64_t B = x.dim(0), K = x.dim(1), hw = x.dim(2) * x.dim(3);
    Tensor pooled = reshape(mean_keepdims(reshape(x, {B, K, hw}), {2}), {B, K});
    Tensor logits = head_.forward(pooled);
    Tensor value = reshape(value_head_.forward(pooled), {B});
    if (!all_finite(logits) || !all_finite(captured))
        throw NumericError("non-finite activations in forward pass");
    return {logits, value, captured, want};
}

nn::NamedParams TinyConvNet::named_parameters() const {
    nn::NamedParams out;
    for (size_t i = 0; i < convs_.size(); ++i) convs_[i].collect("conv" + std::to_string(i + 1), out);
    head_.collect("head", out);
    value_head_.collect("value_head", out);
    return out;
}

// ---------------------------------------------------------------------------
// TinyPatchTransformer
// ---------------------------------------------------------------------------

TinyPatchTransformer::TinyPatchTransformer(int64_t n_classes, uint64_t seed, int64_t image_size,
                                           int64_t patch, int64_t dim, int depth, int heads)
    : n_classes_(n_classes),
      image_size_(image_size),
      patch_(patch),
      dim_(dim),
      grid_(image_size / patch),
      depth_(depth),
      heads_(heads) {
    if (image_size % patch != 0) throw ConfigError("image size must be divisible by patch size");
    if (dim % heads != 0) throw ConfigError("embed dim must be divisible by heads");
    Rng rng(seed ^ 0x564954ULL);
    int64_t pdim = 3 * patch * patch;
    patch_embed_w_ = nn::normal_init({dim, pdim}, 0.02f, rng);
    patch_embed_b_ = zeros({dim});
    patch_embed_b_.set_requires_grad(true);
    cls_token_ = nn::normal_init({1, 1, dim}, 0.02f, rng);
    pos_embed_ = nn::normal_init({1, grid_ * grid_ + 1, dim}, 0.02f, rng);
    for (int d = 0; d < depth; ++d) {
        Block blk;
        blk.ln1 = nn::LayerNorm(dim);
        blk.wq = nn::Linear(dim, dim, rng, 0.02f);
        blk.wk = nn::Linear(dim, dim, rng, 0.02f);
        blk.wv = nn::Linear(dim, dim, rng, 0.02f);
        blk.wo = nn::Linear(dim, dim, rng, 0.02f);
        blk.ln2 = nn::LayerNorm(dim);
        blk.fc1 = nn::Linear(dim, dim * 2, rng, 0.02f);
        blk.fc2 = nn::Linear(dim * 2, dim, rng, 0.02f);
        blocks_.push_back(std::move(blk));
    }
    final_ln_ = nn::LayerNorm(dim);
    head_ = nn::Linear(dim, n_classes, rng, 0.02f);
    value_head_ = nn::Linear(dim, 1, rng, 0.02f);
}

std::vector<std::string> TinyPatchTransformer::capture_layers() const {
    std::vector<std::string> names;
    for (int d = 0; d < depth_; ++d) names.push_back("block" + std::to_string(d + 1));
    return names;
}

std::string TinyPatchTransformer::default_capture_layer() const {
    return "block" + std::to_string(depth_);
}

Tensor TinyPatchTransformer::run_block(const Block& blk, const Tensor& x) const {
    int64_t B = x.dim(0), N = x.dim(1), D = dim_, H = heads_, dh = D / H;
    auto split_heads = [&](const Tensor& t) {
        // BxNxD -> (B*H) x N x dh
        Tensor r = reshape(t, {B, N, H, dh});
        return reshape(permute(r, {0, 2, 1, 3}), {B * H, N, dh});
    };
    Tensor xn = blk.ln1.forward(x);
    Tensor flat = reshape(xn, {B * N, D});
    Tensor q = split_heads(reshape(blk.wq.forward(flat), {B, N, D}));
    Tensor k = split_heads(reshape(blk.wk.forward(flat), {B, N, D}));
    Tensor v = split_heads(reshape(blk.wv.forward(flat), {B, N, D}));
    Tensor scores = mul_scalar(bmm(q, permute(k, {0, 2, 1})), 1.0f / std::sqrt(static_cast<float>(dh)));
    Tensor attn = softmax_lastdim(scores);
    Tensor ctx = bmm(attn, v);  // (B*H) x N x dh
    ctx = reshape(permute(reshape(ctx, {B, H, N, dh}), {0, 2, 1, 3}), {B * N, D});
    Tensor attended = add(x, reshape(blk.wo.forward(ctx), {B, N, D}));
    Tensor yn = blk.ln2.forward(attended);
    Tensor h1 = relu(blk.fc1.forward(reshape(yn, {B * N, D})));
    Tensor h2 = blk.fc2.forward(h1);
    return add(attended, reshape(h2, {B, N, D}));
}

ForwardCapture TinyPatchTransformer::forward_with_capture(const Tensor& images,
                                                          const std::string& layer_id) {
    if (images.rank() != 4) throw ShapeError("expected Bx3xHxW image batch");
    if (images.dim(2) != image_size_ || images.dim(3) != image_size_)
        throw ShapeError("image size mismatch: model built for " + std::to_string(image_size_));
    std::string want = layer_id.empty() ? default_capture_layer() : layer_id;
    auto layers = capture_layers();
    int capture_at = -1;
    for (size_t i = 0; i < layers.size(); ++i)
        if (layers[i] == want) capture_at = static_cast<int>(i);
    if (capture_at < 0)
        throw ConfigError("unknown capture layer '" + want + "' for model " + name());

    int64_t B = images.dim(0);
    int64_t N = grid_ * grid_;
    int64_t pdim = 3 * patch_ * patch_;
    // patch extraction: im2col with k = stride = patch
    Tensor cols = im2col(images, static_cast<int>(patch_), static_cast<int>(patch_),
                         static_cast<int>(patch_), 0);  // B x pdim x N
    Tensor tokens = permute(cols, {0, 2, 1});           // B x N x pdim
    Tensor emb = matmul(reshape(tokens, {B * N, pdim}), permute(patch_embed_w_, {1, 0}));
    emb = add(emb, reshape(patch_embed_b_, {1, dim_}));
    Tensor x = reshape(emb, {B, N, dim_});
    Tensor cls = broadcast_to(cls_token_, {B, 1, dim_});
    x = concat({cls, x}, 1);
    x = add(x, pos_embed_);

    SpatialReshapeRule rule{SpatialReshapeRule::Kind::DropLeadingToken, grid_, grid_};
    Tensor captured;
    for (int d = 0; d < depth_; ++d) {
        x = run_block(blocks_[static_cast<size_t>(d)], x);
        if (d == capture_at) {
            // expose the block output as spatial maps and route the graph
            // through them so gradients of any head scalar reach the capture
            captured = tokens_to_spatial(x, rule);
            Tensor cls_tok = slice(x, 1, 0, 1);
            x = concat({cls_tok, spatial_to_tokens(captured)}, 1);
        }
    }
    Tensor xn = final_ln_.forward(x);
    // heads read the mean of the patch tokens
    Tensor patches = slice(xn, 1, 1, N);
    Tensor pooled = reshape(mean_keepdims(patches, {1}), {B, dim_});
    Tensor logits = head_.forward(pooled);
    Tensor value = reshape(value_head_.forward(pooled), {B});
    if (!all_finite(logits) || !all_finite(captured))
        throw NumericError("non-finite activations in forward pass");
    return {logits, value, captured, want};
}

nn::NamedParams TinyPatchTransformer::named_parameters() const {
    nn::NamedParams out;
    out.emplace_back("patch_embed.weight", patch_embed_w_);
    out.emplace_back("patch_embed.bias", patch_embed_b_);
    out.emplace_back("cls_token", cls_token_);
    out.emplace_back("pos_embed", pos_embed_);
    for (size_t d = 0; d < blocks_.size(); ++d) {
        std::string p = "block" + std::to_string(d + 1);
        const Block& b = blocks_[d];
        b.ln1.collect(p + ".ln1", out);
        b.wq.collect(p + ".wq", out);
        b.wk.collect(p + ".wk", out);
        b.wv.collect(p + ".wv", out);
        b.wo.collect(p + ".wo", out);
        b.ln2.collect(p + ".ln2", out);
        b.fc1.collect(p + ".fc1", out);
        b.fc2.collect(p + ".fc2", out);
    }
    final_ln_.collect("final_ln", out);
    head_.collect("head", out);
    value_head_.collect("value_head", out);
    return out;
}

std::unique_ptr<Model> make_model(const ModelConfig& cfg) {
    if (cfg.name == "tiny_cnn") return std::make_unique<TinyConvNet>(cfg.n_classes, cfg.seed);
    if (cfg.name == "tiny_vit")
        return std::make_unique<TinyPatchTransformer>(cfg.n_classes, cfg.seed, cfg.image_size);
    throw ConfigError("unknown model '" + cfg.name + "' (expected tiny_cnn or tiny_vit)");
}

}  // namespace camal::models
