#include "camal/attention.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>

#include "camal/common.hpp"
#include "camal/image_io.hpp"

namespace camal::attention {

Tensor gradcam_batch(const Tensor& features, const Tensor& grads) {
    if (features.shape() != grads.shape())
        throw ShapeError("gradcam_batch: features " + shape_str(features.shape()) +
                         " vs grads " + shape_str(grads.shape()));
    if (features.rank() != 4) throw ShapeError("gradcam_batch expects BxKxhxw");
    int64_t B = features.dim(0), K = features.dim(1), h = features.dim(2), w = features.dim(3);
    Tensor g2 = reshape(grads, {B, K, h * w});
    Tensor wk = reshape(mean_keepdims(g2, {2}), {B, K, 1, 1});
    Tensor weighted = mul(features, wk);                       // B x K x h x w
    Tensor cam = mul_scalar(sum_keepdims(weighted, {1}), 1.0f / static_cast<float>(K));
    return relu(reshape(cam, {B, h, w}));
}

Tensor gradcam_per_sample_oracle(models::Model& model, const Tensor& images,
                                 const models::ScalarTargetSelector& sel,
                                 const std::string& layer_id) {
    auto fc = model.forward_with_capture(images, layer_id);
    Tensor scalars = models::select_scalar(
        sel.mode == models::ScalarTargetSelector::Mode::ValueHead ? fc.value : fc.logits, sel);
    int64_t B = fc.features.dim(0), K = fc.features.dim(1);
    int64_t h = fc.features.dim(2), w = fc.features.dim(3);
    std::vector<float> cams(static_cast<size_t>(B * h * w));
    for (int64_t b = 0; b < B; ++b) {
        Tensor yb = slice(scalars, 0, b, 1);  // {1}
        Tensor gb = grad(yb, {fc.features}, /*create_graph=*/false)[0];
        autograd::NoGradGuard ng;
        Tensor fb = slice(constant_like(fc.features), 0, b, 1);
        Tensor gbb = slice(gb, 0, b, 1);
        Tensor cam_b = gradcam_batch(fb, gbb);  // 1 x h x w
        std::memcpy(cams.data() + b * h * w, cam_b.data(),
                    static_cast<size_t>(h * w) * sizeof(float));
    }
    (void)K;
    return from_data({B, h, w}, std::move(cams));
}

AttentionMapBatch normalize_minmax(const Tensor& raw_cam) {
    if (raw_cam.rank() != 3) throw ShapeError("normalize_minmax expects BxHxW");
    if (!all_finite(raw_cam)) throw NumericError("non-finite CAM values");
    int64_t B = raw_cam.dim(0), H = raw_cam.dim(1), W = raw_cam.dim(2);
    Tensor x2 = reshape(raw_cam, {B, H * W});
    Tensor mx = row_max(x2);
    Tensor mn = row_min(x2);
    Tensor den = sub(mx, mn);
    // data-dependent degeneracy mask: constant w.r.t. the graph
    std::vector<float> maskv(static_cast<size_t>(B)), padv(static_cast<size_t>(B));
    for (int64_t b = 0; b < B; ++b) {
        bool degenerate = den.data()[b] == 0.0f;
        maskv[static_cast<size_t>(b)] = degenerate ? 0.0f : 1.0f;
        padv[static_cast<size_t>(b)] = degenerate ? 1.0f : 0.0f;
    }
    Tensor mask = from_data({B, 1}, std::move(maskv));
    Tensor safe_den = add(den, from_data({B, 1}, std::move(padv)));
    Tensor out = mul(div(sub(x2, mn), safe_den), mask);
    return {reshape(out, {B, H, W}), H, W};
}

int64_t count_degenerate(const Tensor& raw_cam) {
    int64_t B = raw_cam.dim(0), HW = raw_cam.numel() / raw_cam.dim(0);
    const float* p = raw_cam.data();
    int64_t n = 0;
    for (int64_t b = 0; b < B; ++b) {
        float mn = p[b * HW], mx = p[b * HW];
        for (int64_t i = 1; i < HW; ++i) {
            mn = std::min(mn, p[b * HW + i]);
            mx = std::max(mx, p[b * HW + i]);
        }
        if (mx == mn) ++n;
    }
    return n;
}

AttentionMapBatch upsample_to(const AttentionMapBatch& maps, int64_t H, int64_t W) {
    if (H < maps.values.dim(1) || W < maps.values.dim(2))
        throw ShapeError("upsample_to: downscaling is unsupported");
    if (H == maps.values.dim(1) && W == maps.values.dim(2)) return maps;
    return {bilinear_upsample(maps.values, H, W), maps.source_h, maps.source_w};
}

void export_png(const AttentionMapBatch& maps, int64_t sample, const std::string& path) {
    int64_t B = maps.values.dim(0), H = maps.values.dim(1), W = maps.values.dim(2);
    if (sample < 0 || sample >= B) throw IndexError("sample index out of range");
    std::vector<uint8_t> gray(static_cast<size_t>(H * W));
    const float* p = maps.values.data() + sample * H * W;
    for (int64_t i = 0; i < H * W; ++i)
        gray[static_cast<size_t>(i)] =
            static_cast<uint8_t>(std::lround(255.0f * std::min(1.0f, std::max(0.0f, p[i]))));
    write_png_gray(path, gray.data(), W, H);
}

// container: magic "CMLT", u32 version, u32 ndim, u64 dims[ndim], f32 data (LE)
void export_raw(const AttentionMapBatch& maps, const std::string& path) {
    FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw DataError("cannot open " + path + " for writing");
    const Tensor& t = maps.values;
    uint32_t version = 1, ndim = static_cast<uint32_t>(t.rank());
    std::fwrite("CMLT", 1, 4, f);
    std::fwrite(&version, sizeof version, 1, f);
    std::fwrite(&ndim, sizeof ndim, 1, f);
    for (size_t i = 0; i < t.rank(); ++i) {
        uint64_t d = static_cast<uint64_t>(t.dim(i));
        std::fwrite(&d, sizeof d, 1, f);
    }
    std::fwrite(t.data(), sizeof(float), static_cast<size_t>(t.numel()), f);
    std::fclose(f);
}

Tensor import_raw(const std::string& path) {
    FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw DataError("cannot open " + path);
    char magic[4];
    uint32_t version = 0, ndim = 0;
    if (std::fread(magic, 1, 4, f) != 4 || std::memcmp(magic, "CMLT", 4) != 0 ||
        std::fread(&version, sizeof version, 1, f) != 1 ||
        std::fread(&ndim, sizeof ndim, 1, f) != 1 || ndim == 0 || ndim > 8) {
        std::fclose(f);
        throw DataError("bad tensor container header in " + path);
    }
    Shape shape(ndim);
    for (uint32_t i = 0; i < ndim; ++i) {
        uint64_t d = 0;
        if (std::fread(&d, sizeof d, 1, f) != 1) {
            std::fclose(f);
            throw DataError("truncated tensor container " + path);
        }
        shape[i] = static_cast<int64_t>(d);
    }
    std::vector<float> data(static_cast<size_t>(numel_of(shape)));
    size_t got = std::fread(data.data(), sizeof(float), data.size(), f);
    std::fclose(f);
    if (got != data.size()) throw DataError("truncated tensor container " + path);
    return from_data(shape, std::move(data));
}

}  // namespace camal::attention
