#include "camal/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <png.h>

#include "camal/common.hpp"

namespace camal {

ImageU8 read_png(const std::string& path) {
    png_image img;
    std::memset(&img, 0, sizeof img);
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.c_str()))
        throw DataError("cannot read PNG " + path + ": " + img.message);
    bool gray = (img.format & PNG_FORMAT_FLAG_COLOR) == 0;
    img.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    ImageU8 out;
    out.width = img.width;
    out.height = img.height;
    out.channels = gray ? 1 : 3;
    out.pixels.resize(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
        png_image_free(&img);
        throw DataError("cannot decode PNG " + path + ": " + img.message);
    }
    return out;
}

static void write_png(const std::string& path, const uint8_t* data, int64_t w, int64_t h,
                      uint32_t format) {
    png_image img;
    std::memset(&img, 0, sizeof img);
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(w);
    img.height = static_cast<png_uint_32>(h);
    img.format = format;
    if (!png_image_write_to_file(&img, path.c_str(), 0, data, 0, nullptr))
        throw DataError("cannot write PNG " + path + ": " + img.message);
}

void write_png_gray(const std::string& path, const uint8_t* data, int64_t w, int64_t h) {
    write_png(path, data, w, h, PNG_FORMAT_GRAY);
}

void write_png_rgb(const std::string& path, const uint8_t* data, int64_t w, int64_t h) {
    write_png(path, data, w, h, PNG_FORMAT_RGB);
}

std::vector<float> to_float_chw(const ImageU8& img) {
    std::vector<float> out(static_cast<size_t>(img.channels * img.height * img.width));
    for (int64_t c = 0; c < img.channels; ++c)
        for (int64_t y = 0; y < img.height; ++y)
            for (int64_t x = 0; x < img.width; ++x)
                out[static_cast<size_t>((c * img.height + y) * img.width + x)] =
                    static_cast<float>(img.pixels[static_cast<size_t>((y * img.width + x) * img.channels + c)]) /
                    255.0f;
    return out;
}

std::vector<uint8_t> to_u8_hwc(const std::vector<float>& chw, int64_t c, int64_t h, int64_t w) {
    std::vector<uint8_t> out(static_cast<size_t>(c * h * w));
    for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x) {
                float v = chw[static_cast<size_t>((ch * h + y) * w + x)];
                v = std::min(1.0f, std::max(0.0f, v));
                out[static_cast<size_t>((y * w + x) * c + ch)] =
                    static_cast<uint8_t>(std::lround(255.0f * v));
            }
    return out;
}

std::vector<float> resize_bilinear_chw(const std::vector<float>& img, int64_t c, int64_t h,
                                       int64_t w, int64_t H, int64_t W) {
    std::vector<float> out(static_cast<size_t>(c * H * W));
    double sy = static_cast<double>(h) / H, sx = static_cast<double>(w) / W;
    for (int64_t ch = 0; ch < c; ++ch) {
        const float* src = img.data() + ch * h * w;
        float* dst = out.data() + ch * H * W;
        for (int64_t oy = 0; oy < H; ++oy) {
            double fy = (oy + 0.5) * sy - 0.5;
            int64_t y0 = static_cast<int64_t>(std::floor(fy));
            float wy = static_cast<float>(fy - y0);
            int64_t y1 = std::min(y0 + 1, h - 1);
            y0 = std::max<int64_t>(0, std::min(y0, h - 1));
            for (int64_t ox = 0; ox < W; ++ox) {
                double fx = (ox + 0.5) * sx - 0.5;
                int64_t x0 = static_cast<int64_t>(std::floor(fx));
                float wx = static_cast<float>(fx - x0);
                int64_t x1 = std::min(x0 + 1, w - 1);
                x0 = std::max<int64_t>(0, std::min(x0, w - 1));
                float top = src[y0 * w + x0] * (1 - wx) + src[y0 * w + x1] * wx;
                float bot = src[y1 * w + x0] * (1 - wx) + src[y1 * w + x1] * wx;
                dst[oy * W + ox] = top * (1 - wy) + bot * wy;
            }
        }
    }
    return out;
}

std::vector<uint8_t> resize_nearest(const std::vector<uint8_t>& m, int64_t h, int64_t w, int64_t H,
                                    int64_t W) {
    std::vector<uint8_t> out(static_cast<size_t>(H * W));
    double sy = static_cast<double>(h) / H, sx = static_cast<double>(w) / W;
    for (int64_t oy = 0; oy < H; ++oy) {
        int64_t iy = std::min<int64_t>(h - 1, static_cast<int64_t>((oy + 0.5) * sy));
        for (int64_t ox = 0; ox < W; ++ox) {
            int64_t ix = std::min<int64_t>(w - 1, static_cast<int64_t>((ox + 0.5) * sx));
            out[static_cast<size_t>(oy * W + ox)] = m[static_cast<size_t>(iy * w + ix)];
        }
    }
    return out;
}

std::vector<float> center_crop_chw(const std::vector<float>& img, int64_t c, int64_t h, int64_t w,
                                   int64_t crop) {
    if (crop > h || crop > w) throw DataError("crop larger than image");
    int64_t oy = (h - crop) / 2, ox = (w - crop) / 2;
    std::vector<float> out(static_cast<size_t>(c * crop * crop));
    for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t y = 0; y < crop; ++y)
            for (int64_t x = 0; x < crop; ++x)
                out[static_cast<size_t>((ch * crop + y) * crop + x)] =
                    img[static_cast<size_t>((ch * h + y + oy) * w + x + ox)];
    return out;
}

std::vector<uint8_t> center_crop(const std::vector<uint8_t>& m, int64_t h, int64_t w, int64_t crop) {
    if (crop > h || crop > w) throw DataError("crop larger than image");
    int64_t oy = (h - crop) / 2, ox = (w - crop) / 2;
    std::vector<uint8_t> out(static_cast<size_t>(crop * crop));
    for (int64_t y = 0; y < crop; ++y)
        for (int64_t x = 0; x < crop; ++x)
            out[static_cast<size_t>(y * crop + x)] = m[static_cast<size_t>((y + oy) * w + x + ox)];
    return out;
}

}  // namespace camal
