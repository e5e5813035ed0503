#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace camal {

struct ImageU8 {
    int64_t width = 0, height = 0, channels = 0;  // interleaved rows
    std::vector<uint8_t> pixels;
};

ImageU8 read_png(const std::string& path);
void write_png_gray(const std::string& path, const uint8_t* data, int64_t w, int64_t h);
void write_png_rgb(const std::string& path, const uint8_t* data, int64_t w, int64_t h);

// channel-major float image helpers (C x H x W, values in [0,1])
std::vector<float> to_float_chw(const ImageU8& img);
std::vector<uint8_t> to_u8_hwc(const std::vector<float>& chw, int64_t c, int64_t h, int64_t w);

// bilinear resize of a CxHxW float image
std::vector<float> resize_bilinear_chw(const std::vector<float>& img, int64_t c, int64_t h,
                                       int64_t w, int64_t H, int64_t W);
// nearest-neighbor resize of an HxW byte mask
std::vector<uint8_t> resize_nearest(const std::vector<uint8_t>& m, int64_t h, int64_t w, int64_t H,
                                    int64_t W);
// center crop
std::vector<float> center_crop_chw(const std::vector<float>& img, int64_t c, int64_t h, int64_t w,
                                   int64_t crop);
std::vector<uint8_t> center_crop(const std::vector<uint8_t>& m, int64_t h, int64_t w, int64_t crop);

}  // namespace camal
