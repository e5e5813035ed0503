#include "camal/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "camal/common.hpp"
#include "camal/image_io.hpp"
#include "camal/rng.hpp"

namespace fs = std::filesystem;

namespace camal::data {

// ---------------------------------------------------------------------------
// synthetic rendering
// ---------------------------------------------------------------------------

namespace {

struct Pose {
    double cx, cy, r, theta;
};

// analytic footprints, evaluated at pixel centers
bool inside_disc(double x, double y, const Pose& p) {
    double dx = x - p.cx, dy = y - p.cy;
    return dx * dx + dy * dy <= p.r * p.r;
}

bool inside_triangle(double x, double y, const Pose& p) {
    double vx[3], vy[3];
    for (int k = 0; k < 3; ++k) {
        double a = p.theta + k * 2.0943951023931953;  // 120 degrees
        vx[k] = p.cx + p.r * std::cos(a);
        vy[k] = p.cy + p.r * std::sin(a);
    }
    // consistent half-plane test
    double d0 = (vx[1] - vx[0]) * (y - vy[0]) - (vy[1] - vy[0]) * (x - vx[0]);
    double d1 = (vx[2] - vx[1]) * (y - vy[1]) - (vy[2] - vy[1]) * (x - vx[1]);
    double d2 = (vx[0] - vx[2]) * (y - vy[2]) - (vy[0] - vy[2]) * (x - vx[2]);
    bool neg = (d0 < 0) || (d1 < 0) || (d2 < 0);
    bool pos = (d0 > 0) || (d1 > 0) || (d2 > 0);
    return !(neg && pos);
}

bool inside_rect(double x, double y, const Pose& p, double half_l, double half_w) {
    double dx = x - p.cx, dy = y - p.cy;
    double ux = dx * std::cos(-p.theta) - dy * std::sin(-p.theta);
    double uy = dx * std::sin(-p.theta) + dy * std::cos(-p.theta);
    return std::abs(ux) <= half_l && std::abs(uy) <= half_w;
}

bool inside_cross(double x, double y, const Pose& p) {
    Pose q = p;
    q.theta = p.theta + 1.5707963267948966;
    return inside_rect(x, y, p, p.r, p.r * 0.28) || inside_rect(x, y, q, p.r, p.r * 0.28);
}

bool inside_square(double x, double y, const Pose& p) {
    return inside_rect(x, y, p, p.r * 0.85, p.r * 0.85);
}

bool inside_diamond(double x, double y, const Pose& p) {
    double dx = std::abs(x - p.cx), dy = std::abs(y - p.cy);
    return dx + dy <= p.r * 1.15;
}

bool inside_shape(int cls, double x, double y, const Pose& p) {
    switch (cls % 5) {
        case 0: return inside_disc(x, y, p);
        case 1: return inside_triangle(x, y, p);
        case 2: return inside_cross(x, y, p);
        case 3: return inside_square(x, y, p);
        default: return inside_diamond(x, y, p);
    }
}

void fill_rect_rgb(std::vector<float>& img, int64_t S, int64_t x0, int64_t y0, int64_t w,
                   int64_t h, float r, float g, float b) {
    for (int64_t y = y0; y < std::min(S, y0 + h); ++y)
        for (int64_t x = x0; x < std::min(S, x0 + w); ++x) {
            img[static_cast<size_t>((0 * S + y) * S + x)] = r;
            img[static_cast<size_t>((1 * S + y) * S + x)] = g;
            img[static_cast<size_t>((2 * S + y) * S + x)] = b;
        }
}

// bright, class-indexed corner patch; drawn into the image only
void draw_corner_tag(std::vector<float>& img, int64_t S, int tag_class, int n_classes) {
    static const float colors[5][3] = {
        {1.0f, 0.15f, 0.15f}, {0.15f, 1.0f, 0.15f}, {0.2f, 0.4f, 1.0f},
        {1.0f, 1.0f, 0.2f},   {1.0f, 0.3f, 1.0f},
    };
    (void)n_classes;
    int corner = tag_class % 4;
    int64_t t = 7;
    int64_t x0 = (corner == 1 || corner == 3) ? S - t - 1 : 1;
    int64_t y0 = (corner == 2 || corner == 3) ? S - t - 1 : 1;
    const float* c = colors[tag_class % 5];
    fill_rect_rgb(img, S, x0, y0, t, t, c[0], c[1], c[2]);
}

MaskedSample render_sample(const SyntheticSpec& spec, int cls, int within_class, uint64_t index) {
    Rng rng = Rng::substream(spec.seed, index);
    int64_t S = spec.image_size;
    MaskedSample s;
    s.label = cls;
    s.height = S;
    s.width = S;
    {
        std::ostringstream id;
        id << "synth-c" << cls << "-s";
        id.width(3);
        id.fill('0');
        id << within_class;
        s.id = id.str();
    }

    // background: dark base with mild per-pixel noise
    std::vector<float> img(static_cast<size_t>(3 * S * S));
    float base[3];
    for (auto& b : base) b = static_cast<float>(rng.uniform(0.10, 0.35));
    for (int64_t c = 0; c < 3; ++c)
        for (int64_t i = 0; i < S * S; ++i)
            img[static_cast<size_t>(c * S * S + i)] =
                std::clamp(base[c] + static_cast<float>(rng.uniform(-0.05, 0.05)), 0.0f, 1.0f);

    // clutter: small distractor squares and dashes (never class shapes)
    int n_clutter = static_cast<int>(std::lround(spec.clutter_density * 8.0));
    for (int i = 0; i < n_clutter; ++i) {
        int64_t w = 2 + static_cast<int64_t>(rng.uniform_int(5));
        int64_t h = rng.bernoulli(0.5) ? w : 1 + static_cast<int64_t>(rng.uniform_int(2));
        int64_t x0 = static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(S - w)));
        int64_t y0 = static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(S - h)));
        fill_rect_rgb(img, S, x0, y0, w, h, static_cast<float>(rng.uniform(0.2, 0.9)),
                      static_cast<float>(rng.uniform(0.2, 0.9)),
                      static_cast<float>(rng.uniform(0.2, 0.9)));
    }

    // target shape; colors share one distribution across classes so the
    // label is carried by shape alone
    Pose pose;
    double margin = S / 4.0;
    pose.r = rng.uniform(S * 0.16, S * 0.24);
    pose.cx = rng.uniform(margin, S - margin);
    pose.cy = rng.uniform(margin, S - margin);
    pose.theta = rng.uniform(0.0, 6.283185307179586);
    float shape_col[3];
    for (auto& c : shape_col) c = static_cast<float>(rng.uniform(0.55, 1.0));

    s.mask.assign(static_cast<size_t>(S * S), 0);
    int64_t on = 0;
    for (int64_t y = 0; y < S; ++y)
        for (int64_t x = 0; x < S; ++x)
            if (inside_shape(cls, x + 0.5, y + 0.5, pose)) {
                s.mask[static_cast<size_t>(y * S + x)] = 1;
                ++on;
                for (int64_t c = 0; c < 3; ++c)
                    img[static_cast<size_t>((c * S + y) * S + x)] = shape_col[c];
            }
    if (on == 0 || on == S * S)
        throw DataError("degenerate shape footprint in generated sample " + s.id);

    s.eval_image = img;
    bool has_tag = rng.bernoulli(spec.spurious_correlation);
    int eval_tag_class = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(spec.n_classes)));
    if (has_tag) {
        draw_corner_tag(img, S, cls, spec.n_classes);
        draw_corner_tag(s.eval_image, S, eval_tag_class, spec.n_classes);
    }
    s.image = std::move(img);
    return s;
}

}  // namespace

Dataset generate_synthetic(const SyntheticSpec& spec) {
    if (spec.n_classes < 2 || spec.n_classes > 5)
        throw ConfigError("synthetic generator supports 2..5 classes");
    if (spec.samples_per_class < 1) throw ConfigError("samples_per_class must be positive");
    if (spec.spurious_correlation < 0.0 || spec.spurious_correlation > 1.0)
        throw ConfigError("spurious_correlation must lie in [0,1]");
    if (spec.image_size < 16) throw ConfigError("image_size too small to render shapes");
    Dataset ds;
    ds.height = ds.width = spec.image_size;
    ds.n_classes = spec.n_classes;
    uint64_t index = 0;
    for (int c = 0; c < spec.n_classes; ++c)
        for (int i = 0; i < spec.samples_per_class; ++i)
            ds.samples.push_back(render_sample(spec, c, i, index++));
    return ds;
}

// ---------------------------------------------------------------------------
// directory IO
// ---------------------------------------------------------------------------

namespace {

std::map<std::string, int> read_labels_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("missing labels file " + path);
    std::map<std::string, int> labels;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto comma = line.find(',');
        if (comma == std::string::npos) throw DataError("malformed labels row: " + line);
        std::string stem = line.substr(0, comma);
        std::string val = line.substr(comma + 1);
        if (first && stem == "stem") {  // optional header
            first = false;
            continue;
        }
        first = false;
        try {
            labels[stem] = std::stoi(val);
        } catch (...) {
            throw DataError("non-integer label for stem '" + stem + "'");
        }
    }
    return labels;
}

std::vector<uint8_t> load_binary_mask(const std::string& path, const std::string& stem,
                                      int64_t resize_to, int64_t crop_to) {
    ImageU8 raw = read_png(path);
    if (raw.channels != 1) throw DataError("mask '" + stem + "' is not single-channel");
    // values must be {0,255} within tolerance before thresholding
    for (uint8_t v : raw.pixels)
        if (v > 8 && v < 247)
            throw DataError("mask '" + stem + "' has non-binary value " + std::to_string(v));
    std::vector<uint8_t> m = raw.pixels;
    if (raw.width != resize_to || raw.height != resize_to)
        m = resize_nearest(m, raw.height, raw.width, resize_to, resize_to);
    if (crop_to < resize_to) m = center_crop(m, resize_to, resize_to, crop_to);
    for (auto& v : m) v = (v >= 128) ? 1 : 0;
    int64_t on = 0;
    for (uint8_t v : m) on += v;
    if (on == 0 || on == static_cast<int64_t>(m.size()))
        throw DataError("mask '" + stem + "' is degenerate after preprocessing");
    return m;
}

std::vector<float> load_image_chw(const std::string& path, int64_t resize_to, int64_t crop_to) {
    ImageU8 raw = read_png(path);
    std::vector<float> img;
    if (raw.channels == 1) {
        // promote grayscale to 3 channels
        ImageU8 rgb;
        rgb.width = raw.width;
        rgb.height = raw.height;
        rgb.channels = 3;
        rgb.pixels.resize(static_cast<size_t>(raw.width * raw.height * 3));
        for (int64_t i = 0; i < raw.width * raw.height; ++i)
            for (int64_t c = 0; c < 3; ++c)
                rgb.pixels[static_cast<size_t>(i * 3 + c)] = raw.pixels[static_cast<size_t>(i)];
        img = to_float_chw(rgb);
    } else {
        img = to_float_chw(raw);
    }
    if (raw.width != resize_to || raw.height != resize_to)
        img = resize_bilinear_chw(img, 3, raw.height, raw.width, resize_to, resize_to);
    if (crop_to < resize_to) img = center_crop_chw(img, 3, resize_to, resize_to, crop_to);
    return img;
}

}  // namespace

Dataset load_directory(const std::string& root, int64_t resize_to, int64_t crop_to) {
    fs::path r(root);
    if (!fs::is_directory(r / "images")) throw DataError("missing images/ under " + root);
    if (!fs::is_directory(r / "masks")) throw DataError("missing masks/ under " + root);
    if (crop_to > resize_to) throw ConfigError("crop size exceeds resize size");
    auto labels = read_labels_csv((r / "labels.csv").string());

    std::set<std::string> image_stems, mask_stems;
    for (const auto& e : fs::directory_iterator(r / "images"))
        if (e.path().extension() == ".png") image_stems.insert(e.path().stem().string());
    for (const auto& e : fs::directory_iterator(r / "masks"))
        if (e.path().extension() == ".png") mask_stems.insert(e.path().stem().string());

    for (const auto& s : image_stems) {
        if (!mask_stems.count(s)) throw DataError("image '" + s + "' has no mask counterpart");
        if (!labels.count(s)) throw DataError("image '" + s + "' has no labels.csv row");
    }
    for (const auto& s : mask_stems)
        if (!image_stems.count(s)) throw DataError("mask '" + s + "' has no image counterpart");

    bool has_eval = fs::is_directory(r / "images_eval");
    Dataset ds;
    ds.height = ds.width = crop_to;
    int max_label = -1;
    for (const auto& stem : image_stems) {
        MaskedSample s;
        s.id = stem;
        s.label = labels.at(stem);
        if (s.label < 0) throw DataError("negative label for stem '" + stem + "'");
        max_label = std::max(max_label, s.label);
        s.height = s.width = crop_to;
        s.image = load_image_chw((r / "images" / (stem + ".png")).string(), resize_to, crop_to);
        fs::path evalp = r / "images_eval" / (stem + ".png");
        s.eval_image = (has_eval && fs::exists(evalp))
                           ? load_image_chw(evalp.string(), resize_to, crop_to)
                           : s.image;
        s.mask = load_binary_mask((r / "masks" / (stem + ".png")).string(), stem, resize_to, crop_to);
        ds.samples.push_back(std::move(s));
    }
    ds.n_classes = max_label + 1;
    if (ds.samples.empty()) throw DataError("no samples under " + root);
    return ds;
}

void export_directory(const Dataset& ds, const std::string& out_dir, bool force) {
    fs::path r(out_dir);
    if (fs::exists(r) && !fs::is_empty(r) && !force)
        throw ConfigError("output directory " + out_dir + " is not empty (use --force)");
    fs::create_directories(r / "images");
    fs::create_directories(r / "masks");
    bool any_eval = false;
    for (const auto& s : ds.samples)
        if (s.eval_image != s.image) any_eval = true;
    if (any_eval) fs::create_directories(r / "images_eval");

    std::ofstream labels((r / "labels.csv").string());
    labels << "stem,label\n";
    for (const auto& s : ds.samples) {
        auto rgb = to_u8_hwc(s.image, 3, s.height, s.width);
        write_png_rgb((r / "images" / (s.id + ".png")).string(), rgb.data(), s.width, s.height);
        if (any_eval) {
            auto rgbe = to_u8_hwc(s.eval_image, 3, s.height, s.width);
            write_png_rgb((r / "images_eval" / (s.id + ".png")).string(), rgbe.data(), s.width,
                          s.height);
        }
        std::vector<uint8_t> m(s.mask.size());
        for (size_t i = 0; i < m.size(); ++i) m[i] = s.mask[i] ? 255 : 0;
        write_png_gray((r / "masks" / (s.id + ".png")).string(), m.data(), s.width, s.height);
        labels << s.id << "," << s.label << "\n";
    }
}

std::map<std::string, std::vector<uint8_t>> load_pseudo_masks(const std::string& dir,
                                                              const Dataset& ds) {
    fs::path d(dir);
    if (!fs::is_directory(d)) throw DataError("missing pseudo-mask directory " + dir);
    std::map<std::string, std::vector<uint8_t>> out;
    for (const auto& s : ds.samples) {
        fs::path p = d / (s.id + ".png");
        if (!fs::exists(p)) throw DataError("pseudo-mask missing for sample '" + s.id + "'");
        out[s.id] = load_binary_mask(p.string(), s.id, s.height, s.height);
    }
    return out;
}

void export_pseudo_masks(const Dataset& ds, const std::string& dir, int shift_px, int dilate_r) {
    fs::create_directories(dir);
    for (const auto& s : ds.samples) {
        int64_t H = s.height, W = s.width;
        // degraded stand-in for an external prior: shift then dilate
        std::vector<uint8_t> shifted(static_cast<size_t>(H * W), 0);
        for (int64_t y = 0; y < H; ++y)
            for (int64_t x = 0; x < W; ++x) {
                int64_t sy = y - shift_px, sx = x - shift_px;
                if (sy >= 0 && sy < H && sx >= 0 && sx < W)
                    shifted[static_cast<size_t>(y * W + x)] = s.mask[static_cast<size_t>(sy * W + sx)];
            }
        std::vector<uint8_t> dil(static_cast<size_t>(H * W), 0);
        for (int64_t y = 0; y < H; ++y)
            for (int64_t x = 0; x < W; ++x) {
                uint8_t v = 0;
                for (int64_t dy = -dilate_r; dy <= dilate_r && !v; ++dy)
                    for (int64_t dx = -dilate_r; dx <= dilate_r && !v; ++dx) {
                        int64_t yy = y + dy, xx = x + dx;
                        if (yy >= 0 && yy < H && xx >= 0 && xx < W &&
                            shifted[static_cast<size_t>(yy * W + xx)])
                            v = 1;
                    }
                dil[static_cast<size_t>(y * W + x)] = v;
            }
        // keep the file non-degenerate even for edge-hugging shapes
        if (std::count(dil.begin(), dil.end(), 1) == 0) dil = s.mask;
        std::vector<uint8_t> png(dil.size());
        for (size_t i = 0; i < dil.size(); ++i) png[i] = dil[i] ? 255 : 0;
        write_png_gray((fs::path(dir) / (s.id + ".png")).string(), png.data(), W, H);
    }
}

// ---------------------------------------------------------------------------
// folds
// ---------------------------------------------------------------------------

FoldPlan make_folds(const Dataset& ds, int k, uint64_t seed) {
    if (k < 2) throw ConfigError("k-fold needs k >= 2");
    std::map<int, std::vector<std::string>> per_class;
    for (const auto& s : ds.samples) per_class[s.label].push_back(s.id);
    FoldPlan plan;
    plan.k = k;
    plan.seed = seed;
    Rng rng(seed ^ 0xf01d5ULL);
    for (auto& [cls, ids] : per_class) {
        if (static_cast<int>(ids.size()) < k)
            throw DataError("class " + std::to_string(cls) + " has " +
                            std::to_string(ids.size()) + " samples, fewer than k=" +
                            std::to_string(k));
        std::sort(ids.begin(), ids.end());
        rng.shuffle(ids);
        for (size_t i = 0; i < ids.size(); ++i)
            plan.assignments[ids[i]] = static_cast<int>(i % static_cast<size_t>(k));
    }
    return plan;
}

std::vector<int> FoldPlan::train_indices(const Dataset& ds, int fold) const {
    std::vector<int> out;
    for (size_t i = 0; i < ds.samples.size(); ++i)
        if (assignments.at(ds.samples[i].id) != fold) out.push_back(static_cast<int>(i));
    return out;
}

std::vector<int> FoldPlan::test_indices(const Dataset& ds, int fold) const {
    std::vector<int> out;
    for (size_t i = 0; i < ds.samples.size(); ++i)
        if (assignments.at(ds.samples[i].id) == fold) out.push_back(static_cast<int>(i));
    return out;
}

// ---------------------------------------------------------------------------
// batching
// ---------------------------------------------------------------------------

Tensor image_batch(const Dataset& ds, const std::vector<int>& idxs, bool eval_view) {
    int64_t B = static_cast<int64_t>(idxs.size());
    int64_t chw = 3 * ds.height * ds.width;
    std::vector<float> v(static_cast<size_t>(B * chw));
    for (int64_t b = 0; b < B; ++b) {
        const auto& s = ds.samples[static_cast<size_t>(idxs[static_cast<size_t>(b)])];
        const auto& src = eval_view ? s.eval_image : s.image;
        std::copy(src.begin(), src.end(), v.begin() + b * chw);
    }
    return from_data({B, 3, ds.height, ds.width}, std::move(v));
}

Tensor mask_batch(const Dataset& ds, const std::vector<int>& idxs) {
    int64_t B = static_cast<int64_t>(idxs.size());
    int64_t hw = ds.height * ds.width;
    std::vector<float> v(static_cast<size_t>(B * hw));
    for (int64_t b = 0; b < B; ++b) {
        const auto& s = ds.samples[static_cast<size_t>(idxs[static_cast<size_t>(b)])];
        for (int64_t i = 0; i < hw; ++i) v[static_cast<size_t>(b * hw + i)] = s.mask[static_cast<size_t>(i)];
    }
    return from_data({B, ds.height, ds.width}, std::move(v));
}

Tensor mask_batch_from(const Dataset& ds, const std::vector<int>& idxs,
                       const std::map<std::string, std::vector<uint8_t>>& source) {
    int64_t B = static_cast<int64_t>(idxs.size());
    int64_t hw = ds.height * ds.width;
    std::vector<float> v(static_cast<size_t>(B * hw));
    for (int64_t b = 0; b < B; ++b) {
        const auto& s = ds.samples[static_cast<size_t>(idxs[static_cast<size_t>(b)])];
        auto it = source.find(s.id);
        if (it == source.end()) throw DataError("no mask for sample '" + s.id + "'");
        for (int64_t i = 0; i < hw; ++i)
            v[static_cast<size_t>(b * hw + i)] = it->second[static_cast<size_t>(i)];
    }
    return from_data({B, ds.height, ds.width}, std::move(v));
}

std::vector<int64_t> label_batch(const Dataset& ds, const std::vector<int>& idxs) {
    std::vector<int64_t> out;
    out.reserve(idxs.size());
    for (int i : idxs) out.push_back(ds.samples[static_cast<size_t>(i)].label);
    return out;
}

}  // namespace camal::data
