#include "tagat/data_io.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include <nlohmann/json.hpp>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "tagat/error.hpp"

namespace tagat {

namespace {

constexpr double kPi = 3.14159265358979323846;

struct LoadedImage {
    Plane luminance;
    std::optional<std::array<Plane, 2>> chroma;
};

// BT.601 full-range luma/chroma split.
LoadedImage split_color(const cv::Mat& img) {
    LoadedImage out;
    const int h = img.rows, w = img.cols;
    out.luminance = Plane(h, w);
    const bool color = img.channels() >= 3;
    if (color) out.chroma = std::array<Plane, 2>{Plane(h, w), Plane(h, w)};

    double scale = 1.0;
    if (img.depth() == CV_8U) scale = 1.0 / 255.0;
    else if (img.depth() == CV_16U) scale = 1.0 / 65535.0;
    else throw FormatError("load_pair: only 8-bit and 16-bit images are supported");

    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double r, g, b;
            if (img.channels() == 1) {
                double v = img.depth() == CV_8U ? img.at<uint8_t>(y, x) : img.at<uint16_t>(y, x);
                out.luminance.at(y, x) = v * scale;
                continue;
            }
            if (img.depth() == CV_8U) {
                const auto* p = img.ptr<uint8_t>(y) + static_cast<size_t>(x) * img.channels();
                b = p[0] * scale;
                g = p[1] * scale;
                r = p[2] * scale;
            } else {
                const auto* p = img.ptr<uint16_t>(y) + static_cast<size_t>(x) * img.channels();
                b = p[0] * scale;
                g = p[1] * scale;
                r = p[2] * scale;
            }
            double yv = 0.299 * r + 0.587 * g + 0.114 * b;
            out.luminance.at(y, x) = clamp01(yv);
            (*out.chroma)[0].at(y, x) = clamp01((r - yv) * 0.713 + 0.5);
            (*out.chroma)[1].at(y, x) = clamp01((b - yv) * 0.564 + 0.5);
        }
    return out;
}

LoadedImage load_image(const std::string& path) {
    if (!std::filesystem::exists(path)) throw FormatError("load_pair: no such file: " + path);
    cv::Mat img = cv::imread(path, cv::IMREAD_UNCHANGED);
    if (img.empty()) throw FormatError("load_pair: cannot decode: " + path);
    if (img.channels() != 1 && img.channels() != 3 && img.channels() != 4)
        throw FormatError("load_pair: unsupported channel count in " + path);
    if (img.channels() == 4) { // drop alpha
        std::vector<cv::Mat> ch;
        cv::split(img, ch);
        ch.resize(3);
        cv::merge(ch, img);
    }
    return split_color(img);
}

Plane load_mask(const std::string& path) {
    if (!std::filesystem::exists(path)) throw FormatError("mask: no such file: " + path);
    cv::Mat img = cv::imread(path, cv::IMREAD_GRAYSCALE);
    if (img.empty()) throw FormatError("mask: cannot decode: " + path);
    Plane m(img.rows, img.cols);
    for (int y = 0; y < img.rows; ++y)
        for (int x = 0; x < img.cols; ++x) m.at(y, x) = img.at<uint8_t>(y, x) > 127 ? 1.0 : 0.0;
    return m;
}

void binarize(Plane& m) {
    for (double& v : m.v) v = v >= 0.5 ? 1.0 : 0.0;
}

} // namespace

void RegisteredPair::validate() const {
    if (!image1.same_size(image2))
        throw RegistrationError("pair " + id + ": image dimensions differ");
    auto check_mask = [&](const std::optional<Plane>& m, const char* name) {
        if (!m) return;
        if (!m->same_size(image1))
            throw RegistrationError("pair " + id + ": " + name + " dimensions differ");
        for (double v : m->v)
            if (v != 0.0 && v != 1.0) throw FormatError("pair " + id + ": mask not binary");
    };
    check_mask(mask1, "mask1");
    check_mask(mask2, "mask2");
    for (double v : image1.v)
        if (v < 0.0 || v > 1.0) throw FormatError("pair " + id + ": image1 out of [0,1]");
    for (double v : image2.v)
        if (v < 0.0 || v > 1.0) throw FormatError("pair " + id + ": image2 out of [0,1]");
}

AugmentationSpec::AugmentationSpec(bool flip, double rot_deg, int tx, int ty)
    : horizontal_flip(flip), rotation_degrees(rot_deg), translate_x(tx), translate_y(ty) {
    if (rot_deg < -8.0 || rot_deg > 8.0)
        throw ConfigError("AugmentationSpec: rotation must lie in [-8, 8] degrees");
    if (tx < -20 || tx > 20 || ty < -20 || ty > 20)
        throw ConfigError("AugmentationSpec: translation must lie in [-20, 20] px");
}

AugmentationSpec AugmentationSpec::random(uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> flip(0, 1);
    std::uniform_real_distribution<double> rot(-8.0, 8.0);
    std::uniform_int_distribution<int> trans(-20, 20);
    bool f = flip(rng) != 0;
    double r = rot(rng);
    int tx = trans(rng), ty = trans(rng);
    return AugmentationSpec(f, r, tx, ty);
}

RegisteredPair load_pair(const std::string& path1, const std::string& path2,
                         const std::optional<std::string>& mask_path1,
                         const std::optional<std::string>& mask_path2, const std::string& id) {
    RegisteredPair pair;
    pair.id = id.empty() ? std::filesystem::path(path1).stem().string() : id;
    LoadedImage a = load_image(path1);
    LoadedImage b = load_image(path2);
    pair.image1 = std::move(a.luminance);
    pair.image2 = std::move(b.luminance);
    pair.chroma1 = std::move(a.chroma);
    pair.chroma2 = std::move(b.chroma);
    if (!pair.image1.same_size(pair.image2))
        throw RegistrationError("load_pair: dimensions differ between " + path1 + " and " + path2);
    if (mask_path1) pair.mask1 = load_mask(*mask_path1);
    if (mask_path2) pair.mask2 = load_mask(*mask_path2);
    pair.validate();
    return pair;
}

RegisteredPair augment(const RegisteredPair& pair, const AugmentationSpec& spec) {
    const int h = pair.image1.h, w = pair.image1.w;
    const double cx = (w - 1) / 2.0, cy = (h - 1) / 2.0;
    const double th = spec.rotation_degrees * kPi / 180.0;
    const double c = std::cos(th), s = std::sin(th);
    const double ox = cx + spec.translate_x, oy = cy + spec.translate_y;

    // output -> input map: undo translation+rotation about center, then
    // mirror (flip was applied to the input first).
    double m[6];
    m[0] = c;
    m[1] = s;
    m[2] = cx - c * ox - s * oy;
    m[3] = -s;
    m[4] = c;
    m[5] = cy + s * ox - c * oy;
    if (spec.horizontal_flip) {
        m[0] = -m[0];
        m[1] = -m[1];
        m[2] = (w - 1) - m[2];
    }

    RegisteredPair out;
    out.id = pair.id;
    out.image1 = warp_affine_bilinear(pair.image1, m);
    out.image2 = warp_affine_bilinear(pair.image2, m);
    auto warp_chroma = [&](const std::optional<std::array<Plane, 2>>& ch) {
        std::optional<std::array<Plane, 2>> r;
        if (ch) r = std::array<Plane, 2>{warp_affine_bilinear((*ch)[0], m),
                                         warp_affine_bilinear((*ch)[1], m)};
        return r;
    };
    out.chroma1 = warp_chroma(pair.chroma1);
    out.chroma2 = warp_chroma(pair.chroma2);
    auto warp_mask = [&](const std::optional<Plane>& mk) {
        std::optional<Plane> r;
        if (mk) {
            r = warp_affine_nearest(*mk, m);
            binarize(*r);
        }
        return r;
    };
    out.mask1 = warp_mask(pair.mask1);
    out.mask2 = warp_mask(pair.mask2);
    return out;
}

namespace {

// Recursive vascular tree: polyline strokes with shrinking width, two
// children per branch below the requested depth.
struct TreePoint {
    double x, y, r;
};

void grow_branch(std::vector<TreePoint>& pts, std::mt19937_64& rng, double x, double y,
                 double dir, double len, double width, int level, int depth, int h, int w) {
    std::uniform_real_distribution<double> wiggle(-0.12, 0.12);
    std::uniform_real_distribution<double> split_angle(0.3, 0.65);
    std::uniform_real_distribution<double> split_len(0.62, 0.78);
    const double margin = std::max(5.0, std::min(h, w) / 12.0);
    const double step = 1.5;
    int steps = std::max(4, static_cast<int>(len / step));
    for (int i = 0; i < steps; ++i) {
        dir += wiggle(rng);
        // steer back toward the interior near the frame
        double tx = x + step * std::cos(dir), ty = y + step * std::sin(dir);
        if (tx < margin || tx > w - 1 - margin) dir = kPi - dir + wiggle(rng);
        if (ty < margin || ty > h - 1 - margin) dir = -dir + wiggle(rng);
        x += step * std::cos(dir);
        y += step * std::sin(dir);
        x = std::clamp(x, margin, w - 1 - margin);
        y = std::clamp(y, margin, h - 1 - margin);
        pts.push_back({x, y, width});
        width *= 0.995;
    }
    if (level < depth) {
        double a = split_angle(rng), la = split_len(rng), lb = split_len(rng);
        double cw = std::max(0.9, width * 0.78);
        grow_branch(pts, rng, x, y, dir + a, len * la, cw, level + 1, depth, h, w);
        grow_branch(pts, rng, x, y, dir - a, len * lb, cw, level + 1, depth, h, w);
    }
}

Plane stamp_mask(const std::vector<TreePoint>& pts, int h, int w) {
    Plane m(h, w);
    for (const auto& p : pts) {
        int y0 = std::max(0, static_cast<int>(std::floor(p.y - p.r)));
        int y1 = std::min(h - 1, static_cast<int>(std::ceil(p.y + p.r)));
        int x0 = std::max(0, static_cast<int>(std::floor(p.x - p.r)));
        int x1 = std::min(w - 1, static_cast<int>(std::ceil(p.x + p.r)));
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                double dx = x - p.x, dy = y - p.y;
                if (dx * dx + dy * dy <= p.r * p.r) m.at(y, x) = 1.0;
            }
    }
    return m;
}

Plane render_modality(const Plane& mask, const ContrastProfile& prof, std::mt19937_64& rng) {
    const int h = mask.h, w = mask.w;
    Plane img(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double ramp = prof.gradient_amplitude *
                          ((x / std::max(1.0, w - 1.0) - 0.5) +
                           0.5 * (y / std::max(1.0, h - 1.0) - 0.5));
            double base = prof.background_intensity + ramp;
            img.at(y, x) = mask.at(y, x) > 0.5 ? prof.vessel_intensity : base;
        }
    if (prof.blur_sigma > 0) img = gaussian_blur(img, prof.blur_sigma);
    if (prof.noise_std > 0) {
        std::normal_distribution<double> noise(0.0, prof.noise_std);
        for (double& v : img.v) v += noise(rng);
    }
    for (double& v : img.v) v = clamp01(v);
    return img;
}

} // namespace

void SyntheticSceneSpec::validate() const {
    if (height <= 0 || width <= 0) throw ConfigError("SyntheticSceneSpec: size must be positive");
    if (vessel_tree_depth < 1) throw ConfigError("SyntheticSceneSpec: depth must be >= 1");
}

RegisteredPair generate_synthetic_pair(const SyntheticSceneSpec& spec) {
    spec.validate();
    std::mt19937_64 rng(spec.seed * 0x9E3779B97F4A7C15ull + 0xD1B54A32D192ED03ull);
    const int h = spec.height, w = spec.width;

    std::uniform_real_distribution<double> ystart(0.35, 0.65);
    std::uniform_real_distribution<double> dstart(-0.25, 0.25);
    std::vector<TreePoint> pts;
    double width0 = std::max(1.6, std::min(h, w) / 26.0);
    double len0 = 0.55 * std::max(h, w);
    grow_branch(pts, rng, std::max(6.0, w / 12.0), ystart(rng) * h, dstart(rng), len0, width0, 1,
                spec.vessel_tree_depth, h, w);
    Plane mask = stamp_mask(pts, h, w);

    RegisteredPair pair;
    pair.id = "synthetic-" + std::to_string(spec.seed);
    pair.image1 = render_modality(mask, spec.profile1, rng);
    pair.image2 = render_modality(mask, spec.profile2, rng);
    pair.mask1 = mask;
    pair.mask2 = mask;
    return pair;
}

RegisteredPair resize_pair(const RegisteredPair& pair, int target_h, int target_w) {
    if (target_h <= 0 || target_w <= 0) throw ShapeError("resize_pair: target must be positive");
    RegisteredPair out;
    out.id = pair.id;
    out.image1 = resize_bilinear(pair.image1, target_h, target_w);
    out.image2 = resize_bilinear(pair.image2, target_h, target_w);
    auto rs_chroma = [&](const std::optional<std::array<Plane, 2>>& ch) {
        std::optional<std::array<Plane, 2>> r;
        if (ch) r = std::array<Plane, 2>{resize_bilinear((*ch)[0], target_h, target_w),
                                         resize_bilinear((*ch)[1], target_h, target_w)};
        return r;
    };
    out.chroma1 = rs_chroma(pair.chroma1);
    out.chroma2 = rs_chroma(pair.chroma2);
    auto rs_mask = [&](const std::optional<Plane>& m) {
        std::optional<Plane> r;
        if (m) {
            r = resize_nearest(*m, target_h, target_w);
            binarize(*r);
        }
        return r;
    };
    out.mask1 = rs_mask(pair.mask1);
    out.mask2 = rs_mask(pair.mask2);
    // clamp away bilinear overshoot at former mask boundaries
    for (double& v : out.image1.v) v = clamp01(v);
    for (double& v : out.image2.v) v = clamp01(v);
    return out;
}

std::vector<ManifestEntry> read_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("read_manifest: cannot open " + path);
    std::vector<ManifestEntry> entries;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw FormatError("read_manifest: bad JSON at line " + std::to_string(lineno) + ": " +
                              e.what());
        }
        ManifestEntry e;
        e.id = j.value("id", "pair-" + std::to_string(lineno));
        e.image1 = j.at("image1").get<std::string>();
        e.image2 = j.at("image2").get<std::string>();
        e.mask1 = j.value("mask1", "");
        e.mask2 = j.value("mask2", "");
        entries.push_back(std::move(e));
    }
    return entries;
}

void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
    std::ofstream out(path);
    if (!out) throw FormatError("write_manifest: cannot open " + path);
    for (const auto& e : entries) {
        nlohmann::json j{{"id", e.id}, {"image1", e.image1}, {"image2", e.image2}};
        if (!e.mask1.empty()) j["mask1"] = e.mask1;
        if (!e.mask2.empty()) j["mask2"] = e.mask2;
        out << j.dump() << "\n";
    }
}

RegisteredPair load_manifest_entry(const ManifestEntry& e, const std::string& base_dir) {
    auto resolve = [&](const std::string& p) -> std::string {
        if (p.empty()) return p;
        std::filesystem::path fp(p);
        if (fp.is_absolute() || base_dir.empty()) return p;
        return (std::filesystem::path(base_dir) / fp).string();
    };
    std::optional<std::string> m1, m2;
    if (!e.mask1.empty()) m1 = resolve(e.mask1);
    if (!e.mask2.empty()) m2 = resolve(e.mask2);
    return load_pair(resolve(e.image1), resolve(e.image2), m1, m2, e.id);
}

void save_png_gray(const Plane& image, const std::string& path) {
    cv::Mat m(image.h, image.w, CV_8U);
    for (int y = 0; y < image.h; ++y)
        for (int x = 0; x < image.w; ++x)
            m.at<uint8_t>(y, x) = static_cast<uint8_t>(std::lround(clamp01(image.at(y, x)) * 255));
    if (!cv::imwrite(path, m)) throw FormatError("save_png_gray: cannot write " + path);
}

void save_png_color(const Plane& luminance, const std::array<Plane, 2>& chroma,
                    const std::string& path) {
    if (!luminance.same_size(chroma[0]) || !luminance.same_size(chroma[1]))
        throw ShapeError("save_png_color: plane sizes differ");
    cv::Mat m(luminance.h, luminance.w, CV_8UC3);
    for (int y = 0; y < luminance.h; ++y)
        for (int x = 0; x < luminance.w; ++x) {
            double yv = luminance.at(y, x);
            double cr = chroma[0].at(y, x) - 0.5;
            double cb = chroma[1].at(y, x) - 0.5;
            double r = yv + 1.403 * cr;
            double g = yv - 0.714 * cr - 0.344 * cb;
            double b = yv + 1.773 * cb;
            auto* p = m.ptr<uint8_t>(y) + static_cast<size_t>(x) * 3;
            p[0] = static_cast<uint8_t>(std::lround(clamp01(b) * 255));
            p[1] = static_cast<uint8_t>(std::lround(clamp01(g) * 255));
            p[2] = static_cast<uint8_t>(std::lround(clamp01(r) * 255));
        }
    if (!cv::imwrite(path, m)) throw FormatError("save_png_color: cannot write " + path);
}

void save_png_mask(const Plane& mask, const std::string& path) {
    cv::Mat m(mask.h, mask.w, CV_8U);
    for (int y = 0; y < mask.h; ++y)
        for (int x = 0; x < mask.w; ++x) m.at<uint8_t>(y, x) = mask.at(y, x) >= 0.5 ? 255 : 0;
    if (!cv::imwrite(path, m)) throw FormatError("save_png_mask: cannot write " + path);
}

} // namespace tagat
