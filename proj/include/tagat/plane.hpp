#pragma once

#include <cstdint>
#include <utility>
#include <vector>

namespace tagat {

// Single-channel image plane, row-major doubles. Intensities are kept in
// [0,1] by every public operation that emits one.
struct Plane {
    int h = 0;
    int w = 0;
    std::vector<double> v;

    Plane() = default;
    Plane(int h_, int w_, double fill = 0.0)
        : h(h_), w(w_), v(static_cast<size_t>(h_) * w_, fill) {}

    double& at(int y, int x) { return v[static_cast<size_t>(y) * w + x]; }
    double at(int y, int x) const { return v[static_cast<size_t>(y) * w + x]; }
    bool same_size(const Plane& o) const { return h == o.h && w == o.w; }
    bool empty() const { return v.empty(); }
    size_t size() const { return v.size(); }
};

// 8-bit image used by the metric suite (metrics run on quantized luminance).
struct Gray8 {
    int h = 0;
    int w = 0;
    std::vector<uint8_t> v;

    Gray8() = default;
    Gray8(int h_, int w_, uint8_t fill = 0)
        : h(h_), w(w_), v(static_cast<size_t>(h_) * w_, fill) {}

    uint8_t& at(int y, int x) { return v[static_cast<size_t>(y) * w + x]; }
    uint8_t at(int y, int x) const { return v[static_cast<size_t>(y) * w + x]; }
    bool same_size(const Gray8& o) const { return h == o.h && w == o.w; }
    size_t size() const { return v.size(); }
};

double clamp01(double x);

Gray8 quantize_u8(const Plane& p);   // round(x*255), clamped
Plane to_plane(const Gray8& g);      // /255

// Bilinear resize, edge-clamped sampling (half-pixel center convention).
Plane resize_bilinear(const Plane& src, int oh, int ow);
// Nearest-neighbour resize (used for masks; caller re-binarizes).
Plane resize_nearest(const Plane& src, int oh, int ow);

// Affine warps. `minv` is the 2x3 OUTPUT->INPUT map:
//   xin = minv[0]*xo + minv[1]*yo + minv[2]
//   yin = minv[3]*xo + minv[4]*yo + minv[5]
// Out-of-frame samples read as 0.
Plane warp_affine_bilinear(const Plane& src, const double minv[6]);
Plane warp_affine_nearest(const Plane& src, const double minv[6]);

Plane flip_horizontal(const Plane& src);

// Separable Gaussian blur, reflect-101 border. Kernel radius ceil(3*sigma).
Plane gaussian_blur(const Plane& src, double sigma);

// 2-D correlation with an odd-sized kernel, reflect-101 border, same-size out.
Plane conv2_same_reflect(const Plane& src, const Plane& kernel);

// Sobel responses (gx, gy), reflect-101 border.
std::pair<Plane, Plane> sobel_xy(const Plane& src);

} // namespace tagat
