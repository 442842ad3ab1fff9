#include "tagat/plane.hpp"

#include <algorithm>
#include <cmath>

#include "tagat/error.hpp"

namespace tagat {

double clamp01(double x) { return x < 0.0 ? 0.0 : (x > 1.0 ? 1.0 : x); }

Gray8 quantize_u8(const Plane& p) {
    Gray8 g(p.h, p.w);
    for (size_t i = 0; i < p.v.size(); ++i) {
        double x = std::lround(clamp01(p.v[i]) * 255.0);
        g.v[i] = static_cast<uint8_t>(x);
    }
    return g;
}

Plane to_plane(const Gray8& g) {
    Plane p(g.h, g.w);
    for (size_t i = 0; i < g.v.size(); ++i) p.v[i] = g.v[i] / 255.0;
    return p;
}

Plane resize_bilinear(const Plane& src, int oh, int ow) {
    if (oh <= 0 || ow <= 0) throw ShapeError("resize: target size must be positive");
    if (oh == src.h && ow == src.w) return src;
    Plane out(oh, ow);
    const double sy = static_cast<double>(src.h) / oh;
    const double sx = static_cast<double>(src.w) / ow;
    for (int y = 0; y < oh; ++y) {
        double fy = (y + 0.5) * sy - 0.5;
        int y0 = static_cast<int>(std::floor(fy));
        double wy = fy - y0;
        int y0c = std::clamp(y0, 0, src.h - 1);
        int y1c = std::clamp(y0 + 1, 0, src.h - 1);
        for (int x = 0; x < ow; ++x) {
            double fx = (x + 0.5) * sx - 0.5;
            int x0 = static_cast<int>(std::floor(fx));
            double wx = fx - x0;
            int x0c = std::clamp(x0, 0, src.w - 1);
            int x1c = std::clamp(x0 + 1, 0, src.w - 1);
            double top = src.at(y0c, x0c) * (1.0 - wx) + src.at(y0c, x1c) * wx;
            double bot = src.at(y1c, x0c) * (1.0 - wx) + src.at(y1c, x1c) * wx;
            out.at(y, x) = top * (1.0 - wy) + bot * wy;
        }
    }
    return out;
}

Plane resize_nearest(const Plane& src, int oh, int ow) {
    if (oh <= 0 || ow <= 0) throw ShapeError("resize: target size must be positive");
    if (oh == src.h && ow == src.w) return src;
    Plane out(oh, ow);
    const double sy = static_cast<double>(src.h) / oh;
    const double sx = static_cast<double>(src.w) / ow;
    for (int y = 0; y < oh; ++y) {
        int iy = std::clamp(static_cast<int>(std::floor((y + 0.5) * sy)), 0, src.h - 1);
        for (int x = 0; x < ow; ++x) {
            int ix = std::clamp(static_cast<int>(std::floor((x + 0.5) * sx)), 0, src.w - 1);
            out.at(y, x) = src.at(iy, ix);
        }
    }
    return out;
}

Plane warp_affine_bilinear(const Plane& src, const double m[6]) {
    Plane out(src.h, src.w);
    for (int y = 0; y < src.h; ++y) {
        for (int x = 0; x < src.w; ++x) {
            double xi = m[0] * x + m[1] * y + m[2];
            double yi = m[3] * x + m[4] * y + m[5];
            int x0 = static_cast<int>(std::floor(xi));
            int y0 = static_cast<int>(std::floor(yi));
            double wx = xi - x0, wy = yi - y0;
            double acc = 0.0;
            for (int dy = 0; dy <= 1; ++dy) {
                for (int dx = 0; dx <= 1; ++dx) {
                    int sx = x0 + dx, sy = y0 + dy;
                    double wgt = (dx ? wx : 1.0 - wx) * (dy ? wy : 1.0 - wy);
                    if (wgt == 0.0) continue;
                    double val = 0.0;
                    if (sx >= 0 && sx < src.w && sy >= 0 && sy < src.h) val = src.at(sy, sx);
                    acc += wgt * val;
                }
            }
            out.at(y, x) = acc;
        }
    }
    return out;
}

Plane warp_affine_nearest(const Plane& src, const double m[6]) {
    Plane out(src.h, src.w);
    for (int y = 0; y < src.h; ++y) {
        for (int x = 0; x < src.w; ++x) {
            double xi = m[0] * x + m[1] * y + m[2];
            double yi = m[3] * x + m[4] * y + m[5];
            int sx = static_cast<int>(std::lround(xi));
            int sy = static_cast<int>(std::lround(yi));
            out.at(y, x) = (sx >= 0 && sx < src.w && sy >= 0 && sy < src.h) ? src.at(sy, sx) : 0.0;
        }
    }
    return out;
}

Plane flip_horizontal(const Plane& src) {
    Plane out(src.h, src.w);
    for (int y = 0; y < src.h; ++y)
        for (int x = 0; x < src.w; ++x) out.at(y, x) = src.at(y, src.w - 1 - x);
    return out;
}

namespace {

// reflect-101 index: ... 2 1 | 0 1 2 ... n-1 | n-2 n-3 ...
int reflect101(int i, int n) {
    if (n == 1) return 0;
    while (i < 0 || i >= n) {
        if (i < 0) i = -i;
        if (i >= n) i = 2 * (n - 1) - i;
    }
    return i;
}

} // namespace

Plane gaussian_blur(const Plane& src, double sigma) {
    if (sigma <= 0.0) return src;
    int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> k(2 * radius + 1);
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        k[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
        sum += k[i + radius];
    }
    for (double& x : k) x /= sum;

    Plane tmp(src.h, src.w);
    for (int y = 0; y < src.h; ++y)
        for (int x = 0; x < src.w; ++x) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i)
                acc += k[i + radius] * src.at(y, reflect101(x + i, src.w));
            tmp.at(y, x) = acc;
        }
    Plane out(src.h, src.w);
    for (int y = 0; y < src.h; ++y)
        for (int x = 0; x < src.w; ++x) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i)
                acc += k[i + radius] * tmp.at(reflect101(y + i, src.h), x);
            out.at(y, x) = acc;
        }
    return out;
}

Plane conv2_same_reflect(const Plane& src, const Plane& kernel) {
    if (kernel.h % 2 == 0 || kernel.w % 2 == 0)
        throw ShapeError("conv2_same_reflect: kernel must be odd-sized");
    int ry = kernel.h / 2, rx = kernel.w / 2;
    Plane out(src.h, src.w);
    for (int y = 0; y < src.h; ++y)
        for (int x = 0; x < src.w; ++x) {
            double acc = 0.0;
            for (int ky = -ry; ky <= ry; ++ky)
                for (int kx = -rx; kx <= rx; ++kx)
                    acc += kernel.at(ky + ry, kx + rx) *
                           src.at(reflect101(y + ky, src.h), reflect101(x + kx, src.w));
            out.at(y, x) = acc;
        }
    return out;
}

std::pair<Plane, Plane> sobel_xy(const Plane& src) {
    static const double kx[9] = {-1, 0, 1, -2, 0, 2, -1, 0, 1};
    static const double ky[9] = {-1, -2, -1, 0, 0, 0, 1, 2, 1};
    Plane gx(src.h, src.w), gy(src.h, src.w);
    for (int y = 0; y < src.h; ++y)
        for (int x = 0; x < src.w; ++x) {
            double ax = 0.0, ay = 0.0;
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    double s = src.at(reflect101(y + dy, src.h), reflect101(x + dx, src.w));
                    ax += kx[(dy + 1) * 3 + (dx + 1)] * s;
                    ay += ky[(dy + 1) * 3 + (dx + 1)] * s;
                }
            gx.at(y, x) = ax;
            gy.at(y, x) = ay;
        }
    return {gx, gy};
}

} // namespace tagat
