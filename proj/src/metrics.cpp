#include "tagat/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <ostream>

#include "tagat/error.hpp"

namespace tagat {

namespace {

constexpr double kPi = 3.14159265358979323846;

// QABF constants (Xydeas-Petrovic); pinned here and echoed in the header.
constexpr double kQabfGammaG = 0.9994;
constexpr double kQabfKappaG = -15.0;
constexpr double kQabfSigmaG = 0.5;
constexpr double kQabfGammaA = 0.9879;
constexpr double kQabfKappaA = -22.0;
constexpr double kQabfSigmaA = 0.8;
constexpr double kQabfWeightExponent = 1.0;

constexpr double kVifSigmaNsq = 2.0;

std::array<double, 256> histogram(const Gray8& img) {
    std::array<double, 256> h{};
    for (uint8_t v : img.v) h[v] += 1.0;
    for (double& x : h) x /= static_cast<double>(img.v.size());
    return h;
}

double entropy_bits(const std::array<double, 256>& p) {
    double e = 0.0;
    for (double x : p)
        if (x > 0.0) e -= x * std::log2(x);
    return e;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    const size_t n = a.size();
    double ma = 0, mb = 0;
    for (size_t i = 0; i < n; ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double num = 0, va = 0, vb = 0;
    for (size_t i = 0; i < n; ++i) {
        double da = a[i] - ma, db = b[i] - mb;
        num += da * db;
        va += da * da;
        vb += db * db;
    }
    if (va < 1e-12 || vb < 1e-12) return 0.0; // zero-variance convention
    return num / std::sqrt(va * vb);
}

Plane to_double(const Gray8& g) {
    Plane p(g.h, g.w);
    for (size_t i = 0; i < g.v.size(); ++i) p.v[i] = g.v[i];
    return p;
}

// ------------------------------------------------------------------ SSIM

double ssim_global(const Plane& a, const Plane& b, double c1, double c2) {
    // single uniform window over the whole image (used below 11x11)
    double mu1 = 0, mu2 = 0;
    const size_t n = a.v.size();
    for (size_t i = 0; i < n; ++i) {
        mu1 += a.v[i];
        mu2 += b.v[i];
    }
    mu1 /= n;
    mu2 /= n;
    double s1 = 0, s2 = 0, s12 = 0;
    for (size_t i = 0; i < n; ++i) {
        s1 += (a.v[i] - mu1) * (a.v[i] - mu1);
        s2 += (b.v[i] - mu2) * (b.v[i] - mu2);
        s12 += (a.v[i] - mu1) * (b.v[i] - mu2);
    }
    s1 /= n;
    s2 /= n;
    s12 /= n;
    return ((2 * mu1 * mu2 + c1) * (2 * s12 + c2)) /
           ((mu1 * mu1 + mu2 * mu2 + c1) * (s1 + s2 + c2));
}

Plane gaussian_kernel2d(int n, double sigma) {
    Plane k(n, n);
    double s = 0.0;
    int r = n / 2;
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            double dy = y - r, dx = x - r;
            k.at(y, x) = std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
            s += k.at(y, x);
        }
    for (double& v : k.v) v /= s;
    return k;
}

// valid-window correlation with an odd kernel
Plane conv2_valid(const Plane& src, const Plane& kernel) {
    int oh = src.h - kernel.h + 1, ow = src.w - kernel.w + 1;
    Plane out(oh, ow);
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (int ky = 0; ky < kernel.h; ++ky)
                for (int kx = 0; kx < kernel.w; ++kx)
                    acc += kernel.at(ky, kx) * src.at(y + ky, x + kx);
            out.at(y, x) = acc;
        }
    return out;
}

double ssim_pair_255(const Plane& a, const Plane& b) {
    constexpr double c1 = (0.01 * 255) * (0.01 * 255);
    constexpr double c2 = (0.03 * 255) * (0.03 * 255);
    if (a.h < 11 || a.w < 11) return ssim_global(a, b, c1, c2);
    static const Plane win = gaussian_kernel2d(11, 1.5);
    Plane mu1 = conv2_valid(a, win), mu2 = conv2_valid(b, win);
    Plane a2(a.h, a.w), b2(a.h, a.w), ab(a.h, a.w);
    for (size_t i = 0; i < a.v.size(); ++i) {
        a2.v[i] = a.v[i] * a.v[i];
        b2.v[i] = b.v[i] * b.v[i];
        ab.v[i] = a.v[i] * b.v[i];
    }
    Plane ma2 = conv2_valid(a2, win), mb2 = conv2_valid(b2, win), mab = conv2_valid(ab, win);
    double acc = 0.0;
    for (size_t i = 0; i < mu1.v.size(); ++i) {
        double m1 = mu1.v[i], m2 = mu2.v[i];
        double s1 = ma2.v[i] - m1 * m1;
        double s2 = mb2.v[i] - m2 * m2;
        double s12 = mab.v[i] - m1 * m2;
        acc += ((2 * m1 * m2 + c1) * (2 * s12 + c2)) /
               ((m1 * m1 + m2 * m2 + c1) * (s1 + s2 + c2));
    }
    return acc / mu1.v.size();
}

// ------------------------------------------------------------------- VIF

Plane decimate2_mean(const Plane& src) {
    int oh = src.h / 2, ow = src.w / 2;
    Plane out(oh, ow);
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x)
            out.at(y, x) = 0.25 * (src.at(2 * y, 2 * x) + src.at(2 * y, 2 * x + 1) +
                                   src.at(2 * y + 1, 2 * x) + src.at(2 * y + 1, 2 * x + 1));
    return out;
}

// Pixel-domain GSM VIF of dist against ref; both in [0,255].
double vif_single(const Plane& ref_in, const Plane& dist_in) {
    constexpr double tiny = 1e-10;
    Plane ref = ref_in, dist = dist_in;
    double num = 0.0, den = 0.0;
    for (int scale = 1; scale <= 4; ++scale) {
        const int n = (1 << (4 - scale + 1)) + 1; // 17, 9, 5, 3
        const double sigma = n / 5.0;
        Plane win = gaussian_kernel2d(n, sigma);
        if (scale > 1) {
            if (std::min(ref.h, ref.w) <= n / 2) break; // nothing left to analyse
            ref = decimate2_mean(conv2_same_reflect(ref, win));
            dist = decimate2_mean(conv2_same_reflect(dist, win));
        }
        if (std::min(ref.h, ref.w) <= n / 2) continue; // window does not fit: skip scale
        Plane mu1 = conv2_same_reflect(ref, win);
        Plane mu2 = conv2_same_reflect(dist, win);
        Plane r2(ref.h, ref.w), d2(ref.h, ref.w), rd(ref.h, ref.w);
        for (size_t i = 0; i < ref.v.size(); ++i) {
            r2.v[i] = ref.v[i] * ref.v[i];
            d2.v[i] = dist.v[i] * dist.v[i];
            rd.v[i] = ref.v[i] * dist.v[i];
        }
        Plane mr2 = conv2_same_reflect(r2, win);
        Plane md2 = conv2_same_reflect(d2, win);
        Plane mrd = conv2_same_reflect(rd, win);
        for (size_t i = 0; i < mu1.v.size(); ++i) {
            double s1 = std::max(0.0, mr2.v[i] - mu1.v[i] * mu1.v[i]);
            double s2 = std::max(0.0, md2.v[i] - mu2.v[i] * mu2.v[i]);
            double s12 = mrd.v[i] - mu1.v[i] * mu2.v[i];
            double g = s12 / (s1 + tiny);
            double sv = s2 - g * s12;
            if (s1 < tiny) {
                g = 0.0;
                sv = s2;
            }
            if (g < 0.0) {
                sv = s2;
                g = 0.0;
            }
            if (sv < tiny) sv = tiny;
            num += std::log(1.0 + g * g * s1 / (sv + kVifSigmaNsq));
            den += std::log(1.0 + s1 / kVifSigmaNsq);
        }
    }
    if (den <= 0.0) return 1.0; // reference carries no information
    return num / den;
}

// ------------------------------------------------------------------ QABF

struct EdgeField {
    Plane strength, angle;
};

EdgeField sobel_edges(const Plane& img) {
    auto [gx, gy] = sobel_xy(img);
    EdgeField f{Plane(img.h, img.w), Plane(img.h, img.w)};
    for (size_t i = 0; i < img.v.size(); ++i) {
        f.strength.v[i] = std::sqrt(gx.v[i] * gx.v[i] + gy.v[i] * gy.v[i]);
        f.angle.v[i] = gx.v[i] == 0.0 ? kPi / 2.0 : std::atan(gy.v[i] / gx.v[i]);
    }
    return f;
}

double qabf_metric(const Plane& f, const Plane& a, const Plane& b) {
    EdgeField ef = sobel_edges(f), ea = sobel_edges(a), eb = sobel_edges(b);
    auto q_source = [&](const EdgeField& src, size_t i) {
        double gs = src.strength.v[i], gf = ef.strength.v[i];
        double g_rel;
        if (gs == gf) g_rel = gs == 0.0 ? 0.0 : 1.0;
        else if (gs > gf) g_rel = gf / gs;
        else g_rel = gs / gf;
        double a_rel = std::fabs(std::fabs(src.angle.v[i] - ef.angle.v[i]) - kPi / 2.0) * 2.0 / kPi;
        double qg = kQabfGammaG / (1.0 + std::exp(kQabfKappaG * (g_rel - kQabfSigmaG)));
        double qa = kQabfGammaA / (1.0 + std::exp(kQabfKappaA * (a_rel - kQabfSigmaA)));
        return qg * qa;
    };
    double num = 0.0, den = 0.0;
    for (size_t i = 0; i < f.v.size(); ++i) {
        double wa = std::pow(ea.strength.v[i], kQabfWeightExponent);
        double wb = std::pow(eb.strength.v[i], kQabfWeightExponent);
        num += q_source(ea, i) * wa + q_source(eb, i) * wb;
        den += wa + wb;
    }
    return den > 0.0 ? num / den : 0.0;
}

void check_same(const Gray8& a, const Gray8& b, const char* who) {
    if (!a.same_size(b)) throw ShapeError(std::string(who) + ": image sizes differ");
}

} // namespace

IntensityStats intensity_stats(const Gray8& fused) {
    IntensityStats s{};
    auto hist = histogram(fused);
    s.en = entropy_bits(hist);

    double mean = 0.0;
    for (uint8_t v : fused.v) mean += v;
    mean /= fused.v.size();
    double var = 0.0;
    for (uint8_t v : fused.v) var += (v - mean) * (v - mean);
    var /= fused.v.size();
    s.sd = std::sqrt(var);

    double row_acc = 0.0, col_acc = 0.0;
    long rown = 0, coln = 0;
    for (int y = 0; y < fused.h; ++y)
        for (int x = 1; x < fused.w; ++x) {
            double d = double(fused.at(y, x)) - fused.at(y, x - 1);
            row_acc += d * d;
            ++rown;
        }
    for (int y = 1; y < fused.h; ++y)
        for (int x = 0; x < fused.w; ++x) {
            double d = double(fused.at(y, x)) - fused.at(y - 1, x);
            col_acc += d * d;
            ++coln;
        }
    double rf = rown > 0 ? row_acc / rown : 0.0;
    double cf = coln > 0 ? col_acc / coln : 0.0;
    s.sf = std::sqrt(rf + cf);
    return s;
}

std::pair<double, double> information_metrics(const Gray8& fused, const Gray8& a,
                                              const Gray8& b) {
    check_same(fused, a, "information_metrics");
    check_same(fused, b, "information_metrics");
    auto mi_pair = [](const Gray8& x, const Gray8& y) {
        std::vector<double> joint(256 * 256, 0.0);
        std::array<double, 256> px{}, py{};
        const double inv = 1.0 / x.v.size();
        for (size_t i = 0; i < x.v.size(); ++i) {
            joint[static_cast<size_t>(x.v[i]) * 256 + y.v[i]] += inv;
            px[x.v[i]] += inv;
            py[y.v[i]] += inv;
        }
        double mi = 0.0;
        for (int u = 0; u < 256; ++u)
            for (int v = 0; v < 256; ++v) {
                double p = joint[static_cast<size_t>(u) * 256 + v];
                if (p > 0.0) mi += p * std::log2(p / (px[u] * py[v]));
            }
        return mi;
    };
    double mi = mi_pair(fused, a) + mi_pair(fused, b);

    // SCD on double-valued differences
    std::vector<double> fa(fused.v.size()), fb(fused.v.size()), av(fused.v.size()),
        bv(fused.v.size());
    for (size_t i = 0; i < fused.v.size(); ++i) {
        fa[i] = double(fused.v[i]) - a.v[i];
        fb[i] = double(fused.v[i]) - b.v[i];
        av[i] = a.v[i];
        bv[i] = b.v[i];
    }
    double scd = pearson(fb, av) + pearson(fa, bv);
    return {mi, scd};
}

std::tuple<double, double, double> perceptual_metrics(const Gray8& fused, const Gray8& a,
                                                      const Gray8& b) {
    check_same(fused, a, "perceptual_metrics");
    check_same(fused, b, "perceptual_metrics");
    Plane pf = to_double(fused), pa = to_double(a), pb = to_double(b);
    double vif = 0.5 * (vif_single(pa, pf) + vif_single(pb, pf));
    double qabf = qabf_metric(pf, pa, pb);
    double ssim = 0.5 * (ssim_pair_255(pf, pa) + ssim_pair_255(pf, pb));
    return {vif, qabf, ssim};
}

MetricReport evaluate_pair(const Gray8& fused, const Gray8& a, const Gray8& b) {
    MetricReport r;
    auto s = intensity_stats(fused);
    r.en = s.en;
    r.sd = s.sd;
    r.sf = s.sf;
    std::tie(r.mi, r.scd) = information_metrics(fused, a, b);
    std::tie(r.vif, r.qabf, r.ssim) = perceptual_metrics(fused, a, b);
    return r;
}

MetricReport evaluate_pair(const Plane& fused, const Plane& a, const Plane& b) {
    return evaluate_pair(quantize_u8(fused), quantize_u8(a), quantize_u8(b));
}

std::string metric_report_header() {
    return "# metrics on 8-bit quantized luminance; columns EN,SD,SF,MI,SCD,VIF,QABF,SSIM\n"
           "# EN: 256-bin Shannon entropy (bits). SD: population std.\n"
           "# SF: sqrt(mean sq horizontal diff + mean sq vertical diff).\n"
           "# MI: sum over both sources, 256-bin joint histograms, log2.\n"
           "# SCD: CC(F-B,A)+CC(F-A,B), zero-variance terms contribute 0.\n"
           "# VIF: GSM pixel-domain, scales 4, windows 17/9/5/3 sigma N/5, reflect\n"
           "#      filtering, 2x2 mean decimation, sigma_n^2=2; mean over sources.\n"
           "# QABF: Sobel strength/orientation preservation, Gg=0.9994 kg=-15 sg=0.5,\n"
           "#       Ga=0.9879 ka=-22 sa=0.8, weight exponent L=1.\n"
           "# SSIM: 11x11 Gaussian sigma 1.5, K1=0.01 K2=0.03, L=255; mean over sources.\n";
}

void write_metric_csv(std::ostream& out,
                      const std::vector<std::pair<std::string, MetricReport>>& rows) {
    out << metric_report_header();
    out << "id,EN,SD,SF,MI,SCD,VIF,QABF,SSIM\n";
    MetricReport mean;
    char buf[512];
    for (const auto& [id, r] : rows) {
        std::snprintf(buf, sizeof(buf), "%s,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n", id.c_str(),
                      r.en, r.sd, r.sf, r.mi, r.scd, r.vif, r.qabf, r.ssim);
        out << buf;
        mean.en += r.en;
        mean.sd += r.sd;
        mean.sf += r.sf;
        mean.mi += r.mi;
        mean.scd += r.scd;
        mean.vif += r.vif;
        mean.qabf += r.qabf;
        mean.ssim += r.ssim;
    }
    if (!rows.empty()) {
        double n = static_cast<double>(rows.size());
        std::snprintf(buf, sizeof(buf), "mean,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n",
                      mean.en / n, mean.sd / n, mean.sf / n, mean.mi / n, mean.scd / n,
                      mean.vif / n, mean.qabf / n, mean.ssim / n);
        out << buf;
    }
}

} // namespace tagat
