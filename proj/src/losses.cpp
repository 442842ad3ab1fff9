#include "tagat/losses.hpp"

#include <cmath>

#include "tagat/error.hpp"

namespace tagat {

void LossWeights::validate() const {
    if (alpha1 < 0 || alpha2 < 0 || alpha3 < 0 || alpha4 < 0 || alpha5 < 0 || mu < 0)
        throw ConfigError("LossWeights: weights must be non-negative");
    if (epsilon <= 1.0) throw ConfigError("LossWeights: epsilon must exceed 1 (CC >= -1)");
}

namespace {

constexpr double kVarianceFloor = 1e-12;

Tensor gaussian_window_11() {
    // 11x11, sigma 1.5, normalized
    static std::vector<double> w = [] {
        std::vector<double> k(11);
        double s = 0.0;
        for (int i = 0; i < 11; ++i) {
            double d = i - 5.0;
            k[i] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
            s += k[i];
        }
        for (double& x : k) x /= s;
        std::vector<double> win(121);
        for (int y = 0; y < 11; ++y)
            for (int x = 0; x < 11; ++x) win[y * 11 + x] = k[y] * k[x];
        return win;
    }();
    return Tensor::from_vector({1, 1, 11, 11}, w);
}

void check_image_pair(const Tensor& a, const Tensor& b, const char* who) {
    if (a.rank() != 3 || a.dim(0) != 1 || b.rank() != 3 || b.dim(0) != 1)
        throw ShapeError(std::string(who) + ": expected {1,H,W} maps");
    if (a.shape() != b.shape()) throw ShapeError(std::string(who) + ": shapes differ");
}

// Sobel responses assembled from pairwise pixel differences so constant
// regions cancel exactly (a flat image has a gradient of exactly zero).
Tensor sobel_magnitude(const Tensor& image) {
    const int h = image.dim(1), w = image.dim(2);
    Tensor p = pad2d(image, 1, 1, 1, 1, PadMode::Reflect101);
    auto at = [&](int dy, int dx) { return crop(p, dy, dx, h, w); };
    Tensor gx = add(add(sub(at(0, 2), at(0, 0)), mul_scalar(sub(at(1, 2), at(1, 0)), 2.0)),
                    sub(at(2, 2), at(2, 0)));
    Tensor gy = add(add(sub(at(2, 0), at(0, 0)), mul_scalar(sub(at(2, 1), at(0, 1)), 2.0)),
                    sub(at(2, 2), at(0, 2)));
    return sqrt_t(add(square(gx), square(gy)));
}

} // namespace

Tensor ssim_mean(const Tensor& a, const Tensor& b) {
    check_image_pair(a, b, "ssim");
    if (a.dim(1) < 11 || a.dim(2) < 11)
        throw ShapeError("ssim: images must be at least 11x11 for the Gaussian window");
    static const Tensor win = gaussian_window_11();
    constexpr double c1 = 0.01 * 0.01; // (K1*L)^2, L = 1
    constexpr double c2 = 0.03 * 0.03;

    Tensor mu1 = conv2d_valid(a, win, Tensor{});
    Tensor mu2 = conv2d_valid(b, win, Tensor{});
    Tensor mu1_sq = square(mu1);
    Tensor mu2_sq = square(mu2);
    Tensor mu12 = mul(mu1, mu2);
    Tensor sigma1_sq = sub(conv2d_valid(square(a), win, Tensor{}), mu1_sq);
    Tensor sigma2_sq = sub(conv2d_valid(square(b), win, Tensor{}), mu2_sq);
    Tensor sigma12 = sub(conv2d_valid(mul(a, b), win, Tensor{}), mu12);

    Tensor num = mul(add_scalar(mul_scalar(mu12, 2.0), c1), add_scalar(mul_scalar(sigma12, 2.0), c2));
    Tensor den = mul(add_scalar(add(mu1_sq, mu2_sq), c1), add_scalar(add(sigma1_sq, sigma2_sq), c2));
    return mean_all(divide(num, den));
}

Tensor recon_loss(const Tensor& image, const Tensor& recon, double mu) {
    check_image_pair(image, recon, "recon_loss");
    Tensor intensity = sum_all(square(sub(image, recon)));
    Tensor ssim_term = add_scalar(neg(ssim_mean(image, recon)), 1.0);
    return add(intensity, mul_scalar(ssim_term, mu));
}

Tensor pearson_cc(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) throw ShapeError("pearson_cc: shapes differ");
    Tensor ac = sub(a, mean_all(a));
    Tensor bc = sub(b, mean_all(b));
    Tensor va = sum_all(square(ac));
    Tensor vb = sum_all(square(bc));
    if (va.item() < kVarianceFloor || vb.item() < kVarianceFloor)
        return Tensor::scalar(0.0); // zero-variance convention
    return divide(sum_all(mul(ac, bc)), sqrt_t(mul(va, vb)));
}

Tensor decomp_loss(const Tensor& base1, const Tensor& base2, const Tensor& detail1,
                   const Tensor& detail2, double epsilon) {
    if (base1.shape() != base2.shape() || detail1.shape() != detail2.shape())
        throw ShapeError("decomp_loss: shapes differ across modalities");
    Tensor cc_d = pearson_cc(detail1, detail2);
    Tensor cc_b = pearson_cc(base1, base2);
    return divide(square(cc_d), add_scalar(cc_b, epsilon));
}

Tensor graph_loss(const Tensor& graph1, const Tensor& graph2) {
    if (graph1.shape() != graph2.shape()) throw ShapeError("graph_loss: shapes differ");
    Tensor n1 = sum_all(square(graph1));
    Tensor n2 = sum_all(square(graph2));
    if (n1.item() < kVarianceFloor || n2.item() < kVarianceFloor) return Tensor{};
    Tensor cosine = divide(sum_all(mul(graph1, graph2)), sqrt_t(mul(n1, n2)));
    return add_scalar(neg(cosine), 1.0);
}

Tensor stage2_intensity_loss(const Tensor& fused, const Tensor& image1, const Tensor& image2) {
    check_image_pair(fused, image1, "stage2_intensity_loss");
    check_image_pair(fused, image2, "stage2_intensity_loss");
    return mean_all(abs_t(sub(fused, maximum(image1, image2))));
}

Tensor grad_loss(const Tensor& fused, const Tensor& image1, const Tensor& image2) {
    check_image_pair(fused, image1, "grad_loss");
    check_image_pair(fused, image2, "grad_loss");
    if (fused.dim(1) < 3 || fused.dim(2) < 3)
        throw ShapeError("grad_loss: images must be at least 3x3");
    Tensor gf = sobel_magnitude(fused);
    Tensor g1 = sobel_magnitude(image1);
    Tensor g2 = sobel_magnitude(image2);
    return mean_all(abs_t(sub(gf, maximum(g1, g2))));
}

namespace {

void require_finite(const Tensor& t, const char* name) {
    if (!std::isfinite(t.item()))
        throw NumericError(std::string("loss term is not finite: ") + name);
}

} // namespace

std::pair<Tensor, LossReport> total_stage1(const Stage1Parts& parts, const LossWeights& w) {
    w.validate();
    require_finite(parts.l1, "l1");
    require_finite(parts.l2, "l2");
    require_finite(parts.decomp, "decomp");
    Tensor total = add(parts.l1, add(mul_scalar(parts.l2, w.alpha1),
                                     mul_scalar(parts.decomp, w.alpha2)));
    LossReport report;
    report.terms["l1"] = parts.l1.item();
    report.terms["l2"] = parts.l2.item();
    report.terms["decomp"] = parts.decomp.item();
    if (parts.graph.defined()) {
        require_finite(parts.graph, "graph");
        total = add(total, mul_scalar(parts.graph, w.alpha3));
        report.terms["graph"] = parts.graph.item();
        report.graph_present = true;
    } else {
        report.graph_present = false;
    }
    report.total = total.item();
    return {total, report};
}

std::pair<Tensor, LossReport> total_stage2(const Stage2Parts& parts, const LossWeights& w) {
    w.validate();
    require_finite(parts.intensity, "intensity");
    require_finite(parts.grad, "grad");
    require_finite(parts.decomp, "decomp");
    Tensor total = add(parts.intensity, add(mul_scalar(parts.grad, w.alpha4),
                                            mul_scalar(parts.decomp, w.alpha5)));
    LossReport report;
    report.terms["intensity"] = parts.intensity.item();
    report.terms["grad"] = parts.grad.item();
    report.terms["decomp"] = parts.decomp.item();
    if (parts.graph.defined()) {
        require_finite(parts.graph, "graph");
        total = add(total, mul_scalar(parts.graph, w.alpha3));
        report.terms["graph"] = parts.graph.item();
        report.graph_present = true;
    } else {
        report.graph_present = false;
    }
    report.total = total.item();
    return {total, report};
}

} // namespace tagat
