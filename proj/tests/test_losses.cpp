#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "support/gradcheck.hpp"
#include "tagat/error.hpp"
#include "tagat/losses.hpp"

using namespace tagat;
using tagat::testing::gradcheck;
using tagat::testing::GradCheckOptions;

namespace {

Tensor random_map(Shape s, uint64_t seed, double lo = 0.05, double hi = 0.95, bool rg = false) {
    std::mt19937_64 rng(seed);
    return Tensor::uniform(s, lo, hi, rng, rg);
}

Tensor flip_lr(const Tensor& t) {
    int h = t.dim(1), w = t.dim(2);
    std::vector<double> v(t.data().size());
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) v[y * w + x] = t.data()[y * w + (w - 1 - x)];
    return Tensor::from_vector({1, h, w}, v);
}

} // namespace

TEST_CASE("recon_loss: perfect reconstruction gives exactly zero") {
    Tensor img = random_map({1, 16, 16}, 1);
    CHECK(recon_loss(img, img, 5.0).item() == 0.0);
}

TEST_CASE("recon_loss: all-zero vs all-one closed form") {
    const int h = 16, w = 20;
    Tensor zeros = Tensor::zeros({1, h, w});
    Tensor ones = Tensor::full({1, h, w}, 1.0);
    // intensity part: squared L2 norm = H*W; SSIM part from the closed form
    // on constant images: SSIM = C1 / (1 + C1)
    const double c1 = 1e-4;
    double expected_ssim = c1 / (1.0 + c1);
    double mu = 5.0;
    double expected = h * w + mu * (1.0 - expected_ssim);
    CHECK(recon_loss(zeros, ones, mu).item() == doctest::Approx(expected).epsilon(1e-9));
}

TEST_CASE("recon_loss: symmetric under joint horizontal flip") {
    Tensor a = random_map({1, 14, 18}, 2);
    Tensor b = random_map({1, 14, 18}, 3);
    double direct = recon_loss(a, b, 5.0).item();
    double flipped = recon_loss(flip_lr(a), flip_lr(b), 5.0).item();
    CHECK(direct == doctest::Approx(flipped).epsilon(1e-10));
}

TEST_CASE("decomp_loss: closed forms from the correlation definition") {
    Tensor b1 = random_map({2, 6, 6}, 4, -1, 1);
    Tensor d1 = random_map({2, 6, 6}, 5, -1, 1);

    // orthogonal details: numerator zero
    std::vector<double> pattern(72);
    for (size_t i = 0; i < pattern.size(); ++i) pattern[i] = (i % 2 == 0) ? 1.0 : -1.0;
    Tensor dA = Tensor::from_vector({2, 6, 6}, pattern);
    std::vector<double> orth(72);
    for (size_t i = 0; i < orth.size(); ++i) orth[i] = (i % 4 < 2) ? 1.0 : -1.0; // CC = 0
    Tensor dB = Tensor::from_vector({2, 6, 6}, orth);
    CHECK(decomp_loss(b1, b1, dA, dB).item() ==
          doctest::Approx(0.0).epsilon(1e-12)); // numerator CC_D = 0

    // identical bases and details: 1 / (1 + 1.01)
    CHECK(decomp_loss(b1, b1, d1, d1).item() == doctest::Approx(1.0 / 2.01).epsilon(1e-12));

    // anti-correlated details, decorrelated bases: 1 / 1.01
    Tensor negd = mul_scalar(d1, -1.0);
    CHECK(decomp_loss(dA, dB, d1, negd).item() == doctest::Approx(1.0 / 1.01).epsilon(1e-12));
}

TEST_CASE("decomp_loss: zero-variance maps use the CC=0 convention") {
    Tensor flat = Tensor::full({2, 4, 4}, 0.7);
    Tensor d = random_map({2, 4, 4}, 6);
    // CC_B = 0 (flat), CC_D = 1 -> 1/1.01
    CHECK(decomp_loss(flat, flat, d, d).item() == doctest::Approx(1.0 / 1.01));
}

TEST_CASE("graph_loss: scale invariance, orthogonality, anti-alignment") {
    Tensor g = random_map({3, 5, 5}, 7, -1, 1);
    for (double c : {0.5, 2.0, 10.0}) {
        Tensor scaled = mul_scalar(g, c);
        CHECK(graph_loss(g, scaled).item() == doctest::Approx(0.0).epsilon(1e-9));
    }
    std::vector<double> a(75, 0.0), b(75, 0.0);
    a[0] = 1.0;
    b[1] = 1.0;
    CHECK(graph_loss(Tensor::from_vector({3, 5, 5}, a), Tensor::from_vector({3, 5, 5}, b)).item() ==
          doctest::Approx(1.0));
    CHECK(graph_loss(g, mul_scalar(g, -1.0)).item() == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("graph_loss: zero maps make the term absent") {
    Tensor z = Tensor::zeros({2, 4, 4});
    Tensor g = random_map({2, 4, 4}, 8);
    CHECK_FALSE(graph_loss(z, z).defined());
    CHECK_FALSE(graph_loss(z, g).defined());
    CHECK_FALSE(graph_loss(g, z).defined());
}

TEST_CASE("stage2_intensity_loss: identities and brute-force 4x4 case") {
    Tensor i1 = random_map({1, 4, 4}, 9);
    Tensor i2 = random_map({1, 4, 4}, 10);
    Tensor target = maximum(i1, i2);
    CHECK(stage2_intensity_loss(target, i1, i2).item() == 0.0);

    Tensor zero = Tensor::zeros({1, 4, 4});
    Tensor c = Tensor::full({1, 4, 4}, 0.37);
    CHECK(stage2_intensity_loss(zero, zero, c).item() == doctest::Approx(0.37));

    Tensor f = random_map({1, 4, 4}, 11);
    double expected = 0.0;
    for (int i = 0; i < 16; ++i)
        expected += std::fabs(f.data()[i] - std::max(i1.data()[i], i2.data()[i]));
    expected /= 16.0;
    CHECK(stage2_intensity_loss(f, i1, i2).item() == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("grad_loss: identities and brute-force 5x5 Sobel case") {
    Tensor i = random_map({1, 5, 5}, 12);
    CHECK(grad_loss(i, i, i).item() == doctest::Approx(0.0).epsilon(1e-15));

    Tensor c1 = Tensor::full({1, 5, 5}, 0.3);
    Tensor c2 = Tensor::full({1, 5, 5}, 0.8);
    Tensor c3 = Tensor::full({1, 5, 5}, 0.5);
    CHECK(grad_loss(c1, c2, c3).item() == doctest::Approx(0.0).epsilon(1e-15));

    Tensor f = random_map({1, 5, 5}, 13);
    Tensor a = random_map({1, 5, 5}, 14);
    Tensor b = random_map({1, 5, 5}, 15);
    auto sobel_mag = [](const Tensor& t, int y, int x) {
        const int kx[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
        const int ky[3][3] = {{-1, -2, -1}, {0, 0, 0}, {1, 2, 1}};
        auto mirror = [](int i, int n) {
            while (i < 0 || i >= n) {
                if (i < 0) i = -i;
                if (i >= n) i = 2 * (n - 1) - i;
            }
            return i;
        };
        double gx = 0, gy = 0;
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
                double v = t.data()[mirror(y + dy, 5) * 5 + mirror(x + dx, 5)];
                gx += kx[dy + 1][dx + 1] * v;
                gy += ky[dy + 1][dx + 1] * v;
            }
        return std::sqrt(gx * gx + gy * gy);
    };
    double expected = 0;
    for (int y = 0; y < 5; ++y)
        for (int x = 0; x < 5; ++x)
            expected +=
                std::fabs(sobel_mag(f, y, x) - std::max(sobel_mag(a, y, x), sobel_mag(b, y, x)));
    expected /= 25.0;
    CHECK(grad_loss(f, a, b).item() == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("total_stage1: weighted sum exactly as printed") {
    Stage1Parts parts;
    parts.l1 = Tensor::scalar(0.0);
    parts.l2 = Tensor::scalar(0.0);
    parts.decomp = Tensor::scalar(0.0);
    parts.graph = Tensor::scalar(0.0);
    LossWeights w;
    auto [t0, r0] = total_stage1(parts, w);
    CHECK(t0.item() == 0.0);

    parts.l1 = Tensor::scalar(1.0);
    parts.l2 = Tensor::scalar(1.0);
    parts.decomp = Tensor::scalar(1.0);
    parts.graph = Tensor::scalar(1.0);
    auto [t1, r1] = total_stage1(parts, w);
    CHECK(t1.item() == doctest::Approx(4.5)); // 1 + 1*1 + 2*1 + 0.5*1
    CHECK(r1.terms.at("graph") == 1.0);

    parts.l2 = Tensor::scalar(3.0); // scaling one term scales linearly
    auto [t2, r2] = total_stage1(parts, w);
    CHECK(t2.item() == doctest::Approx(4.5 + 2.0 * w.alpha1));

    parts.graph = Tensor{};
    auto [t3, r3] = total_stage1(parts, w);
    CHECK_FALSE(r3.graph_present);
    CHECK(t3.item() == doctest::Approx(1.0 + 3.0 * 1.0 + 2.0));
}

TEST_CASE("total_stage2: weighted sum exactly as printed") {
    Stage2Parts parts;
    parts.intensity = Tensor::scalar(1.0);
    parts.grad = Tensor::scalar(1.0);
    parts.decomp = Tensor::scalar(1.0);
    parts.graph = Tensor::scalar(1.0);
    LossWeights w;
    auto [t, r] = total_stage2(parts, w);
    CHECK(t.item() == doctest::Approx(13.5)); // 1 + 0.5 + 10 + 2
    parts.intensity = Tensor::scalar(0.0);
    parts.grad = Tensor::scalar(0.0);
    parts.decomp = Tensor::scalar(0.0);
    parts.graph = Tensor::scalar(0.0);
    auto [t0, r0] = total_stage2(parts, w);
    CHECK(t0.item() == 0.0);
}

TEST_CASE("totals: non-finite terms raise a numeric error naming the term") {
    Stage1Parts parts;
    parts.l1 = Tensor::scalar(std::nan(""));
    parts.l2 = Tensor::scalar(0.0);
    parts.decomp = Tensor::scalar(0.0);
    LossWeights w;
    CHECK_THROWS_WITH_AS(total_stage1(parts, w), "loss term is not finite: l1", NumericError);
}

TEST_CASE("loss weights validation") {
    LossWeights w;
    w.epsilon = 1.0;
    CHECK_THROWS_AS(w.validate(), ConfigError);
    w = LossWeights{};
    w.alpha4 = -1;
    CHECK_THROWS_AS(w.validate(), ConfigError);
}

TEST_CASE("gradient checks: every loss vs central finite differences") {
    GradCheckOptions opts;
    opts.max_entries_per_tensor = 20;

    Tensor img = random_map({1, 12, 12}, 20, 0.1, 0.9, true);
    Tensor rec = random_map({1, 12, 12}, 21, 0.1, 0.9, true);
    auto l_recon = [&] { return recon_loss(img, rec, 5.0); };
    CHECK(gradcheck(l_recon, {img, rec}, opts) < 1e-3);

    Tensor b1 = random_map({2, 6, 6}, 22, -1, 1, true);
    Tensor b2 = random_map({2, 6, 6}, 23, -1, 1, true);
    Tensor d1 = random_map({2, 6, 6}, 24, -1, 1, true);
    Tensor d2 = random_map({2, 6, 6}, 25, -1, 1, true);
    auto l_decomp = [&] { return decomp_loss(b1, b2, d1, d2); };
    CHECK(gradcheck(l_decomp, {b1, b2, d1, d2}, opts) < 1e-3);

    Tensor g1 = random_map({2, 6, 6}, 26, -1, 1, true);
    Tensor g2 = random_map({2, 6, 6}, 27, -1, 1, true);
    auto l_graph = [&] { return graph_loss(g1, g2); };
    CHECK(gradcheck(l_graph, {g1, g2}, opts) < 1e-3);

    Tensor f = random_map({1, 6, 6}, 28, 0.1, 0.9, true);
    Tensor i1 = random_map({1, 6, 6}, 29, 0.1, 0.9, true);
    Tensor i2 = random_map({1, 6, 6}, 30, 0.1, 0.9, true);
    auto l_int = [&] { return stage2_intensity_loss(f, i1, i2); };
    CHECK(gradcheck(l_int, {f}, opts) < 1e-3);
    auto l_grad = [&] { return grad_loss(f, i1, i2); };
    CHECK(gradcheck(l_grad, {f}, opts) < 1e-3);
}
