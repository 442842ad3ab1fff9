#pragma once

#include <map>
#include <optional>
#include <string>

#include "tagat/tensor.hpp"

namespace tagat {

struct LossWeights {
    double alpha1 = 1.0;  // weights L_2 in the stage-I total
    double alpha2 = 2.0;  // decomposition (stage I)
    double alpha3 = 0.5;  // graph (both stages)
    double alpha4 = 10.0; // gradient (stage II)
    double alpha5 = 2.0;  // decomposition (stage II)
    double mu = 5.0;      // SSIM weight inside the reconstruction loss
    double epsilon = 1.01; // keeps the decomposition denominator positive

    void validate() const; // alphas >= 0, epsilon > 1
};

// Named scalar map for logging; the graph term may be absent (empty graphs).
struct LossReport {
    std::map<std::string, double> terms;
    double total = 0.0;
    bool graph_present = true;
};

// Mean SSIM between two {1,H,W} maps in [0,1]: 11x11 Gaussian window
// (sigma 1.5), K1=0.01, K2=0.03, dynamic range 1, valid windows only.
Tensor ssim_mean(const Tensor& a, const Tensor& b);

// ||I - Ihat||_2^2 (summed squares) + mu * (1 - SSIM).
Tensor recon_loss(const Tensor& image, const Tensor& recon, double mu);

// Pearson correlation over all elements; zero-variance inputs give 0.
Tensor pearson_cc(const Tensor& a, const Tensor& b);

// (CC of details)^2 / (CC of bases + epsilon).
Tensor decomp_loss(const Tensor& base1, const Tensor& base2, const Tensor& detail1,
                   const Tensor& detail2, double epsilon = 1.01);

// 1 - cosine similarity of the flattened maps, in [0,2]. Returns an
// undefined Tensor when either map has (near-)zero norm: the term is then
// omitted from totals and reported as absent.
Tensor graph_loss(const Tensor& graph1, const Tensor& graph2);

// (1/HW) * || I_f - max(I_1, I_2) ||_1
Tensor stage2_intensity_loss(const Tensor& fused, const Tensor& image1, const Tensor& image2);

// (1/HW) * || |grad I_f| - max(|grad I_1|, |grad I_2|) ||_1, Sobel magnitude,
// reflect-padded.
Tensor grad_loss(const Tensor& fused, const Tensor& image1, const Tensor& image2);

struct Stage1Parts {
    Tensor l1, l2, decomp;
    Tensor graph; // undefined => absent
};
struct Stage2Parts {
    Tensor intensity, grad, decomp;
    Tensor graph; // undefined => absent
};

// L_total^I = L_1 + a1*L_2 + a2*L_decomp + a3*L_graph
std::pair<Tensor, LossReport> total_stage1(const Stage1Parts& parts, const LossWeights& w);
// L_total^II = L_int + a3*L_graph + a4*L_grad + a5*L_decomp
std::pair<Tensor, LossReport> total_stage2(const Stage2Parts& parts, const LossWeights& w);

} // namespace tagat
