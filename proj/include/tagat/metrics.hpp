#pragma once

#include <iosfwd>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "tagat/plane.hpp"

namespace tagat {

// Eight fusion-quality scores of one fused image against its two sources.
// All metrics run on 8-bit quantized luminance.
struct MetricReport {
    double en = 0, sd = 0, sf = 0, mi = 0, scd = 0, vif = 0, qabf = 0, ssim = 0;
};

struct IntensityStats {
    double en, sd, sf;
};

// EN: Shannon entropy (bits) of the 256-bin histogram.
// SD: population standard deviation.
// SF: sqrt(mean squared horizontal diff + mean squared vertical diff),
//     means over the existing difference terms.
IntensityStats intensity_stats(const Gray8& fused);

// MI = MI(F,A) + MI(F,B) from 256-bin joint histograms, log2.
// SCD = CC(F-B, A) + CC(F-A, B); a zero-variance operand contributes 0.
std::pair<double, double> information_metrics(const Gray8& fused, const Gray8& a,
                                              const Gray8& b);

// VIF: GSM visual information fidelity, 4 scales, Gaussian windows
//      (17,9,5,3) with sigma N/5, reflect-101 same-size filtering, 2x2 mean
//      decimation between scales, sigma_n^2 = 2; mean over the two sources.
//      Scales whose window does not fit are skipped.
// QABF: Sobel edge strength/orientation preservation (Petrovic constants),
//       averaged over both sources with g^1 weights.
// SSIM: mean of SSIM(F,A) and SSIM(F,B), 11x11 Gaussian (sigma 1.5), L=255.
std::tuple<double, double, double> perceptual_metrics(const Gray8& fused, const Gray8& a,
                                                      const Gray8& b);

MetricReport evaluate_pair(const Gray8& fused, const Gray8& a, const Gray8& b);
MetricReport evaluate_pair(const Plane& fused, const Plane& a, const Plane& b);

// Conventions and pinned constants, emitted as comment lines atop reports.
std::string metric_report_header();

// CSV in Table-1 column order plus a trailing mean row.
void write_metric_csv(std::ostream& out,
                      const std::vector<std::pair<std::string, MetricReport>>& rows);

} // namespace tagat
