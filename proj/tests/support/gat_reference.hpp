#pragma once

// Independent brute-force evaluation of the attention equations: per head
//   H = X W,  e_ij = LeakyReLU(a^T [H_i || H_j]),
//   alpha_ij = softmax over the self-looped neighbourhood of i,
//   out_i = ELU(sum_j alpha_ij H_j),  heads averaged.
// Plain scalar loops, no shared code with the tensor implementation.

#include <cmath>
#include <set>
#include <vector>

namespace tagat::reference {

using Mat = std::vector<std::vector<double>>;

struct GatRefHead {
    Mat W;                 // Cin x Cout
    std::vector<double> a; // 2*Cout
};

inline Mat gat_reference(const Mat& x, const std::vector<std::pair<int, int>>& edges,
                         const std::vector<GatRefHead>& heads, double slope) {
    const int n = static_cast<int>(x.size());
    const int cout = heads.empty() ? 0 : static_cast<int>(heads[0].W[0].size());
    std::vector<std::set<int>> nbr(n);
    for (int i = 0; i < n; ++i) nbr[i].insert(i);
    for (auto [u, v] : edges) {
        nbr[u].insert(v);
        nbr[v].insert(u);
    }

    Mat out(n, std::vector<double>(cout, 0.0));
    for (const auto& head : heads) {
        const int cin = static_cast<int>(head.W.size());
        Mat h(n, std::vector<double>(cout, 0.0));
        for (int i = 0; i < n; ++i)
            for (int k = 0; k < cin; ++k)
                for (int c = 0; c < cout; ++c) h[i][c] += x[i][k] * head.W[k][c];
        for (int i = 0; i < n; ++i) {
            std::vector<int> js(nbr[i].begin(), nbr[i].end());
            std::vector<double> e(js.size());
            for (size_t jj = 0; jj < js.size(); ++jj) {
                double s = 0;
                for (int c = 0; c < cout; ++c) s += head.a[c] * h[i][c];
                for (int c = 0; c < cout; ++c) s += head.a[cout + c] * h[js[jj]][c];
                e[jj] = s > 0 ? s : slope * s;
            }
            double mx = e[0];
            for (double v : e) mx = std::max(mx, v);
            double z = 0;
            for (double& v : e) {
                v = std::exp(v - mx);
                z += v;
            }
            for (double& v : e) v /= z;
            for (int c = 0; c < cout; ++c) {
                double agg = 0;
                for (size_t jj = 0; jj < js.size(); ++jj) agg += e[jj] * h[js[jj]][c];
                double act = agg > 0 ? agg : std::exp(agg) - 1.0; // ELU
                out[i][c] += act / heads.size();
            }
        }
    }
    return out;
}

} // namespace tagat::reference
