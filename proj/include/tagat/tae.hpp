#pragma once

#include <random>
#include <vector>

#include "tagat/nn.hpp"
#include "tagat/tensor.hpp"
#include "tagat/vessel_graph.hpp"

namespace tagat {

struct TaeConfig {
    int in_channels = 64;      // D of the base/detail maps
    int reduced_channels = 64; // after the 1x1 squeeze
    int giu_layers = 2;
    int giu_heads = 12;
    int head_dim = 64; // per-head space; also the TAE output channel count
    int patch_size = 21;
    double leaky_slope = 0.2;
    bool g2s_diffusion = true; // false: raw scattered map (ablation II)
    bool gcn_mode = false;     // true: uniform neighbourhood weights (ablation V)

    void validate() const;
};

// One GAT layer: per-head linear transform W, attention vector a.
struct GatLayerParams {
    std::vector<Tensor> W; // heads x {Cin, Cout}
    std::vector<Tensor> a; // heads x {2*Cout}
    double leaky_slope = 0.2;

    static GatLayerParams make(int cin, int cout, int heads, double slope, std::mt19937_64& rng);
    int heads() const { return static_cast<int>(W.size()); }
    void collect(nn::ParamMap& out, const std::string& prefix) const;
};

// Attention coefficients per head, one entry per directed pair (i -> j) with
// j in the self-looped neighbourhood of i.
struct AttentionEntry {
    int i, j;
    double alpha;
};
using AttentionMap = std::vector<std::vector<AttentionEntry>>;

// Softmax-normalized attention over self-looped neighbourhoods, ELU
// aggregation, heads averaged. gcn_mode replaces attention with uniform
// 1/|N_i| weights behind the same interface.
std::pair<Tensor, AttentionMap> gat_layer(const Tensor& nodes, const VesselGraph& graph,
                                          const GatLayerParams& params, bool gcn_mode = false,
                                          bool want_attention = false);

// Topology-aware encoder: squeeze spatial features, pool patches onto graph
// nodes, refine by multi-layer multi-head graph attention, diffuse back to a
// spatial map. An empty graph short-circuits to a zero map.
class Tae {
public:
    Tae() = default;
    Tae(const TaeConfig& cfg, std::mt19937_64& rng);

    Tensor s2g_reduce(const Tensor& base, const Tensor& detail) const;
    // {N, reduced_channels}; N = 0 gives an empty matrix, not an error
    Tensor s2g_node_features(const Tensor& reduced, const VesselGraph& graph) const;
    Tensor giu_forward(const Tensor& nodes, const VesselGraph& graph,
                       AttentionMap* last_layer_attention = nullptr) const;
    Tensor g2s_diffuse(const Tensor& nodes_final, const VesselGraph& graph, int h, int w) const;
    Tensor forward(const Tensor& base, const Tensor& detail, const VesselGraph& graph,
                   AttentionMap* last_layer_attention = nullptr) const;

    const TaeConfig& config() const { return cfg_; }
    const std::vector<GatLayerParams>& layers() const { return giu_; }
    void collect(nn::ParamMap& out, const std::string& prefix) const;

private:
    TaeConfig cfg_;
    nn::Conv2d reduce_;       // 1x1: 2*in -> reduced
    nn::Conv2d patch_conv1_;  // 3x3 on reduced
    nn::Conv2d patch_conv2_;  // 3x3 on reduced
    std::vector<GatLayerParams> giu_;
    nn::Conv2d g2s_conv1_;    // 7x7 dilation 2
    nn::Conv2d g2s_conv2_;    // 7x7 dilation 2
};

} // namespace tagat
