#include "tagat/tae.hpp"

#include <algorithm>
#include <cmath>

#include "tagat/error.hpp"

namespace tagat {

void TaeConfig::validate() const {
    if (in_channels <= 0 || reduced_channels <= 0 || head_dim <= 0)
        throw ConfigError("TaeConfig: channel counts must be positive");
    if (giu_layers < 0 || giu_heads < 1) throw ConfigError("TaeConfig: bad GIU geometry");
    if (patch_size < 1 || patch_size % 2 == 0)
        throw ConfigError("TaeConfig: patch_size must be odd and positive");
}

GatLayerParams GatLayerParams::make(int cin, int cout, int heads, double slope,
                                    std::mt19937_64& rng) {
    GatLayerParams p;
    p.leaky_slope = slope;
    for (int h = 0; h < heads; ++h) {
        p.W.push_back(nn::he_uniform({cin, cout}, cin, rng));
        p.a.push_back(nn::he_uniform({2 * cout}, 2 * cout, rng));
    }
    return p;
}

void GatLayerParams::collect(nn::ParamMap& out, const std::string& prefix) const {
    for (size_t h = 0; h < W.size(); ++h) {
        out[prefix + ".h" + std::to_string(h) + ".W"] = W[h];
        out[prefix + ".h" + std::to_string(h) + ".a"] = a[h];
    }
}

namespace {

// Self-looped neighbourhoods as flat directed pair lists grouped by source
// node: seg i covers [offsets[i], offsets[i+1]).
struct Neighbourhoods {
    std::vector<int> src, dst;
    std::vector<int> offsets;
};

Neighbourhoods build_neighbourhoods(const VesselGraph& graph) {
    const int n = static_cast<int>(graph.nodes.size());
    std::vector<std::vector<int>> adj(n);
    for (int i = 0; i < n; ++i) adj[i].push_back(i); // self loop
    for (auto [a, b] : graph.edges) {
        adj[a].push_back(b);
        adj[b].push_back(a);
    }
    Neighbourhoods nb;
    nb.offsets.push_back(0);
    for (int i = 0; i < n; ++i) {
        std::sort(adj[i].begin(), adj[i].end());
        for (int j : adj[i]) {
            nb.src.push_back(i);
            nb.dst.push_back(j);
        }
        nb.offsets.push_back(static_cast<int>(nb.src.size()));
    }
    return nb;
}

} // namespace

std::pair<Tensor, AttentionMap> gat_layer(const Tensor& nodes, const VesselGraph& graph,
                                          const GatLayerParams& params, bool gcn_mode,
                                          bool want_attention) {
    if (nodes.rank() != 2) throw ShapeError("gat_layer: expected {N,C} node features");
    if (nodes.dim(0) != static_cast<int>(graph.nodes.size()))
        throw ShapeError("gat_layer: node count mismatch");
    if (!all_finite(nodes)) throw NumericError("gat_layer: non-finite node features");
    const int n = nodes.dim(0);
    const int heads = params.heads();
    if (heads < 1) throw ConfigError("gat_layer: at least one head required");

    AttentionMap amap;
    if (n == 0) return {Tensor::zeros({0, params.W[0].dim(1)}), amap};

    Neighbourhoods nb = build_neighbourhoods(graph);

    std::vector<Tensor> head_out;
    head_out.reserve(heads);
    for (int hd = 0; hd < heads; ++hd) {
        Tensor h = matmul(nodes, params.W[hd]); // {N, Cout}
        const int cout = h.dim(1);
        Tensor alpha;
        if (gcn_mode) {
            std::vector<double> w(nb.src.size());
            for (size_t s = 0; s + 1 < nb.offsets.size(); ++s) {
                double inv = 1.0 / (nb.offsets[s + 1] - nb.offsets[s]);
                for (int e = nb.offsets[s]; e < nb.offsets[s + 1]; ++e) w[e] = inv;
            }
            const int esize = static_cast<int>(w.size());
            alpha = Tensor::from_vector({esize}, std::move(w));
        } else {
            Tensor hi = gather_rows(h, nb.src);
            Tensor hj = gather_rows(h, nb.dst);
            Tensor cat = concat({hi, hj}, 1); // {E, 2*Cout}
            Tensor e = matmul(cat, reshape(params.a[hd], {2 * cout, 1}));
            e = leaky_relu(reshape(e, {static_cast<int>(nb.src.size())}), params.leaky_slope);
            alpha = segment_softmax(e, nb.offsets);
        }
        Tensor hj = gather_rows(h, nb.dst);
        head_out.push_back(elu(segment_weighted_sum(alpha, hj, nb.offsets)));
        if (want_attention) {
            std::vector<AttentionEntry> entries;
            const auto& av = alpha.data();
            for (size_t e = 0; e < nb.src.size(); ++e)
                entries.push_back({nb.src[e], nb.dst[e], av[e]});
            amap.push_back(std::move(entries));
        }
    }
    Tensor out = head_out[0];
    for (int hd = 1; hd < heads; ++hd) out = add(out, head_out[hd]);
    out = mul_scalar(out, 1.0 / heads);
    return {out, amap};
}

Tae::Tae(const TaeConfig& cfg, std::mt19937_64& rng) : cfg_(cfg) {
    cfg_.validate();
    reduce_ = nn::Conv2d::make(2 * cfg_.in_channels, cfg_.reduced_channels, 1, rng);
    patch_conv1_ = nn::Conv2d::make(cfg_.reduced_channels, cfg_.reduced_channels, 3, rng);
    patch_conv2_ = nn::Conv2d::make(cfg_.reduced_channels, cfg_.reduced_channels, 3, rng);
    int cin = cfg_.reduced_channels;
    for (int l = 0; l < cfg_.giu_layers; ++l) {
        giu_.push_back(GatLayerParams::make(cin, cfg_.head_dim, cfg_.giu_heads,
                                            cfg_.leaky_slope, rng));
        cin = cfg_.head_dim;
    }
    g2s_conv1_ = nn::Conv2d::make(cfg_.head_dim, cfg_.head_dim, 7, rng, /*dilation=*/2);
    g2s_conv2_ = nn::Conv2d::make(cfg_.head_dim, cfg_.head_dim, 7, rng, /*dilation=*/2);
}

Tensor Tae::s2g_reduce(const Tensor& base, const Tensor& detail) const {
    if (base.rank() != 3 || detail.rank() != 3 || base.shape() != detail.shape())
        throw ShapeError("s2g_reduce: base/detail shapes differ");
    return reduce_(concat({base, detail}, 0));
}

Tensor Tae::s2g_node_features(const Tensor& reduced, const VesselGraph& graph) const {
    const int c = reduced.dim(0), h = reduced.dim(1), w = reduced.dim(2);
    const int n = static_cast<int>(graph.nodes.size());
    if (n == 0) return Tensor::zeros({0, c});
    const int p = cfg_.patch_size;
    const int r = p / 2;
    if (r >= h || r >= w)
        throw ConfigError("s2g_node_features: patch radius exceeds feature map (reflect pad)");
    Tensor padded = pad2d(reduced, r, r, r, r, PadMode::Reflect101);
    std::vector<Tensor> rows;
    rows.reserve(n);
    for (auto [x, y] : graph.nodes) {
        if (x < 0 || x >= w || y < 0 || y >= h)
            throw ShapeError("s2g_node_features: node coordinate out of bounds");
        Tensor patch = crop(padded, y, x, p, p); // centered: pad shifted by r
        patch = leaky_relu(patch_conv1_(patch), cfg_.leaky_slope);
        patch = leaky_relu(patch_conv2_(patch), cfg_.leaky_slope);
        rows.push_back(reshape(gap(patch), {1, c}));
    }
    return n == 1 ? rows[0] : concat(rows, 0);
}

Tensor Tae::giu_forward(const Tensor& nodes, const VesselGraph& graph,
                        AttentionMap* last_layer_attention) const {
    Tensor x = nodes;
    for (size_t l = 0; l < giu_.size(); ++l) {
        bool want = last_layer_attention != nullptr && l + 1 == giu_.size();
        auto [out, amap] = gat_layer(x, graph, giu_[l], cfg_.gcn_mode, want);
        if (want) *last_layer_attention = std::move(amap);
        x = out;
    }
    return x;
}

Tensor Tae::g2s_diffuse(const Tensor& nodes_final, const VesselGraph& graph, int h,
                        int w) const {
    const int c = cfg_.head_dim;
    if (nodes_final.dim(0) == 0) return Tensor::zeros({c, h, w});
    if (nodes_final.dim(1) != c) throw ShapeError("g2s_diffuse: node feature width mismatch");
    std::vector<std::pair<int, int>> xy(graph.nodes.begin(), graph.nodes.end());
    Tensor scattered = scatter_nodes(nodes_final, xy, h, w);
    if (!cfg_.g2s_diffusion) return scattered;
    Tensor d = leaky_relu(g2s_conv1_(scattered), cfg_.leaky_slope);
    d = g2s_conv2_(d);
    return add(d, scattered);
}

Tensor Tae::forward(const Tensor& base, const Tensor& detail, const VesselGraph& graph,
                    AttentionMap* last_layer_attention) const {
    const int h = base.dim(1), w = base.dim(2);
    if (graph.nodes.empty()) return Tensor::zeros({cfg_.head_dim, h, w});
    Tensor reduced = s2g_reduce(base, detail);
    Tensor nodes = s2g_node_features(reduced, graph);
    Tensor refined = giu_forward(nodes, graph, last_layer_attention);
    return g2s_diffuse(refined, graph, h, w);
}

void Tae::collect(nn::ParamMap& out, const std::string& prefix) const {
    reduce_.collect(out, prefix + ".reduce");
    patch_conv1_.collect(out, prefix + ".patch_conv1");
    patch_conv2_.collect(out, prefix + ".patch_conv2");
    for (size_t l = 0; l < giu_.size(); ++l)
        giu_[l].collect(out, prefix + ".giu" + std::to_string(l));
    g2s_conv1_.collect(out, prefix + ".g2s_conv1");
    g2s_conv2_.collect(out, prefix + ".g2s_conv2");
}

} // namespace tagat
