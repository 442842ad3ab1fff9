#pragma once

#include <map>
#include <random>
#include <string>
#include <vector>

#include "tagat/tensor.hpp"

namespace tagat::nn {

// Named parameter registry. std::map keeps iteration order sorted, which the
// checkpoint format and optimizer rely on for determinism.
using ParamMap = std::map<std::string, Tensor>;

Tensor he_uniform(Shape s, int fan_in, std::mt19937_64& rng);

struct Conv2d {
    Tensor w; // {Cout, Cin, k, k}
    Tensor b; // {Cout}, undefined when bias-less
    int dilation = 1;
    PadMode pad = PadMode::Zero;

    static Conv2d make(int cin, int cout, int k, std::mt19937_64& rng, int dilation = 1,
                       PadMode pad = PadMode::Zero, bool bias = true);
    // Zero-initialized weights and bias (identity-at-init coupling nets).
    static Conv2d make_zero(int cin, int cout, int k, int dilation = 1,
                            PadMode pad = PadMode::Zero, bool bias = true);

    Tensor operator()(const Tensor& x) const;
    void collect(ParamMap& out, const std::string& prefix) const;
};

struct DepthwiseConv2d {
    Tensor w; // {C, k, k}
    Tensor b; // {C}
    int dilation = 1;
    PadMode pad = PadMode::Zero;

    static DepthwiseConv2d make(int c, int k, std::mt19937_64& rng, int dilation = 1,
                                PadMode pad = PadMode::Zero, bool bias = true);
    Tensor operator()(const Tensor& x) const;
    void collect(ParamMap& out, const std::string& prefix) const;
};

// Per-pixel layer norm over channels with learnable affine.
struct LayerNormC {
    Tensor gamma, beta;
    static LayerNormC make(int c);
    Tensor operator()(const Tensor& x) const;
    void collect(ParamMap& out, const std::string& prefix) const;
};

// Multi-head transposed (channel) attention over all spatial positions.
// Queries/keys are L2-normalized along the spatial axis so every output pixel
// mixes global statistics; attention matrices are (C/heads)^2 per head.
struct ChannelAttention {
    LayerNormC ln;
    Conv2d qkv_pw;          // 1x1: C -> 3C
    DepthwiseConv2d qkv_dw; // 3x3 on 3C
    Tensor temperature;     // {heads}
    Conv2d proj;            // 1x1: C -> C
    int heads = 1;

    static ChannelAttention make(int c, int heads, std::mt19937_64& rng);
    Tensor operator()(const Tensor& x) const; // includes the residual add
    void collect(ParamMap& out, const std::string& prefix) const;
};

// Gated feed-forward with a depthwise 3x3 (GDFN-style), residual included.
struct GatedFeedForward {
    LayerNormC ln;
    Conv2d in_pw;          // 1x1: C -> 2*hidden
    DepthwiseConv2d dw;    // 3x3 on 2*hidden
    Conv2d out_pw;         // 1x1: hidden -> C
    int hidden = 0;

    static GatedFeedForward make(int c, int expansion, std::mt19937_64& rng);
    Tensor operator()(const Tensor& x) const;
    void collect(ParamMap& out, const std::string& prefix) const;
};

struct RestormerBlock {
    ChannelAttention attn;
    GatedFeedForward ffn;

    static RestormerBlock make(int c, int heads, std::mt19937_64& rng);
    Tensor operator()(const Tensor& x) const;
    void collect(ParamMap& out, const std::string& prefix) const;
};

// Two-branch long/short-range mixer: the first half of the channels goes
// through global channel attention, the second half through a local
// depthwise+pointwise conv path; halves are concatenated, mixed by a 1x1
// conv and followed by a gated feed-forward.
struct LiteTransformerBlock {
    LayerNormC ln;
    ChannelAttention global_branch; // on C/2
    DepthwiseConv2d local_dw;       // 3x3 on C/2
    Conv2d local_pw;                // 1x1 on C/2
    Conv2d mix;                     // 1x1: C -> C
    GatedFeedForward ffn;

    static LiteTransformerBlock make(int c, int heads, std::mt19937_64& rng);
    Tensor operator()(const Tensor& x) const;
    void collect(ParamMap& out, const std::string& prefix) const;
};

// Affine coupling: one half is scaled/shifted by a small conv net of the
// other half. Exactly invertible; log-scales are soft-clamped via
// clamp*tanh(s/clamp). Zero-initialized output conv makes it the identity
// at construction.
struct CouplingBlock {
    Conv2d net_hidden; // 3x3: C/2 -> C/2
    Conv2d net_out;    // 3x3: C/2 -> C (s and t stacked), zero-init
    bool swap_halves = false;
    double clamp = 2.0;
    double lrelu_slope = 0.1;

    static CouplingBlock make(int c, bool swap_halves, std::mt19937_64& rng);
    Tensor forward(const Tensor& x) const;
    Tensor inverse(const Tensor& y) const;
    void collect(ParamMap& out, const std::string& prefix) const;
};

} // namespace tagat::nn
