#pragma once

#include <random>
#include <vector>

#include "tagat/lsr_encoder.hpp"
#include "tagat/nn.hpp"
#include "tagat/tensor.hpp"

namespace tagat {

// Channel-masking hooks for the Table-2 ablation variants: masked streams
// are replaced by zero maps at the decoder (and fusion) input, no code edits.
struct DecoderMask {
    bool use_base = true;
    bool use_detail = true;
    bool use_graph = true;
};

struct FusedFeatureSet {
    Tensor fused_base;
    Tensor fused_detail;
    Tensor fused_graph;
};

// F_B / F_D / F_G: channel-concatenate the two modalities' maps, one 3x3
// convolution back to the stream's channel count.
struct FusionLayers {
    nn::Conv2d fb, fd, fg;

    FusionLayers() = default;
    FusionLayers(int feature_channels, int graph_channels, std::mt19937_64& rng);
    FusedFeatureSet fuse(const FeatureBundle& bundle1, const FeatureBundle& bundle2,
                         const Tensor& graph1, const Tensor& graph2) const;
    void collect(nn::ParamMap& out, const std::string& prefix) const;
};

// 1x1 channel reduction, Restormer-style blocks, 3x3 conv to one channel,
// sigmoid output. Shared between Stage-I reconstruction and Stage-II fusion.
class Decoder {
public:
    Decoder() = default;
    Decoder(int feature_channels, int graph_channels, int restormer_blocks, int heads,
            std::mt19937_64& rng);

    // Concatenates (base, detail, graph) honoring the ablation mask.
    Tensor decode(const Tensor& base, const Tensor& detail, const Tensor& graph,
                  const DecoderMask& mask = {}) const;
    Tensor reconstruct_stage1(const FeatureBundle& bundle, const Tensor& graph,
                              const DecoderMask& mask = {}) const;
    void collect(nn::ParamMap& out, const std::string& prefix) const;

private:
    int feature_channels_ = 0;
    int graph_channels_ = 0;
    nn::Conv2d reduce_;
    std::vector<nn::RestormerBlock> blocks_;
    nn::Conv2d out_;
};

Tensor fuse_stage2(const FusionLayers& fusion, const Decoder& decoder,
                   const FeatureBundle& bundle1, const FeatureBundle& bundle2,
                   const Tensor& graph1, const Tensor& graph2, const DecoderMask& mask = {});

} // namespace tagat
