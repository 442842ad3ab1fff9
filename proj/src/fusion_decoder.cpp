#include "tagat/fusion_decoder.hpp"

#include "tagat/error.hpp"

namespace tagat {

namespace {

// Small random weights biased toward averaging the two modality copies of
// each channel: fused streams start close to the feature mean, so stage-II
// fine-tuning begins from a sensible operating point instead of a random mix.
nn::Conv2d make_fusion_conv(int channels, std::mt19937_64& rng) {
    nn::Conv2d conv = nn::Conv2d::make(2 * channels, channels, 3, rng);
    for (double& v : conv.w.data()) v *= 0.05;
    const int k = 3;
    for (int o = 0; o < channels; ++o)
        for (int half = 0; half < 2; ++half) {
            size_t center = ((static_cast<size_t>(o) * 2 * channels + o + half * channels) * k + 1) * k + 1;
            conv.w.data()[center] += 0.5;
        }
    return conv;
}

} // namespace

FusionLayers::FusionLayers(int feature_channels, int graph_channels, std::mt19937_64& rng) {
    fb = make_fusion_conv(feature_channels, rng);
    fd = make_fusion_conv(feature_channels, rng);
    fg = make_fusion_conv(graph_channels, rng);
}

FusedFeatureSet FusionLayers::fuse(const FeatureBundle& bundle1, const FeatureBundle& bundle2,
                                   const Tensor& graph1, const Tensor& graph2) const {
    if (bundle1.base.shape() != bundle2.base.shape() ||
        bundle1.detail.shape() != bundle2.detail.shape() || graph1.shape() != graph2.shape())
        throw ShapeError("fuse_features: modality shapes differ");
    FusedFeatureSet out;
    out.fused_base = fb(concat({bundle1.base, bundle2.base}, 0));
    out.fused_detail = fd(concat({bundle1.detail, bundle2.detail}, 0));
    out.fused_graph = fg(concat({graph1, graph2}, 0));
    return out;
}

void FusionLayers::collect(nn::ParamMap& out, const std::string& prefix) const {
    fb.collect(out, prefix + ".fb");
    fd.collect(out, prefix + ".fd");
    fg.collect(out, prefix + ".fg");
}

Decoder::Decoder(int feature_channels, int graph_channels, int restormer_blocks, int heads,
                 std::mt19937_64& rng)
    : feature_channels_(feature_channels), graph_channels_(graph_channels) {
    reduce_ = nn::Conv2d::make(2 * feature_channels + graph_channels, feature_channels, 1, rng);
    for (int i = 0; i < restormer_blocks; ++i)
        blocks_.push_back(nn::RestormerBlock::make(feature_channels, heads, rng));
    out_ = nn::Conv2d::make(feature_channels, 1, 3, rng);
}

Tensor Decoder::decode(const Tensor& base, const Tensor& detail, const Tensor& graph,
                       const DecoderMask& mask) const {
    if (base.dim(0) != feature_channels_ || detail.dim(0) != feature_channels_ ||
        graph.dim(0) != graph_channels_)
        throw ShapeError("decode: channel counts do not match decoder configuration");
    if (base.dim(1) != detail.dim(1) || base.dim(2) != detail.dim(2) ||
        base.dim(1) != graph.dim(1) || base.dim(2) != graph.dim(2))
        throw ShapeError("decode: spatial dims differ across streams");
    const int h = base.dim(1), w = base.dim(2);
    Tensor zb = Tensor::zeros({feature_channels_, h, w});
    Tensor zg = Tensor::zeros({graph_channels_, h, w});
    Tensor x = concat({mask.use_base ? base : zb, mask.use_detail ? detail : zb,
                       mask.use_graph ? graph : zg},
                      0);
    x = reduce_(x);
    for (const auto& blk : blocks_) x = blk(x);
    return sigmoid(out_(x));
}

Tensor Decoder::reconstruct_stage1(const FeatureBundle& bundle, const Tensor& graph,
                                   const DecoderMask& mask) const {
    return decode(bundle.base, bundle.detail, graph, mask);
}

void Decoder::collect(nn::ParamMap& out, const std::string& prefix) const {
    reduce_.collect(out, prefix + ".reduce");
    for (size_t i = 0; i < blocks_.size(); ++i)
        blocks_[i].collect(out, prefix + ".block" + std::to_string(i));
    out_.collect(out, prefix + ".out");
}

Tensor fuse_stage2(const FusionLayers& fusion, const Decoder& decoder,
                   const FeatureBundle& bundle1, const FeatureBundle& bundle2,
                   const Tensor& graph1, const Tensor& graph2, const DecoderMask& mask) {
    FusedFeatureSet f = fusion.fuse(bundle1, bundle2, graph1, graph2);
    return decoder.decode(f.fused_base, f.fused_detail, f.fused_graph, mask);
}

} // namespace tagat
