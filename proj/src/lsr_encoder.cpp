#include "tagat/lsr_encoder.hpp"

#include "tagat/error.hpp"

namespace tagat {

void EncoderConfig::validate() const {
    if (embed_dim <= 0 || restormer_blocks < 0 || lt_blocks < 0 || inn_blocks < 0)
        throw ConfigError("EncoderConfig: counts must be non-negative, embed_dim positive");
    if (attention_heads < 1 || embed_dim % attention_heads != 0)
        throw ConfigError("EncoderConfig: embed_dim must be divisible by attention_heads");
    if (embed_dim % 2 != 0)
        throw ConfigError("EncoderConfig: embed_dim must be even (coupling split)");
}

LsrEncoder::LsrEncoder(const EncoderConfig& cfg, std::mt19937_64& rng) : cfg_(cfg) {
    cfg_.validate();
    embed_ = nn::Conv2d::make(1, cfg_.embed_dim, 3, rng);
    for (int i = 0; i < cfg_.restormer_blocks; ++i)
        sfe_.push_back(nn::RestormerBlock::make(cfg_.embed_dim, cfg_.attention_heads, rng));
    for (int i = 0; i < cfg_.lt_blocks; ++i)
        bte_.push_back(nn::LiteTransformerBlock::make(cfg_.embed_dim, cfg_.attention_heads, rng));
    for (int i = 0; i < cfg_.inn_blocks; ++i)
        dce_.push_back(nn::CouplingBlock::make(cfg_.embed_dim, i % 2 == 1, rng));
}

Tensor LsrEncoder::sfe_forward(const Tensor& image) const {
    if (image.rank() != 3 || image.dim(0) != 1)
        throw ShapeError("sfe_forward: expected single-channel {1,H,W} input");
    Tensor x = embed_(image);
    for (const auto& blk : sfe_) x = blk(x);
    return x;
}

Tensor LsrEncoder::bte_forward(const Tensor& shared) const {
    if (shared.rank() != 3 || shared.dim(0) != cfg_.embed_dim)
        throw ShapeError("bte_forward: channel count mismatch");
    Tensor x = shared;
    for (const auto& blk : bte_) x = blk(x);
    return x;
}

Tensor LsrEncoder::dce_forward(const Tensor& shared) const {
    if (shared.rank() != 3 || shared.dim(0) != cfg_.embed_dim)
        throw ShapeError("dce_forward: channel count mismatch");
    if (shared.dim(0) % 2 != 0) throw ConfigError("dce_forward: channel count must be even");
    Tensor x = shared;
    for (const auto& blk : dce_) x = blk.forward(x);
    return x;
}

Tensor LsrEncoder::dce_inverse(const Tensor& detail) const {
    if (detail.rank() != 3 || detail.dim(0) != cfg_.embed_dim)
        throw ShapeError("dce_inverse: channel count mismatch");
    Tensor x = detail;
    for (auto it = dce_.rbegin(); it != dce_.rend(); ++it) x = it->inverse(x);
    return x;
}

FeatureBundle LsrEncoder::encode(const Tensor& image) const {
    FeatureBundle b;
    b.shared = sfe_forward(image);
    b.base = bte_forward(b.shared);
    b.detail = dce_forward(b.shared);
    return b;
}

void LsrEncoder::collect(nn::ParamMap& out, const std::string& prefix) const {
    embed_.collect(out, prefix + ".embed");
    for (size_t i = 0; i < sfe_.size(); ++i)
        sfe_[i].collect(out, prefix + ".sfe" + std::to_string(i));
    for (size_t i = 0; i < bte_.size(); ++i)
        bte_[i].collect(out, prefix + ".bte" + std::to_string(i));
    for (size_t i = 0; i < dce_.size(); ++i)
        dce_[i].collect(out, prefix + ".dce" + std::to_string(i));
}

} // namespace tagat
