#pragma once

#include <random>
#include <vector>

#include "tagat/nn.hpp"
#include "tagat/tensor.hpp"

namespace tagat {

struct EncoderConfig {
    int embed_dim = 64;
    int restormer_blocks = 4;
    int attention_heads = 4;
    int lt_blocks = 2;
    int inn_blocks = 2;

    void validate() const; // embed divisible by heads, even for coupling split
};

// Per-modality shared / base / detail feature maps, all {D,H,W}.
struct FeatureBundle {
    Tensor shared;
    Tensor base;
    Tensor detail;
};

// Dual-branch long-short range encoder: a shared shallow stack feeds a
// low-frequency transformer branch and a high-frequency invertible branch.
// One weight set serves both modalities.
class LsrEncoder {
public:
    LsrEncoder() = default;
    LsrEncoder(const EncoderConfig& cfg, std::mt19937_64& rng);

    Tensor sfe_forward(const Tensor& image) const; // {1,H,W} -> {D,H,W}
    Tensor bte_forward(const Tensor& shared) const;
    Tensor dce_forward(const Tensor& shared) const;
    Tensor dce_inverse(const Tensor& detail) const;
    FeatureBundle encode(const Tensor& image) const;

    const EncoderConfig& config() const { return cfg_; }
    void collect(nn::ParamMap& out, const std::string& prefix) const;

private:
    EncoderConfig cfg_;
    nn::Conv2d embed_;
    std::vector<nn::RestormerBlock> sfe_;
    std::vector<nn::LiteTransformerBlock> bte_;
    std::vector<nn::CouplingBlock> dce_;
};

} // namespace tagat
