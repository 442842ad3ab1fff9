#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "support/gradcheck.hpp"
#include "tagat/error.hpp"
#include "tagat/lsr_encoder.hpp"

using namespace tagat;
using tagat::testing::gradcheck;
using tagat::testing::GradCheckOptions;

namespace {

EncoderConfig tiny_config() {
    EncoderConfig c;
    c.embed_dim = 8;
    c.restormer_blocks = 1;
    c.attention_heads = 2;
    c.lt_blocks = 1;
    c.inn_blocks = 2;
    return c;
}

Tensor random_image(int h, int w, uint64_t seed) {
    std::mt19937_64 rng(seed);
    return Tensor::uniform({1, h, w}, 0.05, 0.95, rng);
}

} // namespace

TEST_CASE("config validation") {
    EncoderConfig c = tiny_config();
    c.attention_heads = 3; // does not divide 8
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = tiny_config();
    c.embed_dim = 7; // odd: coupling split impossible
    CHECK_THROWS_AS(c.validate(), ConfigError);
    CHECK_NOTHROW(tiny_config().validate());
}

TEST_CASE("sfe/bte/dce preserve spatial dims with the configured width") {
    std::mt19937_64 rng(1);
    LsrEncoder enc(tiny_config(), rng);
    Tensor img = random_image(10, 14, 2);
    Tensor shared = enc.sfe_forward(img);
    CHECK(shared.shape() == Shape{8, 10, 14});
    CHECK(enc.bte_forward(shared).shape() == Shape{8, 10, 14});
    CHECK(enc.dce_forward(shared).shape() == Shape{8, 10, 14});
    FeatureBundle b = enc.encode(img);
    CHECK(b.shared.shape() == b.base.shape());
    CHECK(b.base.shape() == b.detail.shape());
}

TEST_CASE("forward passes are deterministic and input-sensitive") {
    std::mt19937_64 rng(3);
    LsrEncoder enc(tiny_config(), rng);
    Tensor a = random_image(9, 9, 4);
    Tensor b = random_image(9, 9, 5);
    CHECK(enc.sfe_forward(a).data() == enc.sfe_forward(a).data());
    CHECK(enc.sfe_forward(a).data() != enc.sfe_forward(b).data());
    Tensor s = enc.sfe_forward(a);
    CHECK(enc.bte_forward(s).data() == enc.bte_forward(s).data());
    CHECK(enc.dce_forward(s).data() == enc.dce_forward(s).data());
}

TEST_CASE("default full-scale widths: 64-dim embedding") {
    std::mt19937_64 rng(6);
    EncoderConfig full; // defaults: 64 dim, 4 blocks, 4 heads
    LsrEncoder enc(full, rng);
    Tensor img = random_image(12, 12, 7);
    FeatureBundle b = enc.encode(img);
    CHECK(b.shared.dim(0) == 64);
    CHECK(b.base.dim(0) == 64);
    CHECK(b.detail.dim(0) == 64);
}

TEST_CASE("dce invertibility: random weights, round trip within 1e-4") {
    std::mt19937_64 rng(8);
    LsrEncoder enc(tiny_config(), rng);
    // coupling output convs are zero-initialized; randomize every coupling
    // parameter so the blocks genuinely transform
    nn::ParamMap params;
    enc.collect(params, "enc");
    std::mt19937_64 wrng(88);
    std::uniform_real_distribution<double> d(-0.4, 0.4);
    for (auto& [name, p] : params)
        if (name.find(".dce") != std::string::npos)
            for (double& v : p.data()) v = d(wrng);
    std::mt19937_64 data_rng(9);
    for (int trial = 0; trial < 5; ++trial) {
        Tensor x = Tensor::uniform({8, 7, 9}, -1.5, 1.5, data_rng);
        Tensor y = enc.dce_forward(x);
        Tensor back = enc.dce_inverse(y);
        double max_err = 0;
        for (size_t i = 0; i < x.data().size(); ++i)
            max_err = std::max(max_err, std::fabs(x.data()[i] - back.data()[i]));
        CHECK(max_err < 1e-4);
        CHECK(y.data() != x.data()); // random coupling nets actually transform
    }
}

TEST_CASE("dce with zero-initialized coupling nets is the identity") {
    // every CouplingBlock zero-inits its output conv, so a freshly built
    // block leaves any input unchanged until training moves net_hidden's
    // output through net_out's zero weights
    std::mt19937_64 rng(10);
    nn::CouplingBlock blk = nn::CouplingBlock::make(8, false, rng);
    Tensor x = Tensor::uniform({8, 6, 6}, -1, 1, rng);
    Tensor y = blk.forward(x);
    CHECK(y.data() == x.data());
    Tensor zero = Tensor::zeros({8, 6, 6});
    CHECK(blk.forward(zero).data() == zero.data());
}

TEST_CASE("odd channel count rejected for coupling") {
    std::mt19937_64 rng(11);
    CHECK_THROWS_AS(nn::CouplingBlock::make(7, false, rng), ConfigError);
}

TEST_CASE("degenerate config: zero blocks makes base == detail == shared") {
    EncoderConfig c = tiny_config();
    c.restormer_blocks = 0;
    c.lt_blocks = 0;
    c.inn_blocks = 0;
    std::mt19937_64 rng(12);
    LsrEncoder enc(c, rng);
    FeatureBundle b = enc.encode(random_image(6, 6, 13));
    CHECK(b.base.data() == b.shared.data());
    CHECK(b.detail.data() == b.shared.data());
}

TEST_CASE("gradient check: sfe, bte, dce vs finite differences") {
    EncoderConfig c;
    c.embed_dim = 4;
    c.restormer_blocks = 1;
    c.attention_heads = 2;
    c.lt_blocks = 1;
    c.inn_blocks = 1;
    std::mt19937_64 rng(14);
    LsrEncoder enc(c, rng);
    std::mt19937_64 drng(15);
    Tensor img = Tensor::uniform({1, 6, 6}, 0.1, 0.9, drng, true);
    Tensor m = Tensor::uniform({4, 6, 6}, -1, 1, drng);

    GradCheckOptions opts;
    opts.max_entries_per_tensor = 24;

    auto sfe_loss = [&] { return sum_all(mul(enc.sfe_forward(img), m)); };
    CHECK(gradcheck(sfe_loss, {img}, opts) < 1e-3);

    Tensor shared = Tensor::uniform({4, 6, 6}, -0.8, 0.8, drng, true);
    auto bte_loss = [&] { return sum_all(mul(enc.bte_forward(shared), m)); };
    CHECK(gradcheck(bte_loss, {shared}, opts) < 1e-3);

    auto dce_loss = [&] { return sum_all(mul(enc.dce_forward(shared), m)); };
    CHECK(gradcheck(dce_loss, {shared}, opts) < 1e-3);

    // parameter gradients through one full encode
    nn::ParamMap params;
    enc.collect(params, "enc");
    std::vector<Tensor> some;
    some.push_back(params.at("enc.embed.w"));
    some.push_back(params.at("enc.sfe0.attn.qkv_pw.w"));
    some.push_back(params.at("enc.dce0.net_hidden.w"));
    auto enc_loss = [&] {
        FeatureBundle b = enc.encode(img);
        return add(sum_all(mul(b.base, m)), sum_all(mul(b.detail, m)));
    };
    CHECK(gradcheck(enc_loss, some, opts) < 1e-3);
}
