#include "tagat/nn.hpp"

#include <cmath>

#include "tagat/error.hpp"

namespace tagat::nn {

Tensor he_uniform(Shape s, int fan_in, std::mt19937_64& rng) {
    double bound = std::sqrt(6.0 / std::max(1, fan_in));
    return Tensor::uniform(std::move(s), -bound, bound, rng, /*requires_grad=*/true);
}

// ---------------- Conv2d ----------------

Conv2d Conv2d::make(int cin, int cout, int k, std::mt19937_64& rng, int dilation, PadMode pad,
                    bool bias) {
    Conv2d c;
    c.w = he_uniform({cout, cin, k, k}, cin * k * k, rng);
    if (bias) c.b = Tensor::zeros({cout}, true);
    c.dilation = dilation;
    c.pad = pad;
    return c;
}

Conv2d Conv2d::make_zero(int cin, int cout, int k, int dilation, PadMode pad, bool bias) {
    Conv2d c;
    c.w = Tensor::zeros({cout, cin, k, k}, true);
    if (bias) c.b = Tensor::zeros({cout}, true);
    c.dilation = dilation;
    c.pad = pad;
    return c;
}

Tensor Conv2d::operator()(const Tensor& x) const {
    return conv2d_same(x, w, b, dilation, pad);
}

void Conv2d::collect(ParamMap& out, const std::string& prefix) const {
    out[prefix + ".w"] = w;
    if (b.defined()) out[prefix + ".b"] = b;
}

// ---------------- DepthwiseConv2d ----------------

DepthwiseConv2d DepthwiseConv2d::make(int c, int k, std::mt19937_64& rng, int dilation,
                                      PadMode pad, bool bias) {
    DepthwiseConv2d d;
    d.w = he_uniform({c, k, k}, k * k, rng);
    if (bias) d.b = Tensor::zeros({c}, true);
    d.dilation = dilation;
    d.pad = pad;
    return d;
}

Tensor DepthwiseConv2d::operator()(const Tensor& x) const {
    return depthwise_conv2d_same(x, w, b, dilation, pad);
}

void DepthwiseConv2d::collect(ParamMap& out, const std::string& prefix) const {
    out[prefix + ".w"] = w;
    if (b.defined()) out[prefix + ".b"] = b;
}

// ---------------- LayerNormC ----------------

LayerNormC LayerNormC::make(int c) {
    LayerNormC ln;
    ln.gamma = Tensor::full({c}, 1.0, true);
    ln.beta = Tensor::zeros({c}, true);
    return ln;
}

Tensor LayerNormC::operator()(const Tensor& x) const {
    return shift_channels(scale_channels(layer_norm_pixels(x), gamma), beta);
}

void LayerNormC::collect(ParamMap& out, const std::string& prefix) const {
    out[prefix + ".gamma"] = gamma;
    out[prefix + ".beta"] = beta;
}

// ---------------- ChannelAttention ----------------

ChannelAttention ChannelAttention::make(int c, int heads, std::mt19937_64& rng) {
    if (heads < 1 || c % heads != 0)
        throw ConfigError("ChannelAttention: channels must be divisible by heads");
    ChannelAttention a;
    a.ln = LayerNormC::make(c);
    a.qkv_pw = Conv2d::make(c, 3 * c, 1, rng);
    a.qkv_dw = DepthwiseConv2d::make(3 * c, 3, rng);
    a.temperature = Tensor::full({heads}, 1.0, true);
    a.proj = Conv2d::make(c, c, 1, rng);
    a.heads = heads;
    return a;
}

Tensor ChannelAttention::operator()(const Tensor& x) const {
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    const int d = c / heads;
    Tensor y = ln(x);
    Tensor qkv = qkv_dw(qkv_pw(y)); // {3C,H,W}
    Tensor q = narrow(qkv, 0, 0, c);
    Tensor k = narrow(qkv, 0, c, c);
    Tensor v = narrow(qkv, 0, 2 * c, c);

    std::vector<Tensor> head_out;
    head_out.reserve(heads);
    for (int hd = 0; hd < heads; ++hd) {
        Tensor qh = reshape(narrow(q, 0, hd * d, d), {d, h * w});
        Tensor kh = reshape(narrow(k, 0, hd * d, d), {d, h * w});
        Tensor vh = reshape(narrow(v, 0, hd * d, d), {d, h * w});
        Tensor attn = matmul(l2_normalize_rows(qh), transpose2d(l2_normalize_rows(kh)));
        attn = mul(attn, reshape(narrow(temperature, 0, hd, 1), {}));
        attn = softmax_rows(attn);
        head_out.push_back(reshape(matmul(attn, vh), {d, h, w}));
    }
    Tensor o = heads == 1 ? head_out[0] : concat(head_out, 0);
    return add(proj(o), x);
}

void ChannelAttention::collect(ParamMap& out, const std::string& prefix) const {
    ln.collect(out, prefix + ".ln");
    qkv_pw.collect(out, prefix + ".qkv_pw");
    qkv_dw.collect(out, prefix + ".qkv_dw");
    out[prefix + ".temperature"] = temperature;
    proj.collect(out, prefix + ".proj");
}

// ---------------- GatedFeedForward ----------------

GatedFeedForward GatedFeedForward::make(int c, int expansion, std::mt19937_64& rng) {
    GatedFeedForward f;
    f.hidden = c * expansion;
    f.ln = LayerNormC::make(c);
    f.in_pw = Conv2d::make(c, 2 * f.hidden, 1, rng);
    f.dw = DepthwiseConv2d::make(2 * f.hidden, 3, rng);
    f.out_pw = Conv2d::make(f.hidden, c, 1, rng);
    return f;
}

Tensor GatedFeedForward::operator()(const Tensor& x) const {
    Tensor u = dw(in_pw(ln(x)));
    Tensor u1 = narrow(u, 0, 0, hidden);
    Tensor u2 = narrow(u, 0, hidden, hidden);
    return add(out_pw(mul(gelu(u1), u2)), x);
}

void GatedFeedForward::collect(ParamMap& out, const std::string& prefix) const {
    ln.collect(out, prefix + ".ln");
    in_pw.collect(out, prefix + ".in_pw");
    dw.collect(out, prefix + ".dw");
    out_pw.collect(out, prefix + ".out_pw");
}

// ---------------- RestormerBlock ----------------

RestormerBlock RestormerBlock::make(int c, int heads, std::mt19937_64& rng) {
    RestormerBlock b;
    b.attn = ChannelAttention::make(c, heads, rng);
    b.ffn = GatedFeedForward::make(c, 2, rng);
    return b;
}

Tensor RestormerBlock::operator()(const Tensor& x) const { return ffn(attn(x)); }

void RestormerBlock::collect(ParamMap& out, const std::string& prefix) const {
    attn.collect(out, prefix + ".attn");
    ffn.collect(out, prefix + ".ffn");
}

// ---------------- LiteTransformerBlock ----------------

LiteTransformerBlock LiteTransformerBlock::make(int c, int heads, std::mt19937_64& rng) {
    if (c % 2 != 0) throw ConfigError("LiteTransformerBlock: channel count must be even");
    int half = c / 2;
    int gh = heads;
    while (gh > 1 && half % gh != 0) --gh; // halve-width branch may not divide evenly
    LiteTransformerBlock b;
    b.ln = LayerNormC::make(c);
    b.global_branch = ChannelAttention::make(half, gh, rng);
    b.local_dw = DepthwiseConv2d::make(half, 3, rng);
    b.local_pw = Conv2d::make(half, half, 1, rng);
    b.mix = Conv2d::make(c, c, 1, rng);
    b.ffn = GatedFeedForward::make(c, 2, rng);
    return b;
}

Tensor LiteTransformerBlock::operator()(const Tensor& x) const {
    const int c = x.dim(0);
    const int half = c / 2;
    Tensor y = ln(x);
    Tensor ga = global_branch(narrow(y, 0, 0, half));
    Tensor lb = local_pw(leaky_relu(local_dw(narrow(y, 0, half, half)), 0.1));
    Tensor z = add(mix(concat({ga, lb}, 0)), x);
    return ffn(z);
}

void LiteTransformerBlock::collect(ParamMap& out, const std::string& prefix) const {
    ln.collect(out, prefix + ".ln");
    global_branch.collect(out, prefix + ".global");
    local_dw.collect(out, prefix + ".local_dw");
    local_pw.collect(out, prefix + ".local_pw");
    mix.collect(out, prefix + ".mix");
    ffn.collect(out, prefix + ".ffn");
}

// ---------------- CouplingBlock ----------------

CouplingBlock CouplingBlock::make(int c, bool swap_halves, std::mt19937_64& rng) {
    if (c % 2 != 0) throw ConfigError("CouplingBlock: channel count must be even");
    int half = c / 2;
    CouplingBlock b;
    b.net_hidden = Conv2d::make(half, half, 3, rng);
    b.net_out = Conv2d::make_zero(half, c, 3);
    b.swap_halves = swap_halves;
    return b;
}

namespace {

struct CouplingNets {
    Tensor s, t; // each {C/2,H,W}
};

} // namespace

Tensor CouplingBlock::forward(const Tensor& x) const {
    const int c = x.dim(0);
    const int half = c / 2;
    Tensor xa = narrow(x, 0, 0, half);
    Tensor xb = narrow(x, 0, half, half);
    const Tensor& cond = swap_halves ? xa : xb;   // conditioning half (passes through)
    const Tensor& active = swap_halves ? xb : xa; // transformed half

    Tensor st = net_out(leaky_relu(net_hidden(cond), lrelu_slope));
    Tensor s = mul_scalar(tanh_t(mul_scalar(narrow(st, 0, 0, half), 1.0 / clamp)), clamp);
    Tensor t = narrow(st, 0, half, half);
    Tensor y_active = add(mul(active, exp_t(s)), t);

    if (swap_halves) return concat({xa, y_active}, 0);
    return concat({y_active, xb}, 0);
}

Tensor CouplingBlock::inverse(const Tensor& y) const {
    const int c = y.dim(0);
    const int half = c / 2;
    Tensor ya = narrow(y, 0, 0, half);
    Tensor yb = narrow(y, 0, half, half);
    const Tensor& cond = swap_halves ? ya : yb; // unchanged by forward
    const Tensor& active = swap_halves ? yb : ya;

    Tensor st = net_out(leaky_relu(net_hidden(cond), lrelu_slope));
    Tensor s = mul_scalar(tanh_t(mul_scalar(narrow(st, 0, 0, half), 1.0 / clamp)), clamp);
    Tensor t = narrow(st, 0, half, half);
    Tensor x_active = mul(sub(active, t), exp_t(neg(s)));

    if (swap_halves) return concat({ya, x_active}, 0);
    return concat({x_active, yb}, 0);
}

void CouplingBlock::collect(ParamMap& out, const std::string& prefix) const {
    net_hidden.collect(out, prefix + ".net_hidden");
    net_out.collect(out, prefix + ".net_out");
}

} // namespace tagat::nn
