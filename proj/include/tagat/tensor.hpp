#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace tagat {

// Reverse-mode autodiff over dense double tensors (rank 0..4, row-major).
// Forward ops build an expression graph of shared nodes; Tensor is a cheap
// value-semantics handle. backward() on a scalar root accumulates gradients
// into every reachable node with requires_grad set. Leaf parameters persist
// across steps and keep their grad buffer until zero_grad().

using Shape = std::vector<int>;

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> val;
    std::vector<double> grad; // sized lazily on first accumulation
    bool rg = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> back; // pulls this->grad into parents' grads

    void ensure_grad() {
        if (grad.size() != val.size()) grad.assign(val.size(), 0.0);
    }
};

} // namespace detail

int64_t numel_of(const Shape& s);

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape s, bool requires_grad = false);
    static Tensor full(Shape s, double v, bool requires_grad = false);
    static Tensor scalar(double v, bool requires_grad = false);
    static Tensor from_vector(Shape s, std::vector<double> data, bool requires_grad = false);
    // Uniform on [lo, hi).
    static Tensor uniform(Shape s, double lo, double hi, std::mt19937_64& rng,
                          bool requires_grad = false);

    bool defined() const { return static_cast<bool>(n_); }
    const Shape& shape() const;
    int rank() const;
    int dim(int i) const;
    int64_t numel() const;
    bool requires_grad() const;

    std::vector<double>& data();
    const std::vector<double>& data() const;
    const std::vector<double>& grad() const; // empty if never accumulated
    void zero_grad();

    double item() const; // numel()==1
    // Runs reverse-mode accumulation from this scalar root.
    void backward();

    std::shared_ptr<detail::Node> node() const { return n_; }
    static Tensor wrap(std::shared_ptr<detail::Node> n) {
        Tensor t;
        t.n_ = std::move(n);
        return t;
    }

private:
    std::shared_ptr<detail::Node> n_;
};

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);       // same shape, or one scalar
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);       // same shape, or one scalar
Tensor divide(const Tensor& a, const Tensor& b);     // same shape, or scalar divisor
Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);
Tensor neg(const Tensor& a);

Tensor relu(const Tensor& a);
Tensor leaky_relu(const Tensor& a, double slope);
Tensor elu(const Tensor& a, double alpha = 1.0);
Tensor gelu(const Tensor& a); // exact erf form
Tensor sigmoid(const Tensor& a);
Tensor tanh_t(const Tensor& a);
Tensor exp_t(const Tensor& a);
Tensor log_t(const Tensor& a);
Tensor sqrt_t(const Tensor& a);
Tensor abs_t(const Tensor& a);   // subgradient 0 at 0
Tensor square(const Tensor& a);
Tensor maximum(const Tensor& a, const Tensor& b); // ties route grad to a

// ---- shape ----
Tensor reshape(const Tensor& a, Shape s);
Tensor transpose2d(const Tensor& a);                       // {m,n} -> {n,m}
Tensor concat(const std::vector<Tensor>& ts, int axis);
Tensor narrow(const Tensor& a, int axis, int start, int len);

// ---- linear algebra ----
Tensor matmul(const Tensor& a, const Tensor& b); // {m,k} x {k,n}

// ---- reductions ----
Tensor sum_all(const Tensor& a);  // -> scalar {}
Tensor mean_all(const Tensor& a); // -> scalar {}
Tensor gap(const Tensor& a);      // {C,H,W} -> {C} spatial mean

// ---- image ops on {C,H,W} ----
enum class PadMode { Zero, Reflect101 };
Tensor pad2d(const Tensor& a, int top, int bottom, int left, int right, PadMode mode);
// Valid cross-correlation; w {Cout,Cin,kh,kw}, optional bias {Cout} (pass
// undefined Tensor to skip), dilation >= 1.
Tensor conv2d_valid(const Tensor& x, const Tensor& w, const Tensor& bias, int dilation = 1);
// Same-size conv: reflect or zero padding of dilation*(k-1)/2 (odd kernels).
Tensor conv2d_same(const Tensor& x, const Tensor& w, const Tensor& bias, int dilation = 1,
                   PadMode mode = PadMode::Zero);
// Depthwise valid conv; w {C,kh,kw}, optional bias {C}.
Tensor depthwise_conv2d_valid(const Tensor& x, const Tensor& w, const Tensor& bias,
                              int dilation = 1);
Tensor depthwise_conv2d_same(const Tensor& x, const Tensor& w, const Tensor& bias,
                             int dilation = 1, PadMode mode = PadMode::Zero);

// Per-pixel layer norm across channels of {C,H,W} (no affine).
Tensor layer_norm_pixels(const Tensor& x, double eps = 1e-6);
// Broadcast per-channel scale/shift on {C,H,W} with {C} vectors.
Tensor scale_channels(const Tensor& x, const Tensor& gamma);
Tensor shift_channels(const Tensor& x, const Tensor& beta);

// ---- rows ({n,m}) ----
Tensor softmax_rows(const Tensor& x);
Tensor l2_normalize_rows(const Tensor& x, double eps = 1e-12);

// ---- gather / scatter ----
Tensor crop(const Tensor& x, int y0, int x0, int h, int w); // {C,H,W} window
Tensor gather_rows(const Tensor& x, std::vector<int> idx);  // {N,C} -> {M,C}
// Scatter node vectors {N,C} into a zero {C,H,W} map at (x,y); collisions sum.
Tensor scatter_nodes(const Tensor& nodes, const std::vector<std::pair<int, int>>& xy,
                     int h, int w);

// ---- segmented ops over contiguous segments of a flat {E} tensor ----
// offsets has n+1 entries; segment i is [offsets[i], offsets[i+1]).
Tensor segment_softmax(const Tensor& e, const std::vector<int>& offsets);
// out{n,C}: out[i] = sum over segment i of alpha[e] * rows[e].
Tensor segment_weighted_sum(const Tensor& alpha, const Tensor& rows,
                            const std::vector<int>& offsets);

// operators for readability
inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return mul_scalar(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return mul_scalar(a, s); }
inline Tensor operator+(const Tensor& a, double s) { return add_scalar(a, s); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

bool all_finite(const Tensor& a);

} // namespace tagat
