#include "tagat/tensor.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "tagat/error.hpp"

namespace tagat {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

int64_t numel_of(const Shape& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

namespace {

NodePtr make_node(Shape shape, std::vector<NodePtr> parents) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->val.resize(static_cast<size_t>(numel_of(n->shape)));
    for (const auto& p : parents)
        if (p->rg) n->rg = true;
    n->parents = std::move(parents);
    return n;
}

void check_defined(const Tensor& t, const char* who) {
    if (!t.defined()) throw ShapeError(std::string(who) + ": undefined tensor");
}

} // namespace

Tensor Tensor::zeros(Shape s, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(s);
    n->val.assign(static_cast<size_t>(numel_of(n->shape)), 0.0);
    n->rg = requires_grad;
    return wrap(n);
}

Tensor Tensor::full(Shape s, double v, bool requires_grad) {
    Tensor t = zeros(std::move(s), requires_grad);
    std::fill(t.data().begin(), t.data().end(), v);
    return t;
}

Tensor Tensor::scalar(double v, bool requires_grad) { return full({}, v, requires_grad); }

Tensor Tensor::from_vector(Shape s, std::vector<double> data, bool requires_grad) {
    if (static_cast<int64_t>(data.size()) != numel_of(s))
        throw ShapeError("from_vector: data size does not match shape");
    auto n = std::make_shared<Node>();
    n->shape = std::move(s);
    n->val = std::move(data);
    n->rg = requires_grad;
    return wrap(n);
}

Tensor Tensor::uniform(Shape s, double lo, double hi, std::mt19937_64& rng, bool requires_grad) {
    Tensor t = zeros(std::move(s), requires_grad);
    std::uniform_real_distribution<double> d(lo, hi);
    for (double& x : t.data()) x = d(rng);
    return t;
}

const Shape& Tensor::shape() const {
    check_defined(*this, "shape");
    return n_->shape;
}
int Tensor::rank() const { return static_cast<int>(shape().size()); }
int Tensor::dim(int i) const { return shape().at(i); }
int64_t Tensor::numel() const { return numel_of(shape()); }
bool Tensor::requires_grad() const { return defined() && n_->rg; }

std::vector<double>& Tensor::data() {
    check_defined(*this, "data");
    return n_->val;
}
const std::vector<double>& Tensor::data() const {
    check_defined(*this, "data");
    return n_->val;
}
const std::vector<double>& Tensor::grad() const {
    check_defined(*this, "grad");
    return n_->grad;
}
void Tensor::zero_grad() {
    check_defined(*this, "zero_grad");
    n_->grad.assign(n_->val.size(), 0.0);
}

double Tensor::item() const {
    if (numel() != 1) throw ShapeError("item: tensor is not scalar");
    return data()[0];
}

void Tensor::backward() {
    check_defined(*this, "backward");
    if (numel() != 1) throw ShapeError("backward: root must be scalar");
    if (!n_->rg) return;

    // iterative post-order DFS over rg nodes
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.push_back({n_.get(), 0});
    visited.insert(n_.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node* p = node->parents[idx++].get();
            if (p->rg && !visited.count(p)) {
                visited.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    n_->ensure_grad();
    n_->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (node->back && !node->grad.empty()) node->back(*node);
    }
}

bool all_finite(const Tensor& a) {
    for (double x : a.data())
        if (!std::isfinite(x)) return false;
    return true;
}

// ---------------- elementwise ----------------

namespace {

// Broadcast rule: shapes equal, or one side scalar (numel 1).
enum class BcKind { Same, AScalar, BScalar };

BcKind bc_kind(const Tensor& a, const Tensor& b, const char* who) {
    if (a.shape() == b.shape()) return BcKind::Same;
    if (b.numel() == 1) return BcKind::BScalar; // keep a's shape when both are 1-element
    if (a.numel() == 1) return BcKind::AScalar;
    throw ShapeError(std::string(who) + ": shape mismatch");
}

} // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    check_defined(a, "add");
    check_defined(b, "add");
    BcKind k = bc_kind(a, b, "add");
    Shape out_shape = (k == BcKind::AScalar) ? b.shape() : a.shape();
    auto n = make_node(out_shape, {a.node(), b.node()});
    const auto& av = a.data();
    const auto& bv = b.data();
    for (size_t i = 0; i < n->val.size(); ++i)
        n->val[i] = av[k == BcKind::AScalar ? 0 : i] + bv[k == BcKind::BScalar ? 0 : i];
    if (n->rg)
        n->back = [k](Node& self) {
            auto& pa = *self.parents[0];
            auto& pb = *self.parents[1];
            if (pa.rg) {
                pa.ensure_grad();
                for (size_t i = 0; i < self.grad.size(); ++i)
                    pa.grad[k == BcKind::AScalar ? 0 : i] += self.grad[i];
            }
            if (pb.rg) {
                pb.ensure_grad();
                for (size_t i = 0; i < self.grad.size(); ++i)
                    pb.grad[k == BcKind::BScalar ? 0 : i] += self.grad[i];
            }
        };
    return Tensor::wrap(n);
}

Tensor sub(const Tensor& a, const Tensor& b) { return add(a, neg(b)); }

Tensor mul(const Tensor& a, const Tensor& b) {
    check_defined(a, "mul");
    check_defined(b, "mul");
    BcKind k = bc_kind(a, b, "mul");
    Shape out_shape = (k == BcKind::AScalar) ? b.shape() : a.shape();
    auto n = make_node(out_shape, {a.node(), b.node()});
    const auto& av = a.data();
    const auto& bv = b.data();
    for (size_t i = 0; i < n->val.size(); ++i)
        n->val[i] = av[k == BcKind::AScalar ? 0 : i] * bv[k == BcKind::BScalar ? 0 : i];
    if (n->rg)
        n->back = [k](Node& self) {
            auto& pa = *self.parents[0];
            auto& pb = *self.parents[1];
            if (pa.rg) {
                pa.ensure_grad();
                for (size_t i = 0; i < self.grad.size(); ++i)
                    pa.grad[k == BcKind::AScalar ? 0 : i] +=
                        self.grad[i] * pb.val[k == BcKind::BScalar ? 0 : i];
            }
            if (pb.rg) {
                pb.ensure_grad();
                for (size_t i = 0; i < self.grad.size(); ++i)
                    pb.grad[k == BcKind::BScalar ? 0 : i] +=
                        self.grad[i] * pa.val[k == BcKind::AScalar ? 0 : i];
            }
        };
    return Tensor::wrap(n);
}

Tensor divide(const Tensor& a, const Tensor& b) {
    check_defined(a, "div");
    check_defined(b, "div");
    BcKind k = bc_kind(a, b, "div");
    Shape out_shape = (k == BcKind::AScalar) ? b.shape() : a.shape();
    auto n = make_node(out_shape, {a.node(), b.node()});
    const auto& av = a.data();
    const auto& bv = b.data();
    for (size_t i = 0; i < n->val.size(); ++i)
        n->val[i] = av[k == BcKind::AScalar ? 0 : i] / bv[k == BcKind::BScalar ? 0 : i];
    if (n->rg)
        n->back = [k](Node& self) {
            auto& pa = *self.parents[0];
            auto& pb = *self.parents[1];
            for (size_t i = 0; i < self.grad.size(); ++i) {
                double aval = pa.val[k == BcKind::AScalar ? 0 : i];
                double bval = pb.val[k == BcKind::BScalar ? 0 : i];
                double g = self.grad[i];
                if (pa.rg) {
                    pa.ensure_grad();
                    pa.grad[k == BcKind::AScalar ? 0 : i] += g / bval;
                }
                if (pb.rg) {
                    pb.ensure_grad();
                    pb.grad[k == BcKind::BScalar ? 0 : i] += -g * aval / (bval * bval);
                }
            }
        };
    return Tensor::wrap(n);
}

Tensor add_scalar(const Tensor& a, double s) {
    auto n = make_node(a.shape(), {a.node()});
    const auto& av = a.data();
    for (size_t i = 0; i < n->val.size(); ++i) n->val[i] = av[i] + s;
    if (n->rg)
        n->back = [](Node& self) {
            auto& p = *self.parents[0];
            p.ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
        };
    return Tensor::wrap(n);
}

Tensor mul_scalar(const Tensor& a, double s) {
    auto n = make_node(a.shape(), {a.node()});
    const auto& av = a.data();
    for (size_t i = 0; i < n->val.size(); ++i) n->val[i] = av[i] * s;
    if (n->rg)
        n->back = [s](Node& self) {
            auto& p = *self.parents[0];
            p.ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += s * self.grad[i];
        };
    return Tensor::wrap(n);
}

Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0); }

namespace {

template <typename F, typename DF>
Tensor unary_op(const Tensor& a, F f, DF df) {
    check_defined(a, "unary");
    auto n = make_node(a.shape(), {a.node()});
    const auto& av = a.data();
    for (size_t i = 0; i < n->val.size(); ++i) n->val[i] = f(av[i]);
    if (n->rg)
        n->back = [df](Node& self) {
            auto& p = *self.parents[0];
            p.ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i)
                p.grad[i] += self.grad[i] * df(p.val[i], self.val[i]);
        };
    return Tensor::wrap(n);
}

} // namespace

Tensor relu(const Tensor& a) {
    return unary_op(
        a, [](double x) { return x > 0 ? x : 0.0; },
        [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Tensor leaky_relu(const Tensor& a, double slope) {
    return unary_op(
        a, [slope](double x) { return x > 0 ? x : slope * x; },
        [slope](double x, double) { return x > 0 ? 1.0 : slope; });
}

Tensor elu(const Tensor& a, double alpha) {
    return unary_op(
        a, [alpha](double x) { return x > 0 ? x : alpha * (std::exp(x) - 1.0); },
        [alpha](double x, double y) { return x > 0 ? 1.0 : y + alpha; });
}

Tensor gelu(const Tensor& a) {
    constexpr double inv_sqrt2 = 0.7071067811865475244;
    constexpr double inv_sqrt2pi = 0.3989422804014326779;
    return unary_op(
        a, [](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); },
        [](double x, double) {
            double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
            double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
            return cdf + x * pdf;
        });
}

Tensor sigmoid(const Tensor& a) {
    return unary_op(
        a,
        [](double x) {
            if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
            double e = std::exp(x);
            return e / (1.0 + e);
        },
        [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh_t(const Tensor& a) {
    return unary_op(
        a, [](double x) { return std::tanh(x); },
        [](double, double y) { return 1.0 - y * y; });
}

Tensor exp_t(const Tensor& a) {
    return unary_op(
        a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log_t(const Tensor& a) {
    return unary_op(
        a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor sqrt_t(const Tensor& a) {
    return unary_op(
        a, [](double x) { return std::sqrt(x); },
        [](double, double y) { return y > 0 ? 0.5 / y : 0.0; });
}

Tensor abs_t(const Tensor& a) {
    return unary_op(
        a, [](double x) { return std::fabs(x); },
        [](double x, double) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}

Tensor square(const Tensor& a) {
    return unary_op(
        a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor maximum(const Tensor& a, const Tensor& b) {
    check_defined(a, "maximum");
    check_defined(b, "maximum");
    if (a.shape() != b.shape()) throw ShapeError("maximum: shape mismatch");
    auto n = make_node(a.shape(), {a.node(), b.node()});
    const auto& av = a.data();
    const auto& bv = b.data();
    for (size_t i = 0; i < n->val.size(); ++i) n->val[i] = av[i] >= bv[i] ? av[i] : bv[i];
    if (n->rg)
        n->back = [](Node& self) {
            auto& pa = *self.parents[0];
            auto& pb = *self.parents[1];
            if (pa.rg) pa.ensure_grad();
            if (pb.rg) pb.ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) {
                if (pa.val[i] >= pb.val[i]) {
                    if (pa.rg) pa.grad[i] += self.grad[i];
                } else if (pb.rg) {
                    pb.grad[i] += self.grad[i];
                }
            }
        };
    return Tensor::wrap(n);
}

// ---------------- shape ----------------

Tensor reshape(const Tensor& a, Shape s) {
    check_defined(a, "reshape");
    if (numel_of(s) != a.numel()) throw ShapeError("reshape: numel mismatch");
    auto n = make_node(std::move(s), {a.node()});
    n->val = a.data();
    if (n->rg)
        n->back = [](Node& self) {
            auto& p = *self.parents[0];
            p.ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
        };
    return Tensor::wrap(n);
}

Tensor transpose2d(const Tensor& a) {
    check_defined(a, "transpose2d");
    if (a.rank() != 2) throw ShapeError("transpose2d: rank must be 2");
    int m = a.dim(0), k = a.dim(1);
    auto n = make_node({k, m}, {a.node()});
    const auto& av = a.data();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < k; ++j) n->val[(size_t)j * m + i] = av[(size_t)i * k + j];
    if (n->rg)
        n->back = [m, k](Node& self) {
            auto& p = *self.parents[0];
            p.ensure_grad();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < k; ++j)
                    p.grad[(size_t)i * k + j] += self.grad[(size_t)j * m + i];
        };
    return Tensor::wrap(n);
}

Tensor concat(const std::vector<Tensor>& ts, int axis) {
    if (ts.empty()) throw ShapeError("concat: empty input list");
    int rank = ts[0].rank();
    if (axis < 0 || axis >= rank) throw ShapeError("concat: bad axis");
    Shape out = ts[0].shape();
    int total_axis = 0;
    for (const auto& t : ts) {
        if (t.rank() != rank) throw ShapeError("concat: rank mismatch");
        for (int d = 0; d < rank; ++d)
            if (d != axis && t.dim(d) != out[d]) throw ShapeError("concat: shape mismatch");
        total_axis += t.dim(axis);
    }
    out[axis] = total_axis;

    int64_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= out[d];
    for (int d = axis + 1; d < rank; ++d) inner *= out[d];

    std::vector<NodePtr> parents;
    std::vector<int64_t> blocks; // per-input axis_dim*inner
    for (const auto& t : ts) {
        parents.push_back(t.node());
        blocks.push_back(static_cast<int64_t>(t.dim(axis)) * inner);
    }
    auto n = make_node(out, parents);
    int64_t out_block = static_cast<int64_t>(total_axis) * inner;
    for (int64_t o = 0; o < outer; ++o) {
        int64_t off = 0;
        for (size_t k = 0; k < ts.size(); ++k) {
            const auto& src = ts[k].data();
            std::copy(src.begin() + o * blocks[k], src.begin() + (o + 1) * blocks[k],
                      n->val.begin() + o * out_block + off);
            off += blocks[k];
        }
    }
    if (n->rg)
        n->back = [outer, out_block, blocks](Node& self) {
            for (int64_t o = 0; o < outer; ++o) {
                int64_t off = 0;
                for (size_t k = 0; k < self.parents.size(); ++k) {
                    auto& p = *self.parents[k];
                    if (p.rg) {
                        p.ensure_grad();
                        for (int64_t i = 0; i < blocks[k]; ++i)
                            p.grad[o * blocks[k] + i] += self.grad[o * out_block + off + i];
                    }
                    off += blocks[k];
                }
            }
        };
    return Tensor::wrap(n);
}

Tensor narrow(const Tensor& a, int axis, int start, int len) {
    check_defined(a, "narrow");
    int rank = a.rank();
    if (axis < 0 || axis >= rank) throw ShapeError("narrow: bad axis");
    if (start < 0 || len <= 0 || start + len > a.dim(axis)) throw ShapeError("narrow: bad range");
    Shape out = a.shape();
    out[axis] = len;
    int64_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= a.dim(d);
    for (int d = axis + 1; d < rank; ++d) inner *= a.dim(d);
    int64_t in_block = static_cast<int64_t>(a.dim(axis)) * inner;
    int64_t out_block = static_cast<int64_t>(len) * inner;

    auto n = make_node(out, {a.node()});
    const auto& av = a.data();
    for (int64_t o = 0; o < outer; ++o)
        std::copy(av.begin() + o * in_block + start * inner,
                  av.begin() + o * in_block + (start + len) * inner,
                  n->val.begin() + o * out_block);
    if (n->rg)
        n->back = [outer, inner, in_block, out_block, start](Node& self) {
            auto& p = *self.parents[0];
            p.ensure_grad();
            for (int64_t o = 0; o < outer; ++o)
                for (int64_t i = 0; i < out_block; ++i)
                    p.grad[o * in_block + start * inner + i] += self.grad[o * out_block + i];
        };
    return Tensor::wrap(n);
}

// ---------------- linear algebra ----------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    check_defined(a, "matmul");
    check_defined(b, "matmul");
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw ShapeError("matmul: incompatible shapes");
    int m = a.dim(0), k = a.dim(1), p = b.dim(1);
    auto n = make_node({m, p}, {a.node(), b.node()});
    CMapMat ma(a.data().data(), m, k), mb(b.data().data(), k, p);
    MapMat mo(n->val.data(), m, p);
    mo.noalias() = ma * mb;
    if (n->rg)
        n->back = [m, k, p](Node& self) {
            auto& pa = *self.parents[0];
            auto& pb = *self.parents[1];
            CMapMat g(self.grad.data(), m, p);
            if (pa.rg) {
                pa.ensure_grad();
                MapMat ga(pa.grad.data(), m, k);
                CMapMat vb(pb.val.data(), k, p);
                ga.noalias() += g * vb.transpose();
            }
            if (pb.rg) {
                pb.ensure_grad();
                MapMat gb(pb.grad.data(), k, p);
                CMapMat va(pa.val.data(), m, k);
                gb.noalias() += va.transpose() * g;
            }
        };
    return Tensor::wrap(n);
}

// ---------------- reductions ----------------

Tensor sum_all(const Tensor& a) {
    check_defined(a, "sum_all");
    auto n = make_node({}, {a.node()});
    double s = 0.0;
    for (double x : a.data()) s += x;
    n->val[0] = s;
    if (n->rg)
        n->back = [](Node& self) {
            auto& p = *self.parents[0];
            p.ensure_grad();
            for (double& g : p.grad) g += self.grad[0];
        };
    return Tensor::wrap(n);
}

Tensor mean_all(const Tensor& a) { return mul_scalar(sum_all(a), 1.0 / a.numel()); }

Tensor gap(const Tensor& a) {
    check_defined(a, "gap");
    if (a.rank() != 3) throw ShapeError("gap: expected {C,H,W}");
    int C = a.dim(0);
    int64_t hw = static_cast<int64_t>(a.dim(1)) * a.dim(2);
    auto n = make_node({C}, {a.node()});
    const auto& av = a.data();
    for (int c = 0; c < C; ++c) {
        double s = 0.0;
        for (int64_t i = 0; i < hw; ++i) s += av[c * hw + i];
        n->val[c] = s / hw;
    }
    if (n->rg)
        n->back = [C, hw](Node& self) {
            auto& p = *self.parents[0];
            p.ensure_grad();
            for (int c = 0; c < C; ++c) {
                double g = self.grad[c] / hw;
                for (int64_t i = 0; i < hw; ++i) p.grad[c * hw + i] += g;
            }
        };
    return Tensor::wrap(n);
}

// ---------------- image ops ----------------

namespace {

int reflect101_idx(int i, int n) {
    if (n == 1) return 0;
    while (i < 0 || i >= n) {
        if (i < 0) i = -i;
        if (i >= n) i = 2 * (n - 1) - i;
    }
    return i;
}

} // namespace

Tensor pad2d(const Tensor& a, int top, int bottom, int left, int right, PadMode mode) {
    check_defined(a, "pad2d");
    if (a.rank() != 3) throw ShapeError("pad2d: expected {C,H,W}");
    int C = a.dim(0), H = a.dim(1), W = a.dim(2);
    if (mode == PadMode::Reflect101) {
        int m = std::max({top, bottom, left, right});
        if ((m >= H && (top || bottom)) || (m >= W && (left || right)))
            if (top >= H || bottom >= H || left >= W || right >= W)
                throw ConfigError("pad2d: reflect padding must be smaller than the dimension");
    }
    int Ho = H + top + bottom, Wo = W + left + right;
    auto n = make_node({C, Ho, Wo}, {a.node()});
    const auto& av = a.data();
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < Ho; ++y)
            for (int x = 0; x < Wo; ++x) {
                int sy = y - top, sx = x - left;
                double v = 0.0;
                if (mode == PadMode::Reflect101) {
                    v = av[((size_t)c * H + reflect101_idx(sy, H)) * W + reflect101_idx(sx, W)];
                } else if (sy >= 0 && sy < H && sx >= 0 && sx < W) {
                    v = av[((size_t)c * H + sy) * W + sx];
                }
                n->val[((size_t)c * Ho + y) * Wo + x] = v;
            }
    if (n->rg)
        n->back = [C, H, W, Ho, Wo, top, left, mode](Node& self) {
            auto& p = *self.parents[0];
            p.ensure_grad();
            for (int c = 0; c < C; ++c)
                for (int y = 0; y < Ho; ++y)
                    for (int x = 0; x < Wo; ++x) {
                        int sy = y - top, sx = x - left;
                        double g = self.grad[((size_t)c * Ho + y) * Wo + x];
                        if (mode == PadMode::Reflect101) {
                            p.grad[((size_t)c * H + reflect101_idx(sy, H)) * W +
                                   reflect101_idx(sx, W)] += g;
                        } else if (sy >= 0 && sy < H && sx >= 0 && sx < W) {
                            p.grad[((size_t)c * H + sy) * W + sx] += g;
                        }
                    }
        };
    return Tensor::wrap(n);
}

namespace {

// col: {Cin*kh*kw, Ho*Wo}
void im2col(const std::vector<double>& x, int Cin, int H, int W, int kh, int kw, int dil,
            int Ho, int Wo, std::vector<double>& col) {
    col.resize(static_cast<size_t>(Cin) * kh * kw * Ho * Wo);
    size_t r = 0;
    for (int c = 0; c < Cin; ++c)
        for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx, ++r) {
                double* dst = col.data() + r * Ho * Wo;
                const double* src = x.data() + (size_t)c * H * W;
                for (int oy = 0; oy < Ho; ++oy) {
                    const double* row = src + (size_t)(oy + ky * dil) * W + kx * dil;
                    for (int ox = 0; ox < Wo; ++ox) dst[oy * Wo + ox] = row[ox];
                }
            }
}

void col2im_add(const std::vector<double>& col, int Cin, int H, int W, int kh, int kw, int dil,
                int Ho, int Wo, std::vector<double>& x) {
    size_t r = 0;
    for (int c = 0; c < Cin; ++c)
        for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx, ++r) {
                const double* src = col.data() + r * Ho * Wo;
                double* dst = x.data() + (size_t)c * H * W;
                for (int oy = 0; oy < Ho; ++oy) {
                    double* row = dst + (size_t)(oy + ky * dil) * W + kx * dil;
                    for (int ox = 0; ox < Wo; ++ox) row[ox] += src[oy * Wo + ox];
                }
            }
}

} // namespace

Tensor conv2d_valid(const Tensor& x, const Tensor& w, const Tensor& bias, int dilation) {
    check_defined(x, "conv2d");
    check_defined(w, "conv2d");
    if (x.rank() != 3 || w.rank() != 4) throw ShapeError("conv2d: expected x{C,H,W}, w{O,I,kh,kw}");
    int Cin = x.dim(0), H = x.dim(1), W = x.dim(2);
    int Cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    if (w.dim(1) != Cin) throw ShapeError("conv2d: input channel mismatch");
    int Ho = H - dilation * (kh - 1), Wo = W - dilation * (kw - 1);
    if (Ho <= 0 || Wo <= 0) throw ShapeError("conv2d: kernel larger than input");
    bool has_bias = bias.defined();
    if (has_bias && (bias.rank() != 1 || bias.dim(0) != Cout))
        throw ShapeError("conv2d: bias shape mismatch");

    std::vector<NodePtr> parents = {x.node(), w.node()};
    if (has_bias) parents.push_back(bias.node());
    auto n = make_node({Cout, Ho, Wo}, parents);

    int K = Cin * kh * kw;
    std::vector<double> col;
    im2col(x.data(), Cin, H, W, kh, kw, dilation, Ho, Wo, col);
    CMapMat wm(w.data().data(), Cout, K);
    CMapMat cm(col.data(), K, Ho * Wo);
    MapMat om(n->val.data(), Cout, Ho * Wo);
    om.noalias() = wm * cm;
    if (has_bias) {
        const auto& bv = bias.data();
        for (int c = 0; c < Cout; ++c)
            for (int i = 0; i < Ho * Wo; ++i) n->val[(size_t)c * Ho * Wo + i] += bv[c];
    }

    if (n->rg)
        n->back = [Cin, H, W, Cout, kh, kw, dilation, Ho, Wo, K, has_bias](Node& self) {
            auto& px = *self.parents[0];
            auto& pw = *self.parents[1];
            CMapMat g(self.grad.data(), Cout, Ho * Wo);
            if (pw.rg) {
                pw.ensure_grad();
                std::vector<double> col;
                im2col(px.val, Cin, H, W, kh, kw, dilation, Ho, Wo, col);
                CMapMat cm(col.data(), K, Ho * Wo);
                MapMat gw(pw.grad.data(), Cout, K);
                gw.noalias() += g * cm.transpose();
            }
            if (px.rg) {
                px.ensure_grad();
                std::vector<double> dcol(static_cast<size_t>(K) * Ho * Wo);
                MapMat dc(dcol.data(), K, Ho * Wo);
                CMapMat wm(pw.val.data(), Cout, K);
                dc.noalias() = wm.transpose() * g;
                col2im_add(dcol, Cin, H, W, kh, kw, dilation, Ho, Wo, px.grad);
            }
            if (has_bias) {
                auto& pb = *self.parents[2];
                if (pb.rg) {
                    pb.ensure_grad();
                    for (int c = 0; c < Cout; ++c) {
                        double s = 0.0;
                        for (int i = 0; i < Ho * Wo; ++i) s += self.grad[(size_t)c * Ho * Wo + i];
                        pb.grad[c] += s;
                    }
                }
            }
        };
    return Tensor::wrap(n);
}

Tensor conv2d_same(const Tensor& x, const Tensor& w, const Tensor& bias, int dilation,
                   PadMode mode) {
    int kh = w.dim(2), kw = w.dim(3);
    if (kh % 2 == 0 || kw % 2 == 0) throw ShapeError("conv2d_same: kernel must be odd");
    int py = dilation * (kh / 2), px = dilation * (kw / 2);
    if (py == 0 && px == 0) return conv2d_valid(x, w, bias, dilation);
    return conv2d_valid(pad2d(x, py, py, px, px, mode), w, bias, dilation);
}

Tensor depthwise_conv2d_valid(const Tensor& x, const Tensor& w, const Tensor& bias,
                              int dilation) {
    check_defined(x, "dwconv2d");
    check_defined(w, "dwconv2d");
    if (x.rank() != 3 || w.rank() != 3) throw ShapeError("dwconv2d: expected x{C,H,W}, w{C,kh,kw}");
    int C = x.dim(0), H = x.dim(1), W = x.dim(2);
    int kh = w.dim(1), kw = w.dim(2);
    if (w.dim(0) != C) throw ShapeError("dwconv2d: channel mismatch");
    int Ho = H - dilation * (kh - 1), Wo = W - dilation * (kw - 1);
    if (Ho <= 0 || Wo <= 0) throw ShapeError("dwconv2d: kernel larger than input");
    bool has_bias = bias.defined();
    if (has_bias && (bias.rank() != 1 || bias.dim(0) != C))
        throw ShapeError("dwconv2d: bias shape mismatch");

    std::vector<NodePtr> parents = {x.node(), w.node()};
    if (has_bias) parents.push_back(bias.node());
    auto n = make_node({C, Ho, Wo}, parents);
    const auto& xv = x.data();
    const auto& wv = w.data();
    for (int c = 0; c < C; ++c) {
        const double* xc = xv.data() + (size_t)c * H * W;
        const double* wc = wv.data() + (size_t)c * kh * kw;
        double b = has_bias ? bias.data()[c] : 0.0;
        double* oc = n->val.data() + (size_t)c * Ho * Wo;
        for (int oy = 0; oy < Ho; ++oy)
            for (int ox = 0; ox < Wo; ++ox) {
                double acc = b;
                for (int ky = 0; ky < kh; ++ky)
                    for (int kx = 0; kx < kw; ++kx)
                        acc += wc[ky * kw + kx] *
                               xc[(size_t)(oy + ky * dilation) * W + ox + kx * dilation];
                oc[oy * Wo + ox] = acc;
            }
    }
    if (n->rg)
        n->back = [C, H, W, kh, kw, dilation, Ho, Wo, has_bias](Node& self) {
            auto& px = *self.parents[0];
            auto& pw = *self.parents[1];
            if (px.rg) px.ensure_grad();
            if (pw.rg) pw.ensure_grad();
            for (int c = 0; c < C; ++c) {
                const double* gc = self.grad.data() + (size_t)c * Ho * Wo;
                const double* xc = px.val.data() + (size_t)c * H * W;
                const double* wc = pw.val.data() + (size_t)c * kh * kw;
                for (int oy = 0; oy < Ho; ++oy)
                    for (int ox = 0; ox < Wo; ++ox) {
                        double g = gc[oy * Wo + ox];
                        if (g == 0.0) continue;
                        for (int ky = 0; ky < kh; ++ky)
                            for (int kx = 0; kx < kw; ++kx) {
                                size_t xi = (size_t)(oy + ky * dilation) * W + ox + kx * dilation;
                                if (pw.rg)
                                    pw.grad[(size_t)c * kh * kw + ky * kw + kx] += g * xc[xi];
                                if (px.rg) px.grad[(size_t)c * H * W + xi] += g * wc[ky * kw + kx];
                            }
                    }
                if (has_bias) {
                    auto& pb = *self.parents[2];
                    if (pb.rg) {
                        pb.ensure_grad();
                        double s = 0.0;
                        for (int i = 0; i < Ho * Wo; ++i) s += gc[i];
                        pb.grad[c] += s;
                    }
                }
            }
        };
    return Tensor::wrap(n);
}

Tensor depthwise_conv2d_same(const Tensor& x, const Tensor& w, const Tensor& bias, int dilation,
                             PadMode mode) {
    int kh = w.dim(1), kw = w.dim(2);
    if (kh % 2 == 0 || kw % 2 == 0) throw ShapeError("dwconv2d_same: kernel must be odd");
    int py = dilation * (kh / 2), px = dilation * (kw / 2);
    if (py == 0 && px == 0) return depthwise_conv2d_valid(x, w, bias, dilation);
    return depthwise_conv2d_valid(pad2d(x, py, py, px, px, mode), w, bias, dilation);
}

Tensor layer_norm_pixels(const Tensor& x, double eps) {
    check_defined(x, "layer_norm_pixels");
    if (x.rank() != 3) throw ShapeError("layer_norm_pixels: expected {C,H,W}");
    int C = x.dim(0);
    int64_t hw = static_cast<int64_t>(x.dim(1)) * x.dim(2);
    auto n = make_node(x.shape(), {x.node()});
    const auto& xv = x.data();
    for (int64_t i = 0; i < hw; ++i) {
        double mu = 0.0;
        for (int c = 0; c < C; ++c) mu += xv[c * hw + i];
        mu /= C;
        double var = 0.0;
        for (int c = 0; c < C; ++c) {
            double d = xv[c * hw + i] - mu;
            var += d * d;
        }
        var /= C;
        double inv = 1.0 / std::sqrt(var + eps);
        for (int c = 0; c < C; ++c) n->val[c * hw + i] = (xv[c * hw + i] - mu) * inv;
    }
    if (n->rg)
        n->back = [C, hw, eps](Node& self) {
            auto& p = *self.parents[0];
            p.ensure_grad();
            for (int64_t i = 0; i < hw; ++i) {
                double mu = 0.0;
                for (int c = 0; c < C; ++c) mu += p.val[c * hw + i];
                mu /= C;
                double var = 0.0;
                for (int c = 0; c < C; ++c) {
                    double d = p.val[c * hw + i] - mu;
                    var += d * d;
                }
                var /= C;
                double inv = 1.0 / std::sqrt(var + eps);
                double mean_g = 0.0, mean_gy = 0.0;
                for (int c = 0; c < C; ++c) {
                    double g = self.grad[c * hw + i];
                    mean_g += g;
                    mean_gy += g * self.val[c * hw + i];
                }
                mean_g /= C;
                mean_gy /= C;
                for (int c = 0; c < C; ++c) {
                    double g = self.grad[c * hw + i];
                    double y = self.val[c * hw + i];
                    p.grad[c * hw + i] += inv * (g - mean_g - y * mean_gy);
                }
            }
        };
    return Tensor::wrap(n);
}

Tensor scale_channels(const Tensor& x, const Tensor& gamma) {
    check_defined(x, "scale_channels");
    check_defined(gamma, "scale_channels");
    if (x.rank() != 3 || gamma.rank() != 1 || gamma.dim(0) != x.dim(0))
        throw ShapeError("scale_channels: shape mismatch");
    int C = x.dim(0);
    int64_t hw = static_cast<int64_t>(x.dim(1)) * x.dim(2);
    auto n = make_node(x.shape(), {x.node(), gamma.node()});
    const auto& xv = x.data();
    const auto& gv = gamma.data();
    for (int c = 0; c < C; ++c)
        for (int64_t i = 0; i < hw; ++i) n->val[c * hw + i] = xv[c * hw + i] * gv[c];
    if (n->rg)
        n->back = [C, hw](Node& self) {
            auto& px = *self.parents[0];
            auto& pg = *self.parents[1];
            if (px.rg) px.ensure_grad();
            if (pg.rg) pg.ensure_grad();
            for (int c = 0; c < C; ++c) {
                double gsum = 0.0;
                for (int64_t i = 0; i < hw; ++i) {
                    double g = self.grad[c * hw + i];
                    if (px.rg) px.grad[c * hw + i] += g * pg.val[c];
                    gsum += g * px.val[c * hw + i];
                }
                if (pg.rg) pg.grad[c] += gsum;
            }
        };
    return Tensor::wrap(n);
}

Tensor shift_channels(const Tensor& x, const Tensor& beta) {
    check_defined(x, "shift_channels");
    check_defined(beta, "shift_channels");
    if (x.rank() != 3 || beta.rank() != 1 || beta.dim(0) != x.dim(0))
        throw ShapeError("shift_channels: shape mismatch");
    int C = x.dim(0);
    int64_t hw = static_cast<int64_t>(x.dim(1)) * x.dim(2);
    auto n = make_node(x.shape(), {x.node(), beta.node()});
    const auto& xv = x.data();
    const auto& bv = beta.data();
    for (int c = 0; c < C; ++c)
        for (int64_t i = 0; i < hw; ++i) n->val[c * hw + i] = xv[c * hw + i] + bv[c];
    if (n->rg)
        n->back = [C, hw](Node& self) {
            auto& px = *self.parents[0];
            auto& pb = *self.parents[1];
            if (px.rg) px.ensure_grad();
            if (pb.rg) pb.ensure_grad();
            for (int c = 0; c < C; ++c) {
                double gsum = 0.0;
                for (int64_t i = 0; i < hw; ++i) {
                    double g = self.grad[c * hw + i];
                    if (px.rg) px.grad[c * hw + i] += g;
                    gsum += g;
                }
                if (pb.rg) pb.grad[c] += gsum;
            }
        };
    return Tensor::wrap(n);
}

Tensor softmax_rows(const Tensor& x) {
    check_defined(x, "softmax_rows");
    if (x.rank() != 2) throw ShapeError("softmax_rows: expected {n,m}");
    int rows = x.dim(0), cols = x.dim(1);
    auto n = make_node(x.shape(), {x.node()});
    const auto& xv = x.data();
    for (int r = 0; r < rows; ++r) {
        const double* xr = xv.data() + (size_t)r * cols;
        double m = xr[0];
        for (int c = 1; c < cols; ++c) m = std::max(m, xr[c]);
        double s = 0.0;
        double* yr = n->val.data() + (size_t)r * cols;
        for (int c = 0; c < cols; ++c) {
            yr[c] = std::exp(xr[c] - m);
            s += yr[c];
        }
        for (int c = 0; c < cols; ++c) yr[c] /= s;
    }
    if (n->rg)
        n->back = [rows, cols](Node& self) {
            auto& p = *self.parents[0];
            p.ensure_grad();
            for (int r = 0; r < rows; ++r) {
                const double* y = self.val.data() + (size_t)r * cols;
                const double* g = self.grad.data() + (size_t)r * cols;
                double dot = 0.0;
                for (int c = 0; c < cols; ++c) dot += y[c] * g[c];
                for (int c = 0; c < cols; ++c) p.grad[(size_t)r * cols + c] += y[c] * (g[c] - dot);
            }
        };
    return Tensor::wrap(n);
}

Tensor l2_normalize_rows(const Tensor& x, double eps) {
    check_defined(x, "l2_normalize_rows");
    if (x.rank() != 2) throw ShapeError("l2_normalize_rows: expected {n,m}");
    int rows = x.dim(0), cols = x.dim(1);
    auto n = make_node(x.shape(), {x.node()});
    const auto& xv = x.data();
    for (int r = 0; r < rows; ++r) {
        const double* xr = xv.data() + (size_t)r * cols;
        double s = 0.0;
        for (int c = 0; c < cols; ++c) s += xr[c] * xr[c];
        double inv = 1.0 / std::sqrt(s + eps);
        for (int c = 0; c < cols; ++c) n->val[(size_t)r * cols + c] = xr[c] * inv;
    }
    if (n->rg)
        n->back = [rows, cols, eps](Node& self) {
            auto& p = *self.parents[0];
            p.ensure_grad();
            for (int r = 0; r < rows; ++r) {
                const double* xr = p.val.data() + (size_t)r * cols;
                const double* g = self.grad.data() + (size_t)r * cols;
                double s = 0.0, xg = 0.0;
                for (int c = 0; c < cols; ++c) {
                    s += xr[c] * xr[c];
                    xg += xr[c] * g[c];
                }
                double inv = 1.0 / std::sqrt(s + eps);
                double inv3 = inv * inv * inv;
                for (int c = 0; c < cols; ++c)
                    p.grad[(size_t)r * cols + c] += g[c] * inv - xr[c] * xg * inv3;
            }
        };
    return Tensor::wrap(n);
}

Tensor crop(const Tensor& x, int y0, int x0, int h, int w) {
    check_defined(x, "crop");
    if (x.rank() != 3) throw ShapeError("crop: expected {C,H,W}");
    int C = x.dim(0), H = x.dim(1), W = x.dim(2);
    if (y0 < 0 || x0 < 0 || h <= 0 || w <= 0 || y0 + h > H || x0 + w > W)
        throw ShapeError("crop: window out of bounds");
    auto n = make_node({C, h, w}, {x.node()});
    const auto& xv = x.data();
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx)
                n->val[((size_t)c * h + y) * w + xx] = xv[((size_t)c * H + y0 + y) * W + x0 + xx];
    if (n->rg)
        n->back = [C, H, W, y0, x0, h, w](Node& self) {
            auto& p = *self.parents[0];
            p.ensure_grad();
            for (int c = 0; c < C; ++c)
                for (int y = 0; y < h; ++y)
                    for (int xx = 0; xx < w; ++xx)
                        p.grad[((size_t)c * H + y0 + y) * W + x0 + xx] +=
                            self.grad[((size_t)c * h + y) * w + xx];
        };
    return Tensor::wrap(n);
}

Tensor gather_rows(const Tensor& x, std::vector<int> idx) {
    check_defined(x, "gather_rows");
    if (x.rank() != 2) throw ShapeError("gather_rows: expected {N,C}");
    int N = x.dim(0), C = x.dim(1);
    for (int i : idx)
        if (i < 0 || i >= N) throw ShapeError("gather_rows: index out of range");
    int M = static_cast<int>(idx.size());
    auto n = make_node({M, C}, {x.node()});
    const auto& xv = x.data();
    for (int m = 0; m < M; ++m)
        std::copy(xv.begin() + (size_t)idx[m] * C, xv.begin() + (size_t)(idx[m] + 1) * C,
                  n->val.begin() + (size_t)m * C);
    if (n->rg)
        n->back = [C, idx = std::move(idx)](Node& self) {
            auto& p = *self.parents[0];
            p.ensure_grad();
            for (size_t m = 0; m < idx.size(); ++m)
                for (int c = 0; c < C; ++c)
                    p.grad[(size_t)idx[m] * C + c] += self.grad[m * C + c];
        };
    return Tensor::wrap(n);
}

Tensor scatter_nodes(const Tensor& nodes, const std::vector<std::pair<int, int>>& xy, int h,
                     int w) {
    check_defined(nodes, "scatter_nodes");
    if (nodes.rank() != 2) throw ShapeError("scatter_nodes: expected {N,C}");
    int N = nodes.dim(0), C = nodes.dim(1);
    if (static_cast<int>(xy.size()) != N) throw ShapeError("scatter_nodes: coord count mismatch");
    for (auto [x, y] : xy)
        if (x < 0 || x >= w || y < 0 || y >= h)
            throw ShapeError("scatter_nodes: coordinate out of bounds");
    auto n = make_node({C, h, w}, {nodes.node()});
    const auto& nv = nodes.data();
    for (int i = 0; i < N; ++i) {
        auto [x, y] = xy[i];
        for (int c = 0; c < C; ++c) n->val[((size_t)c * h + y) * w + x] += nv[(size_t)i * C + c];
    }
    if (n->rg)
        n->back = [C, h, w, xy](Node& self) {
            auto& p = *self.parents[0];
            p.ensure_grad();
            for (size_t i = 0; i < xy.size(); ++i) {
                auto [x, y] = xy[i];
                for (int c = 0; c < C; ++c)
                    p.grad[i * C + c] += self.grad[((size_t)c * h + y) * w + x];
            }
        };
    return Tensor::wrap(n);
}

Tensor segment_softmax(const Tensor& e, const std::vector<int>& offsets) {
    check_defined(e, "segment_softmax");
    if (e.rank() != 1) throw ShapeError("segment_softmax: expected {E}");
    if (offsets.empty() || offsets.front() != 0 || offsets.back() != e.dim(0))
        throw ShapeError("segment_softmax: bad offsets");
    auto n = make_node(e.shape(), {e.node()});
    const auto& ev = e.data();
    for (size_t s = 0; s + 1 < offsets.size(); ++s) {
        int lo = offsets[s], hi = offsets[s + 1];
        if (lo == hi) continue;
        double m = ev[lo];
        for (int i = lo + 1; i < hi; ++i) m = std::max(m, ev[i]);
        double sum = 0.0;
        for (int i = lo; i < hi; ++i) {
            n->val[i] = std::exp(ev[i] - m);
            sum += n->val[i];
        }
        for (int i = lo; i < hi; ++i) n->val[i] /= sum;
    }
    if (n->rg)
        n->back = [offsets](Node& self) {
            auto& p = *self.parents[0];
            p.ensure_grad();
            for (size_t s = 0; s + 1 < offsets.size(); ++s) {
                int lo = offsets[s], hi = offsets[s + 1];
                double dot = 0.0;
                for (int i = lo; i < hi; ++i) dot += self.val[i] * self.grad[i];
                for (int i = lo; i < hi; ++i)
                    p.grad[i] += self.val[i] * (self.grad[i] - dot);
            }
        };
    return Tensor::wrap(n);
}

Tensor segment_weighted_sum(const Tensor& alpha, const Tensor& rows,
                            const std::vector<int>& offsets) {
    check_defined(alpha, "segment_weighted_sum");
    check_defined(rows, "segment_weighted_sum");
    if (alpha.rank() != 1 || rows.rank() != 2 || alpha.dim(0) != rows.dim(0))
        throw ShapeError("segment_weighted_sum: shape mismatch");
    if (offsets.empty() || offsets.front() != 0 || offsets.back() != alpha.dim(0))
        throw ShapeError("segment_weighted_sum: bad offsets");
    int nseg = static_cast<int>(offsets.size()) - 1;
    int C = rows.dim(1);
    auto n = make_node({nseg, C}, {alpha.node(), rows.node()});
    const auto& av = alpha.data();
    const auto& rv = rows.data();
    for (int s = 0; s < nseg; ++s)
        for (int i = offsets[s]; i < offsets[s + 1]; ++i)
            for (int c = 0; c < C; ++c)
                n->val[(size_t)s * C + c] += av[i] * rv[(size_t)i * C + c];
    if (n->rg)
        n->back = [offsets, C, nseg](Node& self) {
            auto& pa = *self.parents[0];
            auto& pr = *self.parents[1];
            if (pa.rg) pa.ensure_grad();
            if (pr.rg) pr.ensure_grad();
            for (int s = 0; s < nseg; ++s)
                for (int i = offsets[s]; i < offsets[s + 1]; ++i)
                    for (int c = 0; c < C; ++c) {
                        double g = self.grad[(size_t)s * C + c];
                        if (pa.rg) pa.grad[i] += g * pr.val[(size_t)i * C + c];
                        if (pr.rg) pr.grad[(size_t)i * C + c] += g * pa.val[i];
                    }
        };
    return Tensor::wrap(n);
}

} // namespace tagat
