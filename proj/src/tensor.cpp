#include "dsct/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace dsct {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

namespace {

long long shape_numel(const Shape& s) {
    long long n = 1;
    for (int d : s) {
        if (d < 0) throw ShapeError("negative dimension in " + shape_str(s));
        n *= d;
    }
    return n;
}

NodePtr make_node(Shape shape, std::vector<real> value) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    if (shape_numel(n->shape) != n->numel())
        throw ShapeError("value count does not match shape " + shape_str(n->shape));
    return n;
}

NodePtr result_node(Shape shape, std::vector<real> value,
                    std::vector<NodePtr> parents, std::function<void(Node&)> bp) {
    auto n = make_node(std::move(shape), std::move(value));
    bool rg = false;
    for (const auto& p : parents) rg = rg || p->requires_grad;
    n->requires_grad = rg;
    if (rg) {
        n->parents = std::move(parents);
        n->backprop = std::move(bp);
    }
    return n;
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": operand shapes differ, " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

void accum(Node& p, const std::vector<real>& g) {
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (size_t i = 0; i < g.size(); ++i) p.grad[i] += g[i];
}

}  // namespace

// ---- Tensor basics -------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    const auto count = shape_numel(shape);
    auto n = make_node(std::move(shape), std::vector<real>(count, real(0)));
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
}

Tensor Tensor::full(Shape shape, real v) {
    const auto count = shape_numel(shape);
    return Tensor(make_node(std::move(shape), std::vector<real>(count, v)));
}

Tensor Tensor::from(std::vector<real> values, Shape shape) {
    return Tensor(make_node(std::move(shape), std::move(values)));
}

Tensor Tensor::row(std::vector<real> values) {
    Shape s{1, static_cast<int>(values.size())};
    return Tensor(make_node(std::move(s), std::move(values)));
}

Tensor Tensor::randn(Shape shape, std::mt19937_64& rng, real stddev) {
    std::normal_distribution<double> dist(0.0, 1.0);
    std::vector<real> v(shape_numel(shape));
    for (auto& x : v) x = static_cast<real>(dist(rng)) * stddev;
    return Tensor(make_node(std::move(shape), std::move(v)));
}

Tensor Tensor::uniform(Shape shape, std::mt19937_64& rng, real lo, real hi) {
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<real> v(shape_numel(shape));
    for (auto& x : v) x = static_cast<real>(dist(rng));
    return Tensor(make_node(std::move(shape), std::move(v)));
}

const Shape& Tensor::shape() const {
    if (!n_) throw ContractError("use of undefined tensor");
    return n_->shape;
}

long long Tensor::numel() const { return n_ ? n_->numel() : 0; }

int Tensor::rows() const {
    if (ndim() != 2) throw ShapeError("rows(): tensor is not 2-D, shape " + shape_str(shape()));
    return shape()[0];
}

int Tensor::cols() const {
    if (ndim() != 2) throw ShapeError("cols(): tensor is not 2-D, shape " + shape_str(shape()));
    return shape()[1];
}

real Tensor::item() const {
    if (numel() != 1) throw ContractError("item(): tensor has " + std::to_string(numel()) + " elements");
    return n_->value[0];
}

real Tensor::at(int i) const { return n_->value.at(i); }

real Tensor::at(int i, int j) const {
    return n_->value.at(static_cast<size_t>(i) * cols() + j);
}

const std::vector<real>& Tensor::values() const {
    if (!n_) throw ContractError("use of undefined tensor");
    return n_->value;
}

std::vector<real>& Tensor::mutable_values() {
    if (!n_) throw ContractError("use of undefined tensor");
    return n_->value;
}

bool Tensor::requires_grad() const { return n_ && n_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool rg) {
    n_->requires_grad = rg;
    return *this;
}

bool Tensor::has_grad() const { return n_ && n_->grad.size() == n_->value.size(); }

const std::vector<real>& Tensor::grad() const {
    if (!has_grad()) throw ContractError("gradient not populated");
    return n_->grad;
}

std::vector<real>& Tensor::mutable_grad() {
    n_->ensure_grad();
    return n_->grad;
}

void Tensor::zero_grad() {
    if (n_) n_->grad.assign(n_->value.size(), real(0));
}

void Tensor::backward() const {
    if (!n_) throw ContractError("backward on undefined tensor");
    if (numel() != 1) throw ContractError("backward requires a scalar loss, got shape " + shape_str(shape()));

    // Post-order DFS for topological order; reverse gives the backward order.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.emplace_back(n_.get(), 0);
    seen.insert(n_.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node* p = node->parents[idx].get();
            ++idx;
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    n_->ensure_grad();
    n_->grad[0] += real(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (node->backprop) node->backprop(*node);
    }
}

Mask Mask::causal(int n) {
    Mask m(n, n, false);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j <= i; ++j) m.set(i, j, true);
    return m;
}

// ---- elementwise ----------------------------------------------------------

namespace {

template <typename Fwd, typename Bwd>
Tensor unary_op(const Tensor& a, Fwd fwd, Bwd dvdx) {
    const auto& av = a.values();
    std::vector<real> out(av.size());
    for (size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
    auto pa = a.node();
    return Tensor(result_node(a.shape(), std::move(out), {pa},
        [pa, dvdx](Node& n) {
            if (!pa->requires_grad) return;
            pa->ensure_grad();
            for (size_t i = 0; i < n.value.size(); ++i)
                pa->grad[i] += n.grad[i] * dvdx(pa->value[i], n.value[i]);
        }));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    const auto& av = a.values();
    const auto& bv = b.values();
    std::vector<real> out(av.size());
    for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
    auto pa = a.node(), pb = b.node();
    return Tensor(result_node(a.shape(), std::move(out), {pa, pb}, [pa, pb](Node& n) {
        accum(*pa, n.grad);
        accum(*pb, n.grad);
    }));
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    const auto& av = a.values();
    const auto& bv = b.values();
    std::vector<real> out(av.size());
    for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] - bv[i];
    auto pa = a.node(), pb = b.node();
    return Tensor(result_node(a.shape(), std::move(out), {pa, pb}, [pa, pb](Node& n) {
        if (pa->requires_grad) accum(*pa, n.grad);
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (size_t i = 0; i < n.grad.size(); ++i) pb->grad[i] -= n.grad[i];
        }
    }));
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    const auto& av = a.values();
    const auto& bv = b.values();
    std::vector<real> out(av.size());
    for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
    auto pa = a.node(), pb = b.node();
    return Tensor(result_node(a.shape(), std::move(out), {pa, pb}, [pa, pb](Node& n) {
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i] * pb->value[i];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (size_t i = 0; i < n.grad.size(); ++i) pb->grad[i] += n.grad[i] * pa->value[i];
        }
    }));
}

Tensor affine(const Tensor& a, real alpha, real beta) {
    return unary_op(a,
        [alpha, beta](real x) { return alpha * x + beta; },
        [alpha](real, real) { return alpha; });
}

Tensor relu(const Tensor& a) {
    return unary_op(a,
        [](real x) { return x > real(0) ? x : real(0); },
        [](real x, real) { return x > real(0) ? real(1) : real(0); });
}

Tensor sigmoid(const Tensor& a) {
    return unary_op(a,
        [](real x) { return real(1) / (real(1) + std::exp(-x)); },
        [](real, real y) { return y * (real(1) - y); });
}

Tensor log_elem(const Tensor& a) {
    for (real x : a.values())
        if (!(x > real(0))) throw NumericError("log of non-positive value");
    return unary_op(a,
        [](real x) { return std::log(x); },
        [](real x, real) { return real(1) / x; });
}

Tensor pow_elem(const Tensor& a, real exponent) {
    for (real x : a.values())
        if (!(x > real(0))) throw NumericError("pow of non-positive base");
    return unary_op(a,
        [exponent](real x) { return std::pow(x, exponent); },
        [exponent](real x, real y) { return exponent * y / x; });
}

Tensor clamp(const Tensor& a, real lo, real hi) {
    return unary_op(a,
        [lo, hi](real x) { return std::min(hi, std::max(lo, x)); },
        [lo, hi](real x, real) { return (x > lo && x < hi) ? real(1) : real(0); });
}

Tensor smooth_l1(const Tensor& a) {
    return unary_op(a,
        [](real x) {
            real ax = std::abs(x);
            return ax < real(1) ? real(0.5) * x * x : ax - real(0.5);
        },
        [](real x, real) {
            if (x > real(1)) return real(1);
            if (x < real(-1)) return real(-1);
            return x;
        });
}

// ---- linear algebra --------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2)
        throw ShapeError("matmul: operands must be 2-D, got " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
    const int n = a.rows(), k = a.cols(), m = b.cols();
    if (b.rows() != k)
        throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a.shape()) +
                         " x " + shape_str(b.shape()));
    const auto& av = a.values();
    const auto& bv = b.values();
    std::vector<real> out(static_cast<size_t>(n) * m, real(0));
    for (int i = 0; i < n; ++i)
        for (int p = 0; p < k; ++p) {
            const real aip = av[static_cast<size_t>(i) * k + p];
            for (int j = 0; j < m; ++j)
                out[static_cast<size_t>(i) * m + j] += aip * bv[static_cast<size_t>(p) * m + j];
        }
    auto pa = a.node(), pb = b.node();
    return Tensor(result_node({n, m}, std::move(out), {pa, pb}, [pa, pb, n, k, m](Node& node) {
        const auto& g = node.grad;
        if (pa->requires_grad) {  // dA = dC B^T
            pa->ensure_grad();
            for (int i = 0; i < n; ++i)
                for (int p = 0; p < k; ++p) {
                    real s = 0;
                    for (int j = 0; j < m; ++j)
                        s += g[static_cast<size_t>(i) * m + j] * pb->value[static_cast<size_t>(p) * m + j];
                    pa->grad[static_cast<size_t>(i) * k + p] += s;
                }
        }
        if (pb->requires_grad) {  // dB = A^T dC
            pb->ensure_grad();
            for (int p = 0; p < k; ++p)
                for (int j = 0; j < m; ++j) {
                    real s = 0;
                    for (int i = 0; i < n; ++i)
                        s += pa->value[static_cast<size_t>(i) * k + p] * g[static_cast<size_t>(i) * m + j];
                    pb->grad[static_cast<size_t>(p) * m + j] += s;
                }
        }
    }));
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2)
        throw ShapeError("matmul_nt: operands must be 2-D");
    const int n = a.rows(), k = a.cols(), m = b.rows();
    if (b.cols() != k)
        throw ShapeError("matmul_nt: inner dimensions disagree, " + shape_str(a.shape()) +
                         " x " + shape_str(b.shape()) + "^T");
    const auto& av = a.values();
    const auto& bv = b.values();
    std::vector<real> out(static_cast<size_t>(n) * m);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) {
            real s = 0;
            for (int p = 0; p < k; ++p)
                s += av[static_cast<size_t>(i) * k + p] * bv[static_cast<size_t>(j) * k + p];
            out[static_cast<size_t>(i) * m + j] = s;
        }
    auto pa = a.node(), pb = b.node();
    return Tensor(result_node({n, m}, std::move(out), {pa, pb}, [pa, pb, n, k, m](Node& node) {
        const auto& g = node.grad;
        if (pa->requires_grad) {  // dA = dC B
            pa->ensure_grad();
            for (int i = 0; i < n; ++i)
                for (int p = 0; p < k; ++p) {
                    real s = 0;
                    for (int j = 0; j < m; ++j)
                        s += g[static_cast<size_t>(i) * m + j] * pb->value[static_cast<size_t>(j) * k + p];
                    pa->grad[static_cast<size_t>(i) * k + p] += s;
                }
        }
        if (pb->requires_grad) {  // dB = dC^T A
            pb->ensure_grad();
            for (int j = 0; j < m; ++j)
                for (int p = 0; p < k; ++p) {
                    real s = 0;
                    for (int i = 0; i < n; ++i)
                        s += g[static_cast<size_t>(i) * m + j] * pa->value[static_cast<size_t>(i) * k + p];
                    pb->grad[static_cast<size_t>(j) * k + p] += s;
                }
        }
    }));
}

Tensor add_rowvec(const Tensor& m, const Tensor& v) {
    if (m.ndim() != 2) throw ShapeError("add_rowvec: matrix must be 2-D");
    const int d = m.cols();
    const long long vn = v.numel();
    if (vn != d)
        throw ShapeError("add_rowvec: vector length " + std::to_string(vn) +
                         " != row width " + std::to_string(d));
    const auto& mv = m.values();
    const auto& vv = v.values();
    std::vector<real> out(mv.size());
    const int n = m.rows();
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j)
            out[static_cast<size_t>(i) * d + j] = mv[static_cast<size_t>(i) * d + j] + vv[j];
    auto pm = m.node(), pv = v.node();
    return Tensor(result_node(m.shape(), std::move(out), {pm, pv}, [pm, pv, n, d](Node& node) {
        if (pm->requires_grad) accum(*pm, node.grad);
        if (pv->requires_grad) {
            pv->ensure_grad();
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < d; ++j)
                    pv->grad[j] += node.grad[static_cast<size_t>(i) * d + j];
        }
    }));
}

Tensor linear(const Tensor& x, const Tensor& W, const Tensor* b) {
    if (x.ndim() != 2 || W.ndim() != 2)
        throw ShapeError("linear: x and W must be 2-D, got " + shape_str(x.shape()) +
                         " and " + shape_str(W.shape()));
    if (x.cols() != W.rows())
        throw ShapeError("linear: x " + shape_str(x.shape()) + " does not chain with W " +
                         shape_str(W.shape()));
    Tensor y = matmul(x, W);
    if (b) y = add_rowvec(y, *b);
    return y;
}

// ---- reductions / structure -------------------------------------------------

Tensor sum(const Tensor& a) {
    const auto& av = a.values();
    real s = 0;
    for (real x : av) s += x;
    auto pa = a.node();
    return Tensor(result_node({1}, {s}, {pa}, [pa](Node& n) {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (auto& g : pa->grad) g += n.grad[0];
    }));
}

Tensor mean(const Tensor& a) {
    const long long n = a.numel();
    if (n == 0) throw ShapeError("mean of empty tensor");
    return scale(sum(a), real(1) / static_cast<real>(n));
}

Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_numel(shape) != a.numel())
        throw ShapeError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape) +
                         " changes element count");
    auto pa = a.node();
    return Tensor(result_node(std::move(shape), a.values(), {pa},
                              [pa](Node& n) { accum(*pa, n.grad); }));
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no parts");
    const int d = parts[0].cols();
    int total = 0;
    for (const auto& p : parts) {
        if (p.ndim() != 2 || p.cols() != d)
            throw ShapeError("concat_rows: inconsistent widths");
        total += p.rows();
    }
    std::vector<real> out;
    out.reserve(static_cast<size_t>(total) * d);
    std::vector<NodePtr> parents;
    parents.reserve(parts.size());
    std::vector<int> row_counts;
    for (const auto& p : parts) {
        out.insert(out.end(), p.values().begin(), p.values().end());
        parents.push_back(p.node());
        row_counts.push_back(p.rows());
    }
    auto parents_copy = parents;
    return Tensor(result_node({total, d}, std::move(out), std::move(parents),
        [parents_copy, row_counts, d](Node& n) {
            size_t off = 0;
            for (size_t k = 0; k < parents_copy.size(); ++k) {
                auto& p = *parents_copy[k];
                const size_t cnt = static_cast<size_t>(row_counts[k]) * d;
                if (p.requires_grad) {
                    p.ensure_grad();
                    for (size_t i = 0; i < cnt; ++i) p.grad[i] += n.grad[off + i];
                }
                off += cnt;
            }
        }));
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.rows() != b.rows())
        throw ShapeError("concat_cols: row counts differ, " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
    const int n = a.rows(), p = a.cols(), q = b.cols();
    std::vector<real> out(static_cast<size_t>(n) * (p + q));
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < p; ++j) out[static_cast<size_t>(i) * (p + q) + j] = a.at(i, j);
        for (int j = 0; j < q; ++j) out[static_cast<size_t>(i) * (p + q) + p + j] = b.at(i, j);
    }
    auto pa = a.node(), pb = b.node();
    return Tensor(result_node({n, p + q}, std::move(out), {pa, pb}, [pa, pb, n, p, q](Node& node) {
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < p; ++j)
                    pa->grad[static_cast<size_t>(i) * p + j] +=
                        node.grad[static_cast<size_t>(i) * (p + q) + j];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < q; ++j)
                    pb->grad[static_cast<size_t>(i) * q + j] +=
                        node.grad[static_cast<size_t>(i) * (p + q) + p + j];
        }
    }));
}

Tensor slice_rows(const Tensor& a, int r0, int r1) {
    if (a.ndim() != 2) throw ShapeError("slice_rows: tensor must be 2-D");
    if (r0 < 0 || r1 > a.rows() || r0 > r1)
        throw ShapeError("slice_rows: bad range [" + std::to_string(r0) + "," +
                         std::to_string(r1) + ") for " + shape_str(a.shape()));
    const int d = a.cols();
    std::vector<real> out(a.values().begin() + static_cast<size_t>(r0) * d,
                          a.values().begin() + static_cast<size_t>(r1) * d);
    auto pa = a.node();
    return Tensor(result_node({r1 - r0, d}, std::move(out), {pa}, [pa, r0, d](Node& n) {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        const size_t off = static_cast<size_t>(r0) * d;
        for (size_t i = 0; i < n.grad.size(); ++i) pa->grad[off + i] += n.grad[i];
    }));
}

Tensor gather_rows(const Tensor& a, const std::vector<int>& indices) {
    if (a.ndim() != 2) throw ShapeError("gather_rows: tensor must be 2-D");
    const int d = a.cols(), n = a.rows();
    std::vector<real> out;
    out.reserve(indices.size() * d);
    for (int idx : indices) {
        if (idx < 0 || idx >= n)
            throw ShapeError("gather_rows: index " + std::to_string(idx) + " out of range [0," +
                             std::to_string(n) + ")");
        out.insert(out.end(), a.values().begin() + static_cast<size_t>(idx) * d,
                   a.values().begin() + static_cast<size_t>(idx + 1) * d);
    }
    auto pa = a.node();
    auto idx_copy = indices;
    return Tensor(result_node({static_cast<int>(indices.size()), d}, std::move(out), {pa},
        [pa, idx_copy, d](Node& node) {
            if (!pa->requires_grad) return;
            pa->ensure_grad();
            for (size_t r = 0; r < idx_copy.size(); ++r)
                for (int j = 0; j < d; ++j)
                    pa->grad[static_cast<size_t>(idx_copy[r]) * d + j] +=
                        node.grad[r * d + j];
        }));
}

// ---- normalization / attention ----------------------------------------------

Tensor softmax(const Tensor& a, int axis) {
    for (real x : a.values())
        if (std::isnan(x)) throw NumericError("softmax: NaN input");
    if (a.numel() == 0) {
        auto pa = a.node();
        return Tensor(result_node(a.shape(), {}, {pa}, [](Node&) {}));
    }
    const int nd = a.ndim();
    if (nd != 1 && nd != 2) throw ShapeError("softmax: tensor must be 1-D or 2-D");
    if (axis < 0) axis += nd;
    if (axis < 0 || axis >= nd) throw ShapeError("softmax: bad axis");

    // Normalize to a view of `slices` independent slices of length `len`
    // with stride `stride`.
    int slices, len, stride, slice_stride;
    if (nd == 1) {
        slices = 1; len = a.shape()[0]; stride = 1; slice_stride = 0;
    } else if (axis == 1) {
        slices = a.shape()[0]; len = a.shape()[1]; stride = 1; slice_stride = a.shape()[1];
    } else {
        slices = a.shape()[1]; len = a.shape()[0]; stride = a.shape()[1]; slice_stride = 1;
    }

    const auto& av = a.values();
    std::vector<real> out(av.size());
    for (int s = 0; s < slices; ++s) {
        const size_t base = static_cast<size_t>(s) * slice_stride;
        real mx = av[base];
        for (int i = 1; i < len; ++i)
            mx = std::max(mx, av[base + static_cast<size_t>(i) * stride]);
        real denom = 0;
        for (int i = 0; i < len; ++i) {
            const size_t k = base + static_cast<size_t>(i) * stride;
            out[k] = std::exp(av[k] - mx);
            denom += out[k];
        }
        for (int i = 0; i < len; ++i) {
            const size_t k = base + static_cast<size_t>(i) * stride;
            out[k] /= denom;
        }
    }
    auto pa = a.node();
    return Tensor(result_node(a.shape(), std::move(out), {pa},
        [pa, slices, len, stride, slice_stride](Node& n) {
            if (!pa->requires_grad) return;
            pa->ensure_grad();
            // dx = y * (dy - sum(dy * y)) per slice
            for (int s = 0; s < slices; ++s) {
                const size_t base = static_cast<size_t>(s) * slice_stride;
                real dot = 0;
                for (int i = 0; i < len; ++i) {
                    const size_t k = base + static_cast<size_t>(i) * stride;
                    dot += n.grad[k] * n.value[k];
                }
                for (int i = 0; i < len; ++i) {
                    const size_t k = base + static_cast<size_t>(i) * stride;
                    pa->grad[k] += n.value[k] * (n.grad[k] - dot);
                }
            }
        }));
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, real eps) {
    const int nd = x.ndim();
    if (nd != 1 && nd != 2) throw ShapeError("layer_norm: tensor must be 1-D or 2-D");
    const int d = (nd == 1) ? x.shape()[0] : x.shape()[1];
    const int n = (nd == 1) ? 1 : x.shape()[0];
    if (d < 1) throw ShapeError("layer_norm: feature dimension must be >= 1");
    if (gain.numel() != d || bias.numel() != d)
        throw ShapeError("layer_norm: gain/bias length != " + std::to_string(d));

    const auto& xv = x.values();
    const auto& gv = gain.values();
    const auto& bv = bias.values();
    std::vector<real> out(xv.size());
    std::vector<real> inv_std(n), means(n);
    for (int i = 0; i < n; ++i) {
        const size_t base = static_cast<size_t>(i) * d;
        real mu = 0;
        for (int j = 0; j < d; ++j) mu += xv[base + j];
        mu /= d;
        real var = 0;
        for (int j = 0; j < d; ++j) {
            const real e = xv[base + j] - mu;
            var += e * e;
        }
        var /= d;
        const real is = real(1) / std::sqrt(var + eps);
        means[i] = mu;
        inv_std[i] = is;
        for (int j = 0; j < d; ++j)
            out[base + j] = (xv[base + j] - mu) * is * gv[j] + bv[j];
    }
    auto px = x.node(), pg = gain.node(), pb = bias.node();
    return Tensor(result_node(x.shape(), std::move(out), {px, pg, pb},
        [px, pg, pb, n, d, means, inv_std](Node& node) {
            for (int i = 0; i < n; ++i) {
                const size_t base = static_cast<size_t>(i) * d;
                // xhat = (x - mu) * inv_std
                if (pg->requires_grad) {
                    pg->ensure_grad();
                    for (int j = 0; j < d; ++j)
                        pg->grad[j] += node.grad[base + j] *
                                       (px->value[base + j] - means[i]) * inv_std[i];
                }
                if (pb->requires_grad) {
                    pb->ensure_grad();
                    for (int j = 0; j < d; ++j) pb->grad[j] += node.grad[base + j];
                }
                if (px->requires_grad) {
                    px->ensure_grad();
                    real sum_dy = 0, sum_dy_xhat = 0;
                    for (int j = 0; j < d; ++j) {
                        const real xhat = (px->value[base + j] - means[i]) * inv_std[i];
                        const real dy = node.grad[base + j] * pg->value[j];
                        sum_dy += dy;
                        sum_dy_xhat += dy * xhat;
                    }
                    for (int j = 0; j < d; ++j) {
                        const real xhat = (px->value[base + j] - means[i]) * inv_std[i];
                        const real dy = node.grad[base + j] * pg->value[j];
                        px->grad[base + j] +=
                            inv_std[i] * (dy - (sum_dy + xhat * sum_dy_xhat) / d);
                    }
                }
            }
        }));
}

Tensor mask_fill(const Tensor& a, const Mask& mask, real fill) {
    if (a.ndim() != 2 || a.rows() != mask.rows || a.cols() != mask.cols)
        throw ShapeError("mask_fill: mask " + std::to_string(mask.rows) + "x" +
                         std::to_string(mask.cols) + " does not match tensor " +
                         shape_str(a.shape()));
    const auto& av = a.values();
    std::vector<real> out(av.size());
    for (size_t i = 0; i < av.size(); ++i) out[i] = mask.allowed[i] ? av[i] : fill;
    auto pa = a.node();
    auto keep = mask.allowed;
    return Tensor(result_node(a.shape(), std::move(out), {pa}, [pa, keep](Node& n) {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (size_t i = 0; i < n.grad.size(); ++i)
            if (keep[i]) pa->grad[i] += n.grad[i];
    }));
}

AttentionResult attention(const Tensor& Q, const Tensor& K, const Tensor& V,
                          const Mask* mask, const Tensor* bias) {
    if (Q.ndim() != 2 || K.ndim() != 2 || V.ndim() != 2)
        throw ShapeError("attention: Q, K, V must be 2-D");
    const int d = Q.cols();
    if (K.cols() != d)
        throw ShapeError("attention: Q " + shape_str(Q.shape()) + " vs K " +
                         shape_str(K.shape()) + " feature dims differ");
    const int m = Q.rows(), n = K.rows();
    if (V.rows() != n)
        throw ShapeError("attention: V rows " + std::to_string(V.rows()) +
                         " != K rows " + std::to_string(n));
    if (mask) {
        if (mask->rows != m || mask->cols != n)
            throw ShapeError("attention: mask dims do not match scores");
        for (int i = 0; i < m; ++i) {
            bool any = false;
            for (int j = 0; j < n && !any; ++j) any = mask->at(i, j);
            if (!any)
                throw ContractError("attention: mask row " + std::to_string(i) +
                                    " permits no entries");
        }
    }
    Tensor logits = matmul_nt(Q, K);
    if (bias) logits = add(logits, *bias);
    logits = scale(logits, real(1) / std::sqrt(static_cast<real>(d)));
    if (mask) logits = mask_fill(logits, *mask);
    Tensor scores = softmax(logits, -1);
    Tensor out = matmul(scores, V);
    return {out, scores};
}

Tensor sinusoidal_encoding(const Tensor& x, int bands) {
    if (bands < 1) throw ShapeError("sinusoidal_encoding: bands must be >= 1");
    if (x.ndim() != 2) throw ShapeError("sinusoidal_encoding: input must be 2-D");
    const int n = x.rows(), c = x.cols();
    const int out_c = c * 2 * bands;
    std::vector<real> omega(bands);
    for (int b = 0; b < bands; ++b)
        omega[b] = std::pow(real(10000), -static_cast<real>(b) / static_cast<real>(bands));
    const auto& xv = x.values();
    std::vector<real> out(static_cast<size_t>(n) * out_c);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < c; ++j) {
            const real v = xv[static_cast<size_t>(i) * c + j];
            const size_t base = static_cast<size_t>(i) * out_c + static_cast<size_t>(j) * 2 * bands;
            for (int b = 0; b < bands; ++b) {
                out[base + 2 * b] = std::sin(v * omega[b]);
                out[base + 2 * b + 1] = std::cos(v * omega[b]);
            }
        }
    auto pa = x.node();
    return Tensor(result_node({n, out_c}, std::move(out), {pa},
        [pa, n, c, bands, omega, out_c](Node& node) {
            if (!pa->requires_grad) return;
            pa->ensure_grad();
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < c; ++j) {
                    const real v = pa->value[static_cast<size_t>(i) * c + j];
                    const size_t base =
                        static_cast<size_t>(i) * out_c + static_cast<size_t>(j) * 2 * bands;
                    real g = 0;
                    for (int b = 0; b < bands; ++b) {
                        g += node.grad[base + 2 * b] * omega[b] * std::cos(v * omega[b]);
                        g -= node.grad[base + 2 * b + 1] * omega[b] * std::sin(v * omega[b]);
                    }
                    pa->grad[static_cast<size_t>(i) * c + j] += g;
                }
        }));
}

Tensor Mlp::forward(const Tensor& x) const {
    Tensor h = x;
    for (const auto& layer : layers) {
        h = linear(h, layer.W, layer.b.defined() ? &layer.b : nullptr);
        if (layer.act == Activation::Relu) h = relu(h);
    }
    return h;
}

}  // namespace dsct
