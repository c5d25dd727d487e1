#pragma once

// Dense tensors with reverse-mode gradients. The op set is exactly what the
// tracker's attention pipeline needs; there is no general broadcasting.
// Reduction order is fixed (row-major sequential) so repeated runs are
// bit-identical.

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "dsct/errors.hpp"

namespace dsct {

#ifdef DSCT_SCALAR_FLOAT
using real = float;
#else
using real = double;
#endif

using Shape = std::vector<int>;

namespace detail {
struct Node {
    Shape shape;
    std::vector<real> value;
    std::vector<real> grad;  // sized lazily on first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    // Reads this node's grad, accumulates into parents' grads.
    std::function<void(Node&)> backprop;

    long long numel() const { return static_cast<long long>(value.size()); }
    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), real(0));
    }
};
}  // namespace detail

std::string shape_str(const Shape& s);

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, real v);
    static Tensor scalar(real v) { return full({1}, v); }
    static Tensor from(std::vector<real> values, Shape shape);
    static Tensor row(std::vector<real> values);  // shape [1, n]
    static Tensor randn(Shape shape, std::mt19937_64& rng, real stddev = real(1));
    static Tensor uniform(Shape shape, std::mt19937_64& rng, real lo, real hi);

    bool defined() const { return static_cast<bool>(n_); }
    const Shape& shape() const;
    int ndim() const { return static_cast<int>(shape().size()); }
    long long numel() const;
    int rows() const;  // 2-D
    int cols() const;  // 2-D

    real item() const;  // numel()==1
    real at(int i) const;
    real at(int i, int j) const;
    const std::vector<real>& values() const;
    // In-place edits (optimizer use); never call while a graph referencing
    // this tensor is still pending a backward pass.
    std::vector<real>& mutable_values();

    bool requires_grad() const;
    Tensor& set_requires_grad(bool rg);
    bool has_grad() const;
    const std::vector<real>& grad() const;
    std::vector<real>& mutable_grad();
    void zero_grad();

    // Reverse pass from a scalar. Grads accumulate across repeated calls
    // until zero_grad() is used.
    void backward() const;

    std::shared_ptr<detail::Node> node() const { return n_; }
    explicit Tensor(std::shared_ptr<detail::Node> n) : n_(std::move(n)) {}

private:
    std::shared_ptr<detail::Node> n_;
};

// Boolean mask, true = permitted.
struct Mask {
    int rows = 0, cols = 0;
    std::vector<std::uint8_t> allowed;

    Mask() = default;
    Mask(int r, int c, bool value = true)
        : rows(r), cols(c), allowed(static_cast<size_t>(r) * c, value ? 1 : 0) {}
    bool at(int i, int j) const { return allowed[static_cast<size_t>(i) * cols + j] != 0; }
    void set(int i, int j, bool v) { allowed[static_cast<size_t>(i) * cols + j] = v ? 1 : 0; }
    static Mask causal(int n);  // position i may attend to j <= i
};

// Masked logits are set to this instead of -inf to keep gradients NaN-free.
inline constexpr real kMaskFill = real(-1e30);

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor affine(const Tensor& a, real alpha, real beta);  // alpha*a + beta
inline Tensor neg(const Tensor& a) { return affine(a, real(-1), real(0)); }
inline Tensor scale(const Tensor& a, real c) { return affine(a, c, real(0)); }
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor log_elem(const Tensor& a);
Tensor pow_elem(const Tensor& a, real exponent);  // a must be positive
Tensor clamp(const Tensor& a, real lo, real hi);
Tensor smooth_l1(const Tensor& a);  // delta = 1

// ---- linear algebra (2-D) ----
Tensor matmul(const Tensor& a, const Tensor& b);     // [n,k] x [k,m]
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // [n,k] x [m,k]^T -> [n,m]
Tensor linear(const Tensor& x, const Tensor& W, const Tensor* b = nullptr);
Tensor add_rowvec(const Tensor& m, const Tensor& v);  // [n,d] + [d]/[1,d] per row

// ---- reductions / structure ----
Tensor sum(const Tensor& a);   // -> [1]
Tensor mean(const Tensor& a);  // -> [1]
Tensor reshape(const Tensor& a, Shape shape);
Tensor concat_rows(const std::vector<Tensor>& parts);  // stack [*,d] row blocks
Tensor concat_cols(const Tensor& a, const Tensor& b);  // [n,p]+[n,q] -> [n,p+q]
Tensor slice_rows(const Tensor& a, int r0, int r1);
Tensor gather_rows(const Tensor& a, const std::vector<int>& indices);

// ---- normalization / attention ----
// axis -1 means last axis. Slices along the axis sum to 1.
Tensor softmax(const Tensor& a, int axis = -1);
// Per-row standardization over the last axis, epsilon inside the sqrt.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  real eps = real(1e-5));
// Replaces entries where mask is false with `fill`; grad flows only through
// permitted entries.
Tensor mask_fill(const Tensor& a, const Mask& mask, real fill = kMaskFill);

struct AttentionResult {
    Tensor out;     // [m, d]
    Tensor scores;  // [m, n], post-softmax (cached by callers)
};
// scores = softmax((Q K^T + bias) / sqrt(d)) with masked entries filled
// before the softmax; out = scores V. Every mask row must permit >= 1 entry.
AttentionResult attention(const Tensor& Q, const Tensor& K, const Tensor& V,
                          const Mask* mask = nullptr, const Tensor* bias = nullptr);

// Per scalar channel v emits [sin(v*w_b), cos(v*w_b)] for
// w_b = 10000^(-b/bands); output [n, c*2*bands].
Tensor sinusoidal_encoding(const Tensor& x, int bands);

// ---- small layer bundles ----
enum class Activation { None, Relu };

struct Mlp {
    struct Layer {
        Tensor W, b;
        Activation act = Activation::None;
    };
    std::vector<Layer> layers;
    Tensor forward(const Tensor& x) const;
};

}  // namespace dsct
