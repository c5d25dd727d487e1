#include "dsct/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "dsct/association.hpp"
#include "dsct/cue.hpp"
#include "dsct/geometric.hpp"
#include "dsct/model.hpp"
#include "dsct/temporal.hpp"

namespace dsct::gradcheck {

double check_gradients(std::vector<Tensor> inputs, const std::function<Tensor()>& forward,
                       bool corrupt_first) {
    for (auto& in : inputs) {
        in.set_requires_grad(true);
        in.zero_grad();
    }
    Tensor loss = forward();
    loss.backward();

    std::vector<std::vector<real>> analytic;
    analytic.reserve(inputs.size());
    for (auto& in : inputs)
        analytic.push_back(in.has_grad() ? in.grad() : std::vector<real>(in.numel(), real(0)));
    if (corrupt_first && !analytic.empty() && !analytic[0].empty())
        analytic[0][0] += real(1e-2);

    double worst = 0;
    for (size_t t = 0; t < inputs.size(); ++t) {
        auto& values = inputs[t].mutable_values();
        for (size_t i = 0; i < values.size(); ++i) {
            const real x0 = values[i];
            const real h = real(1e-5) * std::max(real(1), std::abs(x0));
            values[i] = x0 + h;
            const real fp = forward().item();
            values[i] = x0 - h;
            const real fm = forward().item();
            values[i] = x0;
            const double fd = (static_cast<double>(fp) - static_cast<double>(fm)) /
                              (2.0 * static_cast<double>(h));
            const double an = static_cast<double>(analytic[t][i]);
            const double err = std::abs(an - fd) /
                               std::max({std::abs(an), std::abs(fd), 1e-5});
            worst = std::max(worst, err);
        }
    }
    for (auto& in : inputs) in.zero_grad();
    return worst;
}

namespace {

struct Suite {
    std::mt19937_64 rng;
    bool corrupt;
    std::vector<CheckResult> results;

    Tensor rnd(Shape s, real stddev = real(0.5)) { return Tensor::randn(s, rng, stddev); }

    // Fixed random readout makes any output tensor a scalar loss.
    Tensor readout(const Tensor& y) { return sum(mul(y, rnd(y.shape(), real(0.7)))); }

    void run(const std::string& name, int instances,
             const std::function<double(bool)>& one_instance) {
        CheckResult r;
        r.name = name;
        r.instances = instances;
        for (int i = 0; i < instances; ++i) {
            const bool corrupt_this = corrupt && i == 0;
            r.max_err = std::max(r.max_err, one_instance(corrupt_this));
        }
        r.pass = r.max_err < kGradCheckTolerance;
        results.push_back(std::move(r));
    }
};

FfnBlock random_ffn(Suite& s, int d, std::vector<Tensor>& inputs) {
    FfnBlock f;
    f.ln_gain = s.rnd({d}, real(0.2));
    {
        auto& v = f.ln_gain.mutable_values();
        for (auto& x : v) x += real(1);
    }
    f.ln_bias = s.rnd({d}, real(0.2));
    f.W1 = s.rnd({d, 2 * d});
    f.b1 = s.rnd({2 * d}, real(0.1));
    f.W2 = s.rnd({2 * d, d});
    f.b2 = s.rnd({d}, real(0.1));
    for (Tensor t : {f.ln_gain, f.ln_bias, f.W1, f.b1, f.W2, f.b2}) inputs.push_back(t);
    return f;
}

}  // namespace

std::vector<CheckResult> run_suite(std::uint64_t seed, bool corrupt) {
    Suite s{std::mt19937_64(seed), corrupt, {}};

    s.run("linear", 20, [&](bool bad) {
        Tensor x = s.rnd({2, 3}), W = s.rnd({3, 4}), b = s.rnd({4});
        Tensor r = s.rnd({2, 4});
        return check_gradients({x, W, b},
                               [&] { return sum(mul(linear(x, W, &b), r)); }, bad);
    });

    s.run("mlp", 20, [&](bool bad) {
        Mlp m;
        Tensor W0 = s.rnd({3, 5}), b0 = s.rnd({5}), W1 = s.rnd({5, 2}), b1 = s.rnd({2});
        m.layers.push_back({W0, b0, Activation::Relu});
        m.layers.push_back({W1, b1, Activation::None});
        Tensor x = s.rnd({4, 3});
        Tensor r = s.rnd({4, 2});
        return check_gradients({x, W0, b0, W1, b1},
                               [&] { return sum(mul(m.forward(x), r)); }, bad);
    });

    s.run("layer_norm", 20, [&](bool bad) {
        Tensor x = s.rnd({3, 5}, real(1.0)), g = s.rnd({5}), b = s.rnd({5});
        Tensor r = s.rnd({3, 5});
        return check_gradients({x, g, b},
                               [&] { return sum(mul(layer_norm(x, g, b), r)); }, bad);
    });

    s.run("softmax", 20, [&](bool bad) {
        Tensor x = s.rnd({3, 4}, real(1.5));
        Tensor r = s.rnd({3, 4});
        return check_gradients({x}, [&] { return sum(mul(softmax(x, -1), r)); }, bad);
    });

    s.run("sinusoidal_encoding", 20, [&](bool bad) {
        Tensor x = s.rnd({2, 3}, real(1.0));
        Tensor r = s.rnd({2, 3 * 2 * 4});
        return check_gradients({x},
                               [&] { return sum(mul(sinusoidal_encoding(x, 4), r)); }, bad);
    });

    s.run("attention", 20, [&](bool bad) {
        Tensor Q = s.rnd({3, 4}), K = s.rnd({5, 4}), V = s.rnd({5, 4});
        Tensor bias = s.rnd({3, 5});
        Mask mask(3, 5);
        std::uniform_real_distribution<double> u(0, 1);
        for (int i = 0; i < 3; ++i) {
            for (int j = 0; j < 5; ++j) mask.set(i, j, u(s.rng) < 0.7);
            mask.set(i, static_cast<int>(s.rng() % 5), true);  // keep rows legal
        }
        Tensor r1 = s.rnd({3, 4}), r2 = s.rnd({3, 5});
        return check_gradients({Q, K, V, bias}, [&] {
            auto res = attention(Q, K, V, &mask, &bias);
            return add(sum(mul(res.out, r1)), sum(mul(res.scores, r2)));
        }, bad);
    });

    s.run("gia", 20, [&](bool bad) {
        const int d = 6, k = 3;
        std::vector<Tensor> inputs;
        geo::GeometricTriplet trip;
        trip.f = s.rnd({1, d});
        trip.F = s.rnd({k, d});
        trip.R = s.rnd({k, d});
        trip.valid = {1, 1, 1};
        inputs.push_back(trip.f);
        inputs.push_back(trip.F);
        inputs.push_back(trip.R);
        GiaBlock blk;
        blk.Wq = s.rnd({d, d});
        blk.Wk = s.rnd({d, d});
        blk.Wv = s.rnd({d, d});
        blk.We = s.rnd({d, d});
        blk.Wg = s.rnd({d, d});
        blk.mix_W = s.rnd({2 * d, d});
        blk.mix_b = s.rnd({d}, real(0.1));
        for (Tensor t : {blk.Wq, blk.Wk, blk.Wv, blk.We, blk.Wg, blk.mix_W, blk.mix_b})
            inputs.push_back(t);
        blk.ffn = random_ffn(s, d, inputs);
        Tensor r = s.rnd({1, d});
        return check_gradients(inputs, [&] { return sum(mul(geo::gia(trip, blk), r)); }, bad);
    });

    s.run("temporal_encoder", 20, [&](bool bad) {
        const int d = 6, T = 4;
        std::vector<Tensor> inputs;
        Tensor Z = s.rnd({T, d});
        Tensor token = s.rnd({1, d});
        inputs.push_back(Z);
        inputs.push_back(token);
        TemporalLayer layer;
        layer.Wq = s.rnd({d, d});
        layer.Wk = s.rnd({d, d});
        layer.Wv = s.rnd({d, d});
        for (Tensor t : {layer.Wq, layer.Wk, layer.Wv}) inputs.push_back(t);
        layer.ffn = random_ffn(s, d, inputs);
        Tensor r1 = s.rnd({1, d}), r2 = s.rnd({T, d});
        return check_gradients(inputs, [&] {
            auto res = temporal::temporal_encode(Z, token, layer);
            return add(sum(mul(res.z_hat, r1)), sum(mul(res.Z_hat, r2)));
        }, bad);
    });

    s.run("cue_cross_attention", 20, [&](bool bad) {
        const int d = 6, M = 3, N = 4;
        std::vector<Tensor> inputs;
        Tensor Zm = s.rnd({M, d}), Zb = s.rnd({N, d});
        inputs.push_back(Zm);
        inputs.push_back(Zb);
        Tensor Em = softmax(s.rnd({M, M}, real(1)), -1);  // cached scores, constants
        Tensor Eb = softmax(s.rnd({N, N}, real(1)), -1);
        CueIteration iter;
        auto mk_dir = [&](CrossDirection& dir) {
            dir.Wq = s.rnd({d, d});
            dir.Wk = s.rnd({d, d});
            dir.Wv = s.rnd({d, d});
            for (Tensor t : {dir.Wq, dir.Wk, dir.Wv}) inputs.push_back(t);
            dir.ffn = random_ffn(s, d, inputs);
        };
        mk_dir(iter.det_side);
        mk_dir(iter.trk_side);
        Mask allowed(M, N);
        std::uniform_real_distribution<double> u(0, 1);
        for (auto& a : allowed.allowed) a = u(s.rng) < 0.75 ? 1 : 0;
        Tensor r1 = s.rnd({M, d}), r2 = s.rnd({N, d});
        return check_gradients(inputs, [&] {
            auto res = cue::cue_cross_attention(Zm, Em, Zb, Eb, allowed, iter, 2,
                                                CrossMode::Cue);
            return add(sum(mul(res.Y_m, r1)), sum(mul(res.Y_B, r2)));
        }, bad);
    });

    s.run("affinity", 20, [&](bool bad) {
        const int d = 5, M = 3, N = 4;
        Tensor Ym = s.rnd({M, d}), Yb = s.rnd({N, d});
        Mlp head;
        Tensor W0 = s.rnd({d, d}), b0 = s.rnd({d}), W1 = s.rnd({d, 1}), b1 = s.rnd({1});
        head.layers.push_back({W0, b0, Activation::Relu});
        head.layers.push_back({W1, b1, Activation::None});
        Mask mask(M, N);
        Tensor r = s.rnd({M, N});
        return check_gradients({Ym, Yb, W0, b0, W1, b1}, [&] {
            return sum(mul(assoc::affinity(Ym, Yb, head, mask).A, r));
        }, bad);
    });

    s.run("focal_loss", 20, [&](bool bad) {
        const int M = 3, N = 4;
        Tensor X = s.rnd({M, N}, real(1.2));
        std::vector<std::uint8_t> gt(M * N);
        Mask mask(M, N);
        std::uniform_real_distribution<double> u(0, 1);
        for (auto& g : gt) g = u(s.rng) < 0.3 ? 1 : 0;
        for (auto& a : mask.allowed) a = u(s.rng) < 0.8 ? 1 : 0;
        const real gamma = u(s.rng) < 0.5 ? real(1) : real(2);
        return check_gradients({X}, [&] {
            return assoc::focal_loss(sigmoid(X), gt, mask, gamma);
        }, bad);
    });

    s.run("smooth_l1_loss", 20, [&](bool bad) {
        const int M = 4;
        Tensor pred = s.rnd({M, 2}, real(1.5));
        std::vector<std::optional<std::array<double, 2>>> targets(M);
        std::uniform_real_distribution<double> u(-2, 2);
        for (int i = 0; i < M - 1; ++i)
            targets[i] = std::array<double, 2>{u(s.rng), u(s.rng)};
        return check_gradients({pred}, [&] { return assoc::position_loss(pred, targets); },
                               bad);
    });

    return s.results;
}

bool all_pass(const std::vector<CheckResult>& results) {
    for (const auto& r : results)
        if (!r.pass) return false;
    return !results.empty();
}

}  // namespace dsct::gradcheck
