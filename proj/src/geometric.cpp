#include "dsct/geometric.hpp"

#include <algorithm>
#include <cmath>

#include "dsct/temporal.hpp"

namespace dsct::geo {

namespace {

// Unsigned angle between 2-D vectors via clamped arccos; 0 for degenerate input.
double angle_between(double ax, double ay, double bx, double by) {
    const double na = std::hypot(ax, ay);
    const double nb = std::hypot(bx, by);
    if (na < 1e-9 || nb < 1e-9) return 0.0;
    double c = (ax * bx + ay * by) / (na * nb);
    c = std::clamp(c, -1.0, 1.0);
    return std::acos(c);
}

PPFVector ppf_impl(const std::array<double, 3>& p_ref, double theta_ref,
                   const std::array<double, 3>& p_nb, double theta_nb) {
    const double dx = p_nb[0] - p_ref[0];
    const double dy = p_nb[1] - p_ref[1];
    const double dz = p_nb[2] - p_ref[2];
    PPFVector e;
    e.dist = std::sqrt(dx * dx + dy * dy + dz * dz);
    const double nrx = std::cos(theta_ref), nry = std::sin(theta_ref);
    const double nnx = std::cos(theta_nb), nny = std::sin(theta_nb);
    e.a1 = angle_between(nrx, nry, dx, dy);
    e.a2 = angle_between(nnx, nny, dx, dy);
    e.a3 = angle_between(nnx, nny, nrx, nry);
    return e;
}

}  // namespace

PPFVector ppf(const scene::DetectionNode& ref, const scene::DetectionNode& nb) {
    return ppf_impl(ref.p, ref.theta, nb.p, nb.theta);
}

PPFVector ppf_from_states(const std::vector<double>& ref, const std::vector<double>& nb) {
    return ppf_impl({ref[0], ref[1], ref[2]}, ref[3], {nb[0], nb[1], nb[2]}, nb[3]);
}

Tensor ppf_rows(const std::vector<double>& ref_state,
                const std::vector<std::vector<double>>& neighbor_states) {
    std::vector<real> rows;
    rows.reserve(neighbor_states.size() * 4);
    for (const auto& nb : neighbor_states) {
        const PPFVector e = ppf_from_states(ref_state, nb);
        rows.push_back(static_cast<real>(e.dist));
        rows.push_back(static_cast<real>(e.a1));
        rows.push_back(static_cast<real>(e.a2));
        rows.push_back(static_cast<real>(e.a3));
    }
    return Tensor::from(std::move(rows), {static_cast<int>(neighbor_states.size()), 4});
}

namespace {

GeometricTriplet assemble_triplet(Tensor f, const std::vector<double>& ref_state,
                                  const std::vector<std::vector<double>>& neighbor_states,
                                  const GeoStage& stage, int bands) {
    GeometricTriplet t;
    t.f = std::move(f);
    const int d = t.f.cols();
    if (neighbor_states.empty()) {
        t.F = Tensor::zeros({1, d});
        t.R = Tensor::zeros({1, d});
        t.valid = {0};
        return t;
    }
    std::vector<real> flat;
    const int sd = static_cast<int>(neighbor_states[0].size());
    flat.reserve(neighbor_states.size() * sd);
    for (const auto& nb : neighbor_states)
        for (double x : nb) flat.push_back(static_cast<real>(x));
    Tensor nb_states = Tensor::from(std::move(flat),
                                    {static_cast<int>(neighbor_states.size()), sd});
    t.F = stage.state_mlp.forward(nb_states);
    t.R = stage.geo_mlp.forward(sinusoidal_encoding(ppf_rows(ref_state, neighbor_states), bands));
    t.valid.assign(neighbor_states.size(), 1);
    return t;
}

}  // namespace

GeometricTriplet build_triplet(const std::vector<double>& ref_state,
                               const std::vector<std::vector<double>>& neighbor_states,
                               const GeoStage& stage, int bands) {
    std::vector<real> rv(ref_state.begin(), ref_state.end());
    Tensor ref = Tensor::from(std::move(rv), {1, static_cast<int>(ref_state.size())});
    return assemble_triplet(stage.state_mlp.forward(ref), ref_state, neighbor_states,
                            stage, bands);
}

GeometricTriplet build_triplet_refined(const Tensor& f_prev,
                                       const std::vector<double>& ref_state,
                                       const std::vector<std::vector<double>>& neighbor_states,
                                       const GeoStage& stage, int bands) {
    return assemble_triplet(f_prev, ref_state, neighbor_states, stage, bands);
}

Tensor gia(const GeometricTriplet& triplet, const GiaBlock& block) {
    Tensor z_res;
    if (!triplet.any_valid()) {
        z_res = triplet.f;  // no neighborhood: residual path only
    } else {
        Tensor q = matmul(triplet.f, block.Wq);
        Tensor K = matmul(triplet.F, block.Wk);
        Tensor V = matmul(triplet.F, block.Wv);
        Tensor E = matmul(triplet.R, block.We);
        Tensor G = matmul(triplet.R, block.Wg);
        Tensor bias = matmul_nt(q, E);  // geometric score injection
        Mask mask(1, static_cast<int>(triplet.valid.size()));
        for (size_t j = 0; j < triplet.valid.size(); ++j)
            mask.set(0, static_cast<int>(j), triplet.valid[j] != 0);
        auto attn = attention(q, K, V, &mask, &bias);
        Tensor aG = matmul(attn.scores, G);
        Tensor mixed = linear(concat_cols(attn.out, aG), block.mix_W, &block.mix_b);
        z_res = add(triplet.f, mixed);
    }
    return block.ffn.forward(z_res);
}

Tensor encode_track_history(const scene::Track& track, const NeighborLookup& lookup,
                            const Model& model) {
    const auto& mem = track.memory();
    if (mem.empty()) throw ContractError("encode_track_history: track memory is empty");
    const int T = static_cast<int>(mem.size());
    const int bands = model.cfg.bands;

    // Neighbor states per historical frame (missing neighbors drop out).
    std::vector<std::vector<std::vector<double>>> nb_states(T);
    for (int t = 0; t < T; ++t)
        for (int nb_id : track.neighbor_ids())
            if (const auto* s = lookup(nb_id, mem[t].frame_index)) nb_states[t].push_back(*s);

    std::vector<Tensor> rows(T);
    Tensor prev;  // [T, d] after each refinement iteration
    for (int l = 0; l < model.cfg.L; ++l) {
        const GeoStage& stage = model.geo[l];
        for (int t = 0; t < T; ++t) {
            GeometricTriplet triplet =
                l == 0 ? build_triplet(mem[t].state, nb_states[t], stage, bands)
                       : build_triplet_refined(slice_rows(prev, t, t + 1), mem[t].state,
                                               nb_states[t], stage, bands);
            rows[t] = gia(triplet, stage.gia);
        }
        prev = concat_rows(rows);
        if (l + 1 < model.cfg.L)
            prev = temporal::history_update(prev, model.temporal[l]);
    }
    return prev;
}

Tensor encode_detections(const scene::Frame& frame, const Model& model) {
    const int N = static_cast<int>(frame.detections.size());
    if (N < 1) throw ContractError("encode_detections: frame has no detections");
    const GeoStage& stage = model.geo[0];

    std::vector<std::vector<double>> states(N);
    for (int i = 0; i < N; ++i) states[i] = scene::encode_state(frame.detections[i]);

    std::vector<Tensor> rows(N);
    for (int i = 0; i < N; ++i) {
        std::vector<std::vector<double>> others;
        others.reserve(N - 1);
        for (int j = 0; j < N; ++j)
            if (j != i) others.push_back(states[j]);
        rows[i] = gia(build_triplet(states[i], others, stage, model.cfg.bands), stage.gia);
    }
    return concat_rows(rows);
}

}  // namespace dsct::geo
