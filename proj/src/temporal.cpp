#include "dsct/temporal.hpp"

#include <cmath>

namespace dsct::temporal {

namespace {

// Constant sinusoidal encodings of the history indices 0..T'-1, [T', d].
Tensor index_encodings(int T, int d) {
    std::vector<real> idx(T);
    for (int t = 0; t < T; ++t) idx[t] = static_cast<real>(t);
    return sinusoidal_encoding(Tensor::from(std::move(idx), {T, 1}), d / 2);
}

Tensor block_forward(const Tensor& seq, const Mask& mask, const TemporalLayer& layer) {
    Tensor Q = matmul(seq, layer.Wq);
    Tensor K = matmul(seq, layer.Wk);
    Tensor V = matmul(seq, layer.Wv);
    auto attn = attention(Q, K, V, &mask);
    return layer.ffn.forward(add(seq, attn.out));
}

}  // namespace

TemporalResult temporal_encode(const Tensor& Z, const Tensor& token,
                               const TemporalLayer& layer) {
    if (Z.rows() < 1) throw ContractError("temporal_encode: empty history");
    const int T = Z.rows();
    const int d = Z.cols();
    Tensor Z_pe = add(Z, index_encodings(T, d));
    Tensor seq = concat_rows({Z_pe, token});  // token last, sees the whole history
    Tensor out = block_forward(seq, Mask::causal(T + 1), layer);
    return {slice_rows(out, T, T + 1), slice_rows(out, 0, T)};
}

Tensor history_update(const Tensor& Z, const TemporalLayer& layer) {
    const int T = Z.rows();
    Tensor Z_pe = add(Z, index_encodings(T, Z.cols()));
    return block_forward(Z_pe, Mask::causal(T), layer);
}

Tensor encode_all_tracks(const std::vector<const scene::Track*>& tracks,
                         const geo::NeighborLookup& lookup, const Model& model) {
    const int d = model.cfg.d_model;
    if (tracks.empty()) return Tensor::zeros({0, d});
    std::vector<Tensor> rows;
    rows.reserve(tracks.size());
    const TemporalLayer& final_layer = model.temporal.back();
    for (const auto* track : tracks) {
        Tensor history = geo::encode_track_history(*track, lookup, model);
        rows.push_back(temporal_encode(history, model.track_token, final_layer).z_hat);
    }
    return concat_rows(rows);
}

}  // namespace dsct::temporal
