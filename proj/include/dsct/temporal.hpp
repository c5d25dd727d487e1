#pragma once

#include <vector>

#include "dsct/geometric.hpp"
#include "dsct/model.hpp"
#include "dsct/tensor.hpp"

namespace dsct::temporal {

struct TemporalResult {
    Tensor z_hat;  // [1, d] updated track token
    Tensor Z_hat;  // [T', d] updated history rows
};

// Masked self-attention over [history; token] with the token at the last
// position so the causal mask lets it see the full history. Sinusoidal index
// encodings are added to the history rows first.
TemporalResult temporal_encode(const Tensor& Z, const Tensor& token,
                               const TemporalLayer& layer);

// History-only causal update used between geometric refinement iterations.
// Equals the Z_hat of temporal_encode (history rows never attend the token).
Tensor history_update(const Tensor& Z, const TemporalLayer& layer);

// Row m = temporal_encode(encode_track_history(track m)).z_hat; [M, d].
Tensor encode_all_tracks(const std::vector<const scene::Track*>& tracks,
                         const geo::NeighborLookup& lookup, const Model& model);

}  // namespace dsct::temporal
