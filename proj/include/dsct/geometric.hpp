#pragma once

#include <functional>
#include <vector>

#include "dsct/model.hpp"
#include "dsct/scene.hpp"
#include "dsct/tensor.hpp"

namespace dsct::geo {

// Point Pair Feature: distance plus three unsigned angles in [0, pi].
// Invariant under rigid BEV transforms applied to both objects.
struct PPFVector {
    double dist = 0;  // full 3-D displacement norm
    double a1 = 0;    // angle(n_ref, d_bev)
    double a2 = 0;    // angle(n_nb, d_bev)
    double a3 = 0;    // angle(n_nb, n_ref)
};

PPFVector ppf(const scene::DetectionNode& ref, const scene::DetectionNode& nb);
// States use the encode_state layout: position at [0..2], heading at [3].
PPFVector ppf_from_states(const std::vector<double>& ref, const std::vector<double>& nb);

struct GeometricTriplet {
    Tensor f;                         // [1, d] reference embedding
    Tensor F;                         // [k', d] neighbor embeddings
    Tensor R;                         // [k', d] relative-geometry embeddings
    std::vector<std::uint8_t> valid;  // padding mask, k' entries

    bool any_valid() const {
        for (auto v : valid)
            if (v) return true;
        return false;
    }
};

// Raw PPF rows for a reference against each neighbor, [k, 4].
Tensor ppf_rows(const std::vector<double>& ref_state,
                const std::vector<std::vector<double>>& neighbor_states);

// f = state_mlp(ref), F = state_mlp(neighbors), R = geo_mlp(sin_enc(PPF rows)).
// Zero neighbors produce a single invalid all-zero padding row.
GeometricTriplet build_triplet(const std::vector<double>& ref_state,
                               const std::vector<std::vector<double>>& neighbor_states,
                               const GeoStage& stage, int bands);

// Same but with the reference embedding supplied by a previous refinement
// iteration instead of the state MLP.
GeometricTriplet build_triplet_refined(const Tensor& f_prev,
                                       const std::vector<double>& ref_state,
                                       const std::vector<std::vector<double>>& neighbor_states,
                                       const GeoStage& stage, int bands);

// Geometric Inject Attention: geometry biases the scores and rides along the
// values; residual + LN + FFN on top. Returns [1, d].
Tensor gia(const GeometricTriplet& triplet, const GiaBlock& block);

// Looks up a neighbor track's state at a frame; null when absent.
using NeighborLookup =
    std::function<const std::vector<double>*(int track_id, int frame_index)>;

// Frame-by-frame GIA over the track's memory, refined through the model's
// geometric+temporal stages (the final temporal stage, which carries the
// track token, is applied by the temporal encoder). Returns [T', d].
Tensor encode_track_history(const scene::Track& track, const NeighborLookup& lookup,
                            const Model& model);

// Per-detection GIA with all other detections as neighbors, [N, d].
Tensor encode_detections(const scene::Frame& frame, const Model& model);

}  // namespace dsct::geo
