#pragma once

#include <vector>

#include "dsct/model.hpp"
#include "dsct/scene.hpp"
#include "dsct/tensor.hpp"

namespace dsct::cue {

struct SelfInfoResult {
    Tensor Z_tilde;  // [n, d] enhanced features
    Tensor E;        // [n, n] cached post-softmax attention scores
};

// Vanilla self-attention (+ residual, LN, FFN); the score matrix is cached
// for cue extraction. n = 0 yields empty outputs.
SelfInfoResult self_info_encode(const Tensor& Z, const SelfInfoLayer& layer);

// Indices of the top-k peers of row i in E, descending score, ties resolved
// to the lower index. Shorter rows return all entries.
struct CueSet {
    std::vector<int> source_indices;
};
CueSet extract_cue(const Tensor& E, int i, int k);
std::vector<CueSet> extract_cues(const Tensor& E, int k);
Tensor cue_features(const Tensor& Z_tilde, const CueSet& cue);  // gathered rows

// Rank-paired cue similarity: sum_l (C_a[l] Wq)(C_b[l] Wk)^T / sqrt(d) over
// the shorter cue length. Scalar tensor.
Tensor consistency_score(const Tensor& C_a, const Tensor& C_b,
                         const Tensor& Wq, const Tensor& Wk);

// BEV position prediction head over track embeddings, [M, 2].
Tensor predict_positions(const Tensor& Z_hat_m, const Mlp& pos_head);

// allowed[i][j] = same class AND BEV distance(prediction_i, det_j) <= class
// threshold. predicted [M, 2].
Mask build_interaction_mask(const std::vector<const scene::Track*>& tracks,
                            const scene::Frame& frame, const Tensor& predicted,
                            const std::vector<double>& thresholds);

struct CrossResult {
    Tensor Y_m;  // [M, d]
    Tensor Y_B;  // [N, d]
};

// One cue-consistent cross-attention exchange (both directions). Rows with
// no allowed partners pass through residual + FFN untouched.
CrossResult cue_cross_attention(const Tensor& Zt_m, const Tensor& E_m,
                                const Tensor& Zt_B, const Tensor& E_B, const Mask& allowed,
                                const CueIteration& iter, int k_cue, CrossMode mode);

struct ModuleResult {
    Tensor Y_m;                     // [M, d] final track features
    Tensor Y_B;                     // [N, d] final detection features
    std::vector<CueSet> det_cues;   // last-iteration detection cues (neighbor update)
};

// Full module: (self-info -> cues -> cross-attention) iterated g times with
// untied parameters; the cached score matrices are recomputed each iteration.
ModuleResult run(const Tensor& Z_m, const Tensor& Z_B, const Mask& allowed,
                 const Model& model);

}  // namespace dsct::cue
