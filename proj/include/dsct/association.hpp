#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "dsct/cue.hpp"
#include "dsct/model.hpp"
#include "dsct/optim.hpp"
#include "dsct/scene.hpp"
#include "dsct/tensor.hpp"

namespace dsct::assoc {

enum class AssignMode { Greedy, Hungarian };

struct TrainConfig {
    int epochs = 16;
    int mini_seq_len = 10;  // T
    real lr = real(2e-4);
    real cosine_power = real(0.8);
    real lambda_p = real(0.5);
    real focal_alpha = real(-1);  // negative disables class balancing
    real focal_gamma = real(1);
    real match_threshold = real(0.5);
    int max_misses = 2;
    real birth_score_min = real(0.3);
    std::uint64_t seed = 1;
    AssignMode assignment = AssignMode::Greedy;
    ModelConfig model;
};

struct AffinityMatrix {
    Tensor A;   // [M, N], sigmoid outputs in (0,1)
    Mask mask;  // class/distance pruning
};

// Tiled element-wise differences, row-major over (i, j): [M*N, d].
Tensor pairwise_difference(const Tensor& Y_m, const Tensor& Y_B);

// A = sigmoid(MLP(Y_m[i] - Y_B[j])).
AffinityMatrix affinity(const Tensor& Y_m, const Tensor& Y_B, const Mlp& head,
                        const Mask& mask);

struct Match {
    int track, det;
    real score;
};

struct Assignment {
    std::vector<Match> matches;
    std::vector<int> unmatched_tracks;
    std::vector<int> unmatched_dets;
};

// Greedy by descending affinity (ties by track then det index), or an optimal
// Hungarian solve; both honor the mask and the match threshold.
Assignment assign(const AffinityMatrix& aff, real match_threshold,
                  AssignMode mode = AssignMode::Greedy);

// Maximum-weight bipartite matching over weights >= 0 (0 = forbidden).
// Exposed for the assignment oracle tests.
std::vector<int> max_weight_assignment(const std::vector<std::vector<double>>& weight);

// Lifecycle: matched tracks absorb their detection and refresh neighbor ids
// from the detection's cue; unmatched tracks age out; strong unmatched
// detections are born. Emits (track_id, det_index) pairs for this frame.
struct UpdateOutcome {
    std::vector<std::pair<int, int>> emitted;  // (track_id, detection index)
};
UpdateOutcome update_tracks(std::vector<scene::Track>& tracks, const Assignment& assignment,
                            const scene::Frame& frame,
                            const std::vector<cue::CueSet>& det_cues,
                            const TrainConfig& cfg, int& next_track_id);

// Focal loss over mask-allowed entries; gamma = 0 reduces to BCE exactly.
Tensor focal_loss(const Tensor& A, const std::vector<std::uint8_t>& gt, const Mask& mask,
                  real gamma, real alpha = real(-1));

// Smooth-L1 (delta=1) summed over coordinates, averaged over supervised rows.
Tensor position_loss(const Tensor& pred,
                     const std::vector<std::optional<std::array<double, 2>>>& targets);

Tensor total_loss(const Tensor& loss_assoc, const Tensor& loss_pos, real lambda_p);

// ---- online tracking -------------------------------------------------------

struct TrackerState {
    std::vector<scene::Track> tracks;
    int next_id = 0;
};

struct FrameForward {
    Tensor Z_hat_m;   // [M, d] track embeddings
    Tensor predicted; // [M, 2] predicted BEV positions
    Mask allowed;     // [M, N]
    AffinityMatrix aff;
    std::vector<cue::CueSet> det_cues;
};

FrameForward forward_frame(const Model& model, const std::vector<scene::Track>& tracks,
                           const scene::Frame& frame,
                           const std::vector<double>& thresholds);

// One online step: forward, assign, update. Returns the frame's emissions.
UpdateOutcome step_frame(const Model& model, TrackerState& state, const scene::Frame& frame,
                         const TrainConfig& cfg, const std::vector<double>& thresholds);

std::vector<scene::TrackRecord> track_sequence(const Model& model,
                                               const std::vector<scene::Frame>& frames,
                                               const TrainConfig& cfg,
                                               const std::vector<double>& thresholds);

// ---- training ---------------------------------------------------------------

struct SequenceSample {
    scene::GroundTruthSequence truth;
    std::vector<scene::Frame> detections;
};

struct LossLogRow {
    int epoch;
    long long step;
    real lr;
    real loss_assoc, loss_pos, loss_total;
};

struct TrainResult {
    std::vector<LossLogRow> log;
    int epochs_done = 0;
};

// Teacher-forced training: per mini-sequence, roll frame-by-frame against
// ground-truth identities; gradients flow through each frame's graph while
// memory-bank contents stay constant. Deterministic given cfg.seed.
TrainResult train(Model& model, const std::vector<SequenceSample>& data,
                  const TrainConfig& cfg, const std::vector<double>& thresholds,
                  AdamW& optimizer, int start_epoch = 0);

}  // namespace dsct::assoc
