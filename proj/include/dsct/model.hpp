#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dsct/optim.hpp"
#include "dsct/params.hpp"
#include "dsct/tensor.hpp"

namespace dsct {

enum class CrossMode { Cue, Vanilla };

struct ModelConfig {
    int n_classes = 7;
    int d_model = 64;       // hidden width (must be even for index encodings)
    int L = 2;              // geometric+temporal refinement iterations
    int g = 2;              // cue-consistency iterations
    int k_neighbors = 3;    // spatially dependent neighbors per track
    int k_cue = 3;          // peers per cue
    int t_max = 7;          // memory ring-buffer length
    int bands = 8;          // sinusoidal bands for geometry rows
    CrossMode cross_mode = CrossMode::Cue;

    int state_dim() const { return 10 + n_classes; }
    int ffn_hidden() const { return 2 * d_model; }
    void validate() const;
};

// Two-layer MLP with residual applied after layer normalization:
// out = u + W2 relu(W1 u + b1) + b2, u = LN(x).
struct FfnBlock {
    Tensor ln_gain, ln_bias;
    Tensor W1, b1, W2, b2;
    Tensor forward(const Tensor& x) const;
};

struct GiaBlock {
    Tensor Wq, Wk, Wv, We, Wg;
    Tensor mix_W, mix_b;  // concat(aV, aG) -> d
    FfnBlock ffn;
};

struct TemporalLayer {
    Tensor Wq, Wk, Wv;
    FfnBlock ffn;
};

struct GeoStage {
    Mlp state_mlp;  // shared contextual embedding, (10+C) -> d
    Mlp geo_mlp;    // sinusoidal PPF rows -> d
    GiaBlock gia;
};

struct SelfInfoLayer {
    Tensor Wq, Wk, Wv;
    FfnBlock ffn;
};

struct CrossDirection {
    Tensor Wq, Wk, Wv;  // Wq/Wk score the cue consistency, Wv carries values
    FfnBlock ffn;
};

struct CueIteration {
    SelfInfoLayer self_tracks;
    SelfInfoLayer self_dets;
    CrossDirection det_side;  // detections attend to tracks
    CrossDirection trk_side;  // tracks attend to detections
};

struct Model {
    ModelConfig cfg;
    ParameterStore params;

    std::vector<GeoStage> geo;            // size L
    std::vector<TemporalLayer> temporal;  // size L; the last one carries the token
    Tensor track_token;                   // [1, d]
    std::vector<CueIteration> cue;        // size g
    Mlp pos_head;       // d -> d -> 2 (BEV position prediction)
    Mlp affinity_head;  // d -> d -> 1, sigmoid applied by the caller

    static Model init(const ModelConfig& cfg, std::uint64_t seed);
};

// Versioned textual checkpoint: hyperparameters + flat name->values map,
// optionally with optimizer state and the trained-epoch counter.
struct Checkpoint {
    ModelConfig cfg;
    int trained_epochs = 0;
    bool has_optimizer = false;
    AdamW::State opt_state;
};

void save_checkpoint(const std::string& path, const Model& model, int trained_epochs,
                     const AdamW* optimizer = nullptr);
Checkpoint load_checkpoint(const std::string& path, Model& model_out);

}  // namespace dsct
