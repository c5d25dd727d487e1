#pragma once

#include <map>
#include <string>
#include <vector>

#include "dsct/scene.hpp"

namespace dsct::eval {

struct GtObject {
    int id;
    double x, y;
};

struct PredObject {
    int track_id;
    double x, y;
    double score;
};

struct FrameData {
    int index = 0;
    std::vector<GtObject> gt;
    std::vector<PredObject> pred;
};

// CLEAR-MOT per-frame and per-sequence counts.
struct MotTally {
    long long gt = 0;
    long long matches = 0;
    long long fp = 0;
    long long fn = 0;
    long long ids = 0;
    double dist_sum = 0;  // over matches

    double mean_dist() const { return matches > 0 ? dist_sum / matches : 0.0; }
};

struct Correspondence {
    std::vector<std::pair<int, int>> pairs;  // (gt index, pred index)
};

// Greedy nearest-center BEV matching inside `radius`, each side used once,
// preferring continuation of the previous frame's correspondence.
Correspondence match_frame(const std::vector<GtObject>& gt,
                           const std::vector<PredObject>& pred,
                           const std::map<int, int>& prev_gt_to_track, double radius);

MotTally evaluate_clear(const std::vector<FrameData>& frames, double radius = 2.0);

// MOTA = 1 - (FN + FP + IDS) / GT
double mota(const MotTally& tally);

struct AmotaResult {
    double amota = 0;
    double amotp = 0;
    int achieved_targets = 0;
};

// Recall sweep over prediction-score thresholds; per achieved recall target
// MOTAR = max(0, 1 - (IDS + FP + FN - (1-r) GT) / (r GT)); targets below the
// recall floor are excluded. Errors on zero ground truth.
AmotaResult amota_amotp(const std::vector<FrameData>& frames, double radius = 2.0,
                        int n_recall = 40, double recall_floor = 0.1);

// Adapters from the JSON-lines records.
std::vector<FrameData> build_frames(const scene::GroundTruthSequence& truth,
                                    const std::vector<scene::TrackRecord>& records);
std::vector<FrameData> build_frames_from_files(const std::string& gt_path,
                                               const std::string& tracks_path);

struct MetricsReport {
    double amota, amotp, mota_value;
    long long ids, fp, fn, gt, matches;
    std::string to_json() const;
    std::string to_table() const;
};

MetricsReport compute_metrics(const std::vector<FrameData>& frames, double radius = 2.0);

}  // namespace dsct::eval
