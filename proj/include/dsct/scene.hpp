#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <optional>
#include <string>
#include <vector>

#include "dsct/errors.hpp"
#include "dsct/tensor.hpp"

namespace dsct::scene {

// One detected object at a frame. The state vector layout is
// [p(3), theta(1), size(3), vel(2), class one-hot(C), score(1)] = 10 + C.
struct DetectionNode {
    std::array<double, 3> p{0, 0, 0};   // meters, global frame
    double theta = 0;                   // radians in [-pi, pi)
    std::array<double, 3> size{1, 1, 1};
    std::array<double, 2> vel{0, 0};    // m/s, BEV
    int class_index = 0;
    int n_classes = 7;
    double score = 1;
    int frame_index = 0;
    std::optional<int> gt_id;           // only ground truth carries identity

    int state_dim() const { return 10 + n_classes; }
};

std::vector<double> encode_state(const DetectionNode& d);
DetectionNode decode_state(const std::vector<double>& v, int n_classes, int frame_index = 0);

struct Frame {
    int index = 0;
    double timestamp = 0;
    std::vector<DetectionNode> detections;
};

struct GroundTruthSequence {
    std::vector<Frame> frames;  // every detection carries gt_id
};

// A live trajectory: ring-buffer memory of past states plus the ids of
// spatially dependent neighbor tracks.
class Track {
public:
    Track(int id, int class_index, int t_max, int k_neighbors)
        : id_(id), class_index_(class_index), t_max_(t_max), k_neighbors_(k_neighbors) {}

    int id() const { return id_; }
    int class_index() const { return class_index_; }
    int age = 0;     // frames since birth
    int misses = 0;  // consecutive unmatched frames

    struct Entry {
        int frame_index;
        std::vector<double> state;  // 10 + C
    };

    void push_state(int frame_index, std::vector<double> state);
    const std::deque<Entry>& memory() const { return mem_; }
    const std::vector<int>& neighbor_ids() const { return neighbors_; }
    // Rejects self, dedups, truncates to k.
    void set_neighbor_ids(const std::vector<int>& ids);
    void prune_neighbors(const std::vector<int>& live_ids);
    const std::vector<double>* state_at(int frame_index) const;
    int t_max() const { return t_max_; }

private:
    int id_;
    int class_index_;
    int t_max_;
    int k_neighbors_;
    std::deque<Entry> mem_;
    std::vector<int> neighbors_;
};

struct OcclusionEpisode {
    int object = 0;
    int start = 0;
    int length = 0;
};

struct SceneConfig {
    int n_objects = 8;
    int n_frames = 10;
    double dt = 0.5;
    double arena_half_extent = 50.0;  // objects spawn in [-e, e]^2
    int n_classes = 7;
    // [min,max] speed per class, m/s; also feeds the distance thresholds.
    std::vector<std::array<double, 2>> speed_ranges;
    std::array<double, 2> turn_rate_range{-0.3, 0.3};  // rad/s
    double sigma_pos = 0.1;
    double sigma_theta = 0.02;
    double sigma_size = 0.05;
    double sigma_vel = 0.1;
    double sigma_score = 0.05;
    double drop_prob = 0.0;        // per object per frame
    double clutter_rate = 0.0;     // expected false positives per frame
    std::vector<OcclusionEpisode> occlusions;
    double min_separation = 0.0;   // rejection-sampled spawn spacing
    bool aligned_headings = false; // all objects share one heading
    double threshold_margin = 1.5;
    std::uint64_t seed = 1;

    void validate() const;
    // Fills speed_ranges with a default ladder if empty.
    void ensure_speed_ranges();
};

struct GeneratedScene {
    GroundTruthSequence truth;
    std::vector<Frame> detections;
};

// Constant-velocity + bounded-turn-rate kinematics; heading always matches
// velocity direction; deterministic per seed.
GeneratedScene generate_scene(const SceneConfig& cfg);

// threshold_c = max(1.0, max_speed_c * dt * margin)
std::vector<double> class_distance_thresholds(const SceneConfig& cfg);
std::vector<double> class_distance_thresholds(const std::vector<double>& max_speeds,
                                              double dt, double margin = 1.5);

// JSON lines, one object per line:
// {frame, t, p:[x,y,z], theta, size:[l,w,h], vel:[vx,vy], class, score, gt_id?}
std::vector<Frame> ingest_detections(const std::string& path);
void write_detections(const std::string& path, const std::vector<Frame>& frames);

// Same schema plus track_id.
struct TrackRecord {
    int frame_index;
    double timestamp;
    int track_id;
    DetectionNode state;
};
void write_track_records(const std::string& path, const std::vector<TrackRecord>& records);
std::vector<TrackRecord> read_track_records(const std::string& path);

}  // namespace dsct::scene
