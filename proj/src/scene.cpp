#include "dsct/scene.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "json.hpp"

namespace dsct::scene {

using nlohmann::json;

namespace {

double wrap_angle(double a) {
    a = std::fmod(a + M_PI, 2.0 * M_PI);
    if (a < 0) a += 2.0 * M_PI;
    return a - M_PI;
}

}  // namespace

std::vector<double> encode_state(const DetectionNode& d) {
    std::vector<double> v;
    v.reserve(d.state_dim());
    v.insert(v.end(), d.p.begin(), d.p.end());
    v.push_back(d.theta);
    v.insert(v.end(), d.size.begin(), d.size.end());
    v.insert(v.end(), d.vel.begin(), d.vel.end());
    for (int c = 0; c < d.n_classes; ++c) v.push_back(c == d.class_index ? 1.0 : 0.0);
    v.push_back(d.score);
    return v;
}

DetectionNode decode_state(const std::vector<double>& v, int n_classes, int frame_index) {
    if (static_cast<int>(v.size()) != 10 + n_classes)
        throw ConfigError("state vector length " + std::to_string(v.size()) +
                          " does not match 10+C for C=" + std::to_string(n_classes));
    DetectionNode d;
    d.n_classes = n_classes;
    d.p = {v[0], v[1], v[2]};
    d.theta = v[3];
    d.size = {v[4], v[5], v[6]};
    d.vel = {v[7], v[8]};
    int cls = 0;
    double best = v[9];
    for (int c = 1; c < n_classes; ++c)
        if (v[9 + c] > best) { best = v[9 + c]; cls = c; }
    d.class_index = cls;
    d.score = v[10 + n_classes - 1];
    d.frame_index = frame_index;
    return d;
}

void Track::push_state(int frame_index, std::vector<double> state) {
    if (!mem_.empty() && frame_index <= mem_.back().frame_index)
        throw ContractError("track memory frame indices must be strictly increasing");
    mem_.push_back({frame_index, std::move(state)});
    while (static_cast<int>(mem_.size()) > t_max_) mem_.pop_front();
}

void Track::set_neighbor_ids(const std::vector<int>& ids) {
    neighbors_.clear();
    for (int id : ids) {
        if (id == id_) continue;
        if (std::find(neighbors_.begin(), neighbors_.end(), id) != neighbors_.end()) continue;
        neighbors_.push_back(id);
        if (static_cast<int>(neighbors_.size()) >= k_neighbors_) break;
    }
}

void Track::prune_neighbors(const std::vector<int>& live_ids) {
    neighbors_.erase(
        std::remove_if(neighbors_.begin(), neighbors_.end(),
                       [&](int id) {
                           return std::find(live_ids.begin(), live_ids.end(), id) == live_ids.end();
                       }),
        neighbors_.end());
}

const std::vector<double>* Track::state_at(int frame_index) const {
    for (const auto& e : mem_)
        if (e.frame_index == frame_index) return &e.state;
    return nullptr;
}

void SceneConfig::validate() const {
    if (n_objects < 0 || n_frames < 0) throw ConfigError("scene: negative object/frame count");
    if (dt <= 0) throw ConfigError("scene: dt must be positive");
    if (n_classes < 1) throw ConfigError("scene: need at least one class");
    if (drop_prob < 0 || drop_prob > 1) throw ConfigError("scene: drop_prob outside [0,1]");
    if (clutter_rate < 0) throw ConfigError("scene: clutter_rate must be >= 0");
    if (sigma_pos < 0 || sigma_theta < 0 || sigma_size < 0 || sigma_vel < 0 || sigma_score < 0)
        throw ConfigError("scene: noise sigmas must be >= 0");
}

void SceneConfig::ensure_speed_ranges() {
    if (!speed_ranges.empty()) {
        if (static_cast<int>(speed_ranges.size()) != n_classes)
            throw ConfigError("scene: speed_ranges size != n_classes");
        return;
    }
    speed_ranges.resize(n_classes);
    for (int c = 0; c < n_classes; ++c) {
        const double top = 2.0 + 2.0 * c;  // simple per-class ladder
        speed_ranges[c] = {0.5 * top, top};
    }
}

GeneratedScene generate_scene(const SceneConfig& cfg_in) {
    SceneConfig cfg = cfg_in;
    cfg.validate();
    cfg.ensure_speed_ranges();

    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);

    struct ObjectState {
        std::array<double, 2> pos;
        double z;
        double speed;
        double heading;
        double turn_rate;
        std::array<double, 3> size;
        int class_index;
    };

    // Spawn, optionally rejection-sampling for separation.
    std::vector<ObjectState> objs;
    objs.reserve(cfg.n_objects);
    const double e = cfg.arena_half_extent;
    double shared_heading = (unit(rng) * 2.0 - 1.0) * M_PI;
    for (int i = 0; i < cfg.n_objects; ++i) {
        ObjectState o;
        for (int attempt = 0;; ++attempt) {
            o.pos = {(unit(rng) * 2.0 - 1.0) * e, (unit(rng) * 2.0 - 1.0) * e};
            bool ok = true;
            for (const auto& other : objs) {
                const double dx = o.pos[0] - other.pos[0];
                const double dy = o.pos[1] - other.pos[1];
                if (std::hypot(dx, dy) < cfg.min_separation) { ok = false; break; }
            }
            if (ok || attempt > 1000) break;
        }
        o.z = 0.5 + unit(rng);
        o.class_index = static_cast<int>(unit(rng) * cfg.n_classes);
        if (o.class_index >= cfg.n_classes) o.class_index = cfg.n_classes - 1;
        const auto& sr = cfg.speed_ranges[o.class_index];
        o.speed = sr[0] + unit(rng) * (sr[1] - sr[0]);
        o.heading = cfg.aligned_headings ? shared_heading : (unit(rng) * 2.0 - 1.0) * M_PI;
        o.turn_rate = cfg.turn_rate_range[0] +
                      unit(rng) * (cfg.turn_rate_range[1] - cfg.turn_rate_range[0]);
        o.size = {1.0 + 3.0 * unit(rng), 0.8 + 1.5 * unit(rng), 1.0 + 1.5 * unit(rng)};
        objs.push_back(o);
    }

    GeneratedScene out;
    std::poisson_distribution<int> clutter_count(cfg.clutter_rate > 0 ? cfg.clutter_rate : 1e-12);

    for (int f = 0; f < cfg.n_frames; ++f) {
        Frame gt_frame, det_frame;
        gt_frame.index = det_frame.index = f;
        gt_frame.timestamp = det_frame.timestamp = f * cfg.dt;

        for (int i = 0; i < cfg.n_objects; ++i) {
            auto& o = objs[i];
            DetectionNode gt;
            gt.p = {o.pos[0], o.pos[1], o.z};
            gt.theta = wrap_angle(o.heading);
            gt.size = o.size;
            gt.vel = {o.speed * std::cos(o.heading), o.speed * std::sin(o.heading)};
            gt.class_index = o.class_index;
            gt.n_classes = cfg.n_classes;
            gt.score = 1.0;
            gt.frame_index = f;
            gt.gt_id = i;
            gt_frame.detections.push_back(gt);

            bool occluded = false;
            for (const auto& ep : cfg.occlusions)
                if (ep.object == i && f >= ep.start && f < ep.start + ep.length) occluded = true;
            const bool dropped = unit(rng) < cfg.drop_prob;
            if (!occluded && !dropped) {
                DetectionNode det = gt;
                det.gt_id.reset();  // the tracker never sees identity
                det.p[0] += gauss(rng) * cfg.sigma_pos;
                det.p[1] += gauss(rng) * cfg.sigma_pos;
                det.p[2] += gauss(rng) * cfg.sigma_pos;
                det.theta = wrap_angle(det.theta + gauss(rng) * cfg.sigma_theta);
                for (auto& s : det.size) s = std::max(0.05, s + gauss(rng) * cfg.sigma_size);
                det.vel[0] += gauss(rng) * cfg.sigma_vel;
                det.vel[1] += gauss(rng) * cfg.sigma_vel;
                det.score = std::clamp(1.0 - std::abs(gauss(rng)) * cfg.sigma_score, 0.0, 1.0);
                det_frame.detections.push_back(det);
            }

            // Advance kinematics; heading tracks velocity direction.
            o.pos[0] += o.speed * std::cos(o.heading) * cfg.dt;
            o.pos[1] += o.speed * std::sin(o.heading) * cfg.dt;
            o.heading += o.turn_rate * cfg.dt;
        }

        if (cfg.clutter_rate > 0) {
            const int n_clutter = clutter_count(rng);
            for (int c = 0; c < n_clutter; ++c) {
                DetectionNode fp;
                fp.p = {(unit(rng) * 2.0 - 1.0) * e, (unit(rng) * 2.0 - 1.0) * e, 0.5 + unit(rng)};
                fp.theta = (unit(rng) * 2.0 - 1.0) * M_PI;
                fp.size = {0.5 + 2.5 * unit(rng), 0.5 + 2.0 * unit(rng), 0.5 + 2.0 * unit(rng)};
                fp.vel = {gauss(rng), gauss(rng)};
                fp.class_index = static_cast<int>(unit(rng) * cfg.n_classes);
                if (fp.class_index >= cfg.n_classes) fp.class_index = cfg.n_classes - 1;
                fp.n_classes = cfg.n_classes;
                fp.score = 0.1 + 0.4 * unit(rng);  // false positives score low
                fp.frame_index = f;
                det_frame.detections.push_back(fp);
            }
        }

        out.truth.frames.push_back(std::move(gt_frame));
        out.detections.push_back(std::move(det_frame));
    }
    return out;
}

std::vector<double> class_distance_thresholds(const std::vector<double>& max_speeds,
                                              double dt, double margin) {
    if (dt <= 0) throw ConfigError("thresholds: dt must be positive");
    std::vector<double> th(max_speeds.size());
    for (size_t c = 0; c < max_speeds.size(); ++c) {
        if (max_speeds[c] < 0) throw ConfigError("thresholds: negative max speed");
        th[c] = std::max(1.0, max_speeds[c] * dt * margin);
    }
    return th;
}

std::vector<double> class_distance_thresholds(const SceneConfig& cfg_in) {
    SceneConfig cfg = cfg_in;
    cfg.ensure_speed_ranges();
    std::vector<double> max_speeds(cfg.n_classes);
    for (int c = 0; c < cfg.n_classes; ++c) max_speeds[c] = cfg.speed_ranges[c][1];
    return class_distance_thresholds(max_speeds, cfg.dt, cfg.threshold_margin);
}

// ---- JSON lines IO ---------------------------------------------------------

namespace {

json detection_to_json(const DetectionNode& d, double timestamp) {
    json j;
    j["frame"] = d.frame_index;
    j["t"] = timestamp;
    j["p"] = {d.p[0], d.p[1], d.p[2]};
    j["theta"] = d.theta;
    j["size"] = {d.size[0], d.size[1], d.size[2]};
    j["vel"] = {d.vel[0], d.vel[1]};
    j["class"] = d.class_index;
    j["score"] = d.score;
    if (d.gt_id) j["gt_id"] = *d.gt_id;
    return j;
}

DetectionNode detection_from_json(const json& j, int line_no, int n_classes_hint) {
    for (const char* key : {"frame", "t", "p", "theta", "size", "vel", "class", "score"})
        if (!j.contains(key))
            throw SchemaError("line " + std::to_string(line_no) + ": missing field '" + key + "'");
    DetectionNode d;
    try {
        d.frame_index = j.at("frame").get<int>();
        auto p = j.at("p").get<std::vector<double>>();
        auto s = j.at("size").get<std::vector<double>>();
        auto v = j.at("vel").get<std::vector<double>>();
        if (p.size() != 3 || s.size() != 3 || v.size() != 2)
            throw SchemaError("line " + std::to_string(line_no) + ": bad p/size/vel arity");
        d.p = {p[0], p[1], p[2]};
        d.size = {s[0], s[1], s[2]};
        d.vel = {v[0], v[1]};
        d.theta = j.at("theta").get<double>();
        d.class_index = j.at("class").get<int>();
        d.score = j.at("score").get<double>();
        if (j.contains("gt_id")) d.gt_id = j.at("gt_id").get<int>();
    } catch (const json::exception& e) {
        throw SchemaError("line " + std::to_string(line_no) + ": " + e.what());
    }
    d.n_classes = std::max(n_classes_hint, d.class_index + 1);
    return d;
}

}  // namespace

std::vector<Frame> ingest_detections(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::vector<DetectionNode> dets;
    std::vector<double> timestamps;
    std::string line;
    int line_no = 0;
    int max_class = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw SchemaError("line " + std::to_string(line_no) + ": malformed JSON: " + e.what());
        }
        DetectionNode d = detection_from_json(j, line_no, 1);
        max_class = std::max(max_class, d.class_index);
        timestamps.push_back(j.at("t").get<double>());
        dets.push_back(std::move(d));
    }
    const int n_classes = std::max(7, max_class + 1);

    // Stable-sort into frames, preserving file order per frame.
    std::vector<int> frame_ids;
    for (const auto& d : dets)
        if (std::find(frame_ids.begin(), frame_ids.end(), d.frame_index) == frame_ids.end())
            frame_ids.push_back(d.frame_index);
    std::sort(frame_ids.begin(), frame_ids.end());

    std::vector<Frame> frames;
    for (int fid : frame_ids) {
        Frame f;
        f.index = fid;
        for (size_t i = 0; i < dets.size(); ++i) {
            if (dets[i].frame_index != fid) continue;
            f.timestamp = timestamps[i];
            DetectionNode d = dets[i];
            d.n_classes = n_classes;
            f.detections.push_back(std::move(d));
        }
        frames.push_back(std::move(f));
    }
    return frames;
}

void write_detections(const std::string& path, const std::vector<Frame>& frames) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    for (const auto& f : frames)
        for (const auto& d : f.detections)
            out << detection_to_json(d, f.timestamp).dump() << "\n";
}

void write_track_records(const std::string& path, const std::vector<TrackRecord>& records) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    for (const auto& r : records) {
        json j = detection_to_json(r.state, r.timestamp);
        j["frame"] = r.frame_index;
        j["track_id"] = r.track_id;
        out << j.dump() << "\n";
    }
}

std::vector<TrackRecord> read_track_records(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::vector<TrackRecord> recs;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw SchemaError("line " + std::to_string(line_no) + ": malformed JSON: " + e.what());
        }
        if (!j.contains("track_id"))
            throw SchemaError("line " + std::to_string(line_no) + ": missing field 'track_id'");
        TrackRecord r;
        r.state = detection_from_json(j, line_no, 1);
        r.frame_index = r.state.frame_index;
        r.timestamp = j.at("t").get<double>();
        r.track_id = j.at("track_id").get<int>();
        recs.push_back(std::move(r));
    }
    return recs;
}

}  // namespace dsct::scene
