#include "dsct/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "json.hpp"

namespace dsct::eval {

Correspondence match_frame(const std::vector<GtObject>& gt,
                           const std::vector<PredObject>& pred,
                           const std::map<int, int>& prev_gt_to_track, double radius) {
    const int G = static_cast<int>(gt.size());
    const int P = static_cast<int>(pred.size());
    Correspondence corr;
    std::vector<bool> gt_used(G, false), pred_used(P, false);

    auto dist = [&](int g, int p) {
        return std::hypot(gt[g].x - pred[p].x, gt[g].y - pred[p].y);
    };

    // Pass 1: keep last frame's pairing when still within the radius.
    for (int g = 0; g < G; ++g) {
        auto it = prev_gt_to_track.find(gt[g].id);
        if (it == prev_gt_to_track.end()) continue;
        for (int p = 0; p < P; ++p) {
            if (pred_used[p] || pred[p].track_id != it->second) continue;
            if (dist(g, p) <= radius) {
                corr.pairs.emplace_back(g, p);
                gt_used[g] = pred_used[p] = true;
            }
            break;
        }
    }

    // Pass 2: remaining pairs greedily by ascending distance.
    struct Cand { double d; int g, p; };
    std::vector<Cand> cands;
    for (int g = 0; g < G; ++g) {
        if (gt_used[g]) continue;
        for (int p = 0; p < P; ++p) {
            if (pred_used[p]) continue;
            const double d = dist(g, p);
            if (d <= radius) cands.push_back({d, g, p});
        }
    }
    std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
        if (a.d != b.d) return a.d < b.d;
        if (a.g != b.g) return a.g < b.g;
        return a.p < b.p;
    });
    for (const auto& c : cands) {
        if (gt_used[c.g] || pred_used[c.p]) continue;
        gt_used[c.g] = pred_used[c.p] = true;
        corr.pairs.emplace_back(c.g, c.p);
    }
    return corr;
}

MotTally evaluate_clear(const std::vector<FrameData>& frames, double radius) {
    MotTally tally;
    std::map<int, int> last_track;   // gt id -> last matched pred track id
    std::map<int, int> active_corr;  // carried frame to frame for continuity
    for (const auto& frame : frames) {
        const auto corr = match_frame(frame.gt, frame.pred, active_corr, radius);
        tally.gt += static_cast<long long>(frame.gt.size());
        tally.matches += static_cast<long long>(corr.pairs.size());
        tally.fp += static_cast<long long>(frame.pred.size()) -
                    static_cast<long long>(corr.pairs.size());
        tally.fn += static_cast<long long>(frame.gt.size()) -
                    static_cast<long long>(corr.pairs.size());
        active_corr.clear();
        for (const auto& [g, p] : corr.pairs) {
            const int gt_id = frame.gt[g].id;
            const int track = frame.pred[p].track_id;
            auto it = last_track.find(gt_id);
            if (it != last_track.end() && it->second != track) tally.ids += 1;
            last_track[gt_id] = track;
            active_corr[gt_id] = track;
            tally.dist_sum += std::hypot(frame.gt[g].x - frame.pred[p].x,
                                         frame.gt[g].y - frame.pred[p].y);
        }
    }
    return tally;
}

double mota(const MotTally& tally) {
    if (tally.gt == 0) throw ContractError("mota: zero ground-truth objects");
    return 1.0 - static_cast<double>(tally.fn + tally.fp + tally.ids) /
                     static_cast<double>(tally.gt);
}

AmotaResult amota_amotp(const std::vector<FrameData>& frames, double radius, int n_recall,
                        double recall_floor) {
    long long total_gt = 0;
    std::set<double, std::greater<double>> scores;  // descending thresholds
    for (const auto& f : frames) {
        total_gt += static_cast<long long>(f.gt.size());
        for (const auto& p : f.pred) scores.insert(p.score);
    }
    if (total_gt == 0) throw ContractError("amota: zero ground-truth objects");

    struct Operating {
        double threshold, recall, motar, mean_dist;
    };
    std::vector<Operating> curve;  // descending threshold, non-decreasing recall
    for (double thr : scores) {
        std::vector<FrameData> filtered = frames;
        for (auto& f : filtered) {
            f.pred.erase(std::remove_if(f.pred.begin(), f.pred.end(),
                                        [&](const PredObject& p) { return p.score < thr; }),
                         f.pred.end());
        }
        const MotTally t = evaluate_clear(filtered, radius);
        const double r = static_cast<double>(t.matches) / static_cast<double>(total_gt);
        double motar = 0.0;
        if (r > 0) {
            motar = 1.0 - (static_cast<double>(t.ids + t.fp + t.fn) -
                           (1.0 - r) * static_cast<double>(total_gt)) /
                              (r * static_cast<double>(total_gt));
            motar = std::max(0.0, motar);
        }
        curve.push_back({thr, r, motar, t.mean_dist()});
    }

    AmotaResult out;
    double sum_motar = 0, sum_dist = 0;
    for (int i = 1; i <= n_recall; ++i) {
        const double target = static_cast<double>(i) / static_cast<double>(n_recall);
        if (target < recall_floor) continue;
        // Highest threshold whose achieved recall covers the target.
        const Operating* chosen = nullptr;
        for (const auto& op : curve)
            if (op.recall >= target) { chosen = &op; break; }
        if (!chosen) continue;  // target never achieved
        sum_motar += chosen->motar;
        sum_dist += chosen->mean_dist;
        out.achieved_targets += 1;
    }
    if (out.achieved_targets > 0) {
        out.amota = sum_motar / out.achieved_targets;
        out.amotp = sum_dist / out.achieved_targets;
    }
    return out;
}

std::vector<FrameData> build_frames(const scene::GroundTruthSequence& truth,
                                    const std::vector<scene::TrackRecord>& records) {
    std::map<int, FrameData> by_index;
    for (const auto& f : truth.frames) {
        FrameData& fd = by_index[f.index];
        fd.index = f.index;
        for (const auto& d : f.detections) {
            if (!d.gt_id) throw SchemaError("ground-truth detection without gt_id");
            fd.gt.push_back({*d.gt_id, d.p[0], d.p[1]});
        }
    }
    for (const auto& r : records) {
        FrameData& fd = by_index[r.frame_index];
        fd.index = r.frame_index;
        fd.pred.push_back({r.track_id, r.state.p[0], r.state.p[1], r.state.score});
    }
    std::vector<FrameData> frames;
    frames.reserve(by_index.size());
    for (auto& [idx, fd] : by_index) frames.push_back(std::move(fd));
    return frames;
}

std::vector<FrameData> build_frames_from_files(const std::string& gt_path,
                                               const std::string& tracks_path) {
    scene::GroundTruthSequence truth;
    truth.frames = scene::ingest_detections(gt_path);
    return build_frames(truth, scene::read_track_records(tracks_path));
}

MetricsReport compute_metrics(const std::vector<FrameData>& frames, double radius) {
    const MotTally tally = evaluate_clear(frames, radius);
    const AmotaResult am = amota_amotp(frames, radius);
    MetricsReport r{};
    r.amota = am.amota;
    r.amotp = am.amotp;
    r.mota_value = mota(tally);
    r.ids = tally.ids;
    r.fp = tally.fp;
    r.fn = tally.fn;
    r.gt = tally.gt;
    r.matches = tally.matches;
    return r;
}

std::string MetricsReport::to_json() const {
    nlohmann::json j;
    j["AMOTA"] = amota;
    j["AMOTP"] = amotp;
    j["MOTA"] = mota_value;
    j["IDS"] = ids;
    j["FP"] = fp;
    j["FN"] = fn;
    j["GT"] = gt;
    j["matches"] = matches;
    return j.dump(2);
}

std::string MetricsReport::to_table() const {
    std::ostringstream os;
    os << "metric   value\n";
    os << "-------  ----------\n";
    auto row = [&](const char* name, double v) {
        os << name;
        for (size_t i = std::string(name).size(); i < 9; ++i) os << ' ';
        os << v << "\n";
    };
    row("AMOTA", amota);
    row("AMOTP", amotp);
    row("MOTA", mota_value);
    row("IDS", static_cast<double>(ids));
    row("FP", static_cast<double>(fp));
    row("FN", static_cast<double>(fn));
    row("GT", static_cast<double>(gt));
    return os.str();
}

}  // namespace dsct::eval
