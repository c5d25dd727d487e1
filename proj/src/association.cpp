#include "dsct/association.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <unordered_map>

#include "dsct/geometric.hpp"
#include "dsct/temporal.hpp"

namespace dsct::assoc {

Tensor pairwise_difference(const Tensor& Y_m, const Tensor& Y_B) {
    const int M = Y_m.rows(), N = Y_B.rows();
    std::vector<int> mi(static_cast<size_t>(M) * N), bi(static_cast<size_t>(M) * N);
    for (int i = 0; i < M; ++i)
        for (int j = 0; j < N; ++j) {
            mi[static_cast<size_t>(i) * N + j] = i;
            bi[static_cast<size_t>(i) * N + j] = j;
        }
    return sub(gather_rows(Y_m, mi), gather_rows(Y_B, bi));
}

AffinityMatrix affinity(const Tensor& Y_m, const Tensor& Y_B, const Mlp& head,
                        const Mask& mask) {
    const int M = Y_m.rows(), N = Y_B.rows();
    AffinityMatrix out;
    out.mask = mask;
    if (M == 0 || N == 0) {
        out.A = Tensor::zeros({M, N});
        return out;
    }
    Tensor logits = head.forward(pairwise_difference(Y_m, Y_B));  // [M*N, 1]
    out.A = reshape(sigmoid(logits), {M, N});
    return out;
}

Assignment assign(const AffinityMatrix& aff, real match_threshold, AssignMode mode) {
    const int M = aff.A.rows(), N = aff.A.cols();
    Assignment result;
    std::vector<bool> track_used(M, false), det_used(N, false);

    if (mode == AssignMode::Greedy) {
        struct Cand { real score; int i, j; };
        std::vector<Cand> cands;
        for (int i = 0; i < M; ++i)
            for (int j = 0; j < N; ++j) {
                const real s = aff.A.at(i, j);
                if (aff.mask.at(i, j) && s >= match_threshold) cands.push_back({s, i, j});
            }
        std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
            if (a.score != b.score) return a.score > b.score;
            if (a.i != b.i) return a.i < b.i;
            return a.j < b.j;
        });
        for (const auto& c : cands) {
            if (track_used[c.i] || det_used[c.j]) continue;
            track_used[c.i] = det_used[c.j] = true;
            result.matches.push_back({c.i, c.j, c.score});
        }
    } else {
        std::vector<std::vector<double>> w(M, std::vector<double>(N, 0.0));
        for (int i = 0; i < M; ++i)
            for (int j = 0; j < N; ++j)
                if (aff.mask.at(i, j) && aff.A.at(i, j) >= match_threshold)
                    w[i][j] = static_cast<double>(aff.A.at(i, j));
        const auto sel = max_weight_assignment(w);
        for (int i = 0; i < M; ++i)
            if (sel[i] >= 0) {
                track_used[i] = det_used[sel[i]] = true;
                result.matches.push_back({i, sel[i], aff.A.at(i, sel[i])});
            }
    }
    for (int i = 0; i < M; ++i)
        if (!track_used[i]) result.unmatched_tracks.push_back(i);
    for (int j = 0; j < N; ++j)
        if (!det_used[j]) result.unmatched_dets.push_back(j);
    return result;
}

// Hungarian on the padded square matrix; zero-weight cells act as "leave
// unmatched", so the result is a maximum-weight matching over positive cells.
std::vector<int> max_weight_assignment(const std::vector<std::vector<double>>& weight) {
    const int n = static_cast<int>(weight.size());
    const int m = n ? static_cast<int>(weight[0].size()) : 0;
    std::vector<int> result(n, -1);
    if (n == 0 || m == 0) return result;
    const int dim = std::max(n, m);
    constexpr double INF = std::numeric_limits<double>::infinity();

    auto cost = [&](int i, int j) -> double {
        if (i < n && j < m) return -weight[i][j];
        return 0.0;
    };

    std::vector<double> u(dim + 1, 0.0), v(dim + 1, 0.0);
    std::vector<int> p(dim + 1, 0), way(dim + 1, 0);
    for (int i = 1; i <= dim; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(dim + 1, INF);
        std::vector<bool> used(dim + 1, false);
        do {
            used[j0] = true;
            const int i0 = p[j0];
            int j1 = 0;
            double delta = INF;
            for (int j = 1; j <= dim; ++j) {
                if (used[j]) continue;
                const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= dim; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const int j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0);
    }
    for (int j = 1; j <= dim; ++j)
        if (p[j] <= n && j <= m && weight[p[j] - 1][j - 1] > 0.0)
            result[p[j] - 1] = j - 1;
    return result;
}

UpdateOutcome update_tracks(std::vector<scene::Track>& tracks, const Assignment& assignment,
                            const scene::Frame& frame,
                            const std::vector<cue::CueSet>& det_cues,
                            const TrainConfig& cfg, int& next_track_id) {
    UpdateOutcome outcome;
    const int N = static_cast<int>(frame.detections.size());
    std::vector<int> det_to_track_id(N, -1);

    // Matched tracks absorb the detection state.
    for (const auto& m : assignment.matches) {
        auto& tr = tracks[m.track];
        tr.push_state(frame.index, scene::encode_state(frame.detections[m.det]));
        tr.misses = 0;
        tr.age += 1;
        det_to_track_id[m.det] = tr.id();
        outcome.emitted.emplace_back(tr.id(), m.det);
    }
    for (int ti : assignment.unmatched_tracks) {
        tracks[ti].misses += 1;
        tracks[ti].age += 1;
    }

    // Births for confident unmatched detections.
    std::vector<size_t> born;
    for (int dj : assignment.unmatched_dets) {
        const auto& det = frame.detections[dj];
        if (det.score < cfg.birth_score_min) continue;
        scene::Track tr(next_track_id++, det.class_index, cfg.model.t_max,
                        cfg.model.k_neighbors);
        tr.push_state(frame.index, scene::encode_state(det));
        det_to_track_id[dj] = tr.id();
        outcome.emitted.emplace_back(tr.id(), dj);
        tracks.push_back(std::move(tr));
        born.push_back(tracks.size() - 1);
    }

    // Neighbor ids from cue peers: each cue detection maps to the track it
    // was matched to (or the one born from it); others are skipped.
    if (!det_cues.empty()) {
        for (auto& tr : tracks) {
            // find the detection owned by this track at this frame
            int own_det = -1;
            for (int j = 0; j < N; ++j)
                if (det_to_track_id[j] == tr.id()) { own_det = j; break; }
            if (own_det < 0) continue;  // unmatched this frame: keep neighbors
            std::vector<int> ids;
            for (int q : det_cues[own_det].source_indices) {
                if (q == own_det) continue;
                if (q >= 0 && q < N && det_to_track_id[q] >= 0)
                    ids.push_back(det_to_track_id[q]);
            }
            tr.set_neighbor_ids(ids);
        }
    }

    // Retirement, then dangling-neighbor cleanup.
    tracks.erase(std::remove_if(tracks.begin(), tracks.end(),
                                [&](const scene::Track& t) { return t.misses > cfg.max_misses; }),
                 tracks.end());
    std::vector<int> live;
    live.reserve(tracks.size());
    for (const auto& t : tracks) live.push_back(t.id());
    for (auto& t : tracks) t.prune_neighbors(live);

    std::sort(outcome.emitted.begin(), outcome.emitted.end(),
              [](const auto& a, const auto& b) { return a.second < b.second; });
    return outcome;
}

// ---- losses -----------------------------------------------------------------

Tensor focal_loss(const Tensor& A, const std::vector<std::uint8_t>& gt, const Mask& mask,
                  real gamma, real alpha) {
    const int M = A.rows(), N = A.cols();
    if (static_cast<long long>(gt.size()) != A.numel())
        throw ShapeError("focal_loss: gt size does not match affinity matrix");
    long long allowed_count = 0;
    for (auto a : mask.allowed) allowed_count += (a != 0);
    if (allowed_count == 0) return Tensor::scalar(real(0));

    std::vector<real> pos(gt.size()), negv(gt.size()), sel(gt.size());
    for (size_t i = 0; i < gt.size(); ++i) {
        pos[i] = gt[i] ? real(1) : real(0);
        negv[i] = gt[i] ? real(0) : real(1);
        sel[i] = mask.allowed[i] ? real(1) : real(0);
    }
    Tensor t_pos = Tensor::from(std::move(pos), {M, N});
    Tensor t_neg = Tensor::from(std::move(negv), {M, N});
    Tensor t_sel = Tensor::from(std::move(sel), {M, N});

    Tensor p = clamp(A, real(1e-12), real(1) - real(1e-12));
    Tensor p_t = add(mul(p, t_pos), mul(affine(p, real(-1), real(1)), t_neg));
    Tensor fl = mul(pow_elem(affine(p_t, real(-1), real(1)), gamma), neg(log_elem(p_t)));
    if (alpha >= real(0)) {
        std::vector<real> w(gt.size());
        for (size_t i = 0; i < gt.size(); ++i) w[i] = gt[i] ? alpha : real(1) - alpha;
        fl = mul(fl, Tensor::from(std::move(w), {M, N}));
    }
    return scale(sum(mul(fl, t_sel)), real(1) / static_cast<real>(allowed_count));
}

Tensor position_loss(const Tensor& pred,
                     const std::vector<std::optional<std::array<double, 2>>>& targets) {
    if (static_cast<int>(targets.size()) != pred.rows())
        throw ShapeError("position_loss: target count does not match predictions");
    std::vector<int> rows;
    std::vector<real> tvals;
    for (size_t i = 0; i < targets.size(); ++i) {
        if (!targets[i]) continue;
        rows.push_back(static_cast<int>(i));
        tvals.push_back(static_cast<real>((*targets[i])[0]));
        tvals.push_back(static_cast<real>((*targets[i])[1]));
    }
    if (rows.empty()) return Tensor::scalar(real(0));
    Tensor sup = gather_rows(pred, rows);
    Tensor target = Tensor::from(std::move(tvals), {static_cast<int>(rows.size()), 2});
    Tensor err = smooth_l1(sub(sup, target));
    return scale(sum(err), real(1) / static_cast<real>(rows.size()));
}

Tensor total_loss(const Tensor& loss_assoc, const Tensor& loss_pos, real lambda_p) {
    return add(loss_assoc, scale(loss_pos, lambda_p));
}

// ---- online tracking ---------------------------------------------------------

namespace {

geo::NeighborLookup make_lookup(const std::vector<scene::Track>& tracks) {
    auto index = std::make_shared<std::unordered_map<int, const scene::Track*>>();
    for (const auto& t : tracks) (*index)[t.id()] = &t;
    return [index](int id, int frame) -> const std::vector<double>* {
        auto it = index->find(id);
        return it == index->end() ? nullptr : it->second->state_at(frame);
    };
}

std::vector<const scene::Track*> track_ptrs(const std::vector<scene::Track>& tracks) {
    std::vector<const scene::Track*> p;
    p.reserve(tracks.size());
    for (const auto& t : tracks) p.push_back(&t);
    return p;
}

}  // namespace

FrameForward forward_frame(const Model& model, const std::vector<scene::Track>& tracks,
                           const scene::Frame& frame,
                           const std::vector<double>& thresholds) {
    const int M = static_cast<int>(tracks.size());
    const int N = static_cast<int>(frame.detections.size());
    const int d = model.cfg.d_model;
    FrameForward out;

    auto ptrs = track_ptrs(tracks);
    out.Z_hat_m = temporal::encode_all_tracks(ptrs, make_lookup(tracks), model);
    out.predicted = cue::predict_positions(out.Z_hat_m, model.pos_head);
    out.allowed = cue::build_interaction_mask(ptrs, frame, out.predicted, thresholds);

    Tensor Z_B = N > 0 ? geo::encode_detections(frame, model) : Tensor::zeros({0, d});
    auto cue_out = cue::run(out.Z_hat_m, Z_B, out.allowed, model);
    out.det_cues = std::move(cue_out.det_cues);
    out.aff = affinity(cue_out.Y_m, cue_out.Y_B, model.affinity_head, out.allowed);
    return out;
}

UpdateOutcome step_frame(const Model& model, TrackerState& state, const scene::Frame& frame,
                         const TrainConfig& cfg, const std::vector<double>& thresholds) {
    FrameForward fwd = forward_frame(model, state.tracks, frame, thresholds);
    Assignment as = assign(fwd.aff, cfg.match_threshold, cfg.assignment);
    return update_tracks(state.tracks, as, frame, fwd.det_cues, cfg, state.next_id);
}

std::vector<scene::TrackRecord> track_sequence(const Model& model,
                                               const std::vector<scene::Frame>& frames,
                                               const TrainConfig& cfg,
                                               const std::vector<double>& thresholds) {
    TrackerState state;
    std::vector<scene::TrackRecord> records;
    for (const auto& frame : frames) {
        auto outcome = step_frame(model, state, frame, cfg, thresholds);
        for (const auto& [track_id, det_idx] : outcome.emitted) {
            scene::TrackRecord rec;
            rec.frame_index = frame.index;
            rec.timestamp = frame.timestamp;
            rec.track_id = track_id;
            rec.state = frame.detections[det_idx];
            records.push_back(std::move(rec));
        }
    }
    return records;
}

// ---- training -----------------------------------------------------------------

namespace {

// Re-links detections to ground-truth identities by nearest BEV center
// distance (2 m gate), each side used once.
std::vector<int> label_detections(const scene::Frame& dets, const scene::Frame& gt_frame,
                                  double radius = 2.0) {
    const int N = static_cast<int>(dets.detections.size());
    const int G = static_cast<int>(gt_frame.detections.size());
    std::vector<int> det_gt(N, -1);
    struct Cand { double dist; int j, g; };
    std::vector<Cand> cands;
    for (int j = 0; j < N; ++j)
        for (int g = 0; g < G; ++g) {
            const double dx = dets.detections[j].p[0] - gt_frame.detections[g].p[0];
            const double dy = dets.detections[j].p[1] - gt_frame.detections[g].p[1];
            const double dist = std::hypot(dx, dy);
            if (dist <= radius) cands.push_back({dist, j, g});
        }
    std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
        if (a.dist != b.dist) return a.dist < b.dist;
        if (a.j != b.j) return a.j < b.j;
        return a.g < b.g;
    });
    std::vector<bool> det_used(N, false), gt_used(G, false);
    for (const auto& c : cands) {
        if (det_used[c.j] || gt_used[c.g]) continue;
        det_used[c.j] = gt_used[c.g] = true;
        det_gt[c.j] = *gt_frame.detections[c.g].gt_id;
    }
    return det_gt;
}

const scene::Frame* find_gt_frame(const scene::GroundTruthSequence& truth, int index) {
    for (const auto& f : truth.frames)
        if (f.index == index) return &f;
    return nullptr;
}

}  // namespace

TrainResult train(Model& model, const std::vector<SequenceSample>& data,
                  const TrainConfig& cfg, const std::vector<double>& thresholds,
                  AdamW& optimizer, int start_epoch) {
    if (data.empty()) throw ConfigError("train: empty dataset");
    TrainResult result;
    std::mt19937_64 rng(cfg.seed + static_cast<std::uint64_t>(start_epoch) * 7919);
    const long long total_steps =
        static_cast<long long>(cfg.epochs) * static_cast<long long>(data.size());
    long long step = static_cast<long long>(start_epoch) * static_cast<long long>(data.size());

    for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
        for (const auto& seq : data) {
            // Random mini-sequence window of length T.
            const int n_frames = static_cast<int>(seq.detections.size());
            const int T = std::min(cfg.mini_seq_len, n_frames);
            int start = 0;
            if (n_frames > T)
                start = static_cast<int>(rng() % static_cast<std::uint64_t>(n_frames - T + 1));

            TrackerState state;
            std::unordered_map<int, int> lineage;  // track id -> gt id (-1 for clutter-born)
            model.params.zero_grad();
            real sum_la = 0, sum_lp = 0, sum_l = 0;
            int supervised_frames = 0;

            for (int f = start; f < start + T; ++f) {
                const auto& frame = seq.detections[f];
                const scene::Frame* gt_frame = find_gt_frame(seq.truth, frame.index);
                if (!gt_frame) throw ContractError("train: no ground-truth frame for index " +
                                                   std::to_string(frame.index));
                const auto det_gt = label_detections(frame, *gt_frame);
                const int M = static_cast<int>(state.tracks.size());
                const int N = static_cast<int>(frame.detections.size());

                FrameForward fwd = forward_frame(model, state.tracks, frame, thresholds);

                // Supervision against ground-truth identity.
                if (M > 0 && N > 0) {
                    std::vector<std::uint8_t> gt_mat(static_cast<size_t>(M) * N, 0);
                    for (int i = 0; i < M; ++i) {
                        const int lin = lineage.at(state.tracks[i].id());
                        if (lin < 0) continue;
                        for (int j = 0; j < N; ++j)
                            if (det_gt[j] == lin) gt_mat[static_cast<size_t>(i) * N + j] = 1;
                    }
                    Tensor la = focal_loss(fwd.aff.A, gt_mat, fwd.aff.mask, cfg.focal_gamma,
                                           cfg.focal_alpha);

                    std::vector<std::optional<std::array<double, 2>>> targets(M);
                    for (int i = 0; i < M; ++i) {
                        const int lin = lineage.at(state.tracks[i].id());
                        if (lin < 0) continue;
                        for (const auto& g : gt_frame->detections)
                            if (g.gt_id && *g.gt_id == lin) {
                                targets[i] = std::array<double, 2>{g.p[0], g.p[1]};
                                break;
                            }
                    }
                    Tensor lp = position_loss(fwd.predicted, targets);
                    Tensor loss = total_loss(la, lp, cfg.lambda_p);
                    const real lv = loss.item();
                    if (!std::isfinite(lv))
                        throw NumericError(
                            "train: non-finite loss at epoch " + std::to_string(epoch) +
                            ", frame " + std::to_string(frame.index) +
                            " (assoc=" + std::to_string(la.item()) +
                            ", pos=" + std::to_string(lp.item()) + ")");
                    if (loss.requires_grad()) loss.backward();
                    sum_la += la.item();
                    sum_lp += lp.item();
                    sum_l += lv;
                    ++supervised_frames;
                }

                // Teacher forcing: update with the ground-truth assignment.
                Assignment forced;
                std::vector<bool> det_done(N, false);
                for (int i = 0; i < M; ++i) {
                    const int lin = lineage.at(state.tracks[i].id());
                    int match = -1;
                    if (lin >= 0)
                        for (int j = 0; j < N; ++j)
                            if (det_gt[j] == lin) { match = j; break; }
                    if (match >= 0) {
                        forced.matches.push_back({i, match, real(1)});
                        det_done[match] = true;
                    } else {
                        forced.unmatched_tracks.push_back(i);
                    }
                }
                for (int j = 0; j < N; ++j)
                    if (!det_done[j]) forced.unmatched_dets.push_back(j);

                const int prev_next_id = state.next_id;
                auto outcome =
                    update_tracks(state.tracks, forced, frame, fwd.det_cues, cfg, state.next_id);
                for (const auto& [track_id, det_idx] : outcome.emitted)
                    if (track_id >= prev_next_id) lineage[track_id] = det_gt[det_idx];
                // Retired ids stay in the lineage map; stale entries are harmless.
            }

            ++step;
            const real lr = cosine_power_lr(step - 1, total_steps, cfg.lr, cfg.cosine_power);
            optimizer.step(model.params, lr);
            model.params.zero_grad();

            const real denom = supervised_frames > 0 ? static_cast<real>(supervised_frames) : real(1);
            result.log.push_back({epoch, step, lr, sum_la / denom, sum_lp / denom, sum_l / denom});
        }
    }
    result.epochs_done = cfg.epochs;
    return result;
}

}  // namespace dsct::assoc
