#include "dsct/cue.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace dsct::cue {

SelfInfoResult self_info_encode(const Tensor& Z, const SelfInfoLayer& layer) {
    const int n = Z.rows();
    if (n == 0) return {Tensor::zeros({0, Z.cols()}), Tensor::zeros({0, 0})};
    Tensor Q = matmul(Z, layer.Wq);
    Tensor K = matmul(Z, layer.Wk);
    Tensor V = matmul(Z, layer.Wv);
    auto attn = attention(Q, K, V);
    Tensor Z_tilde = layer.ffn.forward(add(Z, attn.out));
    return {Z_tilde, attn.scores};
}

CueSet extract_cue(const Tensor& E, int i, int k) {
    if (k < 1) throw ContractError("extract_cue: k must be >= 1");
    const int n = E.cols();
    if (i < 0 || i >= E.rows()) throw ContractError("extract_cue: row index out of range");
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
        const real sa = E.at(i, a), sb = E.at(i, b);
        if (sa != sb) return sa > sb;
        return a < b;
    });
    idx.resize(std::min(k, n));
    return {std::move(idx)};
}

std::vector<CueSet> extract_cues(const Tensor& E, int k) {
    std::vector<CueSet> cues;
    cues.reserve(E.rows());
    for (int i = 0; i < E.rows(); ++i) cues.push_back(extract_cue(E, i, k));
    return cues;
}

Tensor cue_features(const Tensor& Z_tilde, const CueSet& cue) {
    return gather_rows(Z_tilde, cue.source_indices);
}

Tensor consistency_score(const Tensor& C_a, const Tensor& C_b,
                         const Tensor& Wq, const Tensor& Wk) {
    if (C_a.rows() == 0 || C_b.rows() == 0)
        throw ContractError("consistency_score: empty cue");
    const int kp = std::min(C_a.rows(), C_b.rows());
    const int d = C_a.cols();
    Tensor Pa = matmul(slice_rows(C_a, 0, kp), Wq);
    Tensor Pb = matmul(slice_rows(C_b, 0, kp), Wk);
    return scale(sum(mul(Pa, Pb)), real(1) / std::sqrt(static_cast<real>(d)));
}

Tensor predict_positions(const Tensor& Z_hat_m, const Mlp& pos_head) {
    if (Z_hat_m.rows() == 0) return Tensor::zeros({0, 2});
    return pos_head.forward(Z_hat_m);
}

Mask build_interaction_mask(const std::vector<const scene::Track*>& tracks,
                            const scene::Frame& frame, const Tensor& predicted,
                            const std::vector<double>& thresholds) {
    const int M = static_cast<int>(tracks.size());
    const int N = static_cast<int>(frame.detections.size());
    Mask mask(M, N, false);
    for (int i = 0; i < M; ++i) {
        const int cls = tracks[i]->class_index();
        if (cls < 0 || cls >= static_cast<int>(thresholds.size()))
            throw ConfigError("interaction mask: no distance threshold for class " +
                              std::to_string(cls));
        const double th = thresholds[cls];
        for (int j = 0; j < N; ++j) {
            const auto& det = frame.detections[j];
            if (det.class_index != cls) continue;
            const double dx = static_cast<double>(predicted.at(i, 0)) - det.p[0];
            const double dy = static_cast<double>(predicted.at(i, 1)) - det.p[1];
            if (std::hypot(dx, dy) <= th) mask.set(i, j, true);
        }
    }
    return mask;
}

namespace {

// One direction: queries attend to keys through cue consistency (or plain
// feature similarity in vanilla mode).
Tensor cross_direction(const Tensor& Zq, const std::vector<CueSet>& q_cues,
                       const Tensor& Zk, const std::vector<CueSet>& k_cues,
                       const Mask& allowed, const CrossDirection& dir, CrossMode mode) {
    const int nq = Zq.rows();
    const int nk = Zk.rows();
    const int d = Zq.cols();
    if (nq == 0) return Tensor::zeros({0, d});

    bool any_allowed = false;
    for (auto a : allowed.allowed) any_allowed = any_allowed || (a != 0);
    if (nk == 0 || !any_allowed)
        return dir.ffn.forward(Zq);  // nothing to attend to: residual path only

    Tensor scores;
    if (mode == CrossMode::Vanilla) {
        scores = matmul_nt(matmul(Zq, dir.Wq), matmul(Zk, dir.Wk));
    } else {
        const int kq = static_cast<int>(q_cues[0].source_indices.size());
        const int kk = static_cast<int>(k_cues[0].source_indices.size());
        const int kp = std::min(kq, kk);  // rank-paired over the shorter cue
        for (int l = 0; l < kp; ++l) {
            std::vector<int> qi(nq), ki(nk);
            for (int i = 0; i < nq; ++i) qi[i] = q_cues[i].source_indices[l];
            for (int j = 0; j < nk; ++j) ki[j] = k_cues[j].source_indices[l];
            Tensor part = matmul_nt(matmul(gather_rows(Zq, qi), dir.Wq),
                                    matmul(gather_rows(Zk, ki), dir.Wk));
            scores = (l == 0) ? part : add(scores, part);
        }
    }
    scores = scale(scores, real(1) / std::sqrt(static_cast<real>(d)));

    Tensor weights = softmax(mask_fill(scores, allowed), -1);
    // Rows with no allowed partner get uniform weights from the softmax of a
    // constant row; zero them so such rows reduce to the residual path.
    Tensor row_keep = Tensor::zeros({nq, nk});
    {
        auto& v = row_keep.mutable_values();
        for (int i = 0; i < nq; ++i) {
            bool any = false;
            for (int j = 0; j < nk && !any; ++j) any = allowed.at(i, j);
            if (any)
                for (int j = 0; j < nk; ++j) v[static_cast<size_t>(i) * nk + j] = real(1);
        }
    }
    weights = mul(weights, row_keep);
    Tensor y = matmul(weights, matmul(Zk, dir.Wv));
    return dir.ffn.forward(add(Zq, y));
}

Mask transpose_mask(const Mask& m) {
    Mask t(m.cols, m.rows, false);
    for (int i = 0; i < m.rows; ++i)
        for (int j = 0; j < m.cols; ++j)
            if (m.at(i, j)) t.set(j, i, true);
    return t;
}

}  // namespace

CrossResult cue_cross_attention(const Tensor& Zt_m, const Tensor& E_m,
                                const Tensor& Zt_B, const Tensor& E_B, const Mask& allowed,
                                const CueIteration& iter, int k_cue, CrossMode mode) {
    std::vector<CueSet> m_cues, b_cues;
    if (mode == CrossMode::Cue) {
        m_cues = extract_cues(E_m, k_cue);
        b_cues = extract_cues(E_B, k_cue);
    }
    const Mask det_to_trk = transpose_mask(allowed);  // detection rows x track cols
    CrossResult out;
    out.Y_B = cross_direction(Zt_B, b_cues, Zt_m, m_cues, det_to_trk, iter.det_side, mode);
    out.Y_m = cross_direction(Zt_m, m_cues, Zt_B, b_cues, allowed, iter.trk_side, mode);
    return out;
}

ModuleResult run(const Tensor& Z_m, const Tensor& Z_B, const Mask& allowed,
                 const Model& model) {
    Tensor Ym = Z_m, Yb = Z_B;
    ModuleResult result;
    for (int i = 0; i < model.cfg.g; ++i) {
        const CueIteration& iter = model.cue[i];
        auto self_m = self_info_encode(Ym, iter.self_tracks);
        auto self_b = self_info_encode(Yb, iter.self_dets);
        result.det_cues = extract_cues(self_b.E, model.cfg.k_cue);
        auto crossed = cue_cross_attention(self_m.Z_tilde, self_m.E, self_b.Z_tilde,
                                           self_b.E, allowed, iter, model.cfg.k_cue,
                                           model.cfg.cross_mode);
        Ym = crossed.Y_m;
        Yb = crossed.Y_B;
    }
    result.Y_m = Ym;
    result.Y_B = Yb;
    return result;
}

}  // namespace dsct::cue
