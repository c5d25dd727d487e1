#include "dsct/model.hpp"

#include <cmath>
#include <fstream>

#include "json.hpp"

namespace dsct {

using nlohmann::json;

void ModelConfig::validate() const {
    if (d_model < 2 || d_model % 2 != 0)
        throw ConfigError("d_model must be even and >= 2, got " + std::to_string(d_model));
    if (L < 1) throw ConfigError("L must be >= 1");
    if (g < 1) throw ConfigError("g must be >= 1");
    if (k_neighbors < 1) throw ConfigError("k_neighbors must be >= 1");
    if (k_cue < 1) throw ConfigError("k_cue must be >= 1");
    if (t_max < 1) throw ConfigError("t_max must be >= 1");
    if (bands < 1) throw ConfigError("bands must be >= 1");
    if (n_classes < 1) throw ConfigError("n_classes must be >= 1");
}

Tensor FfnBlock::forward(const Tensor& x) const {
    Tensor u = layer_norm(x, ln_gain, ln_bias);
    Tensor h = linear(u, W1, &b1);
    h = relu(h);
    h = linear(h, W2, &b2);
    return add(u, h);
}

namespace {

struct Builder {
    ParameterStore& store;
    std::mt19937_64 rng;

    Tensor weight(const std::string& name, int in, int out) {
        const real stddev = real(1) / std::sqrt(static_cast<real>(in));
        return store.add(name, Tensor::randn({in, out}, rng, stddev));
    }
    Tensor bias(const std::string& name, int n) {
        return store.add(name, Tensor::zeros({n}));
    }

    FfnBlock ffn(const std::string& prefix, int d, int hidden) {
        FfnBlock f;
        f.ln_gain = store.add(prefix + ".ln.gain", Tensor::full({d}, real(1)));
        f.ln_bias = bias(prefix + ".ln.bias", d);
        f.W1 = weight(prefix + ".l0.W", d, hidden);
        f.b1 = bias(prefix + ".l0.b", hidden);
        f.W2 = weight(prefix + ".l1.W", hidden, d);
        f.b2 = bias(prefix + ".l1.b", d);
        return f;
    }

    Mlp mlp2(const std::string& prefix, int in, int hidden, int out) {
        Mlp m;
        m.layers.push_back({weight(prefix + ".l0.W", in, hidden),
                            bias(prefix + ".l0.b", hidden), Activation::Relu});
        m.layers.push_back({weight(prefix + ".l1.W", hidden, out),
                            bias(prefix + ".l1.b", out), Activation::None});
        return m;
    }

    GiaBlock gia(const std::string& prefix, int d, int hidden) {
        GiaBlock g;
        g.Wq = weight(prefix + ".Wq", d, d);
        g.Wk = weight(prefix + ".Wk", d, d);
        g.Wv = weight(prefix + ".Wv", d, d);
        g.We = weight(prefix + ".We", d, d);
        g.Wg = weight(prefix + ".Wg", d, d);
        g.mix_W = weight(prefix + ".mix.W", 2 * d, d);
        g.mix_b = bias(prefix + ".mix.b", d);
        g.ffn = ffn(prefix + ".ffn", d, hidden);
        return g;
    }

    TemporalLayer temporal(const std::string& prefix, int d, int hidden) {
        TemporalLayer t;
        t.Wq = weight(prefix + ".Wq", d, d);
        t.Wk = weight(prefix + ".Wk", d, d);
        t.Wv = weight(prefix + ".Wv", d, d);
        t.ffn = ffn(prefix + ".ffn", d, hidden);
        return t;
    }

    SelfInfoLayer self_info(const std::string& prefix, int d, int hidden) {
        SelfInfoLayer s;
        s.Wq = weight(prefix + ".Wq", d, d);
        s.Wk = weight(prefix + ".Wk", d, d);
        s.Wv = weight(prefix + ".Wv", d, d);
        s.ffn = ffn(prefix + ".ffn", d, hidden);
        return s;
    }

    CrossDirection cross(const std::string& prefix, int d, int hidden) {
        CrossDirection c;
        c.Wq = weight(prefix + ".Wq", d, d);
        c.Wk = weight(prefix + ".Wk", d, d);
        c.Wv = weight(prefix + ".Wv", d, d);
        c.ffn = ffn(prefix + ".ffn", d, hidden);
        return c;
    }
};

}  // namespace

Model Model::init(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Model m;
    m.cfg = cfg;
    Builder b{m.params, std::mt19937_64(seed)};

    const int d = cfg.d_model;
    const int h = cfg.ffn_hidden();
    const int geo_in = 4 * 2 * cfg.bands;

    for (int l = 0; l < cfg.L; ++l) {
        const std::string p = "geo.iter" + std::to_string(l);
        GeoStage stage;
        stage.state_mlp = b.mlp2(p + ".state_mlp", cfg.state_dim(), d, d);
        stage.geo_mlp = b.mlp2(p + ".geo_mlp", geo_in, d, d);
        stage.gia = b.gia(p + ".gia", d, h);
        m.geo.push_back(std::move(stage));
    }
    for (int l = 0; l < cfg.L; ++l)
        m.temporal.push_back(b.temporal("temporal.iter" + std::to_string(l), d, h));
    m.track_token = m.params.add("temporal.token",
                                 Tensor::randn({1, d}, b.rng, real(0.1)));
    for (int i = 0; i < cfg.g; ++i) {
        const std::string p = "cue.iter" + std::to_string(i);
        CueIteration it;
        it.self_tracks = b.self_info(p + ".self_m", d, h);
        it.self_dets = b.self_info(p + ".self_b", d, h);
        it.det_side = b.cross(p + ".cross_det", d, h);
        it.trk_side = b.cross(p + ".cross_trk", d, h);
        m.cue.push_back(std::move(it));
    }
    m.pos_head = b.mlp2("pos_head", d, d, 2);
    m.affinity_head = b.mlp2("affinity", d, d, 1);
    return m;
}

// ---- checkpoint -------------------------------------------------------------

namespace {
constexpr int kCheckpointVersion = 1;

json adam_state_to_json(const AdamW::State& s) {
    json j;
    j["t"] = s.t;
    j["m"] = s.m;
    j["v"] = s.v;
    return j;
}
}  // namespace

void save_checkpoint(const std::string& path, const Model& model, int trained_epochs,
                     const AdamW* optimizer) {
    json j;
    j["format_version"] = kCheckpointVersion;
    const auto& c = model.cfg;
    j["hyper"] = {{"d_model", c.d_model}, {"L", c.L},       {"g", c.g},
                  {"k_neighbors", c.k_neighbors}, {"k_cue", c.k_cue},
                  {"t_max", c.t_max},     {"bands", c.bands},
                  {"n_classes", c.n_classes},
                  {"cross_attention", c.cross_mode == CrossMode::Cue ? "cue" : "vanilla"}};
    j["trained_epochs"] = trained_epochs;
    json params = json::object();
    for (const auto& p : model.params) {
        json entry;
        entry["shape"] = p.tensor.shape();
        entry["values"] = p.tensor.values();
        params[p.name] = std::move(entry);
    }
    j["params"] = std::move(params);
    if (optimizer) j["optimizer"] = adam_state_to_json(optimizer->state());

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint " + path);
    out << j.dump();
}

Checkpoint load_checkpoint(const std::string& path, Model& model_out) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open checkpoint " + path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw SchemaError(std::string("checkpoint: ") + e.what());
    }
    if (!j.contains("format_version") || j["format_version"].get<int>() != kCheckpointVersion)
        throw SchemaError("checkpoint: unsupported or missing format_version");

    Checkpoint ck;
    const auto& h = j.at("hyper");
    ck.cfg.d_model = h.at("d_model").get<int>();
    ck.cfg.L = h.at("L").get<int>();
    ck.cfg.g = h.at("g").get<int>();
    ck.cfg.k_neighbors = h.at("k_neighbors").get<int>();
    ck.cfg.k_cue = h.at("k_cue").get<int>();
    ck.cfg.t_max = h.at("t_max").get<int>();
    ck.cfg.bands = h.at("bands").get<int>();
    ck.cfg.n_classes = h.at("n_classes").get<int>();
    const std::string mode = h.value("cross_attention", "cue");
    if (mode == "cue") ck.cfg.cross_mode = CrossMode::Cue;
    else if (mode == "vanilla") ck.cfg.cross_mode = CrossMode::Vanilla;
    else throw SchemaError("checkpoint: unknown cross_attention mode '" + mode + "'");
    ck.trained_epochs = j.value("trained_epochs", 0);

    model_out = Model::init(ck.cfg, /*seed=*/0);
    const auto& params = j.at("params");
    size_t seen = 0;
    for (auto& p : model_out.params) {
        if (!params.contains(p.name))
            throw SchemaError("checkpoint: missing parameter '" + p.name + "'");
        const auto& entry = params.at(p.name);
        const auto shape = entry.at("shape").get<Shape>();
        if (shape != p.tensor.shape())
            throw SchemaError("checkpoint: parameter '" + p.name + "' has shape " +
                              shape_str(shape) + ", expected " + shape_str(p.tensor.shape()));
        auto values = entry.at("values").get<std::vector<real>>();
        if (values.size() != p.tensor.values().size())
            throw SchemaError("checkpoint: parameter '" + p.name + "' value count mismatch");
        p.tensor.mutable_values() = std::move(values);
        ++seen;
    }
    if (seen != params.size())
        throw SchemaError("checkpoint: file contains " + std::to_string(params.size()) +
                          " parameters, model expects " + std::to_string(seen));

    if (j.contains("optimizer")) {
        ck.has_optimizer = true;
        const auto& o = j.at("optimizer");
        ck.opt_state.t = o.at("t").get<long long>();
        ck.opt_state.m = o.at("m").get<std::vector<std::vector<real>>>();
        ck.opt_state.v = o.at("v").get<std::vector<std::vector<real>>>();
    }
    return ck;
}

}  // namespace dsct
