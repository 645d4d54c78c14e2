#include "phonssm/model.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

#include "json.hpp"
#include "phonssm/errors.hpp"

namespace phonssm {

using nlohmann::json;

AnatomicalGraph build_graph(const LandmarkLayout& layout) {
    return layout.kind == LayoutKind::DominantHand21 ? build_hand_graph(layout)
                                                     : build_holistic_graph(layout);
}

namespace {

ModelParams model_alloc(const ModelConfig& cfg) {
    if (cfg.d % cfg.gat_heads != 0)
        throw std::invalid_argument("model: D must be divisible by gat_heads");
    ModelParams p;
    const int c = cfg.layout.coord_dims;
    const int dh = cfg.d / cfg.gat_heads;
    p.agan.w_in = Tensor({c, cfg.d});
    p.agan.b_in = Tensor({cfg.d});
    for (int l = 0; l < cfg.gat_layers; ++l) {
        GatLayerParams layer;
        layer.d_in = cfg.d;
        layer.d_head = dh;
        for (int h = 0; h < cfg.gat_heads; ++h)
            layer.heads.push_back({Tensor({cfg.d, dh}), Tensor({2 * dh})});
        p.agan.layers.push_back(std::move(layer));
    }
    const int inner = cfg.expansion * cfg.d;
    for (int l = 0; l < cfg.ssm_layers; ++l) {
        BissmLayerParams layer;
        for (SsmParams* dirp : {&layer.fwd, &layer.bwd}) {
            dirp->log_a = Tensor({cfg.ds});
            dirp->w_b = Tensor({cfg.ds, inner});
            dirp->w_c = Tensor({cfg.ds, inner});
            dirp->w_delta = Tensor({inner});
            dirp->b_delta = Tensor::scalar(0.0);
            dirp->w_up = Tensor({cfg.d, inner});
            dirp->w_down = Tensor({inner, cfg.d});
        }
        layer.w_out = Tensor({2 * cfg.d, cfg.d});
        p.bissm.push_back(std::move(layer));
    }
    if (!cfg.without_pdm) {
        for (int i = 0; i < kNumComponents; ++i) {
            p.pdm.mlps[static_cast<std::size_t>(i)] = {Tensor({cfg.d, cfg.d}), Tensor({cfg.d}),
                                                       Tensor({cfg.d, cfg.dc}), Tensor({cfg.dc})};
            p.banks.component[static_cast<std::size_t>(i)] = Tensor({cfg.counts[i], cfg.dc});
        }
        p.pdm.conv_kernel = Tensor({cfg.dc, cfg.dc, cfg.conv_kernel});
        p.pdm.w_fuse = Tensor({kNumComponents * cfg.dc, cfg.d});
        p.banks.sign = Tensor({cfg.k, cfg.de()});
        p.banks.temperature = cfg.tau;
        p.w_e = Tensor({cfg.sim_concat_dim(), cfg.de()});
    } else {
        p.w_cls = Tensor({cfg.d, cfg.k});
        p.b_cls = Tensor({cfg.k});
    }
    return p;
}

}  // namespace

ModelParams model_init(const ModelConfig& cfg, std::uint64_t seed) {
    ModelParams p = model_alloc(cfg);
    {
        Rng rng(substream(seed, "init-agan"));
        p.agan = agan_init(cfg.layout.coord_dims, cfg.d, cfg.gat_heads, cfg.gat_layers, rng);
    }
    {
        Rng rng(substream(seed, "init-bissm"));
        p.bissm.clear();
        for (int l = 0; l < cfg.ssm_layers; ++l)
            p.bissm.push_back(bissm_layer_init(cfg.d, cfg.expansion, cfg.ds, rng));
    }
    if (!cfg.without_pdm) {
        Rng rng(substream(seed, "init-pdm"));
        p.pdm = pdm_init(cfg.d, cfg.dc, cfg.conv_kernel, rng);
        Rng rng2(substream(seed, "init-banks"));
        p.banks = banks_init(cfg.counts, cfg.dc, cfg.k, cfg.de(), cfg.tau, rng2);
        Rng rng3(substream(seed, "init-head"));
        const double s = 1.0 / std::sqrt(static_cast<double>(cfg.sim_concat_dim()));
        for (std::size_t i = 0; i < p.w_e.size(); ++i) p.w_e[i] = rng3.normal(0.0, s);
    } else {
        Rng rng(substream(seed, "init-head"));
        const double s = 1.0 / std::sqrt(static_cast<double>(cfg.d));
        for (std::size_t i = 0; i < p.w_cls.size(); ++i) p.w_cls[i] = rng.normal(0.0, s);
    }
    return p;
}

namespace {
template <typename Params, typename Fn>
void walk_params(Params& p, const ModelConfig& cfg, Fn&& fn) {
    fn("agan.w_in", p.agan.w_in);
    fn("agan.b_in", p.agan.b_in);
    for (std::size_t l = 0; l < p.agan.layers.size(); ++l)
        for (std::size_t h = 0; h < p.agan.layers[l].heads.size(); ++h) {
            const std::string base =
                "agan.layer" + std::to_string(l) + ".head" + std::to_string(h);
            fn(base + ".W", p.agan.layers[l].heads[h].W);
            fn(base + ".a", p.agan.layers[l].heads[h].a);
        }
    for (std::size_t l = 0; l < p.bissm.size(); ++l) {
        const std::string base = "bissm.layer" + std::to_string(l);
        auto dir = [&](const char* name, auto& s) {
            const std::string db = base + "." + name;
            fn(db + ".log_a", s.log_a);
            fn(db + ".w_b", s.w_b);
            fn(db + ".w_c", s.w_c);
            fn(db + ".w_delta", s.w_delta);
            fn(db + ".b_delta", s.b_delta);
            fn(db + ".w_up", s.w_up);
            fn(db + ".w_down", s.w_down);
        };
        dir("fwd", p.bissm[l].fwd);
        dir("bwd", p.bissm[l].bwd);
        fn(base + ".w_out", p.bissm[l].w_out);
    }
    if (!cfg.without_pdm) {
        for (int i = 0; i < kNumComponents; ++i) {
            const std::string base = std::string("pdm.") + kComponentNames[i];
            auto& m = p.pdm.mlps[static_cast<std::size_t>(i)];
            fn(base + ".w1", m.w1);
            fn(base + ".b1", m.b1);
            fn(base + ".w2", m.w2);
            fn(base + ".b2", m.b2);
        }
        fn("pdm.conv_kernel", p.pdm.conv_kernel);
        fn("pdm.w_fuse", p.pdm.w_fuse);
        for (int i = 0; i < kNumComponents; ++i)
            fn(std::string("banks.") + kComponentNames[i],
               p.banks.component[static_cast<std::size_t>(i)]);
        fn("banks.sign", p.banks.sign);
        fn("w_e", p.w_e);
    } else {
        fn("w_cls", p.w_cls);
        fn("b_cls", p.b_cls);
    }
}
}  // namespace

void for_each_param(ModelParams& p, const ModelConfig& cfg,
                    const std::function<void(const std::string&, Tensor&)>& fn) {
    walk_params(p, cfg, fn);
}

void for_each_param(const ModelParams& p, const ModelConfig& cfg,
                    const std::function<void(const std::string&, const Tensor&)>& fn) {
    walk_params(p, cfg, fn);
}

std::size_t param_count(const ModelParams& p, const ModelConfig& cfg) {
    std::size_t n = 0;
    for_each_param(p, cfg, [&](const std::string&, const Tensor& t) { n += t.size(); });
    return n;
}

ModelVars model_register(Tape& tape, const ModelParams& p, const ModelConfig& cfg) {
    ModelVars v;
    for_each_param(const_cast<ModelParams&>(p), cfg, [&](const std::string&, Tensor& t) {
        v.ordered.push_back(tape.leaf(t));
    });
    // map the flat leaf list back onto the structured handles; the walk
    // below mirrors walk_params exactly
    std::size_t cur = 0;
    auto next = [&]() { return v.ordered.at(cur++); };
    v.agan.w_in = next();
    v.agan.b_in = next();
    for (const auto& layer : p.agan.layers) {
        GatLayerVars lv;
        lv.d_head = layer.d_head;
        for (std::size_t h = 0; h < layer.heads.size(); ++h) {
            GatHeadVars hv;
            hv.W = next();
            hv.a = next();
            lv.heads.push_back(hv);
        }
        v.agan.layers.push_back(std::move(lv));
    }
    for (std::size_t l = 0; l < p.bissm.size(); ++l) {
        BissmLayerVars lv;
        for (SsmVars* dirp : {&lv.fwd, &lv.bwd}) {
            dirp->log_a = next();
            dirp->w_b = next();
            dirp->w_c = next();
            dirp->w_delta = next();
            dirp->b_delta = next();
            dirp->w_up = next();
            dirp->w_down = next();
        }
        lv.w_out = next();
        v.bissm.push_back(lv);
    }
    if (!cfg.without_pdm) {
        for (int i = 0; i < kNumComponents; ++i) {
            Mlp2Vars mv;
            mv.w1 = next();
            mv.b1 = next();
            mv.w2 = next();
            mv.b2 = next();
            v.pdm.mlps[static_cast<std::size_t>(i)] = mv;
        }
        v.pdm.conv_kernel = next();
        v.pdm.w_fuse = next();
        for (int i = 0; i < kNumComponents; ++i) v.banks[static_cast<std::size_t>(i)] = next();
        v.sign_bank = next();
        v.w_e = next();
    } else {
        v.w_cls = next();
        v.b_cls = next();
    }
    if (cur != v.ordered.size()) throw std::logic_error("model_register: order mismatch");
    return v;
}

ForwardTapeOut model_forward_tape(Tape& tape, VarId x, const ModelVars& vars,
                                  const ModelConfig& cfg, const AnatomicalGraph& graph,
                                  Mode mode, Rng* dropout_rng) {
    const bool train = mode == Mode::Train;
    ForwardTapeOut out;
    const VarId z = agan_forward_tape(tape, x, graph, vars.agan, cfg.t, cfg.dropout,
                                      train ? dropout_rng : nullptr, train);
    VarId f = z;
    if (!cfg.without_pdm) {
        const PdmTapeOut pdm = pdm_forward_tape(tape, z, vars.pdm);
        out.streams = pdm.streams;
        out.pooled = pdm.pooled;
        f = pdm.fused;
        if (train && dropout_rng) f = tape.dropout(f, cfg.dropout, *dropout_rng, train);
    }
    for (const auto& layer : vars.bissm) {
        f = bissm_layer_tape(tape, f, layer);
        if (train && dropout_rng) f = tape.dropout(f, cfg.dropout, *dropout_rng, train);
    }
    out.g_mean = tape.mean_rows(f);
    if (!cfg.without_pdm) {
        std::vector<VarId> cat;
        for (int i = 0; i < kNumComponents; ++i) {
            out.sims[static_cast<std::size_t>(i)] = component_similarity_tape(
                tape, out.pooled[static_cast<std::size_t>(i)],
                vars.banks[static_cast<std::size_t>(i)], cfg.tau, kCosineEps);
            cat.push_back(out.sims[static_cast<std::size_t>(i)]);
        }
        cat.push_back(out.g_mean);
        out.embedding = tape.vecmat(tape.concat(cat), vars.w_e);
        out.logits = tape.scale(tape.cos_rows(vars.sign_bank, out.embedding, kCosineEps),
                                1.0 / cfg.tau);
    } else {
        out.logits = tape.add(tape.vecmat(out.g_mean, vars.w_cls), vars.b_cls);
    }
    return out;
}

VarId model_loss_tape(Tape& tape, const ForwardTapeOut& fwd, int label, const ModelVars& vars,
                      const ModelConfig& cfg) {
    VarId loss = tape.cross_entropy_smoothed(fwd.logits, label, cfg.label_smoothing);
    if (!cfg.without_pdm) {
        if (cfg.lambda_ortho != 0.0) {
            const VarId ortho = orthogonality_loss_tape(tape, fwd.pooled, kCosineEps);
            loss = tape.add(loss, tape.scale(ortho, cfg.lambda_ortho));
        }
        if (cfg.lambda_div != 0.0) {
            VarId div = -1;
            for (int i = 0; i < kNumComponents; ++i) {
                const VarId d = diversity_loss_tape(tape, vars.banks[static_cast<std::size_t>(i)]);
                div = div < 0 ? d : tape.add(div, d);
            }
            loss = tape.add(loss, tape.scale(div, cfg.lambda_div / kNumComponents));
        }
    }
    return loss;
}

ForwardResult model_forward(const LandmarkSequence& x, const ModelParams& params,
                            const ModelConfig& cfg, Mode mode, std::uint64_t dropout_seed) {
    if (x.layout.kind != cfg.layout.kind || x.layout.node_count != cfg.layout.node_count)
        throw std::invalid_argument("model_forward: layout mismatch");
    if (x.coords.rank() != 3 || x.coords.dim(0) != cfg.t ||
        x.coords.dim(1) != cfg.layout.node_count || x.coords.dim(2) != cfg.layout.coord_dims)
        throw std::invalid_argument("model_forward: coordinate shape mismatch");
    const AnatomicalGraph graph = build_graph(cfg.layout);
    Tape tape(false);
    const VarId xv = tape.constant(
        x.coords.reshaped({cfg.t * cfg.layout.node_count, cfg.layout.coord_dims}));
    const ModelVars vars = model_register(tape, params, cfg);
    Rng rng(substream(dropout_seed, "dropout"));
    const ForwardTapeOut out = model_forward_tape(tape, xv, vars, cfg, graph, mode,
                                                  mode == Mode::Train ? &rng : nullptr);
    ForwardResult r;
    r.logits = tape.value(out.logits);
    r.g_mean = tape.value(out.g_mean);
    if (!cfg.without_pdm) {
        for (int i = 0; i < kNumComponents; ++i) {
            r.components.streams[static_cast<std::size_t>(i)] =
                tape.value(out.streams[static_cast<std::size_t>(i)]);
            r.components.pooled[static_cast<std::size_t>(i)] =
                tape.value(out.pooled[static_cast<std::size_t>(i)]);
            r.sims[static_cast<std::size_t>(i)] = tape.value(out.sims[static_cast<std::size_t>(i)]);
        }
        r.embedding = tape.value(out.embedding);
    }
    return r;
}

double total_loss(const Tensor& logits, int label, const ComponentSet& components,
                  const PrototypeBanks& banks, const ModelConfig& cfg) {
    if (label < 0 || label >= logits.dim(0))
        throw std::invalid_argument("total_loss: label out of range");
    Tape tape(false);
    double loss =
        tape.value(tape.cross_entropy_smoothed(tape.constant(logits), label,
                                               cfg.label_smoothing))
            .item();
    if (components.pooled[0].size() > 0 && cfg.lambda_ortho != 0.0) {
        const int dc = components.pooled[0].dim(0);
        Tensor pooled({kNumComponents, dc});
        for (int i = 0; i < kNumComponents; ++i)
            for (int j = 0; j < dc; ++j)
                pooled.at(i, j) = components.pooled[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
        loss += cfg.lambda_ortho * orthogonality_loss(pooled);
    }
    if (banks.component[0].size() > 0 && cfg.lambda_div != 0.0) {
        double div = 0.0;
        for (int i = 0; i < kNumComponents; ++i)
            div += diversity_loss(banks.component[static_cast<std::size_t>(i)]);
        loss += cfg.lambda_div * div / kNumComponents;
    }
    return loss;
}

// ----- config / checkpoint serialization -----

std::string config_to_json(const ModelConfig& cfg) {
    json j;
    j["d"] = cfg.d;
    j["dc"] = cfg.dc;
    j["gat_heads"] = cfg.gat_heads;
    j["gat_layers"] = cfg.gat_layers;
    j["ssm_layers"] = cfg.ssm_layers;
    j["ds"] = cfg.ds;
    j["expansion"] = cfg.expansion;
    j["dropout"] = cfg.dropout;
    j["tau"] = cfg.tau;
    j["counts"] = {cfg.counts.hand, cfg.counts.loc, cfg.counts.mov, cfg.counts.ori};
    j["k"] = cfg.k;
    j["t"] = cfg.t;
    j["layout"] =
        cfg.layout.kind == LayoutKind::DominantHand21 ? "DominantHand21" : "PoseHands75";
    j["lambda_ortho"] = cfg.lambda_ortho;
    j["lambda_div"] = cfg.lambda_div;
    j["label_smoothing"] = cfg.label_smoothing;
    j["conv_kernel"] = cfg.conv_kernel;
    j["without_pdm"] = cfg.without_pdm;
    return j.dump();
}

ModelConfig config_from_json(const std::string& text) {
    const json j = json::parse(text);
    ModelConfig cfg;
    cfg.d = j.at("d");
    cfg.dc = j.at("dc");
    cfg.gat_heads = j.at("gat_heads");
    cfg.gat_layers = j.at("gat_layers");
    cfg.ssm_layers = j.at("ssm_layers");
    cfg.ds = j.at("ds");
    cfg.expansion = j.at("expansion");
    cfg.dropout = j.at("dropout");
    cfg.tau = j.at("tau");
    cfg.counts.hand = j.at("counts")[0];
    cfg.counts.loc = j.at("counts")[1];
    cfg.counts.mov = j.at("counts")[2];
    cfg.counts.ori = j.at("counts")[3];
    cfg.k = j.at("k");
    cfg.t = j.at("t");
    cfg.layout = j.at("layout") == "DominantHand21" ? LandmarkLayout::dominant_hand21()
                                                    : LandmarkLayout::pose_hands75();
    cfg.lambda_ortho = j.at("lambda_ortho");
    cfg.lambda_div = j.at("lambda_div");
    cfg.label_smoothing = j.at("label_smoothing");
    cfg.conv_kernel = j.at("conv_kernel");
    cfg.without_pdm = j.at("without_pdm");
    return cfg;
}

namespace {
constexpr char kCheckpointMagic[4] = {'P', 'H', 'C', 'K'};
}

void save_checkpoint(const std::string& path, const ModelParams& params,
                     const ModelConfig& cfg) {
    json tensors = json::array();
    std::size_t offset = 0;
    for_each_param(params, cfg, [&](const std::string& name, const Tensor& t) {
        json e;
        e["name"] = name;
        e["shape"] = t.shape();
        e["offset"] = offset;
        tensors.push_back(e);
        offset += t.size();
    });
    json header;
    header["format_version"] = kCheckpointVersion;
    header["config"] = json::parse(config_to_json(cfg));
    header["tensors"] = tensors;
    const std::string htext = header.dump();

    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("save_checkpoint: cannot open " + path);
    f.write(kCheckpointMagic, 4);
    const std::uint32_t ver = kCheckpointVersion;
    f.write(reinterpret_cast<const char*>(&ver), sizeof(ver));
    const std::uint64_t hlen = htext.size();
    f.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    f.write(htext.data(), static_cast<std::streamsize>(htext.size()));
    for_each_param(params, cfg, [&](const std::string&, const Tensor& t) {
        f.write(reinterpret_cast<const char*>(t.data()),
                static_cast<std::streamsize>(t.size() * sizeof(double)));
    });
    if (!f) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

std::pair<ModelParams, ModelConfig> load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("load_checkpoint: cannot open " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, kCheckpointMagic, 4) != 0)
        throw format_error("load_checkpoint: bad magic in " + path);
    std::uint32_t ver = 0;
    f.read(reinterpret_cast<char*>(&ver), sizeof(ver));
    if (!f || ver != kCheckpointVersion)
        throw format_error("load_checkpoint: unsupported version " + std::to_string(ver));
    std::uint64_t hlen = 0;
    f.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    std::string htext(hlen, '\0');
    f.read(htext.data(), static_cast<std::streamsize>(hlen));
    if (!f) throw format_error("load_checkpoint: truncated header in " + path);
    json header;
    try {
        header = json::parse(htext);
    } catch (const std::exception& e) {
        throw format_error(std::string("load_checkpoint: corrupt header: ") + e.what());
    }
    const ModelConfig cfg = config_from_json(header.at("config").dump());
    ModelParams params = model_alloc(cfg);
    const std::size_t expected = header.at("tensors").size();
    std::size_t seen = 0;
    for_each_param(params, cfg, [&](const std::string& name, Tensor& t) {
        const std::streamoff at = f.tellg();
        f.read(reinterpret_cast<char*>(t.data()),
               static_cast<std::streamsize>(t.size() * sizeof(double)));
        if (!f)
            throw format_error("load_checkpoint: truncated payload for tensor '" + name +
                               "' at byte offset " + std::to_string(at));
        ++seen;
    });
    if (seen != expected)
        throw format_error("load_checkpoint: tensor count mismatch in " + path);
    return {std::move(params), cfg};
}

}  // namespace phonssm
