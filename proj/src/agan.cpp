#include "phonssm/agan.hpp"

#include <cmath>
#include <stdexcept>

namespace phonssm {

GatLayerParams gat_layer_init(int d_in, int d_head, int heads, Rng& rng) {
    GatLayerParams layer;
    layer.d_in = d_in;
    layer.d_head = d_head;
    const double ws = 1.0 / std::sqrt(static_cast<double>(d_in));
    const double as = 1.0 / std::sqrt(static_cast<double>(2 * d_head));
    for (int k = 0; k < heads; ++k) {
        GatHeadParams h;
        h.W = Tensor({d_in, d_head});
        for (std::size_t i = 0; i < h.W.size(); ++i) h.W[i] = rng.normal(0.0, ws);
        h.a = Tensor({2 * d_head});
        for (std::size_t i = 0; i < h.a.size(); ++i) h.a[i] = rng.normal(0.0, as);
        layer.heads.push_back(std::move(h));
    }
    return layer;
}

AganParams agan_init(int coord_dims, int d, int heads, int layers, Rng& rng) {
    if (d % heads != 0) throw std::invalid_argument("agan_init: D must be divisible by heads");
    AganParams p;
    p.w_in = Tensor({coord_dims, d});
    const double ws = 1.0 / std::sqrt(static_cast<double>(coord_dims));
    for (std::size_t i = 0; i < p.w_in.size(); ++i) p.w_in[i] = rng.normal(0.0, ws);
    p.b_in = Tensor({d});
    for (int l = 0; l < layers; ++l) p.layers.push_back(gat_layer_init(d, d / heads, heads, rng));
    return p;
}

AganVars agan_register(Tape& tape, const AganParams& p) {
    AganVars v;
    v.w_in = tape.leaf(p.w_in);
    v.b_in = tape.leaf(p.b_in);
    for (const auto& layer : p.layers) {
        GatLayerVars lv;
        lv.d_head = layer.d_head;
        for (const auto& h : layer.heads) lv.heads.push_back({tape.leaf(h.W), tape.leaf(h.a)});
        v.layers.push_back(std::move(lv));
    }
    return v;
}

VarId gat_attention(Tape& tape, VarId u, VarId v, VarId wh, const AnatomicalGraph& graph,
                    int frames, double slope) {
    const Tensor& vu = tape.value(u);
    const Tensor& vwh = tape.value(wh);
    const int n = graph.node_count;
    if (vu.rank() != 1 || vu.dim(0) != frames * n || vwh.dim(0) != frames * n)
        throw std::invalid_argument("gat_attention: shape mismatch");
    const int dh = vwh.dim(1);
    const Tensor& vv = tape.value(v);

    Tensor out({frames * n, dh});
    std::vector<double> alpha;  // per (frame, node) aligned with the neighbor lists
    alpha.reserve(static_cast<std::size_t>(frames) * n * 4);
    for (int t = 0; t < frames; ++t) {
        const int base = t * n;
        for (int i = 0; i < n; ++i) {
            const auto& nb = graph.neighbors[static_cast<std::size_t>(i)];
            const double ui = vu[static_cast<std::size_t>(base + i)];
            double mx = -1e300;
            const std::size_t a0 = alpha.size();
            for (int j : nb) {
                double e = ui + vv[static_cast<std::size_t>(base + j)];
                tape.note_kink_input(e);
                if (e <= 0.0) e *= slope;
                alpha.push_back(e);
                mx = std::max(mx, e);
            }
            double z = 0.0;
            for (std::size_t k = 0; k < nb.size(); ++k) {
                alpha[a0 + k] = std::exp(alpha[a0 + k] - mx);
                z += alpha[a0 + k];
            }
            double* orow = out.data() + static_cast<std::size_t>(base + i) * dh;
            for (std::size_t k = 0; k < nb.size(); ++k) {
                alpha[a0 + k] /= z;
                const double w = alpha[a0 + k];
                const double* src = vwh.data() + static_cast<std::size_t>(base + nb[k]) * dh;
                for (int c = 0; c < dh; ++c) orow[c] += w * src[c];
            }
        }
    }

    const AnatomicalGraph* gptr = &graph;
    return tape.custom(
        {u, v, wh}, std::move(out),
        [u, v, wh, gptr, frames, slope, dh, alpha = std::move(alpha)](Tape& t, VarId o) {
            const Tensor& g = t.grad_ref(o);
            const Tensor& vu = t.value(u);
            const Tensor& vv = t.value(v);
            const Tensor& vwh = t.value(wh);
            const int n = gptr->node_count;
            const bool need_u = t.requires_grad(u);
            const bool need_v = t.requires_grad(v);
            const bool need_wh = t.requires_grad(wh);
            Tensor* gu = need_u ? &t.grad_ref(u) : nullptr;
            Tensor* gv = need_v ? &t.grad_ref(v) : nullptr;
            Tensor* gwh = need_wh ? &t.grad_ref(wh) : nullptr;
            std::size_t cursor = 0;
            std::vector<double> dalpha;
            for (int f = 0; f < frames; ++f) {
                const int base = f * n;
                for (int i = 0; i < n; ++i) {
                    const auto& nb = gptr->neighbors[static_cast<std::size_t>(i)];
                    const std::size_t a0 = cursor;
                    cursor += nb.size();
                    const double* grow = g.data() + static_cast<std::size_t>(base + i) * dh;
                    dalpha.assign(nb.size(), 0.0);
                    double s = 0.0;
                    for (std::size_t k = 0; k < nb.size(); ++k) {
                        const double* src =
                            vwh.data() + static_cast<std::size_t>(base + nb[k]) * dh;
                        double d = 0.0;
                        for (int c = 0; c < dh; ++c) d += grow[c] * src[c];
                        dalpha[k] = d;
                        s += alpha[a0 + k] * d;
                        if (need_wh) {
                            double* dst =
                                gwh->data() + static_cast<std::size_t>(base + nb[k]) * dh;
                            const double w = alpha[a0 + k];
                            for (int c = 0; c < dh; ++c) dst[c] += w * grow[c];
                        }
                    }
                    if (!need_u && !need_v) continue;
                    const double ui = vu[static_cast<std::size_t>(base + i)];
                    for (std::size_t k = 0; k < nb.size(); ++k) {
                        const double de = alpha[a0 + k] * (dalpha[k] - s);
                        const double pre = ui + vv[static_cast<std::size_t>(base + nb[k])];
                        const double dpre = de * (pre > 0.0 ? 1.0 : slope);
                        if (need_u) (*gu)[static_cast<std::size_t>(base + i)] += dpre;
                        if (need_v) (*gv)[static_cast<std::size_t>(base + nb[k])] += dpre;
                    }
                }
            }
        });
}

VarId gat_layer_tape(Tape& tape, VarId h, const AnatomicalGraph& graph,
                     const GatLayerVars& layer, double slope) {
    const int rows = tape.value(h).dim(0);
    if (rows % graph.node_count != 0)
        throw std::invalid_argument("gat_layer: rows not a multiple of node count");
    const int frames = rows / graph.node_count;
    std::vector<VarId> head_outs;
    head_outs.reserve(layer.heads.size());
    for (const auto& head : layer.heads) {
        const VarId wh = tape.matmul(h, head.W);
        // a^T[Wh_i ∥ Wh_j] splits into a source half scoring i, a target half scoring j
        const VarId u = tape.matvec(wh, tape.slice_vec(head.a, 0, layer.d_head));
        const VarId v = tape.matvec(wh, tape.slice_vec(head.a, layer.d_head, layer.d_head));
        head_outs.push_back(gat_attention(tape, u, v, wh, graph, frames, slope));
    }
    return head_outs.size() == 1 ? head_outs[0] : tape.concat_cols(head_outs);
}

VarId agan_forward_tape(Tape& tape, VarId x, const AnatomicalGraph& graph, const AganVars& p,
                        int frames, double dropout_rate, Rng* dropout_rng, bool train) {
    VarId h = tape.add_rowvec(tape.matmul(x, p.w_in), p.b_in);
    for (const auto& layer : p.layers) {
        h = gat_layer_tape(tape, h, graph, layer, kLeakySlope);
        if (train && dropout_rng) h = tape.dropout(h, dropout_rate, *dropout_rng, train);
    }
    return tape.mean_group_rows(h, graph.node_count);
}

Tensor gat_layer(const Tensor& h, const AnatomicalGraph& graph, const GatLayerParams& params,
                 double slope) {
    if (h.rank() != 2 || h.dim(0) != graph.node_count || h.dim(1) != params.d_in)
        throw std::invalid_argument("gat_layer: input shape mismatch");
    if (!h.all_finite()) throw std::invalid_argument("gat_layer: non-finite input");
    Tape tape(false);
    const VarId hv = tape.constant(h);
    GatLayerVars lv;
    lv.d_head = params.d_head;
    for (const auto& head : params.heads)
        lv.heads.push_back({tape.constant(head.W), tape.constant(head.a)});
    return tape.value(gat_layer_tape(tape, hv, graph, lv, slope));
}

Tensor agan_forward(const Tensor& x, const AnatomicalGraph& graph, const AganParams& params) {
    if (x.rank() != 3 || x.dim(1) != graph.node_count || x.dim(2) != params.w_in.dim(0))
        throw std::invalid_argument("agan_forward: input shape mismatch");
    const int frames = x.dim(0);
    Tape tape(false);
    const VarId xv = tape.constant(x.reshaped({frames * graph.node_count, x.dim(2)}));
    const AganVars pv = agan_register(tape, params);
    return tape.value(agan_forward_tape(tape, xv, graph, pv, frames, 0.0, nullptr, false));
}

}  // namespace phonssm
