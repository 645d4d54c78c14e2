#pragma once

#include "phonssm/graph.hpp"
#include "phonssm/rng.hpp"
#include "phonssm/tape.hpp"
#include "phonssm/tensor.hpp"

namespace phonssm {

struct GatHeadParams {
    Tensor W;  // [D_in × D_head]
    Tensor a;  // [2·D_head], first half scores the source, second half the target
};

struct GatLayerParams {
    std::vector<GatHeadParams> heads;
    int d_in = 0;
    int d_head = 0;
    int d_out() const { return static_cast<int>(heads.size()) * d_head; }
};

struct AganParams {
    Tensor w_in;  // [C × D], shared across frames
    Tensor b_in;  // [D]
    std::vector<GatLayerParams> layers;
};

GatLayerParams gat_layer_init(int d_in, int d_head, int heads, Rng& rng);
AganParams agan_init(int coord_dims, int d, int heads, int layers, Rng& rng);

// ----- tape path -----

struct GatHeadVars {
    VarId W, a;
};
struct GatLayerVars {
    std::vector<GatHeadVars> heads;
    int d_head = 0;
};
struct AganVars {
    VarId w_in, b_in;
    std::vector<GatLayerVars> layers;
};

AganVars agan_register(Tape& tape, const AganParams& p);

/// Anatomically-masked multi-head attention over `frames` stacked frames.
/// u, v: [frames·N] per-node score halves; wh: [frames·N × d_head].
/// Masked-out pairs get exactly zero weight (the softmax is restricted to
/// the neighbor set, no -inf trick).
VarId gat_attention(Tape& tape, VarId u, VarId v, VarId wh, const AnatomicalGraph& graph,
                    int frames, double slope);

/// One masked GAT layer over stacked frames: h [frames·N × d_in].
VarId gat_layer_tape(Tape& tape, VarId h, const AnatomicalGraph& graph,
                     const GatLayerVars& layer, double slope);

/// Full Stage-1 encoder. x is a [T·N × C] leaf; returns z [T × D].
VarId agan_forward_tape(Tape& tape, VarId x, const AnatomicalGraph& graph, const AganVars& p,
                        int frames, double dropout_rate, Rng* dropout_rng, bool train);

// ----- plain wrappers (no gradients, no dropout) -----

Tensor gat_layer(const Tensor& h, const AnatomicalGraph& graph, const GatLayerParams& params,
                 double slope = 0.2);
Tensor agan_forward(const Tensor& x, const AnatomicalGraph& graph, const AganParams& params);

inline constexpr double kLeakySlope = 0.2;

}  // namespace phonssm
