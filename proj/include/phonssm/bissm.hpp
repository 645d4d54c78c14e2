#pragma once

#include <utility>

#include "phonssm/rng.hpp"
#include "phonssm/tape.hpp"
#include "phonssm/tensor.hpp"

namespace phonssm {

enum class ScanDirection { Fwd, Bwd };

/// One selective-SSM direction. The scan itself runs at width `d_inner`;
/// bissm_layer wraps it between the expansion projections (d_model ->
/// d_inner -> d_model with d_inner = expansion · d_model).
struct SsmParams {
    Tensor log_a;    // [Ds]; A_diag = -exp(log_a) < 0
    Tensor w_b;      // [Ds × d_inner]
    Tensor w_c;      // [Ds × d_inner]
    Tensor w_delta;  // [d_inner]
    Tensor b_delta;  // scalar
    Tensor w_up;     // [d_model × d_inner]
    Tensor w_down;   // [d_inner × d_model]
};

struct BissmLayerParams {
    SsmParams fwd;  // independent weights per direction
    SsmParams bwd;
    Tensor w_out;  // [2·d_model × d_model]
};

SsmParams ssm_init(int d_model, int d_inner, int ds, Rng& rng);
BissmLayerParams bissm_layer_init(int d_model, int expansion, int ds, Rng& rng);

/// Zero-order-hold discretization of one diagonal entry:
/// ā = exp(δa), b̄ = ((exp(δa) − 1)/a)·b. delta must be positive, a nonzero.
std::pair<double, double> discretize(double a, double b, double delta);

/// (B_t, C_t, Δ_t) from one input frame.
struct SelectiveParams {
    Tensor b_t;     // [Ds]
    Tensor c_t;     // [Ds]
    double delta_t;  // softplus(w_Δᵀf + b_Δ) > 0
};
SelectiveParams selective_params(const Tensor& f_t, const SsmParams& params);

/// Selective scan, x_0 = 0. State is one [d × Ds] buffer regardless of T;
/// Bwd is the forward scan on the time-reversed input, reversed back.
Tensor ssm_scan(const Tensor& f, const SsmParams& params, ScanDirection dir);

/// Scratch footprint of the streaming scan (excludes input/output).
std::size_t ssm_scan_scratch_bytes(int d, int ds);

/// Full bidirectional layer with residual: g = W_out[fwd ∥ bwd] + f.
Tensor bissm_layer(const Tensor& f, const BissmLayerParams& params);

// ----- tape path -----

struct SsmVars {
    VarId log_a, w_b, w_c, w_delta, b_delta, w_up, w_down;
};
struct BissmLayerVars {
    SsmVars fwd, bwd;
    VarId w_out;
};

SsmVars ssm_register(Tape& tape, const SsmParams& p);
BissmLayerVars bissm_register(Tape& tape, const BissmLayerParams& p);

VarId ssm_scan_tape(Tape& tape, VarId f, const SsmVars& p, ScanDirection dir);
VarId bissm_layer_tape(Tape& tape, VarId f, const BissmLayerVars& p);

}  // namespace phonssm
