#pragma once

#include <array>

#include "phonssm/rng.hpp"
#include "phonssm/tape.hpp"
#include "phonssm/tensor.hpp"

namespace phonssm {

enum Component { Hand = 0, Loc = 1, Mov = 2, Ori = 3 };
inline constexpr int kNumComponents = 4;
inline constexpr const char* kComponentNames[kNumComponents] = {"hand", "loc", "mov", "ori"};

/// Norm epsilon used inside cosines during training; the standalone loss
/// functions reject zero-norm inputs instead.
inline constexpr double kCosineEps = 1e-8;

struct Mlp2 {
    Tensor w1, b1;  // [D×D], [D]
    Tensor w2, b2;  // [D×Dc], [Dc]
};

struct PdmParams {
    std::array<Mlp2, kNumComponents> mlps;
    Tensor conv_kernel;  // [Dc×Dc×k], k odd
    Tensor w_fuse;       // [4·Dc × D]
};

/// Per-frame component streams (movement after its residual temporal
/// convolution) and their time means.
struct ComponentSet {
    std::array<Tensor, kNumComponents> streams;  // each T×Dc
    std::array<Tensor, kNumComponents> pooled;   // each Dc
};

PdmParams pdm_init(int d, int dc, int conv_kernel, Rng& rng);

// ----- tape path -----

struct Mlp2Vars {
    VarId w1, b1, w2, b2;
};
struct PdmVars {
    std::array<Mlp2Vars, kNumComponents> mlps;
    VarId conv_kernel, w_fuse;
};
struct PdmTapeOut {
    std::array<VarId, kNumComponents> streams;
    std::array<VarId, kNumComponents> pooled;
    VarId fused;  // T×D
};

PdmVars pdm_register(Tape& tape, const PdmParams& p);
PdmTapeOut pdm_forward_tape(Tape& tape, VarId z, const PdmVars& p);

/// Σ_{i<j} cos²(pooled_i, pooled_j) over the four pooled component vectors.
VarId orthogonality_loss_tape(Tape& tape, const std::array<VarId, kNumComponents>& pooled,
                              double eps);

// ----- plain operations -----

std::pair<ComponentSet, Tensor> pdm_forward(const Tensor& z, const PdmParams& params);

/// pooled: [4×Dc]. Throws degenerate_input on any zero-norm row.
double orthogonality_loss(const Tensor& pooled);

/// Exact gradient of orthogonality_loss (the closed form reduces to
/// (2·cos/|c_k|)(ĉ_j − cos·ĉ_k) summed over j≠k). Used as the oracle
/// against the tape gradient.
Tensor orthogonality_grad(const Tensor& pooled);

}  // namespace phonssm
