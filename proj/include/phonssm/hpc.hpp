#pragma once

#include <array>
#include <cstdint>

#include "phonssm/pdm.hpp"
#include "phonssm/rng.hpp"
#include "phonssm/tape.hpp"
#include "phonssm/tensor.hpp"

namespace phonssm {

/// Learnable prototype banks. Component rows are kept ℓ2-normalized by the
/// optimizer after every step; the sign bank is unconstrained.
struct PrototypeBanks {
    std::array<Tensor, kNumComponents> component;  // [N_i × Dc]
    Tensor sign;                                   // [K × De]
    double temperature = 0.1;
};

struct PrototypeCounts {
    int hand = 30, loc = 15, mov = 10, ori = 8;
    int operator[](int i) const {
        const int v[kNumComponents] = {hand, loc, mov, ori};
        return v[i];
    }
};

PrototypeBanks banks_init(const PrototypeCounts& counts, int dc, int k, int de, double tau,
                          Rng& rng);

/// Temperature-scaled cosine matching: softmax(cos(c̄, p_j)/τ).
Tensor component_similarity(const Tensor& pooled, const Tensor& bank, double tau);

/// e = W_e[s_hand ∥ s_loc ∥ s_mov ∥ s_ori ∥ ḡ]; logits_k = cos(e, p_k)/τ.
/// w_e is [(ΣN_i + D) × De].
Tensor sign_logits(const std::array<Tensor, kNumComponents>& sims, const Tensor& g_mean,
                   const PrototypeBanks& banks, const Tensor& w_e);

/// Mean squared pairwise inner product, (1/(M(M-1))) Σ_{i≠j} ⟨p_i,p_j⟩².
double diversity_loss(const Tensor& bank);

/// Product of the component inventory sizes.
std::int64_t capacity(const std::array<int, kNumComponents>& counts);

void normalize_rows(Tensor& bank);

// ----- tape path -----

VarId component_similarity_tape(Tape& tape, VarId pooled, VarId bank, double tau, double eps);
VarId diversity_loss_tape(Tape& tape, VarId bank);

}  // namespace phonssm
