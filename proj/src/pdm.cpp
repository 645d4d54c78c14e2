#include "phonssm/pdm.hpp"

#include <cmath>
#include <stdexcept>

#include "phonssm/errors.hpp"

namespace phonssm {

namespace {
Mlp2 mlp_init(int d_in, int d_hidden, int d_out, Rng& rng) {
    Mlp2 m;
    m.w1 = Tensor({d_in, d_hidden});
    m.w2 = Tensor({d_hidden, d_out});
    const double s1 = 1.0 / std::sqrt(static_cast<double>(d_in));
    const double s2 = 1.0 / std::sqrt(static_cast<double>(d_hidden));
    for (std::size_t i = 0; i < m.w1.size(); ++i) m.w1[i] = rng.normal(0.0, s1);
    for (std::size_t i = 0; i < m.w2.size(); ++i) m.w2[i] = rng.normal(0.0, s2);
    m.b1 = Tensor({d_hidden});
    m.b2 = Tensor({d_out});
    return m;
}
}  // namespace

PdmParams pdm_init(int d, int dc, int conv_kernel, Rng& rng) {
    if (conv_kernel % 2 == 0) throw std::invalid_argument("pdm_init: kernel must be odd");
    PdmParams p;
    for (int i = 0; i < kNumComponents; ++i) p.mlps[static_cast<std::size_t>(i)] = mlp_init(d, d, dc, rng);
    p.conv_kernel = Tensor({dc, dc, conv_kernel});
    const double sk = 1.0 / std::sqrt(static_cast<double>(dc * conv_kernel));
    for (std::size_t i = 0; i < p.conv_kernel.size(); ++i) p.conv_kernel[i] = rng.normal(0.0, sk);
    p.w_fuse = Tensor({kNumComponents * dc, d});
    const double sf = 1.0 / std::sqrt(static_cast<double>(kNumComponents * dc));
    for (std::size_t i = 0; i < p.w_fuse.size(); ++i) p.w_fuse[i] = rng.normal(0.0, sf);
    return p;
}

PdmVars pdm_register(Tape& tape, const PdmParams& p) {
    PdmVars v;
    for (int i = 0; i < kNumComponents; ++i) {
        const Mlp2& m = p.mlps[static_cast<std::size_t>(i)];
        v.mlps[static_cast<std::size_t>(i)] = {tape.leaf(m.w1), tape.leaf(m.b1),
                                               tape.leaf(m.w2), tape.leaf(m.b2)};
    }
    v.conv_kernel = tape.leaf(p.conv_kernel);
    v.w_fuse = tape.leaf(p.w_fuse);
    return v;
}

PdmTapeOut pdm_forward_tape(Tape& tape, VarId z, const PdmVars& p) {
    PdmTapeOut out;
    for (int i = 0; i < kNumComponents; ++i) {
        const Mlp2Vars& m = p.mlps[static_cast<std::size_t>(i)];
        const VarId h = tape.gelu(tape.add_rowvec(tape.matmul(z, m.w1), m.b1));
        VarId c = tape.add_rowvec(tape.matmul(h, m.w2), m.b2);
        if (i == Mov) c = tape.add(c, tape.conv1d_same(c, p.conv_kernel));
        out.streams[static_cast<std::size_t>(i)] = c;
        out.pooled[static_cast<std::size_t>(i)] = tape.mean_rows(c);
    }
    out.fused = tape.matmul(
        tape.concat_cols({out.streams[Hand], out.streams[Loc], out.streams[Mov], out.streams[Ori]}),
        p.w_fuse);
    return out;
}

VarId orthogonality_loss_tape(Tape& tape, const std::array<VarId, kNumComponents>& pooled,
                              double eps) {
    VarId loss = -1;
    for (int i = 0; i < kNumComponents; ++i)
        for (int j = i + 1; j < kNumComponents; ++j) {
            const VarId c = tape.cos_pair(pooled[static_cast<std::size_t>(i)],
                                          pooled[static_cast<std::size_t>(j)], eps);
            const VarId c2 = tape.mul(c, c);
            loss = loss < 0 ? c2 : tape.add(loss, c2);
        }
    return loss;
}

std::pair<ComponentSet, Tensor> pdm_forward(const Tensor& z, const PdmParams& params) {
    if (z.rank() != 2 || z.dim(1) != params.mlps[0].w1.dim(0))
        throw std::invalid_argument("pdm_forward: input shape mismatch");
    if (!z.all_finite()) throw std::invalid_argument("pdm_forward: non-finite input");
    Tape tape(false);
    const VarId zv = tape.constant(z);
    const PdmVars pv = pdm_register(tape, params);
    const PdmTapeOut out = pdm_forward_tape(tape, zv, pv);
    ComponentSet cs;
    for (int i = 0; i < kNumComponents; ++i) {
        cs.streams[static_cast<std::size_t>(i)] = tape.value(out.streams[static_cast<std::size_t>(i)]);
        cs.pooled[static_cast<std::size_t>(i)] = tape.value(out.pooled[static_cast<std::size_t>(i)]);
    }
    return {std::move(cs), tape.value(out.fused)};
}

namespace {
void check_pooled(const Tensor& pooled) {
    if (pooled.rank() != 2 || pooled.dim(0) != kNumComponents)
        throw std::invalid_argument("orthogonality: pooled must be 4×Dc");
    for (int i = 0; i < kNumComponents; ++i) {
        double n2 = 0.0;
        for (int j = 0; j < pooled.dim(1); ++j) n2 += pooled.at(i, j) * pooled.at(i, j);
        if (n2 == 0.0)
            throw degenerate_input("orthogonality: zero-norm component vector " +
                                   std::string(kComponentNames[i]));
    }
}
}  // namespace

double orthogonality_loss(const Tensor& pooled) {
    check_pooled(pooled);
    const int dc = pooled.dim(1);
    double loss = 0.0;
    for (int i = 0; i < kNumComponents; ++i)
        for (int j = i + 1; j < kNumComponents; ++j) {
            double dp = 0.0, ni = 0.0, nj = 0.0;
            for (int k = 0; k < dc; ++k) {
                dp += pooled.at(i, k) * pooled.at(j, k);
                ni += pooled.at(i, k) * pooled.at(i, k);
                nj += pooled.at(j, k) * pooled.at(j, k);
            }
            loss += dp * dp / (ni * nj);
        }
    return loss;
}

Tensor orthogonality_grad(const Tensor& pooled) {
    check_pooled(pooled);
    const int dc = pooled.dim(1);
    Tensor grad({kNumComponents, dc});
    std::array<double, kNumComponents> norms{};
    for (int i = 0; i < kNumComponents; ++i) {
        double n2 = 0.0;
        for (int k = 0; k < dc; ++k) n2 += pooled.at(i, k) * pooled.at(i, k);
        norms[static_cast<std::size_t>(i)] = std::sqrt(n2);
    }
    for (int k = 0; k < kNumComponents; ++k) {
        for (int j = 0; j < kNumComponents; ++j) {
            if (j == k) continue;
            double dp = 0.0;
            for (int c = 0; c < dc; ++c) dp += pooled.at(k, c) * pooled.at(j, c);
            const double nk = norms[static_cast<std::size_t>(k)];
            const double nj = norms[static_cast<std::size_t>(j)];
            const double cos = dp / (nk * nj);
            const double coef = 2.0 * cos / nk;
            for (int c = 0; c < dc; ++c)
                grad.at(k, c) += coef * (pooled.at(j, c) / nj - cos * pooled.at(k, c) / nk);
        }
    }
    return grad;
}

}  // namespace phonssm
