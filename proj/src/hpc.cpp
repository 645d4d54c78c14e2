#include "phonssm/hpc.hpp"

#include <cmath>
#include <stdexcept>

#include "phonssm/errors.hpp"

namespace phonssm {

void normalize_rows(Tensor& bank) {
    const int m = bank.dim(0), d = bank.dim(1);
    for (int i = 0; i < m; ++i) {
        double n2 = 0.0;
        for (int j = 0; j < d; ++j) n2 += bank.at(i, j) * bank.at(i, j);
        const double n = std::sqrt(n2);
        if (n == 0.0) continue;
        for (int j = 0; j < d; ++j) bank.at(i, j) /= n;
    }
}

PrototypeBanks banks_init(const PrototypeCounts& counts, int dc, int k, int de, double tau,
                          Rng& rng) {
    PrototypeBanks b;
    b.temperature = tau;
    for (int i = 0; i < kNumComponents; ++i) {
        Tensor bank({counts[i], dc});
        for (std::size_t j = 0; j < bank.size(); ++j) bank[j] = rng.normal();
        normalize_rows(bank);
        b.component[static_cast<std::size_t>(i)] = std::move(bank);
    }
    b.sign = Tensor({k, de});
    const double s = 1.0 / std::sqrt(static_cast<double>(de));
    for (std::size_t j = 0; j < b.sign.size(); ++j) b.sign[j] = rng.normal(0.0, s);
    return b;
}

Tensor component_similarity(const Tensor& pooled, const Tensor& bank, double tau) {
    if (pooled.rank() != 1 || bank.rank() != 2 || bank.dim(1) != pooled.dim(0))
        throw std::invalid_argument("component_similarity: shape mismatch");
    if (tau <= 0.0) throw std::invalid_argument("component_similarity: tau must be > 0");
    if (norm(pooled) == 0.0)
        throw degenerate_input("component_similarity: zero-norm component vector");
    Tape tape(false);
    return tape.value(component_similarity_tape(tape, tape.constant(pooled),
                                                tape.constant(bank), tau, 0.0));
}

Tensor sign_logits(const std::array<Tensor, kNumComponents>& sims, const Tensor& g_mean,
                   const PrototypeBanks& banks, const Tensor& w_e) {
    int in = g_mean.dim(0);
    for (const Tensor& s : sims) in += s.dim(0);
    if (w_e.rank() != 2 || w_e.dim(0) != in)
        throw std::invalid_argument("sign_logits: projection shape mismatch");
    Tensor cat({in});
    std::size_t off = 0;
    for (const Tensor& s : sims)
        for (std::size_t i = 0; i < s.size(); ++i) cat[off++] = s[i];
    for (std::size_t i = 0; i < g_mean.size(); ++i) cat[off++] = g_mean[i];
    Tensor e({w_e.dim(1)});
    for (int i = 0; i < in; ++i)
        for (int j = 0; j < w_e.dim(1); ++j) e[static_cast<std::size_t>(j)] += cat[static_cast<std::size_t>(i)] * w_e.at(i, j);
    if (norm(e) == 0.0) throw degenerate_input("sign_logits: zero-norm sign embedding");
    Tape tape(false);
    return tape.value(tape.scale(
        tape.cos_rows(tape.constant(banks.sign), tape.constant(e), 0.0),
        1.0 / banks.temperature));
}

double diversity_loss(const Tensor& bank) {
    if (bank.rank() != 2) throw std::invalid_argument("diversity_loss: rank-2 required");
    const int m = bank.dim(0);
    if (m < 2) throw std::invalid_argument("diversity_loss: need at least two prototypes");
    Tape tape(false);
    return tape.value(diversity_loss_tape(tape, tape.constant(bank))).item();
}

std::int64_t capacity(const std::array<int, kNumComponents>& counts) {
    std::int64_t prod = 1;
    for (int c : counts) {
        if (c <= 0) throw std::invalid_argument("capacity: counts must be positive");
        prod *= c;
    }
    return prod;
}

VarId component_similarity_tape(Tape& tape, VarId pooled, VarId bank, double tau, double eps) {
    return tape.softmax_vec(tape.scale(tape.cos_rows(bank, pooled, eps), 1.0 / tau));
}

VarId diversity_loss_tape(Tape& tape, VarId bank) {
    const Tensor& p = tape.value(bank);
    const int m = p.dim(0), d = p.dim(1);
    if (m < 2) throw std::invalid_argument("diversity_loss: need at least two prototypes");
    const double inv = 1.0 / (static_cast<double>(m) * (m - 1));
    double loss = 0.0;
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j) {
            if (i == j) continue;
            double dp = 0.0;
            for (int c = 0; c < d; ++c) dp += p.at(i, c) * p.at(j, c);
            loss += dp * dp;
        }
    return tape.custom({bank}, Tensor::scalar(loss * inv), [bank, m, d, inv](Tape& t, VarId o) {
        const double g = t.grad_ref(o)[0];
        const Tensor& p = t.value(bank);
        Tensor& gp = t.grad_ref(bank);
        for (int k = 0; k < m; ++k)
            for (int j = 0; j < m; ++j) {
                if (j == k) continue;
                double dp = 0.0;
                for (int c = 0; c < d; ++c) dp += p.at(k, c) * p.at(j, c);
                const double coef = g * 4.0 * inv * dp;
                for (int c = 0; c < d; ++c) gp.at(k, c) += coef * p.at(j, c);
            }
    });
}

}  // namespace phonssm
