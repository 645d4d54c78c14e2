#pragma once

#include <functional>
#include <vector>

#include "phonssm/rng.hpp"
#include "phonssm/tensor.hpp"

namespace phonssm {

using VarId = int;

/// Eager reverse-mode tape over dense tensor primitives.
///
/// Every operation computes its value immediately and, when the tape is
/// recording, pushes a backward closure. backward() runs the closures in
/// reverse creation order with a fixed accumulation order, so repeated
/// calls on the same tape produce bitwise-identical gradients.
class Tape {
public:
    explicit Tape(bool recording = true) : recording_(recording) {}

    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    VarId leaf(Tensor value, bool requires_grad = true);
    VarId constant(Tensor value) { return leaf(std::move(value), false); }

    const Tensor& value(VarId id) const { return nodes_[static_cast<std::size_t>(id)].value; }
    const Tensor& grad(VarId id) const;
    bool requires_grad(VarId id) const {
        return nodes_[static_cast<std::size_t>(id)].requires_grad;
    }
    std::size_t node_count() const { return nodes_.size(); }

    /// Reverse accumulation from a scalar loss into every grad-requiring node.
    void backward(VarId loss);

    // ----- primitives -----
    VarId add(VarId a, VarId b);          // same shape
    VarId sub(VarId a, VarId b);
    VarId mul(VarId a, VarId b);          // elementwise
    VarId div(VarId a, VarId b);          // elementwise
    VarId scale(VarId a, double c);       // constant scale
    VarId add_rowvec(VarId a, VarId bias);  // a[m×n] + bias[n] per row
    VarId mul_scalar(VarId a, VarId s);   // tensor × scalar variable

    VarId matmul(VarId a, VarId b);       // [m×k]·[k×n]
    VarId matvec(VarId a, VarId x);       // [m×n]·[n] -> [m]
    VarId vecmat(VarId x, VarId a);       // [m]·[m×n] -> [n]
    VarId outer(VarId u, VarId v);        // [m],[n] -> [m×n]
    VarId rowwise_mul(VarId a, VarId v);  // a[m×n] ⊙ v[n] broadcast over rows
    VarId dot(VarId u, VarId v);          // -> scalar

    VarId exp(VarId a);
    VarId expm1(VarId a);
    VarId gelu(VarId a);
    VarId leaky_relu(VarId a, double slope);
    VarId softplus(VarId a);

    VarId sum(VarId a);                   // -> scalar
    VarId mean_rows(VarId a);             // [m×n] -> [n]
    VarId mean_group_rows(VarId a, int group);  // [(g·m)×n] -> [g×n], mean over blocks of m rows
    VarId row(VarId a, int r);            // [m×n] -> [n]
    VarId slice_vec(VarId a, int start, int len);  // [n] -> [len]
    VarId stack_rows(const std::vector<VarId>& rows);   // t×[n] -> [t×n]
    VarId concat(const std::vector<VarId>& parts);      // vectors -> vector
    VarId concat_cols(const std::vector<VarId>& parts); // [m×n_i] -> [m×Σn_i]
    VarId reverse_rows(VarId a);

    VarId softmax_rows(VarId a);          // row-wise
    VarId softmax_vec(VarId a);
    VarId cos_rows(VarId p, VarId x, double eps);  // cos(x, p_i) per row -> [M]
    VarId cos_pair(VarId u, VarId v, double eps);  // -> scalar
    VarId conv1d_same(VarId x, VarId k);  // x[T×C], k[C_out×C_in×k], zero pad

    /// Label-smoothed cross entropy against target q = (1-eps)·onehot + eps/K.
    VarId cross_entropy_smoothed(VarId logits, int label, double eps);

    /// Inverted dropout; identity when train is false.
    VarId dropout(VarId a, double rate, Rng& rng, bool train);

    /// Escape hatch for fused operations defined outside the tape.
    /// `backward` receives the output id; read grads and values through the
    /// tape and add into input grads via grad_ref().
    VarId custom(std::vector<VarId> inputs, Tensor value,
                 std::function<void(Tape&, VarId)> backward);

    Tensor& grad_ref(VarId id) { return nodes_[static_cast<std::size_t>(id)].grad; }
    const std::vector<VarId>& inputs_of(VarId id) const {
        return nodes_[static_cast<std::size_t>(id)].inputs;
    }

    /// Smallest |pre-activation| any kinked nonlinearity saw on this tape.
    /// Finite-difference harnesses reject draws that land too close to a
    /// kink instead of loosening their tolerance.
    double kink_proximity() const { return kink_proximity_; }
    void note_kink_input(double x) {
        const double a = x < 0.0 ? -x : x;
        if (a < kink_proximity_) kink_proximity_ = a;
    }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        std::vector<VarId> inputs;
        std::function<void(Tape&, VarId)> backward;
        bool requires_grad = false;
    };

    VarId push(Tensor value, std::vector<VarId> inputs,
               std::function<void(Tape&, VarId)> backward);
    static void check_same_shape(const Tensor& a, const Tensor& b, const char* op);

    std::vector<Node> nodes_;
    bool recording_ = true;
    bool ran_backward_ = false;
    double kink_proximity_ = 1e300;
};

/// Central finite differences of f over every coordinate of `param`,
/// compared against `analytic`; returns the max relative error. Large
/// tensors may be subsampled with a fixed-seed coordinate choice.
double finite_diff_max_rel_err(const std::function<double()>& f, Tensor& param,
                               const Tensor& analytic, double step,
                               int max_coords = -1, std::uint64_t subsample_seed = 0);

}  // namespace phonssm
