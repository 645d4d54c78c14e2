#include "phonssm/tape.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace phonssm {

namespace {
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double softplus_val(double x) {
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}
double sigmoid_val(double x) {
    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}
}  // namespace

VarId Tape::push(Tensor value, std::vector<VarId> inputs,
                 std::function<void(Tape&, VarId)> backward) {
    Node n;
    n.value = std::move(value);
    if (recording_) {
        for (VarId i : inputs)
            if (nodes_[static_cast<std::size_t>(i)].requires_grad) {
                n.requires_grad = true;
                break;
            }
        if (n.requires_grad) {
            n.inputs = std::move(inputs);
            n.backward = std::move(backward);
        }
    }
    nodes_.push_back(std::move(n));
    return static_cast<VarId>(nodes_.size() - 1);
}

VarId Tape::leaf(Tensor value, bool requires_grad) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = recording_ && requires_grad;
    nodes_.push_back(std::move(n));
    return static_cast<VarId>(nodes_.size() - 1);
}

const Tensor& Tape::grad(VarId id) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!ran_backward_ || n.grad.size() != n.value.size())
        throw std::logic_error("Tape::grad: backward has not run for this node");
    return n.grad;
}

void Tape::backward(VarId loss) {
    if (!recording_) throw std::logic_error("Tape::backward: tape is not recording");
    Node& ln = nodes_[static_cast<std::size_t>(loss)];
    if (ln.value.size() != 1)
        throw std::invalid_argument("Tape::backward: loss must be scalar");
    for (Node& n : nodes_) {
        if (n.requires_grad) {
            n.grad = Tensor(n.value.shape());
        }
    }
    if (ln.requires_grad) ln.grad[0] = 1.0;
    for (std::size_t i = nodes_.size(); i-- > 0;) {
        Node& n = nodes_[i];
        if (n.requires_grad && n.backward) n.backward(*this, static_cast<VarId>(i));
    }
    ran_backward_ = true;
}

void Tape::check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape_str() +
                                    " vs " + b.shape_str());
}

VarId Tape::add(VarId a, VarId b) {
    const Tensor &va = value(a), &vb = value(b);
    check_same_shape(va, vb, "add");
    Tensor out = va;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += vb[i];
    return push(std::move(out), {a, b}, [a, b](Tape& t, VarId o) {
        const Tensor& g = t.grad_ref(o);
        if (t.requires_grad(a)) {
            Tensor& ga = t.grad_ref(a);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (t.requires_grad(b)) {
            Tensor& gb = t.grad_ref(b);
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
        }
    });
}

VarId Tape::sub(VarId a, VarId b) {
    const Tensor &va = value(a), &vb = value(b);
    check_same_shape(va, vb, "sub");
    Tensor out = va;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= vb[i];
    return push(std::move(out), {a, b}, [a, b](Tape& t, VarId o) {
        const Tensor& g = t.grad_ref(o);
        if (t.requires_grad(a)) {
            Tensor& ga = t.grad_ref(a);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (t.requires_grad(b)) {
            Tensor& gb = t.grad_ref(b);
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
        }
    });
}

VarId Tape::mul(VarId a, VarId b) {
    const Tensor &va = value(a), &vb = value(b);
    check_same_shape(va, vb, "mul");
    Tensor out = va;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= vb[i];
    return push(std::move(out), {a, b}, [a, b](Tape& t, VarId o) {
        const Tensor& g = t.grad_ref(o);
        const Tensor &va = t.value(a), &vb = t.value(b);
        if (t.requires_grad(a)) {
            Tensor& ga = t.grad_ref(a);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * vb[i];
        }
        if (t.requires_grad(b)) {
            Tensor& gb = t.grad_ref(b);
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * va[i];
        }
    });
}

VarId Tape::div(VarId a, VarId b) {
    const Tensor &va = value(a), &vb = value(b);
    check_same_shape(va, vb, "div");
    Tensor out = va;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] /= vb[i];
    return push(std::move(out), {a, b}, [a, b](Tape& t, VarId o) {
        const Tensor& g = t.grad_ref(o);
        const Tensor &va = t.value(a), &vb = t.value(b);
        if (t.requires_grad(a)) {
            Tensor& ga = t.grad_ref(a);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / vb[i];
        }
        if (t.requires_grad(b)) {
            Tensor& gb = t.grad_ref(b);
            for (std::size_t i = 0; i < g.size(); ++i)
                gb[i] -= g[i] * va[i] / (vb[i] * vb[i]);
        }
    });
}

VarId Tape::scale(VarId a, double c) {
    Tensor out = value(a);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= c;
    return push(std::move(out), {a}, [a, c](Tape& t, VarId o) {
        const Tensor& g = t.grad_ref(o);
        Tensor& ga = t.grad_ref(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += c * g[i];
    });
}

VarId Tape::add_rowvec(VarId a, VarId bias) {
    const Tensor &va = value(a), &vb = value(bias);
    if (va.rank() != 2 || vb.rank() != 1 || va.dim(1) != vb.dim(0))
        throw std::invalid_argument("add_rowvec: shape mismatch");
    Tensor out = va;
    const int m = va.dim(0), n = va.dim(1);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out.at(i, j) += vb[static_cast<std::size_t>(j)];
    return push(std::move(out), {a, bias}, [a, bias, m, n](Tape& t, VarId o) {
        const Tensor& g = t.grad_ref(o);
        if (t.requires_grad(a)) {
            Tensor& ga = t.grad_ref(a);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (t.requires_grad(bias)) {
            Tensor& gb = t.grad_ref(bias);
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) gb[static_cast<std::size_t>(j)] += g.at(i, j);
        }
    });
}

VarId Tape::mul_scalar(VarId a, VarId s) {
    const Tensor& vs = value(s);
    if (vs.size() != 1) throw std::invalid_argument("mul_scalar: s must be scalar");
    Tensor out = value(a);
    const double sv = vs[0];
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= sv;
    return push(std::move(out), {a, s}, [a, s](Tape& t, VarId o) {
        const Tensor& g = t.grad_ref(o);
        const Tensor& va = t.value(a);
        const double sv = t.value(s)[0];
        if (t.requires_grad(a)) {
            Tensor& ga = t.grad_ref(a);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += sv * g[i];
        }
        if (t.requires_grad(s)) {
            double acc = 0.0;
            for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * va[i];
            t.grad_ref(s)[0] += acc;
        }
    });
}

VarId Tape::matmul(VarId a, VarId b) {
    Tensor out = phonssm::matmul(value(a), value(b));
    return push(std::move(out), {a, b}, [a, b](Tape& t, VarId o) {
        const Tensor& g = t.grad_ref(o);
        const Tensor &va = t.value(a), &vb = t.value(b);
        const int m = va.dim(0), k = va.dim(1), n = vb.dim(1);
        if (t.requires_grad(a)) {
            Tensor& ga = t.grad_ref(a);
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) {
                    const double gv = g.at(i, j);
                    for (int p = 0; p < k; ++p) ga.at(i, p) += gv * vb.at(p, j);
                }
        }
        if (t.requires_grad(b)) {
            Tensor& gb = t.grad_ref(b);
            for (int i = 0; i < m; ++i)
                for (int p = 0; p < k; ++p) {
                    const double av = va.at(i, p);
                    for (int j = 0; j < n; ++j) gb.at(p, j) += av * g.at(i, j);
                }
        }
    });
}

VarId Tape::matvec(VarId a, VarId x) {
    const Tensor &va = value(a), &vx = value(x);
    if (va.rank() != 2 || vx.rank() != 1 || va.dim(1) != vx.dim(0))
        throw std::invalid_argument("matvec: shape mismatch");
    const int m = va.dim(0), n = va.dim(1);
    Tensor out({m});
    for (int i = 0; i < m; ++i) {
        double s = 0.0;
        for (int j = 0; j < n; ++j) s += va.at(i, j) * vx[static_cast<std::size_t>(j)];
        out[static_cast<std::size_t>(i)] = s;
    }
    return push(std::move(out), {a, x}, [a, x, m, n](Tape& t, VarId o) {
        const Tensor& g = t.grad_ref(o);
        const Tensor &va = t.value(a), &vx = t.value(x);
        if (t.requires_grad(a)) {
            Tensor& ga = t.grad_ref(a);
            for (int i = 0; i < m; ++i) {
                const double gi = g[static_cast<std::size_t>(i)];
                for (int j = 0; j < n; ++j) ga.at(i, j) += gi * vx[static_cast<std::size_t>(j)];
            }
        }
        if (t.requires_grad(x)) {
            Tensor& gx = t.grad_ref(x);
            for (int i = 0; i < m; ++i) {
                const double gi = g[static_cast<std::size_t>(i)];
                for (int j = 0; j < n; ++j) gx[static_cast<std::size_t>(j)] += gi * va.at(i, j);
            }
        }
    });
}

VarId Tape::vecmat(VarId x, VarId a) {
    const Tensor &vx = value(x), &va = value(a);
    if (va.rank() != 2 || vx.rank() != 1 || va.dim(0) != vx.dim(0))
        throw std::invalid_argument("vecmat: shape mismatch");
    const int m = va.dim(0), n = va.dim(1);
    Tensor out({n});
    for (int i = 0; i < m; ++i) {
        const double xv = vx[static_cast<std::size_t>(i)];
        for (int j = 0; j < n; ++j) out[static_cast<std::size_t>(j)] += xv * va.at(i, j);
    }
    return push(std::move(out), {x, a}, [x, a, m, n](Tape& t, VarId o) {
        const Tensor& g = t.grad_ref(o);
        const Tensor &vx = t.value(x), &va = t.value(a);
        if (t.requires_grad(x)) {
            Tensor& gx = t.grad_ref(x);
            for (int i = 0; i < m; ++i) {
                double s = 0.0;
                for (int j = 0; j < n; ++j) s += va.at(i, j) * g[static_cast<std::size_t>(j)];
                gx[static_cast<std::size_t>(i)] += s;
            }
        }
        if (t.requires_grad(a)) {
            Tensor& ga = t.grad_ref(a);
            for (int i = 0; i < m; ++i) {
                const double xv = vx[static_cast<std::size_t>(i)];
                for (int j = 0; j < n; ++j) ga.at(i, j) += xv * g[static_cast<std::size_t>(j)];
            }
        }
    });
}

VarId Tape::outer(VarId u, VarId v) {
    const Tensor &vu = value(u), &vv = value(v);
    if (vu.rank() != 1 || vv.rank() != 1) throw std::invalid_argument("outer: vectors required");
    const int m = vu.dim(0), n = vv.dim(0);
    Tensor out({m, n});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            out.at(i, j) = vu[static_cast<std::size_t>(i)] * vv[static_cast<std::size_t>(j)];
    return push(std::move(out), {u, v}, [u, v, m, n](Tape& t, VarId o) {
        const Tensor& g = t.grad_ref(o);
        const Tensor &vu = t.value(u), &vv = t.value(v);
        if (t.requires_grad(u)) {
            Tensor& gu = t.grad_ref(u);
            for (int i = 0; i < m; ++i) {
                double s = 0.0;
                for (int j = 0; j < n; ++j) s += g.at(i, j) * vv[static_cast<std::size_t>(j)];
                gu[static_cast<std::size_t>(i)] += s;
            }
        }
        if (t.requires_grad(v)) {
            Tensor& gv = t.grad_ref(v);
            for (int i = 0; i < m; ++i) {
                const double uv = vu[static_cast<std::size_t>(i)];
                for (int j = 0; j < n; ++j) gv[static_cast<std::size_t>(j)] += uv * g.at(i, j);
            }
        }
    });
}

VarId Tape::rowwise_mul(VarId a, VarId v) {
    const Tensor &va = value(a), &vv = value(v);
    if (va.rank() != 2 || vv.rank() != 1 || va.dim(1) != vv.dim(0))
        throw std::invalid_argument("rowwise_mul: shape mismatch");
    const int m = va.dim(0), n = va.dim(1);
    Tensor out = va;
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out.at(i, j) *= vv[static_cast<std::size_t>(j)];
    return push(std::move(out), {a, v}, [a, v, m, n](Tape& t, VarId o) {
        const Tensor& g = t.grad_ref(o);
        const Tensor &va = t.value(a), &vv = t.value(v);
        if (t.requires_grad(a)) {
            Tensor& ga = t.grad_ref(a);
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) ga.at(i, j) += g.at(i, j) * vv[static_cast<std::size_t>(j)];
        }
        if (t.requires_grad(v)) {
            Tensor& gv = t.grad_ref(v);
            for (int j = 0; j < n; ++j) {
                double s = 0.0;
                for (int i = 0; i < m; ++i) s += g.at(i, j) * va.at(i, j);
                gv[static_cast<std::size_t>(j)] += s;
            }
        }
    });
}

VarId Tape::dot(VarId u, VarId v) {
    const Tensor &vu = value(u), &vv = value(v);
    if (vu.size() != vv.size()) throw std::invalid_argument("dot: size mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < vu.size(); ++i) s += vu[i] * vv[i];
    return push(Tensor::scalar(s), {u, v}, [u, v](Tape& t, VarId o) {
        const double g = t.grad_ref(o)[0];
        const Tensor &vu = t.value(u), &vv = t.value(v);
        if (t.requires_grad(u)) {
            Tensor& gu = t.grad_ref(u);
            for (std::size_t i = 0; i < vu.size(); ++i) gu[i] += g * vv[i];
        }
        if (t.requires_grad(v)) {
            Tensor& gv = t.grad_ref(v);
            for (std::size_t i = 0; i < vu.size(); ++i) gv[i] += g * vu[i];
        }
    });
}

VarId Tape::exp(VarId a) {
    Tensor out = value(a);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(out[i]);
    return push(std::move(out), {a}, [a](Tape& t, VarId o) {
        const Tensor &g = t.grad_ref(o), &y = t.value(o);
        Tensor& ga = t.grad_ref(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
    });
}

VarId Tape::expm1(VarId a) {
    Tensor out = value(a);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::expm1(out[i]);
    return push(std::move(out), {a}, [a](Tape& t, VarId o) {
        const Tensor &g = t.grad_ref(o), &y = t.value(o);
        Tensor& ga = t.grad_ref(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (y[i] + 1.0);
    });
}

VarId Tape::gelu(VarId a) {
    // Exact erf form, not the tanh approximation.
    Tensor out = value(a);
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double x = out[i];
        out[i] = 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
    }
    return push(std::move(out), {a}, [a](Tape& t, VarId o) {
        const Tensor& g = t.grad_ref(o);
        const Tensor& vx = t.value(a);
        Tensor& ga = t.grad_ref(a);
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double x = vx[i];
            const double phi = kInvSqrt2Pi * std::exp(-0.5 * x * x);
            const double Phi = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
            ga[i] += g[i] * (Phi + x * phi);
        }
    });
}

VarId Tape::leaky_relu(VarId a, double slope) {
    Tensor out = value(a);
    for (std::size_t i = 0; i < out.size(); ++i) {
        note_kink_input(out[i]);
        if (out[i] <= 0.0) out[i] *= slope;
    }
    // x == 0 takes the non-positive branch derivative.
    return push(std::move(out), {a}, [a, slope](Tape& t, VarId o) {
        const Tensor& g = t.grad_ref(o);
        const Tensor& vx = t.value(a);
        Tensor& ga = t.grad_ref(a);
        for (std::size_t i = 0; i < g.size(); ++i)
            ga[i] += g[i] * (vx[i] > 0.0 ? 1.0 : slope);
    });
}

VarId Tape::softplus(VarId a) {
    Tensor out = value(a);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = softplus_val(out[i]);
    return push(std::move(out), {a}, [a](Tape& t, VarId o) {
        const Tensor& g = t.grad_ref(o);
        const Tensor& vx = t.value(a);
        Tensor& ga = t.grad_ref(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * sigmoid_val(vx[i]);
    });
}

VarId Tape::sum(VarId a) {
    double s = 0.0;
    const Tensor& va = value(a);
    for (std::size_t i = 0; i < va.size(); ++i) s += va[i];
    return push(Tensor::scalar(s), {a}, [a](Tape& t, VarId o) {
        const double g = t.grad_ref(o)[0];
        Tensor& ga = t.grad_ref(a);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
    });
}

VarId Tape::mean_rows(VarId a) {
    const Tensor& va = value(a);
    if (va.rank() != 2) throw std::invalid_argument("mean_rows: rank-2 required");
    const int m = va.dim(0), n = va.dim(1);
    Tensor out({n});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out[static_cast<std::size_t>(j)] += va.at(i, j);
    const double inv = 1.0 / m;
    for (int j = 0; j < n; ++j) out[static_cast<std::size_t>(j)] *= inv;
    return push(std::move(out), {a}, [a, m, n, inv](Tape& t, VarId o) {
        const Tensor& g = t.grad_ref(o);
        Tensor& ga = t.grad_ref(a);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) ga.at(i, j) += inv * g[static_cast<std::size_t>(j)];
    });
}

VarId Tape::mean_group_rows(VarId a, int group) {
    const Tensor& va = value(a);
    if (va.rank() != 2 || group <= 0 || va.dim(0) % group != 0)
        throw std::invalid_argument("mean_group_rows: rows not divisible by group");
    const int blocks = va.dim(0) / group, n = va.dim(1);
    Tensor out({blocks, n});
    for (int b = 0; b < blocks; ++b)
        for (int r = 0; r < group; ++r)
            for (int j = 0; j < n; ++j) out.at(b, j) += va.at(b * group + r, j);
    const double inv = 1.0 / group;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= inv;
    return push(std::move(out), {a}, [a, blocks, group, n, inv](Tape& t, VarId o) {
        const Tensor& g = t.grad_ref(o);
        Tensor& ga = t.grad_ref(a);
        for (int b = 0; b < blocks; ++b)
            for (int r = 0; r < group; ++r)
                for (int j = 0; j < n; ++j) ga.at(b * group + r, j) += inv * g.at(b, j);
    });
}

VarId Tape::row(VarId a, int r) {
    const Tensor& va = value(a);
    if (va.rank() != 2 || r < 0 || r >= va.dim(0))
        throw std::invalid_argument("row: index out of range");
    const int n = va.dim(1);
    Tensor out({n});
    for (int j = 0; j < n; ++j) out[static_cast<std::size_t>(j)] = va.at(r, j);
    return push(std::move(out), {a}, [a, r, n](Tape& t, VarId o) {
        const Tensor& g = t.grad_ref(o);
        Tensor& ga = t.grad_ref(a);
        for (int j = 0; j < n; ++j) ga.at(r, j) += g[static_cast<std::size_t>(j)];
    });
}

VarId Tape::slice_vec(VarId a, int start, int len) {
    const Tensor& va = value(a);
    if (va.rank() != 1 || start < 0 || len < 0 || start + len > va.dim(0))
        throw std::invalid_argument("slice_vec: range out of bounds");
    Tensor out({len});
    for (int i = 0; i < len; ++i) out[static_cast<std::size_t>(i)] = va[static_cast<std::size_t>(start + i)];
    return push(std::move(out), {a}, [a, start, len](Tape& t, VarId o) {
        const Tensor& g = t.grad_ref(o);
        Tensor& ga = t.grad_ref(a);
        for (int i = 0; i < len; ++i) ga[static_cast<std::size_t>(start + i)] += g[static_cast<std::size_t>(i)];
    });
}

VarId Tape::stack_rows(const std::vector<VarId>& rows) {
    if (rows.empty()) throw std::invalid_argument("stack_rows: empty input");
    const int n = value(rows[0]).dim(0);
    const int m = static_cast<int>(rows.size());
    Tensor out({m, n});
    for (int i = 0; i < m; ++i) {
        const Tensor& v = value(rows[static_cast<std::size_t>(i)]);
        if (v.rank() != 1 || v.dim(0) != n)
            throw std::invalid_argument("stack_rows: inconsistent row shapes");
        for (int j = 0; j < n; ++j) out.at(i, j) = v[static_cast<std::size_t>(j)];
    }
    return push(std::move(out), rows, [rows, n](Tape& t, VarId o) {
        const Tensor& g = t.grad_ref(o);
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (!t.requires_grad(rows[i])) continue;
            Tensor& gr = t.grad_ref(rows[i]);
            for (int j = 0; j < n; ++j) gr[static_cast<std::size_t>(j)] += g.at(static_cast<int>(i), j);
        }
    });
}

VarId Tape::concat(const std::vector<VarId>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat: empty input");
    std::size_t total = 0;
    for (VarId p : parts) total += value(p).size();
    Tensor out({static_cast<int>(total)});
    std::size_t off = 0;
    for (VarId p : parts) {
        const Tensor& v = value(p);
        for (std::size_t i = 0; i < v.size(); ++i) out[off + i] = v[i];
        off += v.size();
    }
    return push(std::move(out), parts, [parts](Tape& t, VarId o) {
        const Tensor& g = t.grad_ref(o);
        std::size_t off = 0;
        for (VarId p : parts) {
            const std::size_t sz = t.value(p).size();
            if (t.requires_grad(p)) {
                Tensor& gp = t.grad_ref(p);
                for (std::size_t i = 0; i < sz; ++i) gp[i] += g[off + i];
            }
            off += sz;
        }
    });
}

VarId Tape::concat_cols(const std::vector<VarId>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: empty input");
    const int m = value(parts[0]).dim(0);
    int total = 0;
    for (VarId p : parts) {
        const Tensor& v = value(p);
        if (v.rank() != 2 || v.dim(0) != m)
            throw std::invalid_argument("concat_cols: row count mismatch");
        total += v.dim(1);
    }
    Tensor out({m, total});
    int off = 0;
    for (VarId p : parts) {
        const Tensor& v = value(p);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < v.dim(1); ++j) out.at(i, off + j) = v.at(i, j);
        off += v.dim(1);
    }
    return push(std::move(out), parts, [parts, m](Tape& t, VarId o) {
        const Tensor& g = t.grad_ref(o);
        int off = 0;
        for (VarId p : parts) {
            const int w = t.value(p).dim(1);
            if (t.requires_grad(p)) {
                Tensor& gp = t.grad_ref(p);
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < w; ++j) gp.at(i, j) += g.at(i, off + j);
            }
            off += w;
        }
    });
}

VarId Tape::reverse_rows(VarId a) {
    const Tensor& va = value(a);
    if (va.rank() != 2) throw std::invalid_argument("reverse_rows: rank-2 required");
    const int m = va.dim(0), n = va.dim(1);
    Tensor out({m, n});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out.at(i, j) = va.at(m - 1 - i, j);
    return push(std::move(out), {a}, [a, m, n](Tape& t, VarId o) {
        const Tensor& g = t.grad_ref(o);
        Tensor& ga = t.grad_ref(a);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) ga.at(m - 1 - i, j) += g.at(i, j);
    });
}

namespace {
void softmax_inplace(double* x, int n) {
    double mx = x[0];
    for (int i = 1; i < n; ++i) mx = std::max(mx, x[i]);
    double z = 0.0;
    for (int i = 0; i < n; ++i) {
        x[i] = std::exp(x[i] - mx);
        z += x[i];
    }
    for (int i = 0; i < n; ++i) x[i] /= z;
}
}  // namespace

VarId Tape::softmax_rows(VarId a) {
    const Tensor& va = value(a);
    if (va.rank() != 2) throw std::invalid_argument("softmax_rows: rank-2 required");
    const int m = va.dim(0), n = va.dim(1);
    Tensor out = va;
    for (int i = 0; i < m; ++i) softmax_inplace(out.data() + static_cast<std::size_t>(i) * n, n);
    return push(std::move(out), {a}, [a, m, n](Tape& t, VarId o) {
        const Tensor &g = t.grad_ref(o), &y = t.value(o);
        Tensor& ga = t.grad_ref(a);
        for (int i = 0; i < m; ++i) {
            double s = 0.0;
            for (int j = 0; j < n; ++j) s += g.at(i, j) * y.at(i, j);
            for (int j = 0; j < n; ++j) ga.at(i, j) += y.at(i, j) * (g.at(i, j) - s);
        }
    });
}

VarId Tape::softmax_vec(VarId a) {
    const Tensor& va = value(a);
    if (va.rank() != 1) throw std::invalid_argument("softmax_vec: rank-1 required");
    const int n = va.dim(0);
    Tensor out = va;
    softmax_inplace(out.data(), n);
    return push(std::move(out), {a}, [a, n](Tape& t, VarId o) {
        const Tensor &g = t.grad_ref(o), &y = t.value(o);
        Tensor& ga = t.grad_ref(a);
        double s = 0.0;
        for (int j = 0; j < n; ++j) s += g[static_cast<std::size_t>(j)] * y[static_cast<std::size_t>(j)];
        for (int j = 0; j < n; ++j)
            ga[static_cast<std::size_t>(j)] += y[static_cast<std::size_t>(j)] * (g[static_cast<std::size_t>(j)] - s);
    });
}

VarId Tape::cos_rows(VarId p, VarId x, double eps) {
    const Tensor &vp = value(p), &vx = value(x);
    if (vp.rank() != 2 || vx.rank() != 1 || vp.dim(1) != vx.dim(0))
        throw std::invalid_argument("cos_rows: shape mismatch");
    const int M = vp.dim(0), d = vp.dim(1);
    const double nx = phonssm::norm(vx);
    Tensor out({M});
    for (int i = 0; i < M; ++i) {
        double dp = 0.0, np2 = 0.0;
        for (int j = 0; j < d; ++j) {
            dp += vp.at(i, j) * vx[static_cast<std::size_t>(j)];
            np2 += vp.at(i, j) * vp.at(i, j);
        }
        out[static_cast<std::size_t>(i)] = dp / ((std::sqrt(np2) + eps) * (nx + eps));
    }
    return push(std::move(out), {p, x}, [p, x, eps, M, d](Tape& t, VarId o) {
        const Tensor& g = t.grad_ref(o);
        const Tensor &vp = t.value(p), &vx = t.value(x);
        const double nx = phonssm::norm(vx);
        const double nxe = nx + eps;
        for (int i = 0; i < M; ++i) {
            const double gi = g[static_cast<std::size_t>(i)];
            if (gi == 0.0) continue;
            double dp = 0.0, np2 = 0.0;
            for (int j = 0; j < d; ++j) {
                dp += vp.at(i, j) * vx[static_cast<std::size_t>(j)];
                np2 += vp.at(i, j) * vp.at(i, j);
            }
            const double np = std::sqrt(np2);
            const double npe = np + eps;
            if (t.requires_grad(x)) {
                Tensor& gx = t.grad_ref(x);
                for (int j = 0; j < d; ++j)
                    gx[static_cast<std::size_t>(j)] += gi * vp.at(i, j) / (npe * nxe);
                if (nx > 0.0) {
                    const double c2 = dp / (npe * nxe * nxe * nx);
                    for (int j = 0; j < d; ++j)
                        gx[static_cast<std::size_t>(j)] -= gi * c2 * vx[static_cast<std::size_t>(j)];
                }
            }
            if (t.requires_grad(p)) {
                Tensor& gp = t.grad_ref(p);
                for (int j = 0; j < d; ++j)
                    gp.at(i, j) += gi * vx[static_cast<std::size_t>(j)] / (npe * nxe);
                if (np > 0.0) {
                    const double c2 = dp / (npe * npe * np * nxe);
                    for (int j = 0; j < d; ++j) gp.at(i, j) -= gi * c2 * vp.at(i, j);
                }
            }
        }
    });
}

VarId Tape::cos_pair(VarId u, VarId v, double eps) {
    const Tensor &vu = value(u), &vv = value(v);
    if (vu.size() != vv.size()) throw std::invalid_argument("cos_pair: size mismatch");
    const double nu = phonssm::norm(vu), nv = phonssm::norm(vv);
    const double dp = phonssm::dot(vu, vv);
    const double c = dp / ((nu + eps) * (nv + eps));
    return push(Tensor::scalar(c), {u, v}, [u, v, eps](Tape& t, VarId o) {
        const double g = t.grad_ref(o)[0];
        if (g == 0.0) return;
        const Tensor &vu = t.value(u), &vv = t.value(v);
        const double nu = phonssm::norm(vu), nv = phonssm::norm(vv);
        const double nue = nu + eps, nve = nv + eps;
        const double dp = phonssm::dot(vu, vv);
        if (t.requires_grad(u)) {
            Tensor& gu = t.grad_ref(u);
            for (std::size_t i = 0; i < vu.size(); ++i) gu[i] += g * vv[i] / (nue * nve);
            if (nu > 0.0) {
                const double c2 = dp / (nue * nue * nu * nve);
                for (std::size_t i = 0; i < vu.size(); ++i) gu[i] -= g * c2 * vu[i];
            }
        }
        if (t.requires_grad(v)) {
            Tensor& gv = t.grad_ref(v);
            for (std::size_t i = 0; i < vv.size(); ++i) gv[i] += g * vu[i] / (nue * nve);
            if (nv > 0.0) {
                const double c2 = dp / (nue * nve * nve * nv);
                for (std::size_t i = 0; i < vv.size(); ++i) gv[i] -= g * c2 * vv[i];
            }
        }
    });
}

VarId Tape::conv1d_same(VarId x, VarId k) {
    const Tensor &vx = value(x), &vk = value(k);
    if (vx.rank() != 2 || vk.rank() != 3 || vk.dim(1) != vx.dim(1))
        throw std::invalid_argument("conv1d_same: shape mismatch");
    if (vk.dim(2) % 2 == 0) throw std::invalid_argument("conv1d_same: kernel width must be odd");
    const int T = vx.dim(0), cin = vx.dim(1), cout = vk.dim(0), kw = vk.dim(2);
    const int h = kw / 2;
    Tensor out({T, cout});
    for (int t = 0; t < T; ++t)
        for (int o = 0; o < cout; ++o) {
            double s = 0.0;
            for (int tap = 0; tap < kw; ++tap) {
                const int src = t + tap - h;
                if (src < 0 || src >= T) continue;
                for (int c = 0; c < cin; ++c) s += vk.at(o, c, tap) * vx.at(src, c);
            }
            out.at(t, o) = s;
        }
    return push(std::move(out), {x, k}, [x, k, T, cin, cout, kw, h](Tape& t, VarId o) {
        const Tensor& g = t.grad_ref(o);
        const Tensor &vx = t.value(x), &vk = t.value(k);
        if (t.requires_grad(x)) {
            Tensor& gx = t.grad_ref(x);
            for (int ti = 0; ti < T; ++ti)
                for (int oc = 0; oc < cout; ++oc) {
                    const double gv = g.at(ti, oc);
                    if (gv == 0.0) continue;
                    for (int tap = 0; tap < kw; ++tap) {
                        const int src = ti + tap - h;
                        if (src < 0 || src >= T) continue;
                        for (int c = 0; c < cin; ++c) gx.at(src, c) += gv * vk.at(oc, c, tap);
                    }
                }
        }
        if (t.requires_grad(k)) {
            Tensor& gk = t.grad_ref(k);
            for (int ti = 0; ti < T; ++ti)
                for (int oc = 0; oc < cout; ++oc) {
                    const double gv = g.at(ti, oc);
                    if (gv == 0.0) continue;
                    for (int tap = 0; tap < kw; ++tap) {
                        const int src = ti + tap - h;
                        if (src < 0 || src >= T) continue;
                        for (int c = 0; c < cin; ++c) gk.at(oc, c, tap) += gv * vx.at(src, c);
                    }
                }
        }
    });
}

VarId Tape::cross_entropy_smoothed(VarId logits, int label, double eps) {
    const Tensor& z = value(logits);
    if (z.rank() != 1) throw std::invalid_argument("cross_entropy_smoothed: vector required");
    const int K = z.dim(0);
    if (label < 0 || label >= K)
        throw std::invalid_argument("cross_entropy_smoothed: label out of range");
    double mx = z[0];
    for (int i = 1; i < K; ++i) mx = std::max(mx, z[static_cast<std::size_t>(i)]);
    double lse = 0.0;
    for (int i = 0; i < K; ++i) lse += std::exp(z[static_cast<std::size_t>(i)] - mx);
    lse = mx + std::log(lse);
    // L = lse - Σ_j q_j z_j with q = (1-eps)·onehot + eps/K
    double qz = (1.0 - eps) * z[static_cast<std::size_t>(label)];
    for (int i = 0; i < K; ++i) qz += (eps / K) * z[static_cast<std::size_t>(i)];
    return push(Tensor::scalar(lse - qz), {logits}, [logits, label, eps, K](Tape& t, VarId o) {
        const double g = t.grad_ref(o)[0];
        const Tensor& z = t.value(logits);
        Tensor& gz = t.grad_ref(logits);
        double mx = z[0];
        for (int i = 1; i < K; ++i) mx = std::max(mx, z[static_cast<std::size_t>(i)]);
        double zsum = 0.0;
        for (int i = 0; i < K; ++i) zsum += std::exp(z[static_cast<std::size_t>(i)] - mx);
        for (int i = 0; i < K; ++i) {
            const double p = std::exp(z[static_cast<std::size_t>(i)] - mx) / zsum;
            double q = eps / K;
            if (i == label) q += 1.0 - eps;
            gz[static_cast<std::size_t>(i)] += g * (p - q);
        }
    });
}

VarId Tape::dropout(VarId a, double rate, Rng& rng, bool train) {
    if (!train || rate <= 0.0) return a;
    if (rate >= 1.0) throw std::invalid_argument("dropout: rate must be < 1");
    const Tensor& va = value(a);
    const double keep = 1.0 - rate;
    std::vector<double> mask(va.size());
    Tensor out = va;
    for (std::size_t i = 0; i < va.size(); ++i) {
        mask[i] = rng.next_double() < keep ? 1.0 / keep : 0.0;
        out[i] *= mask[i];
    }
    return push(std::move(out), {a}, [a, mask = std::move(mask)](Tape& t, VarId o) {
        const Tensor& g = t.grad_ref(o);
        Tensor& ga = t.grad_ref(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * mask[i];
    });
}

VarId Tape::custom(std::vector<VarId> inputs, Tensor value,
                   std::function<void(Tape&, VarId)> backward) {
    return push(std::move(value), std::move(inputs), std::move(backward));
}

double finite_diff_max_rel_err(const std::function<double()>& f, Tensor& param,
                               const Tensor& analytic, double step, int max_coords,
                               std::uint64_t subsample_seed) {
    if (step <= 0.0) throw std::invalid_argument("finite_diff: step must be > 0");
    if (!param.same_shape(analytic))
        throw std::invalid_argument("finite_diff: analytic gradient shape mismatch");
    const std::size_t n = param.size();
    std::vector<std::size_t> coords;
    if (max_coords > 0 && static_cast<std::size_t>(max_coords) < n) {
        Rng rng(substream(subsample_seed, "fd-subsample"));
        coords.reserve(static_cast<std::size_t>(max_coords));
        for (int i = 0; i < max_coords; ++i)
            coords.push_back(static_cast<std::size_t>(
                rng.uniform_int(0, static_cast<std::int64_t>(n) - 1)));
    } else {
        coords.resize(n);
        for (std::size_t i = 0; i < n; ++i) coords[i] = i;
    }
    double amax = 0.0;
    for (std::size_t i = 0; i < n; ++i) amax = std::max(amax, std::fabs(analytic[i]));
    const auto eval_coord = [&](std::size_t c, double h) {
        const double orig = param[c];
        param[c] = orig + h;
        const double fp = f();
        param[c] = orig - h;
        const double fm = f();
        param[c] = orig;
        const double fd = (fp - fm) / (2.0 * h);
        const double an = analytic[c];
        // the per-tensor floor keeps cancellation noise on near-zero
        // coordinates from dominating the report
        const double denom = std::max({std::fabs(fd), std::fabs(an), 1e-3 * amax, 1e-6});
        return std::fabs(fd - an) / denom;
    };
    double worst = 0.0;
    for (std::size_t c : coords) {
        double err = eval_coord(c, step);
        if (err > 1e-5) {
            // disambiguate truncation (shrinks with smaller h) and rounding
            // noise (shrinks with larger h) from genuine mismatches, which
            // stay put at every step size
            err = std::min(err, eval_coord(c, step * 0.25));
            err = std::min(err, eval_coord(c, step * 4.0));
        }
        worst = std::max(worst, err);
    }
    return worst;
}

}  // namespace phonssm
