#include <cmath>

#include "doctest.h"
#include "phonssm/rng.hpp"
#include "phonssm/tape.hpp"

using namespace phonssm;

namespace {
Tensor random_tensor(std::vector<int> shape, Rng& rng, double scale = 1.0) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = scale * rng.normal();
    return t;
}
}  // namespace

TEST_CASE("grad of x^T x is 2x") {
    Rng rng(1);
    Tensor x = random_tensor({5}, rng);
    Tape tape;
    const VarId xv = tape.leaf(x);
    tape.backward(tape.dot(xv, xv));
    for (int i = 0; i < 5; ++i)
        CHECK(tape.grad(xv)[static_cast<std::size_t>(i)] ==
              doctest::Approx(2.0 * x[static_cast<std::size_t>(i)]).epsilon(1e-12));
}

TEST_CASE("softmax gradient is orthogonal to the ones vector") {
    Rng rng(2);
    Tensor x = random_tensor({7}, rng);
    Tensor c = random_tensor({7}, rng);
    Tape tape;
    const VarId xv = tape.leaf(x);
    tape.backward(tape.dot(tape.softmax_vec(xv), tape.constant(c)));
    double s = 0.0;
    for (std::size_t i = 0; i < 7; ++i) s += tape.grad(xv)[i];
    CHECK(std::fabs(s) < 1e-12);
}

TEST_CASE("backward requires a scalar loss and reruns bitwise") {
    Tape tape;
    const VarId x = tape.leaf(Tensor({3}, {1, 2, 3}));
    const VarId y = tape.mul(x, x);
    CHECK_THROWS_AS(tape.backward(y), std::invalid_argument);
    const VarId loss = tape.sum(y);
    tape.backward(loss);
    const Tensor g1 = tape.grad(x);
    tape.backward(loss);
    const Tensor g2 = tape.grad(x);
    for (std::size_t i = 0; i < 3; ++i) CHECK(g1[i] == g2[i]);
}

TEST_CASE("gradient of a sum equals the sum of gradients") {
    Rng rng(3);
    Tensor x = random_tensor({6}, rng);
    Tensor a = random_tensor({6}, rng);
    Tensor b = random_tensor({6}, rng);

    const auto grad_of = [&](bool use_a, bool use_b) {
        Tape tape;
        const VarId xv = tape.leaf(x);
        VarId loss = -1;
        if (use_a) loss = tape.dot(xv, tape.constant(a));
        if (use_b) {
            const VarId lb = tape.dot(xv, tape.constant(b));
            loss = loss < 0 ? lb : tape.add(loss, lb);
        }
        tape.backward(loss);
        return tape.grad(xv);
    };
    const Tensor ga = grad_of(true, false), gb = grad_of(false, true), gs = grad_of(true, true);
    for (std::size_t i = 0; i < 6; ++i) CHECK(gs[i] == doctest::Approx(ga[i] + gb[i]).epsilon(1e-14));
}

TEST_CASE("finite differences on linear and quadratic functions") {
    Rng rng(4);
    Tensor x = random_tensor({4}, rng);
    Tensor a = random_tensor({4}, rng);

    SUBCASE("linear") {
        const auto f = [&]() {
            double s = 0.0;
            for (std::size_t i = 0; i < 4; ++i) s += a[i] * x[i];
            return s;
        };
        const double err = finite_diff_max_rel_err(f, x, a, 1e-6);
        CHECK(err < 1e-9);
    }
    SUBCASE("quadratic") {
        const auto f = [&]() {
            double s = 0.0;
            for (std::size_t i = 0; i < 4; ++i) s += x[i] * x[i];
            return s;
        };
        Tensor an({4});
        for (std::size_t i = 0; i < 4; ++i) an[i] = 2.0 * x[i];
        CHECK(finite_diff_max_rel_err(f, x, an, 1e-5) < 1e-9);
    }
}

// one composite touching every primitive, checked against central differences
TEST_CASE("random composite of primitives matches finite differences") {
    Rng rng(5);
    Tensor w1 = random_tensor({4, 6}, rng, 0.7);
    Tensor w2 = random_tensor({6}, rng, 0.7);
    Tensor kern = random_tensor({3, 3, 3}, rng, 0.5);
    Tensor x = random_tensor({5, 4}, rng);
    Tensor bank = random_tensor({4, 6}, rng);

    const auto build = [&](Tape& tape) {
        const VarId xv = tape.leaf(x);
        const VarId w1v = tape.leaf(w1);
        const VarId w2v = tape.leaf(w2);
        const VarId kv = tape.leaf(kern);
        const VarId bv = tape.leaf(bank);

        const VarId h = tape.add_rowvec(tape.matmul(xv, w1v), w2v);     // 5x6
        const VarId g = tape.gelu(h);
        const VarId l = tape.leaky_relu(tape.scale(h, 0.5), 0.2);
        const VarId m = tape.mul(g, l);
        const VarId sm = tape.softmax_rows(m);
        const VarId mr = tape.mean_rows(sm);                            // 6
        const VarId mg = tape.mean_group_rows(m, 5);                    // 1x6? no: 5 rows group 5 -> 1x6
        const VarId r0 = tape.row(mg, 0);
        const VarId sl = tape.slice_vec(r0, 1, 4);
        const VarId cat = tape.concat({sl, tape.slice_vec(mr, 0, 2)});  // 6
        const VarId cp = tape.cos_pair(cat, mr, 1e-8);
        const VarId cr = tape.cos_rows(bv, mr, 1e-8);                   // 4
        const VarId smv = tape.softmax_vec(cr);
        const VarId conv_in = tape.concat_cols({tape.stack_rows({sl, sl, sl}),
                                                tape.reverse_rows(tape.stack_rows({sl, sl, sl}))});
        // conv over [3 x 8]? kernel wants 3 in-channels: slice columns via matmul trick instead
        const VarId xs = tape.stack_rows({tape.slice_vec(cat, 0, 3), tape.slice_vec(cat, 3, 3),
                                          tape.slice_vec(mr, 0, 3), tape.slice_vec(mr, 3, 3)});
        const VarId cv = tape.conv1d_same(xs, kv);                      // 4x3
        const VarId mvv = tape.matvec(cv, tape.slice_vec(cat, 0, 3));   // 4
        const VarId vm = tape.vecmat(mvv, bv);                          // 6
        const VarId ou = tape.outer(mvv, sl);                           // 4x4
        const VarId rm = tape.rowwise_mul(ou, sl);
        const VarId dv = tape.div(tape.expm1(tape.scale(sl, 0.3)),
                                  tape.exp(tape.scale(sl, 0.2)));
        const VarId sp = tape.softplus(tape.mul_scalar(dv, cp));
        const VarId ce = tape.cross_entropy_smoothed(smv, 2, 0.1);
        VarId loss = tape.add(tape.sum(rm), tape.sum(sp));
        loss = tape.add(loss, tape.add(tape.sum(vm), ce));
        loss = tape.add(loss, tape.sum(conv_in));
        return loss;
    };

    Tape tape;
    const VarId loss = build(tape);
    tape.backward(loss);
    REQUIRE(tape.kink_proximity() > 1e-4);

    // leaves were created in order: x, w1, w2, kern, bank
    std::vector<Tensor*> tensors = {&x, &w1, &w2, &kern, &bank};
    std::vector<Tensor> analytic;
    for (VarId id = 0; id < 5; ++id) analytic.push_back(tape.grad(id));

    const auto f = [&]() {
        Tape t(false);
        return t.value(build(t)).item();
    };
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        const double err = finite_diff_max_rel_err(f, *tensors[i], analytic[i], 1e-6);
        INFO("tensor ", i);
        CHECK(err < 1e-6);
    }
}

TEST_CASE("dropout modes") {
    Rng rng(6);
    Tensor x = random_tensor({40}, rng);
    Tape tape;
    const VarId xv = tape.leaf(x);
    CHECK(tape.dropout(xv, 0.5, rng, false) == xv);  // eval: identity node
    CHECK(tape.dropout(xv, 0.0, rng, true) == xv);
    const VarId d = tape.dropout(xv, 0.5, rng, true);
    int zeros = 0;
    for (std::size_t i = 0; i < 40; ++i) {
        const double v = tape.value(d)[i];
        if (v == 0.0)
            ++zeros;
        else
            CHECK(v == doctest::Approx(2.0 * x[i]));
    }
    CHECK(zeros > 5);
    CHECK(zeros < 35);
}
