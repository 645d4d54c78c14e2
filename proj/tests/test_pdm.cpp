#include <cmath>

#include "doctest.h"
#include "phonssm/errors.hpp"
#include "phonssm/hpc.hpp"
#include "phonssm/pdm.hpp"

using namespace phonssm;

TEST_CASE("zero conv kernel makes the movement stream a pure mlp output") {
    Rng rng(101);
    PdmParams params = pdm_init(6, 3, 3, rng);
    params.conv_kernel.fill(0.0);
    // make all four perceptrons identical so the hand stream is the reference
    for (int i = 1; i < kNumComponents; ++i) params.mlps[static_cast<std::size_t>(i)] = params.mlps[0];
    Tensor z({5, 6});
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = rng.normal();
    const auto [cs, fused] = pdm_forward(z, params);
    for (std::size_t i = 0; i < cs.streams[Mov].size(); ++i)
        CHECK(cs.streams[Mov][i] == cs.streams[Hand][i]);
    CHECK(fused.dim(0) == 5);
    CHECK(fused.dim(1) == 6);
}

TEST_CASE("length-one sequence sees only the center tap") {
    Rng rng(102);
    Tape tape;
    Tensor x({1, 3});
    Tensor k({2, 3, 3});
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.normal();
    for (std::size_t i = 0; i < k.size(); ++i) k[i] = rng.normal();
    const Tensor out = tape.value(tape.conv1d_same(tape.constant(x), tape.constant(k)));
    for (int o = 0; o < 2; ++o) {
        double expect = 0.0;
        for (int c = 0; c < 3; ++c) expect += k.at(o, c, 1) * x.at(0, c);
        CHECK(out.at(0, o) == doctest::Approx(expect).epsilon(1e-14));
    }
    Tape tape2;
    CHECK_THROWS_AS(tape2.conv1d_same(tape2.constant(x), tape2.constant(x)),
                    std::invalid_argument);
}

TEST_CASE("default dimensions: 30x128 in, four 30x32 streams, 30x128 fused") {
    Rng rng(103);
    const PdmParams params = pdm_init(128, 32, 3, rng);
    Tensor z({30, 128});
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = rng.normal();
    const auto [cs, fused] = pdm_forward(z, params);
    for (int i = 0; i < kNumComponents; ++i) {
        CHECK(cs.streams[static_cast<std::size_t>(i)].dim(0) == 30);
        CHECK(cs.streams[static_cast<std::size_t>(i)].dim(1) == 32);
        CHECK(cs.pooled[static_cast<std::size_t>(i)].dim(0) == 32);
        // pooled really is the time mean of the stream
        for (int c = 0; c < 32; ++c) {
            double mean = 0.0;
            for (int t = 0; t < 30; ++t) mean += cs.streams[static_cast<std::size_t>(i)].at(t, c);
            CHECK(cs.pooled[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)] ==
                  doctest::Approx(mean / 30).epsilon(1e-12));
        }
    }
    CHECK(fused.dim(1) == 128);
}

TEST_CASE("orthogonality loss: pinned values") {
    SUBCASE("orthogonal basis vectors") {
        Tensor pooled({4, 4});
        for (int i = 0; i < 4; ++i) pooled.at(i, i) = 1.0;
        CHECK(orthogonality_loss(pooled) == 0.0);
    }
    SUBCASE("four identical vectors") {
        Tensor pooled({4, 3});
        for (int i = 0; i < 4; ++i) {
            pooled.at(i, 0) = 0.2;
            pooled.at(i, 1) = -0.4;
            pooled.at(i, 2) = 0.9;
        }
        CHECK(orthogonality_loss(pooled) == doctest::Approx(6.0).epsilon(1e-12));
    }
    SUBCASE("two-dimensional worked example") {
        // {(1,0),(1,1),(0,1),(1,-1)}: the six pairwise cos^2 terms sum to 2
        Tensor pooled({4, 2}, {1, 0, 1, 1, 0, 1, 1, -1});
        CHECK(orthogonality_loss(pooled) == doctest::Approx(2.0).epsilon(1e-12));
    }
    SUBCASE("zero vector is degenerate") {
        Tensor pooled({4, 2}, {1, 0, 0, 0, 0, 1, 1, 1});
        CHECK_THROWS_AS(orthogonality_loss(pooled), degenerate_input);
        CHECK_THROWS_AS(orthogonality_grad(pooled), degenerate_input);
    }
}

TEST_CASE("orthogonality loss is scale invariant") {
    Rng rng(104);
    Tensor pooled({4, 8});
    for (std::size_t i = 0; i < pooled.size(); ++i) pooled[i] = rng.normal();
    const double base = orthogonality_loss(pooled);
    Tensor scaled = pooled;
    const double alphas[4] = {0.03, -2.5, 7.0, -0.4};
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 8; ++j) scaled.at(i, j) *= alphas[i];
    CHECK(orthogonality_loss(scaled) == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("orthogonality gradient: stationary points and finite differences") {
    SUBCASE("orthogonal inputs have zero gradient") {
        Tensor pooled({4, 5});
        for (int i = 0; i < 4; ++i) pooled.at(i, i) = 2.0 - 0.3 * i;
        const Tensor g = orthogonality_grad(pooled);
        for (std::size_t i = 0; i < g.size(); ++i) CHECK(g[i] == 0.0);
    }
    SUBCASE("an exactly parallel pair is a stationary point of cos^2") {
        Tensor pooled({4, 5});
        pooled.at(0, 0) = 1.0;
        pooled.at(1, 0) = 1.0;  // identical to row 0
        pooled.at(2, 1) = 1.0;
        pooled.at(3, 2) = 1.0;
        const Tensor g = orthogonality_grad(pooled);
        for (std::size_t i = 0; i < g.size(); ++i) CHECK(g[i] == 0.0);
        // a slightly rotated pair pulls the gradient into the pair's plane only
        pooled.at(1, 1) = 0.05;
        const Tensor g2 = orthogonality_grad(pooled);
        double in_plane = 0.0;
        for (int i = 0; i < 4; ++i) {
            for (int j = 2; j < 5; ++j)
                if (!(i == 3 && j == 2)) CHECK(std::fabs(g2.at(i, j)) < 1e-15);
            in_plane += std::fabs(g2.at(i, 0)) + std::fabs(g2.at(i, 1));
        }
        CHECK(in_plane > 1e-3);
    }
    SUBCASE("random inputs match central finite differences") {
        Rng rng(105);
        Tensor pooled({4, 6});
        for (std::size_t i = 0; i < pooled.size(); ++i) pooled[i] = rng.normal();
        const Tensor analytic = orthogonality_grad(pooled);
        const auto f = [&]() { return orthogonality_loss(pooled); };
        CHECK(finite_diff_max_rel_err(f, pooled, analytic, 1e-6) < 1e-6);
    }
}

TEST_CASE("tape orthogonality gradient equals the closed form to 1e-10") {
    Rng rng(106);
    Tensor pooled({4, 7});
    for (std::size_t i = 0; i < pooled.size(); ++i) pooled[i] = rng.normal();
    Tape tape;
    std::array<VarId, kNumComponents> rows{};
    for (int i = 0; i < 4; ++i) {
        Tensor r({7});
        for (int j = 0; j < 7; ++j) r[static_cast<std::size_t>(j)] = pooled.at(i, j);
        rows[static_cast<std::size_t>(i)] = tape.leaf(r);
    }
    tape.backward(orthogonality_loss_tape(tape, rows, 0.0));
    const Tensor closed = orthogonality_grad(pooled);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 7; ++j)
            CHECK(tape.grad(rows[static_cast<std::size_t>(i)])[static_cast<std::size_t>(j)] ==
                  doctest::Approx(closed.at(i, j)).epsilon(1e-10));
}

TEST_CASE("plain gradient descent drives the orthogonality loss to zero") {
    // unit-scale random init: the loss is scale invariant and the step size
    // targets unit-norm geometry
    Rng rng(107);
    Tensor pooled({4, 32});
    for (std::size_t i = 0; i < pooled.size(); ++i) pooled[i] = rng.normal();
    normalize_rows(pooled);
    for (int step = 0; step < 500; ++step) {
        const Tensor g = orthogonality_grad(pooled);
        for (std::size_t i = 0; i < pooled.size(); ++i) pooled[i] -= 0.1 * g[i];
    }
    CHECK(orthogonality_loss(pooled) < 1e-6);
}
