#include <doctest.h>

#include <cmath>

#include "breen/gradcheck.hpp"
#include "breen/losses.hpp"
#include "breen/rng.hpp"

using namespace breen;
using num::Array;
using num::ArrayD;

TEST_CASE("align_loss endpoints and scale invariance") {
    Rng rng(31);
    Array v = Array::randn({4, 8}, rng, 1.0f);

    CHECK(loss::align_loss(v, v) == doctest::Approx(0.0f).epsilon(1e-6));

    Array anti = v;
    for (auto& x : anti.data) x = -x;
    CHECK(loss::align_loss(anti, v) == doctest::Approx(2.0f).epsilon(1e-6));

    Array scaled = v;
    for (auto& x : scaled.data) x *= 5.0f;
    CHECK(loss::align_loss(scaled, v) == doctest::Approx(0.0f).epsilon(1e-6));

    for (float c : {0.01f, 0.7f, 42.0f}) {
        Array q = Array::randn({4, 8}, rng, 1.0f);
        Array qc = q;
        for (auto& x : qc.data) x *= c;
        CHECK(loss::align_loss(qc, v) == doctest::Approx(loss::align_loss(q, v)).epsilon(1e-5));
    }
}

TEST_CASE("align_loss per-row oracle: cos {1, 0} -> 0.5") {
    Array q({2, 2}, {1.0f, 0.0f, 0.0f, 1.0f});
    Array v({2, 2}, {2.0f, 0.0f, 3.0f, 0.0f});  // row0 parallel, row1 orthogonal
    CHECK(loss::align_loss(q, v) == doctest::Approx(0.5f).epsilon(1e-6));

    // brute-force per-token check on random input
    Rng rng(5);
    Array q2 = Array::randn({6, 4}, rng, 1.0f);
    Array v2 = Array::randn({6, 4}, rng, 1.0f);
    double want = 0;
    for (int i = 0; i < 6; ++i) {
        double qq = 0, vv = 0, qv = 0;
        for (int j = 0; j < 4; ++j) {
            qq += q2.at(i, j) * q2.at(i, j);
            vv += v2.at(i, j) * v2.at(i, j);
            qv += q2.at(i, j) * v2.at(i, j);
        }
        want += 1.0 - qv / (std::sqrt(qq) * std::sqrt(vv));
    }
    want /= 6;
    CHECK(loss::align_loss(q2, v2) == doctest::Approx(want).epsilon(1e-5));
}

TEST_CASE("align_loss degenerate rows") {
    Array q({1, 3}, {0.0f, 0.0f, 0.0f});
    Array v({1, 3}, {1.0f, 0.0f, 0.0f});
    // zero-norm q row: cosine defined as 0, loss 1
    CHECK(loss::align_loss(q, v) == doctest::Approx(1.0f).epsilon(1e-6));
    // zero-norm target row: error
    Array vz({1, 3});
    CHECK_THROWS_AS(loss::align_loss(v, vz), contract_error);
}

TEST_CASE("align bounds hold on random inputs") {
    Rng rng(77);
    for (int trial = 0; trial < 50; ++trial) {
        Array q = Array::randn({5, 6}, rng, 2.0f);
        Array v = Array::randn({5, 6}, rng, 0.5f);
        const float l = loss::align_loss(q, v);
        CHECK(l >= 0.0f);
        CHECK(l <= 2.0f + 1e-6f);
    }
}

TEST_CASE("total_align sums granularities") {
    CHECK(loss::total_align<float>({0.3f, 0.5f}) == doctest::Approx(0.8f));
    CHECK(loss::total_align<float>({0.7f}) == doctest::Approx(0.7f));
    CHECK(loss::total_align<float>({0.4f, 0.4f}) == doctest::Approx(0.8f));
    CHECK_THROWS_AS(loss::total_align<float>({}), contract_error);
}

TEST_CASE("lm_loss values") {
    Array uniform({3, 64});
    CHECK(loss::lm_loss(uniform, {5, -1, 63}) == doctest::Approx(std::log(64.0)).epsilon(1e-6));

    Array sharp({1, 8});
    sharp.data[2] = 50.0f;
    CHECK(loss::lm_loss(sharp, {2}) == doctest::Approx(0.0).epsilon(1e-6));

    CHECK_THROWS_AS(loss::lm_loss(sharp, {-1}), contract_error);

    // random logits vs 64-bit reference
    Rng rng(13);
    ArrayD ld = ArrayD::randn({5, 8}, rng, 2.0);
    Array lf = ld.astype<float>();
    const std::vector<int> labels = {0, 3, -1, 7, 2};
    const double ref = loss::lm_loss(lf.astype<double>(), labels);
    CHECK(loss::lm_loss(lf, labels) == doctest::Approx(ref).epsilon(1e-6));
}

TEST_CASE("combined algebra") {
    auto b = loss::combined(0.3, 0.5, 2.0, 1.0f, 1.0f);
    CHECK(b.align_total == doctest::Approx(0.8).epsilon(1e-12));
    CHECK(b.total == doctest::Approx(2.8).epsilon(1e-12));

    auto sft = loss::combined(0.3, 0.5, 2.0, 0.5f, 1.0f);
    CHECK(sft.total == doctest::Approx(0.5 * 0.8 + 2.0).epsilon(1e-9));

    auto off = loss::combined(0.9, 0.1, 1.7, 0.0f, 1.0f);
    CHECK(off.total == 1.7);  // alpha = 0 reduces exactly to the LM loss

    CHECK(std::abs(b.total - (b.alpha * b.align_total + b.beta * b.lm)) < 1e-7);
}

TEST_CASE("align gradient vs finite differences (f64)") {
    Rng rng(3);
    ArrayD q = ArrayD::randn({4, 8}, rng, 1.0);
    ArrayD v = ArrayD::randn({4, 8}, rng, 1.0);
    num::GraphD g;
    int leaf = g.leaf(q, true);
    g.backward(g.cosine_align(leaf, v));
    auto fd = num::finite_difference_gradient(
        [&](const ArrayD& t) { return static_cast<double>(loss::align_loss(t, v)); }, q);
    auto cmp = num::compare_gradients(g.grad(leaf), fd, 1e-4);
    CHECK(cmp.pass);
}

TEST_CASE("tape combination matches the plain functions") {
    Rng rng(21);
    Array qf = Array::randn({4, 6}, rng, 1.0f), vf = Array::randn({4, 6}, rng, 1.0f);
    Array qc = Array::randn({2, 6}, rng, 1.0f), vc = Array::randn({2, 6}, rng, 1.0f);
    Array logits = Array::randn({5, 9}, rng, 1.0f);
    const std::vector<int> labels = {1, -1, 4, 8, -1};
    const float alpha = 0.5f, beta = 1.0f;

    num::Graph g;
    int fine = g.cosine_align(g.constant(qf), vf);
    int coarse = g.cosine_align(g.constant(qc), vc);
    int lm = g.cross_entropy_rows(g.constant(logits), labels);
    auto nodes = loss::combined_loss(g, {fine, coarse}, {3, 4}, lm, alpha, beta);
    auto breakdown = loss::read_breakdown(g, nodes, alpha, beta);

    CHECK(breakdown.align_fine == doctest::Approx(loss::align_loss(qf, vf)).epsilon(1e-6));
    CHECK(breakdown.align_coarse == doctest::Approx(loss::align_loss(qc, vc)).epsilon(1e-6));
    CHECK(breakdown.lm == doctest::Approx(loss::lm_loss(logits, labels)).epsilon(1e-6));
    CHECK(breakdown.align_total == doctest::Approx(breakdown.align_fine + breakdown.align_coarse).epsilon(1e-9));
    CHECK(std::abs(breakdown.total - (alpha * breakdown.align_total + beta * breakdown.lm)) < 1e-6);
    CHECK(g.value(nodes.total).data[0] ==
          doctest::Approx(alpha * (g.value(fine).data[0] + g.value(coarse).data[0]) + beta * g.value(lm).data[0])
              .epsilon(1e-6));
}

TEST_CASE("nan detection names the first bad component") {
    loss::LossBreakdown b;
    b.align_fine = 0.1;
    b.align_coarse = std::nan("");
    b.lm = std::nan("");
    CHECK(loss::first_nan_component(b) == "align_coarse");
    b.align_coarse = 0.0;
    CHECK(loss::first_nan_component(b) == "lm");
    b.lm = 1.0;
    b.total = 1.0;
    CHECK(loss::first_nan_component(b).empty());
}
