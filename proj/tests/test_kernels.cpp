#include <doctest.h>

#include <cmath>
#include <array>
#include <vector>

#include "breen/array.hpp"
#include "breen/kernels.hpp"
#include "breen/rng.hpp"
#include "breen/threads.hpp"

using namespace breen;
using num::Array;
using num::ArrayD;

namespace {

// independent oracle: plain triple loop, jki-free, one dot per element
template <class T>
std::vector<T> naive_matmul(const std::vector<T>& a, const std::vector<T>& b, int m, int k, int n) {
    std::vector<T> c(static_cast<std::size_t>(m) * n, T(0));
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            T s = 0;
            for (int l = 0; l < k; ++l) s += a[i * k + l] * b[l * n + j];
            c[i * n + j] = s;
        }
    return c;
}

std::vector<float> random_vec(std::size_t n, Rng& rng) {
    std::vector<float> v(n);
    for (auto& x : v) x = static_cast<float>(rng.gauss());
    return v;
}

}  // namespace

TEST_CASE("matmul identity and hand values") {
    // [[1,0],[0,1]] * [[3,4],[5,6]] = [[3,4],[5,6]]
    std::vector<float> eye = {1, 0, 0, 1}, b = {3, 4, 5, 6}, c(4);
    kern::matmul_nn(c.data(), eye.data(), b.data(), 2, 2, 2);
    CHECK(c == b);

    // [[1,2]] * [[3],[4]] = [[11]]
    std::vector<float> a1 = {1, 2}, b1 = {3, 4}, c1(1);
    kern::matmul_nn(c1.data(), a1.data(), b1.data(), 1, 2, 1);
    CHECK(c1[0] == doctest::Approx(11.0f));
}

TEST_CASE("matmul variants match the naive oracle") {
    Rng rng(71);
    for (auto [m, k, n] : std::vector<std::array<int, 3>>{{3, 4, 2}, {7, 13, 5}, {1, 1, 1}, {16, 64, 24}}) {
        auto a = random_vec(static_cast<std::size_t>(m) * k, rng);
        auto b = random_vec(static_cast<std::size_t>(k) * n, rng);
        std::vector<float> c(static_cast<std::size_t>(m) * n);
        kern::matmul_nn(c.data(), a.data(), b.data(), m, k, n);
        auto want = naive_matmul(a, b, m, k, n);
        for (std::size_t i = 0; i < c.size(); ++i) CHECK(c[i] == doctest::Approx(want[i]).epsilon(1e-5));

        // nt: c2 = a * bt^T where bt is n x k
        std::vector<float> bt(static_cast<std::size_t>(n) * k);
        for (int j = 0; j < n; ++j)
            for (int l = 0; l < k; ++l) bt[j * k + l] = b[l * n + j];
        std::vector<float> c2(c.size());
        kern::matmul_nt(c2.data(), a.data(), bt.data(), m, k, n);
        for (std::size_t i = 0; i < c.size(); ++i) CHECK(c2[i] == doctest::Approx(want[i]).epsilon(1e-5));
    }
}

TEST_CASE("matmul_tn transposes its first factor") {
    Rng rng(5);
    const int m = 6, k = 4, n = 3;
    auto a = random_vec(static_cast<std::size_t>(m) * k, rng);  // A is m x k, we want A^T * B
    auto b = random_vec(static_cast<std::size_t>(m) * n, rng);
    std::vector<float> c(static_cast<std::size_t>(k) * n);
    kern::matmul_tn(c.data(), a.data(), b.data(), m, k, n);
    std::vector<float> at(static_cast<std::size_t>(k) * m);
    for (int i = 0; i < m; ++i)
        for (int l = 0; l < k; ++l) at[l * m + i] = a[i * k + l];
    auto want = naive_matmul(at, b, k, m, n);
    for (std::size_t i = 0; i < c.size(); ++i) CHECK(c[i] == doctest::Approx(want[i]).epsilon(1e-5));
}

TEST_CASE("openmp kernels are bitwise equal to the serial reference") {
    Rng rng(123);
    const int saved = thread_cap();
    for (int threads : {1, 2, 3, 4}) {
        set_thread_cap(threads);
        for (auto [m, k, n] : std::vector<std::array<int, 3>>{{5, 8, 7}, {33, 17, 9}, {64, 64, 64}, {130, 64, 130}}) {
            auto a = random_vec(static_cast<std::size_t>(m) * k, rng);
            auto b = random_vec(static_cast<std::size_t>(k) * n, rng);
            std::vector<float> c_par(static_cast<std::size_t>(m) * n), c_ref(c_par.size());
            kern::matmul_nn(c_par.data(), a.data(), b.data(), m, k, n);
            kern::ref::matmul_nn(c_ref.data(), a.data(), b.data(), m, k, n);
            CHECK(c_par == c_ref);

            std::vector<float> bt(static_cast<std::size_t>(n) * k);
            for (int j = 0; j < n; ++j)
                for (int l = 0; l < k; ++l) bt[j * k + l] = b[l * n + j];
            std::vector<float> d_par(c_par.size()), d_ref(c_par.size());
            kern::matmul_nt(d_par.data(), a.data(), bt.data(), m, k, n);
            kern::ref::matmul_nt(d_ref.data(), a.data(), bt.data(), m, k, n);
            CHECK(d_par == d_ref);

            std::vector<float> e_par(static_cast<std::size_t>(k) * n), e_ref(e_par.size());
            auto b2 = random_vec(static_cast<std::size_t>(m) * n, rng);
            kern::matmul_tn(e_par.data(), a.data(), b2.data(), m, k, n);
            kern::ref::matmul_tn(e_ref.data(), a.data(), b2.data(), m, k, n);
            CHECK(e_par == e_ref);
        }

        // pooling, softmax, rmsnorm, silu, expand
        const int g = 24, d = 5;
        auto grid = random_vec(static_cast<std::size_t>(g) * g * d, rng);
        for (int s : {2, 3, 4, 6}) {
            const int gp = g / s;
            std::vector<float> p_par(static_cast<std::size_t>(gp) * gp * d), p_ref(p_par.size());
            kern::avg_pool_grid(p_par.data(), grid.data(), g, d, s);
            kern::ref::avg_pool_grid(p_ref.data(), grid.data(), g, d, s);
            CHECK(p_par == p_ref);
        }
        auto x = random_vec(37 * 19, rng);
        std::vector<float> s_par(x.size()), s_ref(x.size());
        kern::softmax_rows(s_par.data(), x.data(), 37, 19);
        kern::ref::softmax_rows(s_ref.data(), x.data(), 37, 19);
        CHECK(s_par == s_ref);

        std::vector<float> gain(19, 1.3f), r_par(x.size()), r_ref(x.size());
        kern::rmsnorm_rows(r_par.data(), x.data(), gain.data(), 37, 19, 1e-6f);
        kern::ref::rmsnorm_rows(r_ref.data(), x.data(), gain.data(), 37, 19, 1e-6f);
        CHECK(r_par == r_ref);

        std::vector<float> sl_par(x.size()), sl_ref(x.size());
        kern::silu(sl_par.data(), x.data(), x.size());
        kern::ref::silu(sl_ref.data(), x.data(), x.size());
        CHECK(sl_par == sl_ref);

        std::vector<float> small(random_vec(36, rng));
        std::vector<float> x_par(36 * 49), x_ref(36 * 49);
        kern::block_expand(x_par.data(), small.data(), 6, 7);
        kern::ref::block_expand(x_ref.data(), small.data(), 6, 7);
        CHECK(x_par == x_ref);
    }
    set_thread_cap(saved);
}

TEST_CASE("avg_pool_grid equals explicit window averaging") {
    Rng rng(9);
    const int g = 12, d = 3, s = 3;
    auto grid = random_vec(static_cast<std::size_t>(g) * g * d, rng);
    const int gp = g / s;
    std::vector<float> got(static_cast<std::size_t>(gp) * gp * d);
    kern::avg_pool_grid(got.data(), grid.data(), g, d, s);
    for (int pr = 0; pr < gp; ++pr)
        for (int pc = 0; pc < gp; ++pc)
            for (int j = 0; j < d; ++j) {
                double acc = 0;
                for (int r = pr * s; r < (pr + 1) * s; ++r)
                    for (int c = pc * s; c < (pc + 1) * s; ++c) acc += grid[(r * g + c) * d + j];
                acc /= s * s;
                CHECK(got[(pr * gp + pc) * d + j] == doctest::Approx(acc).epsilon(1e-6));
            }
}

TEST_CASE("softmax basics") {
    std::vector<float> x = {0, 0, 0}, y(3);
    kern::softmax_rows(y.data(), x.data(), 1, 3);
    for (float v : y) CHECK(v == doctest::Approx(1.0f / 3));

    std::vector<float> big = {1000, 1000}, yb(2);
    kern::softmax_rows(yb.data(), big.data(), 1, 2);
    CHECK(yb[0] == doctest::Approx(0.5f));
    CHECK(yb[1] == doctest::Approx(0.5f));
    CHECK(std::isfinite(yb[0]));

    // 64-bit reference for [1,2,3]
    std::vector<double> xd = {1, 2, 3}, yd(3);
    kern::softmax_rows(yd.data(), xd.data(), 1, 3);
    std::vector<float> xf = {1, 2, 3}, yf(3);
    kern::softmax_rows(yf.data(), xf.data(), 1, 3);
    for (int i = 0; i < 3; ++i) CHECK(std::abs(yf[i] - yd[i]) < 1e-6);

    // rows sum to 1
    Rng rng(4);
    auto r = random_vec(11 * 23, rng);
    std::vector<float> yr(r.size());
    kern::softmax_rows(yr.data(), r.data(), 11, 23);
    for (int i = 0; i < 11; ++i) {
        double s = 0;
        for (int j = 0; j < 23; ++j) s += yr[i * 23 + j];
        CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("rmsnorm basics") {
    std::vector<float> ones(8, 1.0f), gain(8, 1.0f), y(8);
    kern::rmsnorm_rows(y.data(), ones.data(), gain.data(), 1, 8, 1e-6f);
    for (float v : y) CHECK(v == doctest::Approx(1.0f).epsilon(1e-5));

    std::vector<float> zero(8, 0.0f);
    kern::rmsnorm_rows(y.data(), zero.data(), gain.data(), 1, 8, 1e-6f);
    for (float v : y) CHECK(v == 0.0f);

    // constant gain => output rms ~= |gain|
    Rng rng(2);
    auto x = random_vec(16, rng);
    std::vector<float> g2(16, 2.5f), y2(16);
    kern::rmsnorm_rows(y2.data(), x.data(), g2.data(), 1, 16, 1e-6f);
    double ms = 0;
    for (float v : y2) ms += static_cast<double>(v) * v;
    CHECK(std::sqrt(ms / 16) == doctest::Approx(2.5).epsilon(1e-4));
}
