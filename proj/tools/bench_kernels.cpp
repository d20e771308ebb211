// Compares the OpenMP kernels against the serial reference and reports
// GFLOP/s. Run with BREEN_THREADS=N to vary the thread count.

#include <chrono>
#include <cstdio>
#include <string>
#include <vector>

#include "breen/kernels.hpp"
#include "breen/rng.hpp"
#include "breen/threads.hpp"

using namespace breen;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::vector<float> random_vec(std::size_t n, Rng& rng) {
    std::vector<float> v(n);
    for (auto& x : v) x = static_cast<float>(rng.gauss());
    return v;
}

template <class F>
double time_loop(F&& body, int reps) {
    body();  // warmup
    const auto t0 = Clock::now();
    for (int r = 0; r < reps; ++r) body();
    return seconds_since(t0) / reps;
}

void bench_matmul(int m, int k, int n, int reps) {
    Rng rng(1);
    auto a = random_vec(static_cast<std::size_t>(m) * k, rng);
    auto b = random_vec(static_cast<std::size_t>(k) * n, rng);
    std::vector<float> c(static_cast<std::size_t>(m) * n), c_ref(c.size());

    const double flops = 2.0 * m * k * n;
    const double t_par = time_loop([&] { kern::matmul_nn(c.data(), a.data(), b.data(), m, k, n); }, reps);
    const double t_ref = time_loop([&] { kern::ref::matmul_nn(c_ref.data(), a.data(), b.data(), m, k, n); }, reps);
    const bool same = c == c_ref;
    std::printf("matmul %4dx%4dx%4d  omp %7.2f GF/s  serial %7.2f GF/s  speedup %4.2fx  bitwise %s\n", m, k, n,
                flops / t_par / 1e9, flops / t_ref / 1e9, t_ref / t_par, same ? "equal" : "DIFFER");
}

void bench_pool(int g, int d, int s, int reps) {
    Rng rng(2);
    auto grid = random_vec(static_cast<std::size_t>(g) * g * d, rng);
    const int gp = g / s;
    std::vector<float> out(static_cast<std::size_t>(gp) * gp * d), out_ref(out.size());
    const double bytes = static_cast<double>(grid.size()) * sizeof(float);
    const double t_par = time_loop([&] { kern::avg_pool_grid(out.data(), grid.data(), g, d, s); }, reps);
    const double t_ref = time_loop([&] { kern::ref::avg_pool_grid(out_ref.data(), grid.data(), g, d, s); }, reps);
    std::printf("pool   g=%2d d=%4d s=%2d  omp %7.2f GB/s  serial %7.2f GB/s  speedup %4.2fx  bitwise %s\n", g, d, s,
                bytes / t_par / 1e9, bytes / t_ref / 1e9, t_ref / t_par, out == out_ref ? "equal" : "DIFFER");
}

void bench_softmax(int rows, int cols, int reps) {
    Rng rng(3);
    auto x = random_vec(static_cast<std::size_t>(rows) * cols, rng);
    std::vector<float> y(x.size()), y_ref(x.size());
    const double elems = static_cast<double>(x.size());
    const double t_par = time_loop([&] { kern::softmax_rows(y.data(), x.data(), rows, cols); }, reps);
    const double t_ref = time_loop([&] { kern::ref::softmax_rows(y_ref.data(), x.data(), rows, cols); }, reps);
    std::printf("softmax %4dx%-4d      omp %7.2f Melem/s serial %7.2f Melem/s speedup %4.2fx bitwise %s\n", rows,
                cols, elems / t_par / 1e6, elems / t_ref / 1e6, t_ref / t_par, y == y_ref ? "equal" : "DIFFER");
}

}  // namespace

int main(int argc, char** argv) {
    init_threads_from_env();
    int reps = 20;
    if (argc > 1) reps = std::stoi(argv[1]);
    std::printf("threads: %d, reps: %d\n", thread_cap(), reps);

    bench_matmul(256, 64, 64, reps);
    bench_matmul(256, 64, 256, reps);
    bench_matmul(256, 256, 256, reps);
    bench_matmul(1024, 1024, 1024, std::max(1, reps / 10));
    bench_matmul(144, 2352, 64, reps);

    bench_pool(24, 32, 2, reps * 10);
    bench_pool(24, 32, 3, reps * 10);
    bench_pool(24, 1024, 4, reps);

    bench_softmax(260, 260, reps * 5);
    bench_softmax(64, 64, reps * 10);
    return 0;
}
