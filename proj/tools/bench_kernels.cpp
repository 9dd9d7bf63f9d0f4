// Compares the serial reference kernels against the OpenMP kernels, then
// times a full model training step with each backend. Values are checked for
// exact agreement while timing, since the two backends are required to be
// bit-identical.

#include <chrono>
#include <cstdio>
#include <random>
#include <string>
#include <vector>

#include "treegpt/data.hpp"
#include "treegpt/kernels.hpp"
#include "treegpt/model.hpp"
#include "treegpt/ops.hpp"
#include "treegpt/training.hpp"

using namespace treegpt;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

template <class Fn>
double time_best_of(int repeats, Fn&& fn) {
    double best = 1e300;
    for (int r = 0; r < repeats; ++r) {
        const auto t0 = Clock::now();
        fn();
        best = std::min(best, seconds_since(t0));
    }
    return best;
}

void bench_gemm(int m, int k, int n, int repeats) {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    std::vector<double> a(static_cast<size_t>(m) * k), b(static_cast<size_t>(k) * n);
    std::vector<double> c_serial(static_cast<size_t>(m) * n), c_omp(c_serial.size());
    for (auto& x : a) x = dist(rng);
    for (auto& x : b) x = dist(rng);

    const double t_serial = time_best_of(
        repeats, [&] { kernels::serial::gemm_nn(a.data(), b.data(), c_serial.data(), m, k, n, false); });
    const double t_omp = time_best_of(
        repeats, [&] { kernels::omp::gemm_nn(a.data(), b.data(), c_omp.data(), m, k, n, false); });

    bool exact = c_serial == c_omp;
    const double flops = 2.0 * m * k * n;
    std::printf("gemm %4dx%4dx%4d  serial %8.3f ms (%6.2f GFLOP/s)  omp %8.3f ms (%6.2f "
                "GFLOP/s)  speedup %5.2fx  %s\n",
                m, k, n, t_serial * 1e3, flops / t_serial * 1e-9, t_omp * 1e3,
                flops / t_omp * 1e-9, t_serial / t_omp, exact ? "bit-exact" : "MISMATCH");
}

double train_step_time(kernels::Backend backend, int steps) {
    kernels::set_backend(backend);
    ModelConfig mc;
    mc.treeffn.hidden_dim = 128;
    mc.treeffn.edge_dim = 32;
    mc.max_seq_len = 64;
    TrainConfig tc;
    tc.total_steps = steps;
    tc.warmup_steps = 1;
    tc.seed = 11;
    const auto tasks = data::generate_synthetic(data::TaskFamily::ColorMap, 11, 16);
    std::vector<data::TrainingExample> examples;
    for (const auto& t : tasks) {
        for (const auto& p : t.train_pairs) {
            examples.push_back(data::make_example(p.input, p.output, mc.max_seq_len));
        }
    }
    auto state = init_train_state<double>(mc, tc);
    const auto t0 = Clock::now();
    train(state, examples, {}, tc);
    return seconds_since(t0) / steps;
}

}  // namespace

int main() {
    std::printf("threads: %d (OpenMP %s)\n", kernels::thread_count(),
                kernels::openmp_available() ? "enabled" : "unavailable");

    bench_gemm(64, 64, 64, 20);
    bench_gemm(128, 128, 128, 10);
    bench_gemm(256, 256, 256, 5);
    bench_gemm(512, 288, 256, 5);  // message-MLP shaped

    const double serial_step = train_step_time(kernels::Backend::Serial, 10);
    const double omp_step = train_step_time(kernels::Backend::OpenMP, 10);
    std::printf("train step (d=128, batch 8)  serial %8.3f ms  omp %8.3f ms  speedup %5.2fx\n",
                serial_step * 1e3, omp_step * 1e3, serial_step / omp_step);
    kernels::set_backend(kernels::openmp_available() ? kernels::Backend::OpenMP
                                                     : kernels::Backend::Serial);
    return 0;
}
