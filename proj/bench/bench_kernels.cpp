// Serial reference kernels vs. their OpenMP counterparts on training-sized shapes.
//
//   bench_kernels [--reps N] [--threads T]

#include <CLI11.hpp>
#include <omp.h>

#include <chrono>
#include <cstring>
#include <functional>
#include <iomanip>
#include <iostream>
#include <random>
#include <vector>

#include "lrdif/kernels.hpp"

namespace k = lrdif::kernels;

namespace {

std::vector<double> random_values(std::size_t n, std::mt19937_64& gen) {
    std::normal_distribution<double> dist;
    std::vector<double> v(n);
    for (auto& x : v) x = dist(gen);
    return v;
}

double best_ms(int reps, const std::function<void()>& fn) {
    double best = 1e300;
    for (int r = 0; r < reps; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        fn();
        best = std::min(best, std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
    }
    return best;
}

void report(const std::string& name, double serial, double parallel, bool identical) {
    std::cout << std::left << std::setw(34) << name << std::right << std::fixed << std::setprecision(3)
              << std::setw(10) << serial << std::setw(10) << parallel << std::setw(9) << std::setprecision(2)
              << serial / parallel << "x  " << (identical ? "bit-identical" : "MISMATCH") << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Kernel benchmark: serial reference vs OpenMP"};
    int reps = 5;
    int threads = 0;
    app.add_option("--reps", reps, "Repetitions (best time is reported)");
    app.add_option("--threads", threads, "OpenMP threads (0 = runtime default)");
    CLI11_PARSE(app, argc, argv);
    if (threads > 0) omp_set_num_threads(threads);

    std::mt19937_64 gen(1);
    std::cout << "threads " << k::max_threads() << ", best of " << reps << " (ms)\n";
    std::cout << std::left << std::setw(34) << "kernel" << std::right << std::setw(10) << "serial" << std::setw(10)
              << "omp" << std::setw(10) << "speedup" << "\n";

    struct GemmCase {
        const char* name;
        std::size_t m, n, kk;
        bool ta, tb;
    };
    for (const GemmCase& g : {GemmCase{"gemm 4096x64x64", 4096, 64, 64, false, false},
                              GemmCase{"gemm 4096x64x64 trans_b", 4096, 64, 64, false, true},
                              GemmCase{"gemm 64x64x4096 trans_a", 64, 64, 4096, true, false},
                              GemmCase{"gemm 512x512x512", 512, 512, 512, false, false}}) {
        const auto a = random_values(g.m * g.kk, gen), b = random_values(g.kk * g.n, gen);
        std::vector<double> c1(g.m * g.n), c2(g.m * g.n);
        const double s = best_ms(reps, [&] { k::reference::gemm(g.ta, g.tb, g.m, g.n, g.kk, a.data(), b.data(), c1.data(), false); });
        const double p = best_ms(reps, [&] { k::gemm(g.ta, g.tb, g.m, g.n, g.kk, a.data(), b.data(), c2.data(), false); });
        report(g.name, s, p, std::memcmp(c1.data(), c2.data(), c1.size() * sizeof(double)) == 0);
    }

    const std::size_t bt = 64, ch = 32, h = 16, w = 16;
    const auto x = random_values(bt * ch * h * w, gen), wt = random_values(ch * 9, gen);
    std::vector<double> y1(x.size()), y2(x.size());
    {
        const double s = best_ms(reps, [&] { k::reference::depthwise3x3(bt, ch, h, w, x.data(), wt.data(), y1.data()); });
        const double p = best_ms(reps, [&] { k::depthwise3x3(bt, ch, h, w, x.data(), wt.data(), y2.data()); });
        report("depthwise3x3 64x32x16x16", s, p, y1 == y2);
    }
    {
        const double s = best_ms(reps, [&] { k::reference::depthwise3x3_grad_input(bt, ch, h, w, x.data(), wt.data(), y1.data()); });
        const double p = best_ms(reps, [&] { k::depthwise3x3_grad_input(bt, ch, h, w, x.data(), wt.data(), y2.data()); });
        report("depthwise3x3 grad_input", s, p, y1 == y2);
    }
    {
        std::vector<double> g1(ch * 9), g2(ch * 9);
        const double s = best_ms(reps, [&] { k::reference::depthwise3x3_grad_weight(bt, ch, h, w, x.data(), x.data(), g1.data()); });
        const double p = best_ms(reps, [&] { k::depthwise3x3_grad_weight(bt, ch, h, w, x.data(), x.data(), g2.data()); });
        report("depthwise3x3 grad_weight", s, p, g1 == g2);
    }
    {
        const std::vector<std::size_t> shape{bt, ch, h, w}, perm{0, 2, 3, 1};
        const double s = best_ms(reps, [&] { k::reference::permute(shape, perm, x.data(), y1.data()); });
        const double p = best_ms(reps, [&] { k::permute(shape, perm, x.data(), y2.data()); });
        report("permute NCHW->NHWC", s, p, y1 == y2);
    }
    return 0;
}
