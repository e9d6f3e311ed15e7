// Benchmark comparing the OpenMP replication kernels against the serial
// reference on a representative workload, and checking that both produce
// identical results.

#include <chrono>
#include <cstdio>

#include "nclt/asgd.hpp"
#include "nclt/experiments.hpp"
#include "nclt/parallel.hpp"

using namespace nclt;

namespace {

double now_ms() {
    return std::chrono::duration<double, std::milli>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

template <typename F>
double timed(F&& fn) {
    double t0 = now_ms();
    fn();
    return now_ms() - t0;
}

}  // namespace

int main(int argc, char** argv) {
    long reps = argc > 1 ? std::atol(argv[1]) : 20000;

    NoiseSpec spec;
    spec.family = NoiseFamily::gaussian;
    spec.scale = 1.0;
    spec.covariance = SymMatrix::identity(2);

    std::printf("workload: %ld replications of W batches (n=500, d=2)\n", reps);
    Rows serial_w, parallel_w;
    par::set_threads(1);
    double t_serial = timed([&] {
        serial_w = iid_standardized_w(spec, 500, reps, RandomSource{42, 0});
    });
    par::set_threads(par::max_threads());
    double t_parallel = timed([&] {
        parallel_w = iid_standardized_w(spec, 500, reps, RandomSource{42, 0});
    });
    bool identical = serial_w.a == parallel_w.a;
    std::printf("  serial   %.1f ms\n  parallel %.1f ms (%d threads)\n  speedup %.2fx, "
                "bitwise identical: %s\n",
                t_serial, t_parallel, par::max_threads(), t_serial / t_parallel,
                identical ? "yes" : "NO");

    SgdProblem prob = quadratic_problem(2, 1.0, {0.0, 0.0}, 1.0);
    std::vector<long> grid{128, 256, 512, 1024, 2048};
    std::printf("workload: ASGD moment probe (alpha=0.75, n<=2048, 400 reps)\n");
    std::vector<MomentRow> serial_m, parallel_m;
    par::set_threads(1);
    double t2s = timed([&] {
        serial_m = moment_probe(prob, 1.0, 0.75, grid, 400, RandomSource{7, 0});
    });
    par::set_threads(par::max_threads());
    double t2p = timed([&] {
        parallel_m = moment_probe(prob, 1.0, 0.75, grid, 400, RandomSource{7, 0});
    });
    bool same = true;
    for (std::size_t i = 0; i < serial_m.size(); ++i)
        same = same && serial_m[i].m2 == parallel_m[i].m2 &&
               serial_m[i].m4 == parallel_m[i].m4;
    std::printf("  serial   %.1f ms\n  parallel %.1f ms\n  speedup %.2fx, bitwise "
                "identical: %s\n",
                t2s, t2p, t2s / t2p, same ? "yes" : "NO");
    return identical && same ? 0 : 1;
}
