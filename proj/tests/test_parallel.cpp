#include <vector>

#include "doctest.h"
#include "nclt/experiments.hpp"
#include "nclt/parallel.hpp"

using namespace nclt;

TEST_CASE("parallel_for matches serial_for on slot writes") {
    const int n = 10000;
    std::vector<double> a(n), b(n);
    par::serial_for(n, [&](std::int64_t i) { a[i] = std::sin(0.001 * i) * i; });
    par::parallel_for(n, [&](std::int64_t i) { b[i] = std::sin(0.001 * i) * i; });
    CHECK(a == b);
}

TEST_CASE("replication kernels are thread-count independent") {
    NoiseSpec spec;
    spec.family = NoiseFamily::gaussian;
    spec.scale = 1.0;
    spec.covariance = SymMatrix::identity(2);

    par::set_threads(1);
    Rows w1 = iid_standardized_w(spec, 100, 500, RandomSource{11, 0});
    par::set_threads(4);
    Rows w4 = iid_standardized_w(spec, 100, 500, RandomSource{11, 0});
    par::set_threads(par::max_threads());
    CHECK(w1.a == w4.a);  // bitwise
}

TEST_CASE("moment probe is thread-count independent") {
    SgdProblem p = quadratic_problem(2, 1.0, {0.0, 0.0}, 1.0);
    par::set_threads(1);
    auto t1 = moment_probe(p, 1.0, 0.75, {64, 128}, 50, RandomSource{11, 1});
    par::set_threads(8);
    auto t8 = moment_probe(p, 1.0, 0.75, {64, 128}, 50, RandomSource{11, 1});
    par::set_threads(par::max_threads());
    REQUIRE(t1.size() == t8.size());
    for (std::size_t i = 0; i < t1.size(); ++i) {
        CHECK(t1[i].m2 == t8[i].m2);
        CHECK(t1[i].m4 == t8[i].m4);
    }
}
