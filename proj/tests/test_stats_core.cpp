#include <cmath>

#include "doctest.h"
#include "nclt/special.hpp"
#include "nclt/stats_core.hpp"

using namespace nclt;

namespace {

// Adaptive-free Simpson oracle for E|Z|^3 = int |z|^3 phi(z) dz.
double abs_z3_quadrature() {
    const int m = 40000;
    const double lo = 0.0, hi = 12.0, h = (hi - lo) / m;
    double s = 0.0;
    for (int i = 0; i <= m; ++i) {
        double z = lo + i * h;
        double w = (i == 0 || i == m) ? 1.0 : (i % 2 ? 4.0 : 2.0);
        s += w * z * z * z * std::exp(-0.5 * z * z);
    }
    return 2.0 * s * h / 3.0 * 0.39894228040143267794;
}

// 2-D polar quadrature of the standard gaussian mass of an off-center disc.
double offcenter_ball_prob_quadrature(const Vec& c, double r) {
    const int ms = 2400, ma = 512;
    double total = 0.0;
    for (int i = 0; i < ms; ++i) {
        double s = r * (i + 0.5) / ms;
        double ring = 0.0;
        for (int a = 0; a < ma; ++a) {
            double phi = 2.0 * M_PI * (a + 0.5) / ma;
            double x = c[0] + s * std::cos(phi);
            double y = c[1] + s * std::sin(phi);
            ring += std::exp(-0.5 * (x * x + y * y));
        }
        total += s * ring * (2.0 * M_PI / ma);
    }
    return total * (r / ms) / (2.0 * M_PI);
}

SymMatrix cov2(double a, double b, double c) { return SymMatrix(2, {a, c, c, b}); }

}  // namespace

TEST_CASE("standardize scalar example and recorded transform") {
    Rows raw(2, 1);
    raw.row(0)[0] = 2.0;
    raw.row(1)[0] = -2.0;
    InfluenceBatch b = standardize(raw);
    CHECK(b.xi.row(0)[0] == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-14));
    CHECK(b.xi.row(1)[0] == doctest::Approx(-1.0 / std::sqrt(2.0)).epsilon(1e-14));
    CHECK(b.standardizer(0, 0) == doctest::Approx(1.0 / (2.0 * std::sqrt(2.0))).epsilon(1e-14));
}

TEST_CASE("standardize postcondition and involution") {
    Rng rng(RandomSource{3, 0});
    Rows raw(200, 3);
    for (long i = 0; i < raw.n; ++i)
        for (int j = 0; j < 3; ++j) raw.row(i)[j] = rng.gaussian() * (1.0 + j);
    InfluenceBatch b = standardize(raw);
    // sum xi xi^T = I within 1e-10
    SymMatrix s(3);
    for (long i = 0; i < b.xi.n; ++i)
        for (int a = 0; a < 3; ++a)
            for (int c = 0; c < 3; ++c) s(a, c) += b.xi.row(i)[a] * b.xi.row(i)[c];
    for (int a = 0; a < 3; ++a)
        for (int c = 0; c < 3; ++c)
            CHECK(std::abs(s(a, c) - (a == c ? 1.0 : 0.0)) <= 1e-10);

    // standardizing again is the identity within 1e-8
    InfluenceBatch b2 = standardize(b.xi);
    for (int a = 0; a < 3; ++a)
        for (int c = 0; c < 3; ++c)
            CHECK(std::abs(b2.standardizer(a, c) - (a == c ? 1.0 : 0.0)) <= 1e-8);
}

TEST_CASE("standardize rejects rank-deficient batches") {
    Rows zeros(5, 2);
    CHECK_THROWS_AS(standardize(zeros), SingularError);
}

TEST_CASE("gamma for scaled rademacher and gaussian scalars") {
    // xi_i = +-1/sqrt(n) gives gamma = n^{-1/2} deterministically
    const long n = 64;
    Rows rows(n, 1);
    for (long i = 0; i < n; ++i) rows.row(i)[0] = (i % 2 ? 1.0 : -1.0) / std::sqrt(double(n));
    InfluenceBatch b{rows, SymMatrix::identity(1)};
    CHECK(gamma_third_moment(b) == doctest::Approx(1.0 / std::sqrt(double(n))).epsilon(1e-13));

    NoiseSpec spec;
    spec.family = NoiseFamily::gaussian;
    spec.covariance = SymMatrix::identity(1);
    Estimate g = gamma_expected(spec, 100, 4000, RandomSource{3, 1});
    double expected = abs_z3_quadrature() / std::sqrt(100.0);
    CHECK(std::abs(g.value - expected) <= 4.0 * g.stderr_);

    NoiseSpec rad = spec;
    rad.family = NoiseFamily::rademacher;
    Estimate gr = gamma_expected(rad, 100, 10, RandomSource{3, 2});
    CHECK(gr.value == doctest::Approx(1.0 / 10.0).epsilon(1e-13));
    CHECK(gr.stderr_ <= 1e-14);
}

TEST_CASE("gaussian_convex_prob exact forms") {
    Vec e1{1.0, 0.0};
    auto hs = ConvexBody::half_space(e1, 0.0);
    CHECK(gaussian_convex_prob(hs, ProbMode::exact).value == doctest::Approx(0.5));

    double r = std::sqrt(2.0 * std::log(2.0));
    auto ball = ConvexBody::ball({0, 0}, r);
    CHECK(gaussian_convex_prob(ball, ProbMode::exact).value ==
          doctest::Approx(0.5).epsilon(1e-12));

    auto box = ConvexBody::box({-1, -1}, {1, 1});
    double p1 = std_normal_cdf(1.0) - std_normal_cdf(-1.0);
    CHECK(gaussian_convex_prob(box, ProbMode::exact).value ==
          doctest::Approx(p1 * p1).epsilon(1e-12));

    auto off = ConvexBody::ball({1, 0}, 1.0);
    CHECK_THROWS_AS(gaussian_convex_prob(off, ProbMode::exact), CapabilityError);
    CHECK(gaussian_convex_prob(ConvexBody::empty(2), ProbMode::exact).value == 0.0);
}

TEST_CASE("gaussian_convex_prob mc agrees with exact across random bodies") {
    Rng rng(RandomSource{3, 3});
    for (int rep = 0; rep < 50; ++rep) {
        int d = 1 + static_cast<int>(rng.below(3));
        ConvexBody body = [&]() -> ConvexBody {
            switch (rng.below(3)) {
                case 0:
                    return ConvexBody::ball(Vec(d, 0.0), 0.5 + 2.0 * rng.uniform());
                case 1: {
                    Vec u(d, 0.0);
                    u[0] = 1.0;
                    return ConvexBody::half_space(u, rng.gaussian());
                }
                default: {
                    Vec lo(d), hi(d);
                    for (int j = 0; j < d; ++j) {
                        lo[j] = -0.3 - rng.uniform();
                        hi[j] = 0.3 + rng.uniform();
                    }
                    return ConvexBody::box(lo, hi);
                }
            }
        }();
        Estimate exact = gaussian_convex_prob(body, ProbMode::exact);
        Estimate mc = gaussian_convex_prob(body, ProbMode::mc, 20000,
                                           RandomSource{3, 100 + (std::uint64_t)rep});
        CHECK(std::abs(mc.value - exact.value) <= 4.0 * std::max(mc.stderr_, 1e-4));
    }
}

TEST_CASE("off-center ball mc matches radial quadrature oracle") {
    Vec c{0.7, -0.4};
    double r = 1.3;
    double oracle = offcenter_ball_prob_quadrature(c, r);
    auto body = ConvexBody::ball(c, r);
    Estimate mc = gaussian_convex_prob(body, ProbMode::mc, 1000000, RandomSource{3, 4});
    CHECK(std::abs(mc.value - oracle) <= 3.0 * mc.stderr_);
}

TEST_CASE("sampler determinism and family shapes") {
    NoiseSpec spec;
    spec.family = NoiseFamily::gaussian;
    spec.covariance = cov2(2.0, 1.0, 0.5);
    Rows a = sample(spec, 100, 2, RandomSource{3, 5});
    Rows b = sample(spec, 100, 2, RandomSource{3, 5});
    CHECK(a.a == b.a);  // bit-for-bit
    Rows c = sample(spec, 100, 2, RandomSource{3, 6});
    CHECK(a.a != c.a);

    // sample covariance near the spec within the Wishart fluctuation scale
    const long n = 100000;
    Rows big = sample(spec, n, 2, RandomSource{3, 7});
    SymMatrix cov(2);
    for (long i = 0; i < n; ++i)
        for (int p = 0; p < 2; ++p)
            for (int q = p; q < 2; ++q) cov(p, q) += big.row(i)[p] * big.row(i)[q] / n;
    cov(1, 0) = cov(0, 1);
    double tol = 5.0 * std::sqrt(2.0 / n) * spectral_norm(spec.covariance);
    for (int p = 0; p < 2; ++p)
        for (int q = 0; q < 2; ++q)
            CHECK(std::abs(cov(p, q) - spec.covariance(p, q)) <= tol);

    NoiseSpec sphere;
    sphere.family = NoiseFamily::uniform_sphere;
    sphere.scale = 2.5;
    sphere.covariance = SymMatrix::identity(3);
    Rows s = sample(sphere, 50, 3, RandomSource{3, 8});
    for (long i = 0; i < s.n; ++i) {
        double n2 = 0.0;
        for (int j = 0; j < 3; ++j) n2 += s.row(i)[j] * s.row(i)[j];
        CHECK(std::sqrt(n2) == doctest::Approx(2.5).epsilon(1e-12));
    }

    NoiseSpec bad = sphere;
    bad.covariance = cov2(2.0, 1.0, 0.5);
    CHECK_THROWS_AS(bad.validate(), ValidationError);

    NoiseSpec sub;
    sub.family = NoiseFamily::sub_exponential;
    sub.rate = 0.0;
    sub.covariance = SymMatrix::identity(1);
    CHECK_THROWS_AS(sub.validate(), ValidationError);
    sub.rate = 1.0;
    Rows lap = sample(sub, 200000, 1, RandomSource{3, 9});
    double m2 = 0.0;
    for (long i = 0; i < lap.n; ++i) m2 += lap.row(i)[0] * lap.row(i)[0];
    CHECK(std::abs(m2 / lap.n - 1.0) <= 0.02);  // unit variance by construction
}

TEST_CASE("box-muller moment sanity") {
    const long reps = 200000;
    Rng rng(RandomSource{3, 10});
    double m1 = 0, m2 = 0, m3 = 0;
    for (long i = 0; i < reps; ++i) {
        double z = rng.gaussian();
        m1 += z;
        m2 += z * z;
        m3 += z * z * z;
    }
    m1 /= reps;
    m2 /= reps;
    m3 /= reps;
    CHECK(std::abs(m1) <= 5.0 / std::sqrt(double(reps)));
    CHECK(std::abs(m2 - 1.0) <= 7.0 / std::sqrt(double(reps)));
    CHECK(std::abs(m3) <= 5.0 * std::sqrt(15.0) / std::sqrt(double(reps)));
}

TEST_CASE("noise spec json round trip") {
    NoiseSpec spec;
    spec.family = NoiseFamily::sub_exponential;
    spec.scale = 1.5;
    spec.rate = 2.0;
    spec.covariance = cov2(1.0, 2.0, 0.25);
    NoiseSpec back = NoiseSpec::from_json(spec.to_json());
    CHECK(back.family == spec.family);
    CHECK(back.scale == spec.scale);
    CHECK(back.rate == spec.rate);
    CHECK(back.covariance.a == spec.covariance.a);
}
