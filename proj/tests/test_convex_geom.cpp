#include <cmath>

#include "doctest.h"
#include "nclt/convex_geom.hpp"
#include "nclt/rng.hpp"

using namespace nclt;

namespace {

ConvexBody random_exact_body(int d, Rng& rng) {
    switch (rng.below(3)) {
        case 0: {
            Vec c(d);
            for (auto& v : c) v = rng.gaussian();
            return ConvexBody::ball(c, 0.3 + 2.0 * rng.uniform());
        }
        case 1: {
            Vec u(d);
            double n2 = 0.0;
            do {
                n2 = 0.0;
                for (auto& v : u) {
                    v = rng.gaussian();
                    n2 += v * v;
                }
            } while (n2 == 0.0);
            for (auto& v : u) v /= std::sqrt(n2);
            return ConvexBody::half_space(u, rng.gaussian());
        }
        default: {
            Vec lo(d), hi(d);
            for (int j = 0; j < d; ++j) {
                double a = rng.gaussian(), b = rng.gaussian();
                lo[j] = std::min(a, b) - 0.2;
                hi[j] = std::max(a, b) + 0.2;
            }
            return ConvexBody::box(lo, hi);
        }
    }
}

Vec random_point(int d, Rng& rng, double spread = 3.0) {
    Vec x(d);
    for (auto& v : x) v = spread * rng.gaussian();
    return x;
}

}  // namespace

TEST_CASE("projection closed forms") {
    auto ball = ConvexBody::ball({0, 0}, 1.0);
    Vec p = ball.project({3, 0});
    CHECK(p[0] == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(p[1] == doctest::Approx(0.0).epsilon(1e-14));

    auto hs = ConvexBody::half_space({1, 0}, 0.0);
    Vec q = hs.project({-2, 5});
    CHECK(q[0] == -2.0);
    CHECK(q[1] == 5.0);

    auto poly = ConvexBody::polytope(
        {HalfSpace{{1, 0}, 0.0}, HalfSpace{{0, 1}, 0.0}});
    Vec r = poly.project({1, 1});  // analytic QP solution is the origin
    CHECK(std::abs(r[0]) <= 1e-9);
    CHECK(std::abs(r[1]) <= 1e-9);
}

TEST_CASE("distance closed forms and polytope consistency") {
    auto ball = ConvexBody::ball({0, 0}, 1.0);
    CHECK(ball.distance({3, 0}) == doctest::Approx(2.0).epsilon(1e-14));

    auto box = ConvexBody::box({0, 0}, {1, 1});
    CHECK(box.distance({2, 2}) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-14));

    Rng rng(RandomSource{2, 0});
    auto poly = ConvexBody::polytope({HalfSpace{{1, 0}, 0.5}, HalfSpace{{0, 1}, 0.25},
                                      HalfSpace{{-1, 0}, 0.5}, HalfSpace{{0, -1}, 0.25}});
    for (int rep = 0; rep < 50; ++rep) {
        Vec x = random_point(2, rng);
        CHECK(poly.distance(x) ==
              doctest::Approx(norm(x - poly.project(x))).epsilon(1e-10));
    }
}

TEST_CASE("enlarge views") {
    auto ball = ConvexBody::ball({0, 0}, 1.0);
    auto exact = ball.enlarge_exact(0.5);
    REQUIRE(exact.has_value());
    CHECK(std::get<Ball>(exact->raw()).radius == doctest::Approx(1.5));

    // eps = 0 keeps the closure membership
    Rng rng(RandomSource{2, 1});
    auto view0 = enlarge(ball, 0.0);
    for (int rep = 0; rep < 100; ++rep) {
        Vec x = random_point(2, rng);
        CHECK(view0.contains(x) == ball.contains(x, 0.0));
    }

    // box example: project (2, 0.5) onto Box([0,0],[1,1])^{0.5} -> (1.5, 0.5)
    auto box = ConvexBody::box({0, 0}, {1, 1});
    auto view = enlarge(box, 0.5);
    Vec p = view.project({2.0, 0.5});
    CHECK(p[0] == doctest::Approx(1.5).epsilon(1e-12));
    CHECK(p[1] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(view.distance(p) <= 1e-12);
}

TEST_CASE("shrink closed forms") {
    auto ball = ConvexBody::ball({0, 0}, 1.0);
    auto s = ball.shrink(0.4);
    CHECK(std::get<Ball>(s.raw()).radius == doctest::Approx(0.6));
    CHECK(ball.shrink(1.2).is_empty());

    auto box = ConvexBody::box({0, 0}, {2, 4});
    auto sb = box.shrink(0.5);
    const auto& b = std::get<Box>(sb.raw());
    CHECK(b.lower[0] == doctest::Approx(0.5));
    CHECK(b.upper[1] == doctest::Approx(3.5));

    auto hs = ConvexBody::half_space({0, 1}, 2.0);
    CHECK(std::get<HalfSpace>(hs.shrink(0.5).raw()).offset == doctest::Approx(1.5));
}

TEST_CASE("inradius") {
    CHECK(ConvexBody::ball({0, 0, 0}, 2.5).inradius() == doctest::Approx(2.5));
    CHECK(ConvexBody::box({0, 0}, {2, 4}).inradius() == doctest::Approx(1.0));
    CHECK(std::isinf(ConvexBody::half_space({1, 0}, 0.0).inradius()));

    // unit square as a polytope: centered Chebyshev ball of radius 1/2
    auto square = ConvexBody::polytope({HalfSpace{{1, 0}, 1.0}, HalfSpace{{-1, 0}, 0.0},
                                        HalfSpace{{0, 1}, 1.0}, HalfSpace{{0, -1}, 0.0}});
    CHECK(square.inradius() == doctest::Approx(0.5).epsilon(1e-9));

    // slab polytope is unbounded but has finite inradius
    auto slab = ConvexBody::polytope({HalfSpace{{1, 0}, 1.0}, HalfSpace{{-1, 0}, 1.0}});
    CHECK(slab.inradius() == doctest::Approx(1.0).epsilon(1e-6));

    // a polytope with receding directions on every face has infinite inradius
    auto wedge = ConvexBody::polytope({HalfSpace{{1, 0}, 0.0}});
    CHECK(std::isinf(wedge.inradius()));
}

TEST_CASE("stein_transport three cases") {
    SteinTransportSpec spec{ConvexBody::ball({0, 0}, 1.0), 1.0};
    Vec inside = stein_transport(spec, {0.3, 0.0});
    CHECK(norm(inside) == 0.0);

    Vec middle = stein_transport(spec, {1.5, 0.0});
    CHECK(middle[0] == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(middle[1] == doctest::Approx(0.0));

    Vec outer = stein_transport(spec, {3.0, 0.0});
    CHECK(outer[0] == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(outer[1] == doctest::Approx(0.0));
}

TEST_CASE("property: transport norm bound and monotonicity") {
    Rng rng(RandomSource{2, 2});
    for (int rep = 0; rep < 400; ++rep) {
        int d = 1 + static_cast<int>(rng.below(3));
        ConvexBody body = random_exact_body(d, rng);
        double eps = 0.05 + rng.uniform();
        SteinTransportSpec spec{body, eps};

        Vec x = random_point(d, rng);
        CHECK(norm(stein_transport(spec, x)) <= eps + 1e-12);

        // <xi, f(eta + xi) - f(eta)> >= 0
        Vec eta = random_point(d, rng);
        Vec xi = random_point(d, rng, 1.0);
        Vec fe = stein_transport(spec, eta);
        Vec fex = stein_transport(spec, eta + xi);
        CHECK(dot(xi, fex - fe) >= -1e-10);
    }
}

TEST_CASE("property: transport quadratic lower bound (lemma case iii)") {
    Rng rng(RandomSource{2, 3});
    int hits = 0;
    for (int rep = 0; rep < 400; ++rep) {
        int d = 1 + static_cast<int>(rng.below(3));
        ConvexBody body = random_exact_body(d, rng);
        double gamma = 0.01 + 0.2 * rng.uniform();
        double eps = 0.01 + 0.5 * rng.uniform();

        // w in A^{4 gamma + eps} \ A^{4 gamma}: walk out along a projection ray
        Vec far = random_point(d, rng, 5.0);
        if (body.contains(far)) continue;
        Vec p = body.project(far);
        double dist = norm(far - p);
        if (dist <= 1e-9) continue;
        Vec u = (1.0 / dist) * (far - p);
        double t = 4.0 * gamma + eps * rng.uniform();
        if (t <= 4.0 * gamma) continue;
        Vec w = p + t * u;

        Vec x = random_point(d, rng, 1.0);
        double nx = norm(x);
        if (nx > 0.0) x = (4.0 * gamma * rng.uniform() / nx) * x;

        SteinTransportSpec spec{body, eps + 8.0 * gamma};
        Vec w0 = body.project(w);
        Vec h1 = (1.0 / norm(w0 - w)) * (w0 - w);
        double lhs = dot(x, stein_transport(spec, w) - stein_transport(spec, w - x));
        double rhs = 0.75 * dot(x, h1) * dot(x, h1);
        CHECK(lhs >= rhs - 1e-10);
        ++hits;
    }
    CHECK(hits > 200);  // the sampler really exercised the lemma case
}

TEST_CASE("property: projection idempotence and firm nonexpansiveness") {
    Rng rng(RandomSource{2, 4});
    for (int rep = 0; rep < 300; ++rep) {
        int d = 1 + static_cast<int>(rng.below(3));
        ConvexBody body = random_exact_body(d, rng);
        Vec x = random_point(d, rng);
        Vec y = random_point(d, rng);
        Vec px = body.project(x);
        CHECK(norm(body.project(px) - px) <= 1e-12);
        CHECK(norm(px - body.project(y)) <= norm(x - y) + 1e-12);
    }
}

TEST_CASE("property: shrink/enlarge adjunction on balls and boxes") {
    Rng rng(RandomSource{2, 5});
    for (int rep = 0; rep < 200; ++rep) {
        int d = 1 + static_cast<int>(rng.below(3));
        ConvexBody body = rng.below(2) ? random_exact_body(d, rng)
                                       : ConvexBody::ball(random_point(d, rng), 1.0);
        if (std::holds_alternative<HalfSpace>(body.raw())) continue;
        double eps = 0.3 * rng.uniform();
        ConvexBody shrunk = body.shrink(eps);
        if (shrunk.is_empty()) continue;
        auto grown = enlarge(shrunk, eps);
        Vec x = random_point(d, rng);
        if (grown.contains(x)) CHECK(body.contains(x, 1e-10));
    }
}

TEST_CASE("empty-set semantics and errors") {
    auto empty = ConvexBody::empty(2);
    CHECK(empty.is_empty());
    CHECK_THROWS_AS(empty.project({1, 1}), ValidationError);
    CHECK_THROWS_AS(empty.inradius(), ValidationError);
    CHECK_THROWS_AS(ConvexBody::ball({0, 0}, -1.0), ValidationError);
    CHECK_THROWS_AS(ConvexBody::half_space({2, 0}, 0.0), ValidationError);
    CHECK_THROWS_AS(ConvexBody::box({1, 1}, {0, 0}), ValidationError);
    // infeasible polytope rejected by the construction probe
    CHECK_THROWS_AS(ConvexBody::polytope(
                        {HalfSpace{{1, 0}, 0.0}, HalfSpace{{-1, 0}, -1.0}}),
                    ValidationError);
}

TEST_CASE("json round trip") {
    Rng rng(RandomSource{2, 6});
    for (int rep = 0; rep < 20; ++rep) {
        ConvexBody body = random_exact_body(2, rng);
        ConvexBody back = ConvexBody::from_json(body.to_json());
        for (int k = 0; k < 30; ++k) {
            Vec x = random_point(2, rng);
            CHECK(back.distance(x) == doctest::Approx(body.distance(x)).epsilon(1e-12));
        }
    }
    auto poly = ConvexBody::polytope({HalfSpace{{1, 0}, 1.0}, HalfSpace{{-1, 0}, 1.0}});
    ConvexBody back = ConvexBody::from_json(poly.to_json());
    CHECK(back.distance({3, 0}) == doctest::Approx(2.0).epsilon(1e-10));
}
