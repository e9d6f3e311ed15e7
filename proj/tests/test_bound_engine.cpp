#include <cmath>

#include "doctest.h"
#include "nclt/bound_engine.hpp"
#include "nclt/parallel.hpp"

using namespace nclt;

namespace {

CouplingTerms terms(double gamma, double wd, double loo, double oc = 0.0) {
    CouplingTerms t;
    t.gamma = {gamma, 0.0};
    t.wd = {wd, 0.0};
    t.loo = {loo, 0.0};
    t.oc = {oc, 0.0};
    t.analytic = true;
    return t;
}

}  // namespace

TEST_CASE("thm21 value and arithmetic anchor") {
    // 259 sqrt(4) * 0.01 = 5.18 with every other term zero
    BoundReport r = thm21_bound(terms(0.01, 0, 0), 4);
    CHECK(r.value == doctest::Approx(5.18).epsilon(1e-14));
    CHECK(thm21_bound(terms(0, 0, 0), 3).value == 0.0);

    // d = 1 reduction: plain 259 gamma + 2 wd + 2 loo
    BoundReport r1 = thm21_bound(terms(0.1, 0.2, 0.3), 1);
    CHECK(r1.value == doctest::Approx(259.0 * 0.1 + 2.0 * 0.2 + 2.0 * 0.3).epsilon(1e-14));
}

TEST_CASE("cor22 adds the truncation probability") {
    CHECK(cor22_bound(terms(0.01, 0.1, 0.1, 0.0), 2).value ==
          doctest::Approx(thm21_bound(terms(0.01, 0.1, 0.1), 2).value));
    CHECK(cor22_bound(terms(0, 0, 0, 1.0), 2).value == doctest::Approx(1.0));
}

TEST_CASE("cor23 sigma scaling") {
    CouplingTerms t = terms(0.02, 0.3, 0.4);
    CHECK(cor23_bound(t, 3, 1.0).value == doctest::Approx(thm21_bound(t, 3).value));

    // sigma = 4 scales the gamma term by 4^{-3/2} = 1/8
    BoundReport g_only = cor23_bound(terms(0.02, 0, 0), 3, 4.0);
    CHECK(g_only.value ==
          doctest::Approx(thm21_bound(terms(0.02, 0, 0), 3).value / 8.0).epsilon(1e-14));

    // random ingredients vs independent recomputation
    double sigma = 0.25;
    double expected = 259.0 * std::pow(sigma, -1.5) * std::sqrt(3.0) * 0.02 +
                      2.0 / sigma * 0.3 + 2.0 / sigma * 0.4;
    CHECK(cor23_bound(t, 3, sigma).value == doctest::Approx(expected).epsilon(1e-14));
    CHECK_THROWS_AS(cor23_bound(t, 3, 0.0), ValidationError);
}

TEST_CASE("prop41 general and constant-eps forms") {
    CHECK(prop41_constant_eps(0.02, 1, 0.1) == doctest::Approx(0.58).epsilon(1e-14));
    CHECK(prop41_constant_eps(0.0, 5, 0.0) == 0.0);
    BoundReport r = prop41_bound(terms(0.02, 0.3, 0.4), 2);
    CHECK(r.value ==
          doctest::Approx(19.0 * std::sqrt(2.0) * 0.02 + 0.6 + 0.8).epsilon(1e-14));
}

TEST_CASE("bounds are monotone in every ingredient") {
    Rng rng(RandomSource{4, 0});
    for (int rep = 0; rep < 100; ++rep) {
        double g = rng.uniform(), wd = rng.uniform(), loo = rng.uniform(), oc = 0.5 * rng.uniform();
        int d = 1 + static_cast<int>(rng.below(5));
        double bump = 0.1 + rng.uniform();
        CHECK(thm21_bound(terms(g + bump, wd, loo), d).value >=
              thm21_bound(terms(g, wd, loo), d).value);
        CHECK(thm21_bound(terms(g, wd + bump, loo), d).value >=
              thm21_bound(terms(g, wd, loo), d).value);
        CHECK(thm21_bound(terms(g, wd, loo + bump), d).value >=
              thm21_bound(terms(g, wd, loo), d).value);
        CHECK(cor22_bound(terms(g, wd, loo, oc + 0.1), d).value >=
              cor22_bound(terms(g, wd, loo, oc), d).value);
    }
}

TEST_CASE("value equals the declared combination of ingredients") {
    CouplingTerms t;
    t.gamma = {0.03, 0.001};
    t.wd = {0.2, 0.01};
    t.loo = {0.1, 0.02};
    t.oc = {0.05, 0.002};
    BoundReport r = cor22_bound(t, 2);
    double recombined = 259.0 * std::sqrt(2.0) * t.gamma.value + 2.0 * t.wd.value +
                        2.0 * t.loo.value + t.oc.value;
    CHECK(r.value == recombined);
    double se = 259.0 * std::sqrt(2.0) * t.gamma.stderr_ + 2.0 * t.wd.stderr_ +
                2.0 * t.loo.stderr_ + t.oc.stderr_;
    CHECK(r.stderr_total == doctest::Approx(se).epsilon(1e-14));
    auto j = r.to_json();
    CHECK(j["value"].get<double>() == r.value);
    CHECK(j["ingredients"]["gamma"]["stderr"].get<double>() == 0.001);
}

TEST_CASE("estimate_coupling reduces deterministically across thread counts") {
    auto gen = [](long rep, RandomSource src) {
        Rng rng(src);
        CouplingSample s;
        s.wd = rng.uniform();
        s.loo = rng.uniform();
        s.oc = rep % 7 == 0 ? 1.0 : 0.0;
        s.gamma3 = rng.uniform();
        s.valid = rep % 13 != 5;  // a few dropped replications
        return s;
    };
    CouplingOptions opts;
    opts.replications = 500;
    par::set_threads(1);
    CouplingEstimate serial = estimate_coupling(opts, RandomSource{9, 0}, gen);
    par::set_threads(4);
    CouplingEstimate parallel = estimate_coupling(opts, RandomSource{9, 0}, gen);
    par::set_threads(par::max_threads());
    CHECK(serial.terms.wd.value == parallel.terms.wd.value);
    CHECK(serial.terms.loo.stderr_ == parallel.terms.loo.stderr_);
    CHECK(serial.terms.oc.value == parallel.terms.oc.value);
    CHECK(serial.replications_failed == parallel.replications_failed);
    CHECK(serial.replications_failed > 0);
}

TEST_CASE("estimate_coupling means and stderr match a hand computation") {
    // two replications with known values
    auto gen = [](long rep, RandomSource) {
        CouplingSample s;
        s.wd = rep == 0 ? 1.0 : 3.0;
        s.loo = 2.0;
        s.gamma3 = rep == 0 ? 0.5 : 1.5;
        return s;
    };
    CouplingOptions opts;
    opts.replications = 2;
    CouplingEstimate ce = estimate_coupling(opts, RandomSource{9, 1}, gen);
    CHECK(ce.terms.wd.value == doctest::Approx(2.0));
    CHECK(ce.terms.wd.stderr_ == doctest::Approx(1.0));  // sd 1.414 / sqrt(2)
    CHECK(ce.terms.loo.stderr_ == doctest::Approx(0.0));
    CHECK(ce.terms.gamma.value == doctest::Approx(1.0));
}

TEST_CASE("loo_subsample draws distinct sorted indices") {
    Rng rng(RandomSource{4, 1});
    for (int rep = 0; rep < 50; ++rep) {
        long n = 10 + static_cast<long>(rng.below(200));
        auto idx = loo_subsample(n, 64, rng);
        CHECK(static_cast<long>(idx.size()) == std::min<long>(n, 64));
        for (std::size_t i = 1; i < idx.size(); ++i) CHECK(idx[i] > idx[i - 1]);
        for (long v : idx) {
            CHECK(v >= 0);
            CHECK(v < n);
        }
    }
}

TEST_CASE("invalid terms are rejected") {
    CouplingTerms bad = terms(-0.1, 0, 0);
    CHECK_THROWS_AS(thm21_bound(bad, 2), ValidationError);
    CouplingTerms oc_bad = terms(0, 0, 0, 1.5);
    CHECK_THROWS_AS(cor22_bound(oc_bad, 2), ValidationError);
}
