#include <cmath>
#include <cstdio>

#include "doctest.h"
#include "nclt/asgd.hpp"
#include "nclt/distance_lab.hpp"
#include "nclt/experiments.hpp"

using namespace nclt;

namespace {

SgdProblem zero_noise_quadratic(int d, double mu) {
    SgdProblem p = quadratic_problem(d, mu, Vec(d, 0.0), 1e-300);
    return p;  // noise scale effectively zero but still a valid spec
}

}  // namespace

TEST_CASE("schedule validation") {
    CHECK_THROWS_AS((Schedule{1.0, 0.4, 100}.validate()), ValidationError);
    CHECK_THROWS_AS((Schedule{1.0, 1.1, 100}.validate()), ValidationError);
    CHECK_THROWS_AS((Schedule{-1.0, 0.75, 100}.validate()), ValidationError);
    Schedule ok{0.5, 1.0, 10};
    ok.validate();
    CHECK(ok.rate(2) == doctest::Approx(0.25));
}

TEST_CASE("single contraction step and eigenbasis decay oracle") {
    SgdProblem p = zero_noise_quadratic(1, 1.0);
    p.init_offset = {1.0};
    Schedule sched{0.5, 1.0, 1};  // ell_1 = 0.5
    SgdTrajectory traj = run(p, sched, RandomSource{7, 0});
    // theta_1 - theta* = (1 - 0.5)(theta_0 - theta*) up to the tiny noise
    CHECK(traj.thetas.row(1)[0] == doctest::Approx(0.5).epsilon(1e-9));

    // multi-step: theta_n - theta* = prod_k (1 - ell_k lambda) componentwise
    SgdProblem p2 = zero_noise_quadratic(1, 0.7);
    p2.init_offset = {2.0};
    Schedule s2{0.9, 0.75, 50};
    SgdTrajectory t2 = run(p2, s2, RandomSource{7, 1});
    double expect = 2.0;
    for (long k = 1; k <= 50; ++k) expect *= (1.0 - s2.rate(k) * 0.7);
    CHECK(t2.thetas.row(50)[0] == doctest::Approx(expect).epsilon(1e-9));
}

TEST_CASE("eta records are zero without multiplicative noise") {
    SgdProblem p = quadratic_problem(2, 1.0, {0.0, 0.0}, 1.0);
    SgdTrajectory traj = run(p, Schedule{1.0, 0.75, 100}, RandomSource{7, 2});
    for (long k = 0; k < 100; ++k)
        for (int j = 0; j < 2; ++j) CHECK(traj.eta.row(k)[j] == 0.0);
}

TEST_CASE("stored-noise recursion is exactly reproducible") {
    SgdProblem p = log_cosh_problem(2, 1.0, 0.5, {0.3, -0.2}, 1.0);
    add_multiplicative_noise(p, 0.4);
    p.init_offset = {1.0, -1.0};
    Schedule sched{0.8, 0.75, 200};
    SgdTrajectory traj = run(p, sched, RandomSource{7, 3});
    Vec theta = traj.theta(0);
    for (long k = 1; k <= sched.n; ++k) {
        Vec grad = p.grad_f(theta);
        double lk = sched.rate(k);
        for (int j = 0; j < 2; ++j)
            theta[j] -= lk * (grad[j] + traj.xi.row(k - 1)[j] + traj.eta.row(k - 1)[j]);
        for (int j = 0; j < 2; ++j) CHECK(theta[j] == traj.thetas.row(k)[j]);
    }
    // theta_bar recomputable within 1e-12
    Vec bar(2, 0.0);
    for (long k = 0; k < sched.n; ++k)
        for (int j = 0; j < 2; ++j) bar[j] += traj.thetas.row(k)[j];
    for (int j = 0; j < 2; ++j) {
        bar[j] /= sched.n;
        CHECK(std::abs(bar[j] - traj.theta_bar[j]) <= 1e-12);
    }
}

TEST_CASE("q weights: boundary convention, geometric series, oracle") {
    Schedule sched{0.7, 0.75, 60};
    SymMatrix g = SymMatrix::identity(2);
    g(0, 0) = 1.3;
    g(1, 1) = 0.4;
    QWeights qw = compute_q(g, sched);
    // Q_{n-1} = ell_{n-1} I (empty product convention)
    for (int e = 0; e < 2; ++e)
        CHECK(qw.q.row(59)[e] == doctest::Approx(sched.rate(59)).epsilon(1e-14));

    // constant rate, scalar G = mu: Q_i = (1 - (1 - l mu)^{n-i}) / mu
    const double l = 0.2, mu = 0.8;
    const long n = 40;
    std::vector<double> rates(n, l);
    SymMatrix g1(1);
    g1(0, 0) = mu;
    QWeights qc = compute_q_rates(g1, rates);
    for (long i = 0; i < n; ++i) {
        double expect = (1.0 - std::pow(1.0 - l * mu, double(n - i))) / mu;
        CHECK(qc.q.row(i)[0] == doctest::Approx(expect).epsilon(1e-12));
    }

    // recursion vs direct double-loop summation
    Rng rng(RandomSource{7, 4});
    for (int rep = 0; rep < 5; ++rep) {
        SymMatrix gr(3);
        for (int i = 0; i < 3; ++i)
            for (int j = i; j < 3; ++j) {
                gr(i, j) = 0.3 * rng.gaussian();
                gr(j, i) = gr(i, j);
            }
        for (int i = 0; i < 3; ++i) gr(i, i) += 1.0;
        Schedule s{0.5 + 0.5 * rng.uniform(), 0.6 + 0.35 * rng.uniform(), 200};
        QWeights fast = compute_q(gr, s);
        Rows direct = compute_q_direct(gr, s);
        for (long i = 0; i < 200; ++i)
            for (int e = 0; e < 3; ++e)
                CHECK(std::abs(fast.q.row(i)[e] - direct.row(i)[e]) <= 1e-10);
    }
}

TEST_CASE("sigma_n closed forms") {
    // d = 1, Sigma_i = 1, Q_i = q constant: Sigma_n = (n-1) q^2 / n
    QWeights qw;
    qw.eigvecs = Matrix::identity(1);
    qw.eigvals = {1.0};
    qw.n = 25;
    qw.q = Rows(25, 1);
    for (long i = 0; i < 25; ++i) qw.q.row(i)[0] = 0.6;
    qw.p.assign(25, 0.6);
    SymMatrix sn = compute_sigma_n(qw, SymMatrix::identity(1));
    CHECK(sn(0, 0) == doctest::Approx(24.0 * 0.36 / 25.0).epsilon(1e-14));

    SymMatrix zero(1);
    CHECK(compute_sigma_n(qw, zero)(0, 0) == 0.0);

    // general Sigma list path agrees with the constant path
    std::vector<SymMatrix> list(24, SymMatrix::identity(1));
    CHECK(compute_sigma_n(qw, list)(0, 0) == doctest::Approx(sn(0, 0)).epsilon(1e-13));
}

TEST_CASE("decomposition identity and exact zero parts") {
    SgdProblem p = quadratic_problem(2, 1.0, {0.0, 0.0}, 1.0);
    p.init_offset = {0.7, -0.3};
    Schedule sched{1.0, 0.75, 512};
    SgdAnalysis an = analyze_schedule(p, sched);
    CHECK(an.guard_ok);
    SgdTrajectory traj = run(p, sched, RandomSource{7, 5});
    SgdDecomposition dec = standardize_and_decompose(traj, p, an);
    CHECK(dec.identity_residual <= 1e-10);
    CHECK(norm(dec.d2) == 0.0);  // g == 0
    CHECK(norm(dec.d3) == 0.0);  // quadratic: H identically zero
    CHECK(dec.delta3 == 0.0);    // c2 = 0, beta = inf => L1 = 0
    CHECK(dec.delta1 == doctest::Approx(norm(dec.d1)));

    // log-cosh with multiplicative noise: all parts live, identity still exact
    SgdProblem lc = log_cosh_problem(2, 1.0, 0.5, {0.0, 0.0}, 1.0);
    add_multiplicative_noise(lc, 0.3);
    lc.init_offset = {0.5, 0.5};
    SgdAnalysis an2 = analyze_schedule(lc, sched);
    SgdTrajectory t2 = run(lc, sched, RandomSource{7, 6});
    SgdDecomposition d2 = standardize_and_decompose(t2, lc, an2);
    CHECK(d2.identity_residual <= 1e-10);
    CHECK(norm(d2.d2) > 0.0);
    CHECK(norm(d2.d3) > 0.0);
    CHECK(d2.delta3 + 1e-15 >= norm(d2.d3));  // Delta3 dominates D3
}

TEST_CASE("log-cosh remainder obeys the quadratic envelope") {
    SgdProblem lc = log_cosh_problem(3, 1.2, 0.4, {0.0, 0.0, 0.0}, 1.0);
    Rng rng(RandomSource{7, 7});
    for (int rep = 0; rep < 500; ++rep) {
        Vec th(3);
        for (auto& v : th) v = 2.0 * rng.gaussian();
        Vec h = lc.remainder(th);
        double dn = norm(th - lc.theta_star);
        CHECK(norm(h) <= lc.l1_constant() * dn * dn + 1e-12);
    }
}

TEST_CASE("W_n has identity covariance (MC)") {
    SgdProblem p = quadratic_problem(2, 1.0, {0.0, 0.0}, 1.0);
    Schedule sched{1.0, 0.75, 256};
    SgdAnalysis an = analyze_schedule(p, sched);
    const int reps = 800;
    SymMatrix acc(2);
    for (int r = 0; r < reps; ++r) {
        SgdTrajectory traj = run(p, sched, RandomSource{7, 100 + (std::uint64_t)r});
        SgdDecomposition dec = standardize_and_decompose(traj, p, an);
        for (int a = 0; a < 2; ++a)
            for (int b = 0; b < 2; ++b) acc(a, b) += dec.w_stat[a] * dec.w_stat[b] / reps;
    }
    double fluct = 5.0 * std::sqrt(2.0 / reps);
    for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b)
            CHECK(std::abs(acc(a, b) - (a == b ? 1.0 : 0.0)) <= fluct);
}

TEST_CASE("coupled trajectories share the prefix bitwise") {
    SgdProblem p = log_cosh_problem(2, 1.0, 0.5, {0.0, 0.0}, 1.0);
    add_multiplicative_noise(p, 0.4);
    p.init_offset = {1.0, 0.0};
    Schedule sched{0.8, 0.75, 128};
    SgdTrajectory traj = run(p, sched, RandomSource{7, 8});
    Rows coupled = coupled_trajectory(traj, p, 40, RandomSource{7, 9});
    for (long k = 0; k < 40; ++k)
        for (int j = 0; j < 2; ++j)
            CHECK(coupled.row(k)[j] == traj.thetas.row(k)[j]);
    // and they genuinely diverge afterwards
    double diff = 0.0;
    for (int j = 0; j < 2; ++j)
        diff += std::abs(coupled.row(40)[j] - traj.thetas.row(40)[j]);
    CHECK(diff > 0.0);
}

TEST_CASE("deltas_and_loo: g == 0 makes the eta deltas vanish") {
    SgdProblem p = quadratic_problem(2, 1.0, {0.0, 0.0}, 1.0);
    Schedule sched{1.0, 0.75, 128};
    SgdAnalysis an = analyze_schedule(p, sched);
    SgdTrajectory traj = run(p, sched, RandomSource{7, 10});
    SgdDecomposition dec = standardize_and_decompose(traj, p, an);
    SgdLoo loo = deltas_and_loo(traj, p, an, dec, {1, 20, 100}, RandomSource{7, 11});
    CHECK(loo.delta2 == 0.0);
    for (double v : loo.delta2_i) CHECK(v == 0.0);
    for (double v : loo.delta3_i) CHECK(v == 0.0);  // L1 = 0 for the quadratic
    CHECK(loo.failures == 0);
}

TEST_CASE("realized p_i stays bounded for alpha < 1 and grows like log n at the edge") {
    SymMatrix g = SymMatrix::identity(1);
    double p075 = 0.0;
    std::vector<double> maxima;
    for (long n : {256L, 512L, 1024L, 2048L}) {
        QWeights qw = compute_q(g, Schedule{1.0, 0.75, n});
        double mx = 0.0;
        for (double v : qw.p) mx = std::max(mx, v);
        maxima.push_back(mx);
        p075 = mx;
    }
    for (double mx : maxima) CHECK(mx <= 1.2 * maxima.front());
    (void)p075;

    // alpha = 1, ell0 mu = 1: max p_i / log n bounded
    std::vector<double> ratio;
    for (long n : {256L, 1024L, 4096L}) {
        QWeights qw = compute_q(g, Schedule{1.0, 1.0, n});
        double mx = 0.0;
        for (double v : qw.p) mx = std::max(mx, v);
        ratio.push_back(mx / std::log(double(n)));
    }
    for (double r : ratio) CHECK(r <= 2.0 * ratio.front() + 1.0);
}

TEST_CASE("moment probe hits the schedule rate") {
    SgdProblem p = quadratic_problem(2, 1.0, {0.0, 0.0}, 1.0);
    p.init_offset = {1.0, 0.0};
    auto table =
        moment_probe(p, 1.0, 0.75, {128, 256, 512, 1024}, 150, RandomSource{7, 12});
    std::vector<std::pair<double, double>> pts;
    for (const auto& row : table) pts.push_back({double(row.n), row.m2});
    double slope = rate_fit(pts).slope;
    CHECK(slope <= -0.55);
    CHECK(slope >= -0.95);
}

TEST_CASE("phi function values and continuity") {
    CHECK(phi(0.0, 4.0) == doctest::Approx(std::log(4.0)));
    CHECK(phi(1.0, 4.0) == doctest::Approx(3.0));
    CHECK(phi(0.5, 4.0) == doctest::Approx(2.0));
    CHECK(phi(1e-13, 7.0) == doctest::Approx(std::log(7.0)).epsilon(1e-10));
    CHECK(phi(-1e-13, 7.0) == doctest::Approx(std::log(7.0)).epsilon(1e-10));
    CHECK_THROWS_AS(phi(0.5, 0.0), ValidationError);
    CHECK_THROWS_AS(phi(0.5, -1.0), ValidationError);
}

TEST_CASE("streaming quadratic: eta identically zero, xi = theta* - X") {
    EstimationModel model = quadratic_location({0.4, -0.1},
                                               [] {
                                                   DataSpec ds;
                                                   ds.family = DataSpec::Family::gaussian;
                                                   ds.scale = {1.0, 1.0};
                                                   return ds;
                                               }());
    Schedule sched{0.8, 0.75, 256};
    SgdTrajectory traj = streaming_m_estimation(model, sched, RandomSource{7, 13});
    for (long k = 0; k < sched.n; ++k)
        for (int j = 0; j < 2; ++j) CHECK(traj.eta.row(k)[j] == 0.0);

    // replay the data stream to check xi_k = theta* - X_k
    Rng rng(RandomSource{7, 13});
    Vec x(2);
    for (long k = 0; k < sched.n; ++k) {
        sample_data_row(model.data, model.data_center, rng, x.data());
        for (int j = 0; j < 2; ++j)
            CHECK(traj.xi.row(k)[j] ==
                  doctest::Approx(model.true_theta[j] - x[j]).epsilon(1e-15));
    }

    SgdProblem wrapped = sgd_problem_from_model(model);
    CHECK(wrapped.c1 == doctest::Approx(2.0));  // c1 = 2 L_F with L_F = 1
}

TEST_CASE("streaming huber: per-step eta bound and near-plain recursion") {
    EstimationModel model = huber_location({0.2}, 1.0, [] {
        DataSpec ds;
        ds.family = DataSpec::Family::gaussian;
        ds.scale = {1.0};
        return ds;
    }());
    Schedule sched{0.8, 0.75, 400};
    SgdTrajectory traj = streaming_m_estimation(model, sched, RandomSource{7, 14});
    const double lf = model.mdot_lipschitz;
    for (long k = 1; k <= sched.n; ++k) {
        double eta_norm = std::abs(traj.eta.row(k - 1)[0]);
        double dist = std::abs(traj.thetas.row(k - 1)[0] - model.true_theta[0]);
        CHECK(eta_norm <= 2.0 * lf * dist + 1e-12);
    }

    // the xi/eta-driven recursion matches theta_k = theta_{k-1} - l_k mdot
    Rng rng(RandomSource{7, 14});
    Vec x(1), md(1);
    double theta = model.true_theta[0];
    for (long k = 1; k <= sched.n; ++k) {
        sample_data_row(model.data, model.data_center, rng, x.data());
        Vec th{theta};
        model.mdot(th, x.data(), md.data());
        theta -= sched.rate(k) * md[0];
        CHECK(std::abs(theta - traj.thetas.row(k)[0]) <= 1e-10);
    }
}

TEST_CASE("streaming trajectory plugs into the decomposition machinery") {
    EstimationModel model = quadratic_location({0.0, 0.0}, [] {
        DataSpec ds;
        ds.family = DataSpec::Family::gaussian;
        ds.scale = {1.0, 1.0};
        return ds;
    }());
    SgdProblem wrapped = sgd_problem_from_model(model);
    Schedule sched{1.0, 0.75, 256};
    SgdAnalysis an = analyze_schedule(wrapped, sched);
    SgdTrajectory traj = streaming_m_estimation(model, sched, RandomSource{7, 15});
    SgdDecomposition dec = standardize_and_decompose(traj, wrapped, an);
    CHECK(dec.identity_residual <= 1e-10);
    CHECK(norm(dec.d2) == 0.0);
    CHECK(norm(dec.d3) == 0.0);
}

TEST_CASE("normal approximation trend: distance shrinks as n grows") {
    SgdProblem p = quadratic_problem(2, 1.0, {0.0, 0.0}, 1.0);
    p.init_offset = {1.0, 0.0};
    TestFamily fam = TestFamily::make(2);
    auto distance_at = [&](long n) {
        Schedule sched{1.0, 0.75, n};
        SgdAnalysis an = analyze_schedule(p, sched);
        const int reps = 1200;
        Rows samples(reps, 2);
        for (int r = 0; r < reps; ++r) {
            SgdTrajectory traj = run(p, sched, RandomSource{7, 2000 + (std::uint64_t)r});
            SgdDecomposition dec = standardize_and_decompose(traj, p, an);
            samples.row(r)[0] = dec.t_stat[0];
            samples.row(r)[1] = dec.t_stat[1];
        }
        return empirical_distance(samples, fam).value;
    };
    double d256 = distance_at(256);
    double d4096 = distance_at(4096);
    CHECK(d4096 < d256);
}

TEST_CASE("trajectory save/load round trip") {
    SgdProblem p = quadratic_problem(2, 1.0, {0.0, 0.0}, 1.0);
    Schedule sched{1.0, 0.75, 64};
    SgdTrajectory traj = run(p, sched, RandomSource{7, 16});
    std::string path = "traj_roundtrip.bin";
    save_trajectory(traj, path, 1234);
    std::uint64_t seed = 0;
    SgdTrajectory back = load_trajectory(path, &seed);
    CHECK(seed == 1234);
    CHECK(back.thetas.a == traj.thetas.a);
    CHECK(back.xi.a == traj.xi.a);
    CHECK(back.eta.a == traj.eta.a);
    CHECK(back.schedule.n == traj.schedule.n);
    std::remove(path.c_str());
}

TEST_CASE("divergence raises with the step index") {
    SgdProblem p = quadratic_problem(1, 1.0, {0.0}, 1.0);
    // absurd rate: (1 - l_k) factor explodes
    Schedule sched{1e8, 0.51, 50};
    try {
        run(p, sched, RandomSource{7, 17});
        // may not diverge to inf with tame noise; force it with huge init
        SgdProblem p2 = p;
        p2.init_offset = {1e300};
        run(p2, sched, RandomSource{7, 18});
        FAIL("expected divergence");
    } catch (const DivergenceError& e) {
        CHECK(e.step >= 1);
    }
}
