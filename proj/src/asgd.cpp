#include "nclt/asgd.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "nclt/parallel.hpp"

namespace nclt {

void Schedule::validate() const {
    if (!(ell0 > 0.0)) throw ValidationError("schedule: ell0 must be > 0");
    if (!(alpha > 0.5 && alpha <= 1.0))
        throw ValidationError("schedule: alpha must be in (1/2, 1]");
    if (n < 1) throw ValidationError("schedule: n must be >= 1");
}

double Schedule::rate(long k) const {
    if (k <= 0) return ell0;
    return ell0 * std::pow(static_cast<double>(k), -alpha);
}

double SgdProblem::l1_constant() const {
    double from_beta = std::isinf(beta) ? 0.0 : 2.0 * L / beta;
    return std::max(c2, from_beta);
}

Vec SgdProblem::remainder(const Vec& theta) const {
    if (h_remainder) return h_remainder(theta);
    Vec diff = theta - theta_star;
    return grad_f(theta) - matvec(hessian_at_star, diff);
}

void SgdProblem::validate() const {
    if (dim < 1) throw ValidationError("sgd problem: dim must be >= 1");
    if (static_cast<int>(theta_star.size()) != dim)
        throw ValidationError("sgd problem: theta_star dim mismatch");
    if (!(mu > 0.0) || !(L >= mu)) throw ValidationError("sgd problem: need 0 < mu <= L");
    if (!grad_f) throw ValidationError("sgd problem: grad_f missing");
    noise.validate();
    if (noise.dim() != dim) throw ValidationError("sgd problem: noise dim mismatch");
}

SgdProblem quadratic_problem(int dim, double mu_value, Vec theta_star, double noise_scale) {
    SgdProblem p;
    p.kind = ObjectiveKind::quadratic;
    p.name = "quadratic";
    p.dim = dim;
    p.theta_star = theta_star;
    p.hessian_at_star = SymMatrix::identity(dim);
    for (auto& v : p.hessian_at_star.a) v *= mu_value;
    Vec ts = theta_star;
    SymMatrix g = p.hessian_at_star;
    p.grad_f = [ts, g](const Vec& th) { return matvec(g, th - ts); };
    // grad f is exactly linear: the remainder is identically zero
    p.h_remainder = [dim](const Vec&) { return Vec(dim, 0.0); };
    p.mu = mu_value;
    p.L = mu_value;
    p.c2 = 0.0;
    p.beta = std::numeric_limits<double>::infinity();
    p.noise.family = NoiseFamily::gaussian;
    p.noise.scale = noise_scale;
    p.noise.covariance = SymMatrix::identity(dim);
    p.init_offset.assign(dim, 0.0);
    return p;
}

SgdProblem log_cosh_problem(int dim, double c, double mu_value, Vec theta_star,
                            double noise_scale) {
    if (!(c > 0.0)) throw ValidationError("log_cosh_problem: c must be > 0");
    SgdProblem p;
    p.kind = ObjectiveKind::log_cosh;
    p.name = "log_cosh";
    p.dim = dim;
    p.theta_star = theta_star;
    p.hessian_at_star = SymMatrix::identity(dim);
    for (auto& v : p.hessian_at_star.a) v *= (c + mu_value);
    Vec ts = theta_star;
    p.grad_f = [ts, c, mu_value, dim](const Vec& th) {
        Vec g(dim);
        for (int j = 0; j < dim; ++j) {
            double u = th[j] - ts[j];
            g[j] = c * std::tanh(u) + mu_value * u;
        }
        return g;
    };
    // H(theta) = c (tanh(u) - u) componentwise; |tanh u - u| <= u^2 globally
    p.h_remainder = [ts, c, dim](const Vec& th) {
        Vec h(dim);
        for (int j = 0; j < dim; ++j) {
            double u = th[j] - ts[j];
            h[j] = c * (std::tanh(u) - u);
        }
        return h;
    };
    p.mu = mu_value;
    p.L = c + mu_value;
    p.c2 = c;  // |sech^2(u) - 1| = tanh^2(u) <= |u|
    p.beta = std::numeric_limits<double>::infinity();
    p.noise.family = NoiseFamily::gaussian;
    p.noise.scale = noise_scale;
    p.noise.covariance = SymMatrix::identity(dim);
    p.init_offset.assign(dim, 0.0);
    return p;
}

void add_multiplicative_noise(SgdProblem& problem, double c_mult) {
    if (!(c_mult >= 0.0)) throw ValidationError("multiplicative noise: c_mult must be >= 0");
    Vec ts = problem.theta_star;
    int d = problem.dim;
    problem.c1 = c_mult;
    problem.g = [ts, c_mult, d](const Vec& th, const double* xi, double* out) {
        double f = c_mult * std::tanh(xi[0]);
        for (int j = 0; j < d; ++j) out[j] = f * (th[j] - ts[j]);
    };
}

SgdTrajectory run(const SgdProblem& problem, const Schedule& schedule, RandomSource source) {
    problem.validate();
    schedule.validate();
    const int d = problem.dim;
    const long n = schedule.n;

    SgdTrajectory traj;
    traj.schedule = schedule;
    traj.thetas = Rows(n + 1, d);
    traj.xi = Rows(n, d);
    traj.eta = Rows(n, d);

    Rng rng(source);
    Vec theta = problem.theta_star + problem.init_offset;
    if (problem.init_gaussian_scale > 0.0)
        for (int j = 0; j < d; ++j) theta[j] += problem.init_gaussian_scale * rng.gaussian();
    std::copy(theta.begin(), theta.end(), traj.thetas.row(0));

    NoiseSampler sampler(problem.noise);
    Vec bar(d, 0.0);
    for (int j = 0; j < d; ++j) bar[j] += theta[j];

    for (long k = 1; k <= n; ++k) {
        double* xi_row = traj.xi.row(k - 1);
        double* eta_row = traj.eta.row(k - 1);
        sampler.draw(rng, xi_row);
        if (problem.g)
            problem.g(theta, xi_row, eta_row);
        else
            std::fill(eta_row, eta_row + d, 0.0);

        Vec grad = problem.grad_f(theta);
        double lk = schedule.rate(k);
        for (int j = 0; j < d; ++j) {
            theta[j] -= lk * (grad[j] + xi_row[j] + eta_row[j]);
            if (!std::isfinite(theta[j]))
                throw DivergenceError("sgd trajectory diverged", k);
        }
        std::copy(theta.begin(), theta.end(), traj.thetas.row(k));
        if (k < n)
            for (int j = 0; j < d; ++j) bar[j] += theta[j];
    }
    for (int j = 0; j < d; ++j) bar[j] /= static_cast<double>(n);
    traj.theta_bar = bar;
    return traj;
}

void save_trajectory(const SgdTrajectory& traj, const std::string& path, std::uint64_t seed) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("save_trajectory: cannot open " + path);
    std::int64_t n = traj.schedule.n, d = traj.thetas.d;
    f.write(reinterpret_cast<const char*>(&n), 8);
    f.write(reinterpret_cast<const char*>(&d), 8);
    f.write(reinterpret_cast<const char*>(&seed), 8);
    double sched[2] = {traj.schedule.ell0, traj.schedule.alpha};
    f.write(reinterpret_cast<const char*>(sched), 16);
    auto dump = [&](const Rows& r) {
        f.write(reinterpret_cast<const char*>(r.a.data()),
                static_cast<std::streamsize>(r.a.size() * sizeof(double)));
    };
    dump(traj.thetas);
    dump(traj.xi);
    dump(traj.eta);
    if (!f) throw Error("save_trajectory: write failed");
}

SgdTrajectory load_trajectory(const std::string& path, std::uint64_t* seed) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("load_trajectory: cannot open " + path);
    std::int64_t n = 0, d = 0;
    std::uint64_t s = 0;
    f.read(reinterpret_cast<char*>(&n), 8);
    f.read(reinterpret_cast<char*>(&d), 8);
    f.read(reinterpret_cast<char*>(&s), 8);
    double sched[2];
    f.read(reinterpret_cast<char*>(sched), 16);
    if (!f || n < 1 || d < 1) throw Error("load_trajectory: bad header");
    if (seed) *seed = s;
    SgdTrajectory traj;
    traj.schedule.ell0 = sched[0];
    traj.schedule.alpha = sched[1];
    traj.schedule.n = n;
    traj.thetas = Rows(n + 1, static_cast<int>(d));
    traj.xi = Rows(n, static_cast<int>(d));
    traj.eta = Rows(n, static_cast<int>(d));
    auto slurp = [&](Rows& r) {
        f.read(reinterpret_cast<char*>(r.a.data()),
               static_cast<std::streamsize>(r.a.size() * sizeof(double)));
    };
    slurp(traj.thetas);
    slurp(traj.xi);
    slurp(traj.eta);
    if (!f) throw Error("load_trajectory: truncated file");
    // recompute the average from the stored iterates
    Vec bar(static_cast<std::size_t>(d), 0.0);
    for (long k = 0; k < n; ++k)
        for (int j = 0; j < d; ++j) bar[j] += traj.thetas.row(k)[j];
    for (int j = 0; j < d; ++j) bar[j] /= static_cast<double>(n);
    traj.theta_bar = bar;
    return traj;
}

Matrix QWeights::q_matrix(long i) const {
    const int d = static_cast<int>(eigvals.size());
    Matrix m(d, d);
    const double* qi = q.row(i);
    for (int a = 0; a < d; ++a)
        for (int b = 0; b < d; ++b) {
            double s = 0.0;
            for (int e = 0; e < d; ++e) s += eigvecs(a, e) * qi[e] * eigvecs(b, e);
            m(a, b) = s;
        }
    return m;
}

namespace {
std::vector<double> schedule_rates(const Schedule& schedule) {
    schedule.validate();
    std::vector<double> rates(static_cast<std::size_t>(schedule.n));
    for (long k = 0; k < schedule.n; ++k)
        rates[static_cast<std::size_t>(k)] = schedule.rate(k);
    return rates;
}
}  // namespace

QWeights compute_q_rates(const SymMatrix& g, const std::vector<double>& rates) {
    const int d = g.dim;
    const long n = static_cast<long>(rates.size());
    if (n < 1) throw ValidationError("compute_q: empty rate sequence");
    EigenDecomposition e = sym_eig(g);

    QWeights qw;
    qw.eigvecs = e.vectors;
    qw.eigvals = e.values;
    qw.q = Rows(n, d);
    qw.p.assign(n, 0.0);
    // S_i = 1 + (1 - ell_{i+1} lambda) S_{i+1}, S_{n-1} = 1 (empty product)
    for (int ei = 0; ei < d; ++ei) {
        double lambda = e.values[ei];
        double s = 1.0;
        qw.q.row(n - 1)[ei] = rates[static_cast<std::size_t>(n - 1)] * s;
        for (long i = n - 2; i >= 0; --i) {
            s = 1.0 + (1.0 - rates[static_cast<std::size_t>(i + 1)] * lambda) * s;
            qw.q.row(i)[ei] = rates[static_cast<std::size_t>(i)] * s;
        }
    }
    for (long i = 0; i < n; ++i) {
        double m = 0.0;
        for (int ei = 0; ei < d; ++ei) m = std::max(m, std::abs(qw.q.row(i)[ei]));
        qw.p[i] = m;
    }
    qw.n = n;
    return qw;
}

QWeights compute_q(const SymMatrix& g, const Schedule& schedule) {
    return compute_q_rates(g, schedule_rates(schedule));
}

Rows compute_q_direct_rates(const SymMatrix& g, const std::vector<double>& rates) {
    const int d = g.dim;
    const long n = static_cast<long>(rates.size());
    EigenDecomposition e = sym_eig(g);
    Rows q(n, d);
    for (int ei = 0; ei < d; ++ei) {
        double lambda = e.values[ei];
        for (long i = 0; i < n; ++i) {
            double sum = 0.0;
            for (long j = i; j < n; ++j) {
                double prod = 1.0;
                for (long k = i + 1; k <= j; ++k)
                    prod *= (1.0 - rates[static_cast<std::size_t>(k)] * lambda);
                sum += prod;
            }
            q.row(i)[ei] = rates[static_cast<std::size_t>(i)] * sum;
        }
    }
    return q;
}

Rows compute_q_direct(const SymMatrix& g, const Schedule& schedule) {
    return compute_q_direct_rates(g, schedule_rates(schedule));
}

SymMatrix compute_sigma_n(const QWeights& q, const SymMatrix& sigma_xi) {
    const int d = static_cast<int>(q.eigvals.size());
    if (sigma_xi.dim != d) throw ValidationError("compute_sigma_n: dim mismatch");
    // in the eigenbasis: Sigma_n = U (K .* M) U^T where M = U^T Sigma U
    Matrix ut = transpose(q.eigvecs);
    Matrix m = matmul(matmul(ut, to_matrix(sigma_xi)), q.eigvecs);
    Matrix k(d, d);
    for (long i = 1; i < q.n; ++i) {
        const double* qi = q.q.row(i);
        for (int a = 0; a < d; ++a)
            for (int b = 0; b < d; ++b) k(a, b) += qi[a] * qi[b];
    }
    const double inv_n = 1.0 / static_cast<double>(q.n);
    SymMatrix out(d);
    for (int a = 0; a < d; ++a)
        for (int b = a; b < d; ++b) {
            double s = 0.0;
            for (int e1 = 0; e1 < d; ++e1)
                for (int e2 = 0; e2 < d; ++e2)
                    s += q.eigvecs(a, e1) * k(e1, e2) * inv_n * m(e1, e2) *
                         q.eigvecs(b, e2);
            out(a, b) = s;
            out(b, a) = s;
        }
    return out;
}

SymMatrix compute_sigma_n(const QWeights& q, const std::vector<SymMatrix>& sigma_list) {
    const int d = static_cast<int>(q.eigvals.size());
    if (static_cast<long>(sigma_list.size()) < q.n - 1)
        throw ValidationError("compute_sigma_n: need Sigma_i for i = 1..n-1");
    SymMatrix out(d);
    for (long i = 1; i < q.n; ++i) {
        Matrix qi = q.q_matrix(i);
        Matrix t = matmul(matmul(qi, to_matrix(sigma_list[static_cast<std::size_t>(i - 1)])),
                          transpose(qi));
        for (int a = 0; a < d; ++a)
            for (int b = 0; b < d; ++b) out(a, b) += t(a, b) / static_cast<double>(q.n);
    }
    return out;
}

SgdAnalysis analyze_schedule(const SgdProblem& problem, const Schedule& schedule) {
    SgdAnalysis an;
    an.q = compute_q(problem.hessian_at_star, schedule);
    an.sigma_n = compute_sigma_n(an.q, problem.noise.effective_covariance());
    an.sigma_n_lambda_min = lambda_min(an.sigma_n);
    an.s_inv_sqrt = inv_sqrt_psd(an.sigma_n);
    double guard = 4.0 * (std::pow(2.0 * problem.L * schedule.ell0, schedule.alpha) + 1.0);
    an.guard_ok = static_cast<double>(schedule.n) >= guard;
    return an;
}

namespace {

// y = (1/sqrt n) S Q_i x, computed through the eigenbasis of G.
void apply_sq(const SgdAnalysis& an, long i, const double* x, double inv_sqrt_n, Vec& out) {
    const int d = static_cast<int>(an.q.eigvals.size());
    const double* qi = an.q.q.row(i);
    thread_local Vec tmp1, tmp2;
    tmp1.assign(d, 0.0);
    tmp2.assign(d, 0.0);
    for (int e = 0; e < d; ++e) {
        double s = 0.0;
        for (int a = 0; a < d; ++a) s += an.q.eigvecs(a, e) * x[a];
        tmp1[e] = s * qi[e];
    }
    for (int a = 0; a < d; ++a) {
        double s = 0.0;
        for (int e = 0; e < d; ++e) s += an.q.eigvecs(a, e) * tmp1[e];
        tmp2[a] = s;
    }
    for (int a = 0; a < d; ++a) {
        double s = 0.0;
        for (int b = 0; b < d; ++b) s += an.s_inv_sqrt(a, b) * tmp2[b];
        out[a] = s * inv_sqrt_n;
    }
}

}  // namespace

SgdDecomposition standardize_and_decompose(const SgdTrajectory& traj,
                                           const SgdProblem& problem,
                                           const SgdAnalysis& analysis) {
    const int d = problem.dim;
    const long n = traj.schedule.n;
    const double inv_sqrt_n = 1.0 / std::sqrt(static_cast<double>(n));

    SgdDecomposition dec;
    dec.c1_realized = 1.0 / std::sqrt(analysis.sigma_n_lambda_min);

    // T
    Vec diff_bar = traj.theta_bar - problem.theta_star;
    dec.t_stat = (1.0 / inv_sqrt_n) * matvec(analysis.s_inv_sqrt, diff_bar);

    // W and zeta. Unrolling the recursion puts a minus on every noise
    // sum (the same convention the smooth-path display makes explicit),
    // so the identity T = W + D1 + D2 + D3 holds exactly:
    //   zeta_i = -(1/sqrt n) S Q_i xi_i.
    dec.zeta = Rows(n - 1, d);
    dec.w_stat.assign(d, 0.0);
    Vec tmp(d);
    double gamma3 = 0.0;
    for (long i = 1; i < n; ++i) {
        apply_sq(analysis, i, traj.xi.row(i - 1), inv_sqrt_n, tmp);
        double* zrow = dec.zeta.row(i - 1);
        double s2 = 0.0;
        for (int j = 0; j < d; ++j) {
            zrow[j] = -tmp[j];
            dec.w_stat[j] -= tmp[j];
            s2 += tmp[j] * tmp[j];
        }
        gamma3 += s2 * std::sqrt(s2);
    }
    dec.gamma3 = gamma3;

    // D1 = (1/(sqrt n ell0)) S Q_0 (theta_0 - theta*)
    Vec diff0 = traj.theta(0) - problem.theta_star;
    dec.d1.assign(d, 0.0);
    apply_sq(analysis, 0, diff0.data(), inv_sqrt_n / traj.schedule.ell0, dec.d1);

    // D2 = -(1/sqrt n) sum S Q_i eta_i (same sign convention as zeta)
    dec.d2.assign(d, 0.0);
    for (long i = 1; i < n; ++i) {
        const double* erow = traj.eta.row(i - 1);
        bool zero = true;
        for (int j = 0; j < d; ++j) zero = zero && erow[j] == 0.0;
        if (zero) continue;
        apply_sq(analysis, i, erow, inv_sqrt_n, tmp);
        for (int j = 0; j < d; ++j) dec.d2[j] -= tmp[j];
    }

    // D3 = -(1/sqrt n) sum S Q_i H(theta_{i-1}); Delta3 from the realized
    // p_i = ||Q_i|| and C1 = lambda_min(Sigma_n)^{-1/2}
    dec.d3.assign(d, 0.0);
    const double l1 = problem.l1_constant();
    double delta3_sum = 0.0;
    for (long i = 1; i < n; ++i) {
        Vec theta_prev = traj.theta(i - 1);
        Vec h = problem.remainder(theta_prev);
        bool zero = true;
        for (int j = 0; j < d; ++j) zero = zero && h[j] == 0.0;
        if (!zero) {
            apply_sq(analysis, i, h.data(), inv_sqrt_n, tmp);
            for (int j = 0; j < d; ++j) dec.d3[j] -= tmp[j];
        }
        double dn2 = 0.0;
        for (int j = 0; j < d; ++j) {
            double u = theta_prev[j] - problem.theta_star[j];
            dn2 += u * u;
        }
        delta3_sum += analysis.q.p[i] * dn2;
    }
    dec.delta1 = norm(dec.d1);
    dec.delta2 = norm(dec.d2);
    dec.delta3 = dec.c1_realized * l1 * inv_sqrt_n * delta3_sum;

    Vec resid = dec.t_stat;
    for (int j = 0; j < d; ++j)
        resid[j] -= dec.w_stat[j] + dec.d1[j] + dec.d2[j] + dec.d3[j];
    dec.identity_residual = norm(resid);
    return dec;
}

Rows coupled_trajectory(const SgdTrajectory& traj, const SgdProblem& problem, long i,
                        RandomSource replacement_source) {
    const int d = problem.dim;
    const long n = traj.schedule.n;
    if (i < 1 || i > n - 1) throw ValidationError("coupled_trajectory: i must be in [1, n-1]");

    Rows coupled(n + 1, d);
    // shared prefix, copied bitwise
    for (long k = 0; k < i; ++k)
        std::copy(traj.thetas.row(k), traj.thetas.row(k) + d, coupled.row(k));

    NoiseSampler sampler(problem.noise);
    Rng rng(replacement_source);
    Vec xi_rep(d);
    sampler.draw(rng, xi_rep.data());

    Vec theta(coupled.row(i - 1), coupled.row(i - 1) + d);
    Vec eta(d, 0.0);
    for (long k = i; k <= n; ++k) {
        const double* xi_row = (k == i) ? xi_rep.data() : traj.xi.row(k - 1);
        if (problem.g)
            problem.g(theta, xi_row, eta.data());
        else
            std::fill(eta.begin(), eta.end(), 0.0);
        Vec grad = problem.grad_f(theta);
        double lk = traj.schedule.rate(k);
        for (int j = 0; j < d; ++j) {
            theta[j] -= lk * (grad[j] + xi_row[j] + eta[j]);
            if (!std::isfinite(theta[j]))
                throw DivergenceError("coupled trajectory diverged", k);
        }
        std::copy(theta.begin(), theta.end(), coupled.row(k));
    }
    return coupled;
}

SgdLoo deltas_and_loo(const SgdTrajectory& traj, const SgdProblem& problem,
                      const SgdAnalysis& analysis, const SgdDecomposition& dec,
                      const std::vector<long>& indices, RandomSource replacement_source) {
    const int d = problem.dim;
    const long n = traj.schedule.n;
    const double inv_sqrt_n = 1.0 / std::sqrt(static_cast<double>(n));
    const double l1 = problem.l1_constant();

    SgdLoo out;
    out.delta1 = dec.delta1;
    out.delta2 = dec.delta2;
    out.delta3 = dec.delta3;
    out.indices = indices;
    out.delta2_i.assign(indices.size(), 0.0);
    out.delta3_i.assign(indices.size(), 0.0);

    Vec tmp(d), eta(d);
    for (std::size_t k = 0; k < indices.size(); ++k) {
        long i = indices[k];
        try {
            Rows coupled = coupled_trajectory(traj, problem, i, replacement_source.child(i));
            // rebuild eta^{(i)} along the coupled path and accumulate D2^(i)
            NoiseSampler sampler(problem.noise);
            Rng rng(replacement_source.child(i));
            Vec xi_rep(d);
            sampler.draw(rng, xi_rep.data());

            Vec d2i(d, 0.0);
            double delta3_sum = 0.0;
            for (long j = 1; j < n; ++j) {
                Vec theta_prev(coupled.row(j - 1), coupled.row(j - 1) + d);
                const double* xi_row = (j == i) ? xi_rep.data() : traj.xi.row(j - 1);
                if (problem.g) {
                    problem.g(theta_prev, xi_row, eta.data());
                    bool zero = true;
                    for (int t = 0; t < d; ++t) zero = zero && eta[t] == 0.0;
                    if (!zero) {
                        apply_sq(analysis, j, eta.data(), inv_sqrt_n, tmp);
                        for (int t = 0; t < d; ++t) d2i[t] += tmp[t];
                    }
                }
                double dn2 = 0.0;
                for (int t = 0; t < d; ++t) {
                    double u = theta_prev[t] - problem.theta_star[t];
                    dn2 += u * u;
                }
                delta3_sum += analysis.q.p[j] * dn2;
            }
            out.delta2_i[k] = norm(d2i);
            out.delta3_i[k] = dec.c1_realized * l1 * inv_sqrt_n * delta3_sum;
        } catch (const DivergenceError&) {
            ++out.failures;
            out.delta2_i[k] = std::numeric_limits<double>::quiet_NaN();
            out.delta3_i[k] = std::numeric_limits<double>::quiet_NaN();
        }
    }
    return out;
}

std::vector<MomentRow> moment_probe(const SgdProblem& problem, double ell0, double alpha,
                                    const std::vector<long>& n_grid, int reps,
                                    RandomSource source, std::vector<double>* raw_m2,
                                    std::vector<double>* raw_m4) {
    if (n_grid.empty()) throw ValidationError("moment_probe: empty n grid");
    std::vector<long> grid = n_grid;
    std::sort(grid.begin(), grid.end());
    const long n_max = grid.back();
    Schedule sched{ell0, alpha, n_max};
    sched.validate();
    const int d = problem.dim;
    const std::size_t g = grid.size();

    std::vector<double> m2(g * reps, 0.0), m4(g * reps, 0.0);
    par::parallel_for(reps, [&](std::int64_t r) {
        RandomSource src{source.seed, source.stream + static_cast<std::uint64_t>(r)};
        SgdTrajectory traj = run(problem, sched, src);
        for (std::size_t gi = 0; gi < g; ++gi) {
            const double* row = traj.thetas.row(grid[gi]);
            double dn2 = 0.0;
            for (int j = 0; j < d; ++j) {
                double u = row[j] - problem.theta_star[j];
                dn2 += u * u;
            }
            m2[gi * reps + static_cast<std::size_t>(r)] = dn2;
            m4[gi * reps + static_cast<std::size_t>(r)] = dn2 * dn2;
        }
    });

    std::vector<MomentRow> table;
    for (std::size_t gi = 0; gi < g; ++gi) {
        MomentRow row;
        row.n = grid[gi];
        double s2 = 0, s4 = 0;
        for (int r = 0; r < reps; ++r) {
            s2 += m2[gi * reps + r];
            s4 += m4[gi * reps + r];
        }
        row.m2 = s2 / reps;
        row.m4 = s4 / reps;
        double v2 = 0, v4 = 0;
        for (int r = 0; r < reps; ++r) {
            v2 += (m2[gi * reps + r] - row.m2) * (m2[gi * reps + r] - row.m2);
            v4 += (m4[gi * reps + r] - row.m4) * (m4[gi * reps + r] - row.m4);
        }
        if (reps > 1) {
            row.se2 = std::sqrt(v2 / (static_cast<double>(reps) * (reps - 1)));
            row.se4 = std::sqrt(v4 / (static_cast<double>(reps) * (reps - 1)));
        }
        table.push_back(row);
        if (raw_m2)
            raw_m2->insert(raw_m2->end(), m2.begin() + gi * reps,
                           m2.begin() + (gi + 1) * reps);
        if (raw_m4)
            raw_m4->insert(raw_m4->end(), m4.begin() + gi * reps,
                           m4.begin() + (gi + 1) * reps);
    }
    return table;
}

double phi(double beta, double t) {
    if (!(t > 0.0)) throw ValidationError("phi: t must be > 0");
    if (beta == 0.0) return std::log(t);
    return std::expm1(beta * std::log(t)) / beta;
}

SgdTrajectory streaming_m_estimation(const EstimationModel& model, const Schedule& schedule,
                                     RandomSource source) {
    schedule.validate();
    if (!model.grad_m)
        throw ValidationError("streaming_m_estimation: model needs closed-form grad M");
    const int d = model.dim;
    const long n = schedule.n;

    SgdTrajectory traj;
    traj.schedule = schedule;
    traj.thetas = Rows(n + 1, d);
    traj.xi = Rows(n, d);
    traj.eta = Rows(n, d);

    Rng rng(source);
    Vec theta = model.true_theta;  // stream starts at theta* unless moved by caller
    std::copy(theta.begin(), theta.end(), traj.thetas.row(0));

    const Vec grad_m_star = model.grad_m(model.true_theta);
    Vec x(d), md_prev(d), md_star(d);
    for (long k = 1; k <= n; ++k) {
        sample_data_row(model.data, model.data_center, rng, x.data());
        model.mdot(model.true_theta, x.data(), md_star.data());
        double* xi_row = traj.xi.row(k - 1);
        for (int j = 0; j < d; ++j) xi_row[j] = md_star[j] - grad_m_star[j];

        double* eta_row = traj.eta.row(k - 1);
        if (model.streaming_eta) {
            model.streaming_eta(theta, x.data(), eta_row);
        } else {
            model.mdot(theta, x.data(), md_prev.data());
            Vec gm = model.grad_m(theta);
            for (int j = 0; j < d; ++j)
                eta_row[j] = (md_prev[j] - md_star[j]) - (gm[j] - grad_m_star[j]);
        }

        Vec gm_prev = model.grad_m(theta);
        double lk = schedule.rate(k);
        for (int j = 0; j < d; ++j) {
            theta[j] -= lk * (gm_prev[j] + xi_row[j] + eta_row[j]);
            if (!std::isfinite(theta[j]))
                throw DivergenceError("streaming trajectory diverged", k);
        }
        std::copy(theta.begin(), theta.end(), traj.thetas.row(k));
    }
    Vec bar(d, 0.0);
    for (long k = 0; k < n; ++k)
        for (int j = 0; j < d; ++j) bar[j] += traj.thetas.row(k)[j];
    for (int j = 0; j < d; ++j) bar[j] /= static_cast<double>(n);
    traj.theta_bar = bar;
    return traj;
}

SgdProblem sgd_problem_from_model(const EstimationModel& model) {
    if (!model.grad_m || !model.v_analytic || !model.sigma_analytic)
        throw ValidationError("sgd_problem_from_model: model needs analytic grad M, V, Sigma");
    SgdProblem p;
    p.kind = model.name == "quadratic" ? ObjectiveKind::quadratic : ObjectiveKind::custom;
    p.name = "streaming_" + model.name;
    p.dim = model.dim;
    p.theta_star = model.true_theta;
    p.hessian_at_star = *model.v_analytic;
    p.grad_f = model.grad_m;
    if (model.name == "quadratic") {
        int d = model.dim;
        p.h_remainder = [d](const Vec&) { return Vec(d, 0.0); };
    }
    EigenDecomposition e = sym_eig(p.hessian_at_star);
    p.mu = e.values.back();
    p.L = e.values.front();
    p.c2 = model.name == "quadratic" ? 0.0 : model.constants.c2;
    p.beta = std::numeric_limits<double>::infinity();
    p.c1 = 2.0 * model.mdot_lipschitz;
    p.noise.family = NoiseFamily::gaussian;  // placeholder spec; Sigma_i is what matters
    p.noise.scale = 1.0;
    p.noise.covariance = *model.sigma_analytic;
    p.init_offset.assign(model.dim, 0.0);
    return p;
}

}  // namespace nclt
