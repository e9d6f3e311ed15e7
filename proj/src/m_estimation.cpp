#include "nclt/m_estimation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "nclt/parallel.hpp"

namespace nclt {

namespace {

// 16-point Gauss-Legendre on [0,1].
struct GL16 {
    double t[16];
    double w[16];
    GL16() {
        static const double x[8] = {0.0950125098376374, 0.2816035507792589,
                                    0.4580167776572274, 0.6178762444026438,
                                    0.7554044083550030, 0.8656312023878318,
                                    0.9445750230732326, 0.9894009349916499};
        static const double ww[8] = {0.1894506104550685, 0.1826034150449236,
                                     0.1691565193950025, 0.1495959888165767,
                                     0.1246289712555339, 0.0951585116824928,
                                     0.0622535239386479, 0.0271524594117541};
        for (int k = 0; k < 8; ++k) {
            t[2 * k] = 0.5 * (1.0 - x[k]);
            t[2 * k + 1] = 0.5 * (1.0 + x[k]);
            w[2 * k] = 0.5 * ww[k];
            w[2 * k + 1] = 0.5 * ww[k];
        }
    }
};
const GL16 gl16;

double huber_rho(double u, double k) {
    double v = u / k;
    return k * k * (std::sqrt(1.0 + v * v) - 1.0);
}
double huber_rho1(double u, double k) {
    double v = u / k;
    return u / std::sqrt(1.0 + v * v);
}
double huber_rho2(double u, double k) {
    double v = u / k;
    double s = 1.0 + v * v;
    return 1.0 / (s * std::sqrt(s));
}

}  // namespace

// ---- data -------------------------------------------------------------------

void DataSpec::validate() const {
    if (scale.empty()) throw ValidationError("DataSpec: scale must be non-empty");
    for (double s : scale)
        if (!(s > 0.0)) throw ValidationError("DataSpec: scale entries must be > 0");
    if (family == Family::two_point && !(p > 0.0 && p < 1.0))
        throw ValidationError("DataSpec: two_point p must be in (0,1)");
}

double DataSpec::expect(const std::function<double(double)>& f) const {
    switch (family) {
        case Family::two_point: {
            double a = -std::sqrt(p / (1.0 - p));
            double b = std::sqrt((1.0 - p) / p);
            return (1.0 - p) * f(a) + p * f(b);
        }
        case Family::gaussian: {
            // Simpson over [-10, 10]; the gaussian weight makes the
            // truncation error ~1e-23 and the grid error far below 1e-12
            // for the smooth integrands used here.
            const int m = 4000;
            const double lo = -10.0, hi = 10.0, h = (hi - lo) / m;
            double s = 0.0;
            for (int i = 0; i <= m; ++i) {
                double x = lo + i * h;
                double w = (i == 0 || i == m) ? 1.0 : (i % 2 ? 4.0 : 2.0);
                s += w * f(x) * std::exp(-0.5 * x * x);
            }
            return s * h / 3.0 * 0.39894228040143267794;
        }
        case Family::laplace: {
            // density (1/sqrt(2)) exp(-sqrt(2)|x|), unit variance; integrate
            // each half-line separately so the kink at 0 never meets Simpson
            const int m = 8000;
            const double hi = 30.0, h = hi / m;
            double s = 0.0;
            for (int i = 0; i <= m; ++i) {
                double x = i * h;
                double w = (i == 0 || i == m) ? 1.0 : (i % 2 ? 4.0 : 2.0);
                s += w * (f(x) + f(-x)) * std::exp(-1.4142135623730951 * x);
            }
            return s * h / 3.0 * 0.70710678118654752440;
        }
    }
    throw ValidationError("DataSpec: unknown family");
}

void sample_data_row(const DataSpec& spec, const Vec& theta_star, Rng& rng, double* out) {
    const int d = static_cast<int>(theta_star.size());
    for (int j = 0; j < d; ++j) {
        double e;
        switch (spec.family) {
            case DataSpec::Family::gaussian:
                e = rng.gaussian();
                break;
            case DataSpec::Family::laplace:
                e = rng.rademacher() * rng.exponential() * 0.70710678118654752440;
                break;
            case DataSpec::Family::two_point: {
                double a = -std::sqrt(spec.p / (1.0 - spec.p));
                double b = std::sqrt((1.0 - spec.p) / spec.p);
                e = (rng.uniform() <= spec.p) ? b : a;
                break;
            }
            default:
                throw ValidationError("DataSpec: unknown family");
        }
        out[j] = theta_star[j] + spec.scale[j] * e;
    }
}

Rows sample_data(const DataSpec& spec, const Vec& theta_star, long n, Rng& rng) {
    spec.validate();
    Rows rows(n, static_cast<int>(theta_star.size()));
    for (long i = 0; i < n; ++i) sample_data_row(spec, theta_star, rng, rows.row(i));
    return rows;
}

double EstimationModel::delta_n(long n) const {
    const double p = constants.p;
    double expo = -(p - 2.0) / (2.0 * p - 2.0);
    return (constants.domain_diameter + 1.0) * dim * std::pow(static_cast<double>(n), expo);
}

// ---- builtin models -----------------------------------------------------------

EstimationModel quadratic_location(Vec theta_star, DataSpec data) {
    data.validate();
    const int d = static_cast<int>(theta_star.size());
    if (static_cast<int>(data.scale.size()) != d)
        throw ValidationError("quadratic_location: scale/theta dim mismatch");

    EstimationModel mdl;
    mdl.kind = ModelKind::m_smooth;
    mdl.name = "quadratic";
    mdl.dim = d;
    mdl.true_theta = theta_star;
    mdl.data_center = theta_star;  // theta* is the mean for any data family
    mdl.data = data;

    mdl.m = [d](const Vec& th, const double* x) {
        double s = 0.0;
        for (int j = 0; j < d; ++j) s += (th[j] - x[j]) * (th[j] - x[j]);
        return 0.5 * s;
    };
    mdl.mdot = [d](const Vec& th, const double* x, double* g) {
        for (int j = 0; j < d; ++j) g[j] = th[j] - x[j];
    };
    mdl.mddot = [d](const Vec&, const double*, double* hs) {
        std::fill(hs, hs + d * d, 0.0);
        for (int j = 0; j < d; ++j) hs[j * d + j] = 1.0;
    };
    // constant hessian: the envelope is identically zero
    mdl.m2 = [](const double*) { return 0.0; };
    Vec ts = theta_star;
    mdl.grad_m = [ts](const Vec& th) { return th - ts; };
    // mdot_theta - mdot_theta* = theta - theta* = grad M increment exactly
    mdl.streaming_eta = [d](const Vec&, const double*, double* out) {
        std::fill(out, out + d, 0.0);
    };
    mdl.mdot_lipschitz = 1.0;

    Vec var(d);
    for (int j = 0; j < d; ++j) var[j] = data.scale[j] * data.scale[j];
    mdl.sigma_analytic = SymMatrix::diagonal(var);
    mdl.v_analytic = SymMatrix::identity(d);

    auto& c = mdl.constants;
    c.mu = 0.5;
    c.c2 = 0.0;
    c.c3 = 1.0;
    c.lambda_sigma = *std::min_element(var.begin(), var.end());
    c.lambda_v = 1.0;
    double m4 = data.expect([](double e) { return e * e * e * e; });
    double max_s2 = 0.0;
    for (double v : var) max_s2 = std::max(max_s2, v);
    c.c4 = std::pow(m4, 0.25) * std::sqrt(max_s2);
    double max_scale = *std::max_element(data.scale.begin(), data.scale.end());
    c.domain_diameter = 4.0 * max_scale * std::sqrt(static_cast<double>(d));
    c.c1 = 0.0;
    return mdl;
}

namespace {

EstimationModel huber_base(Vec theta_star, double kappa, DataSpec data, bool z_path) {
    data.validate();
    if (!(kappa > 0.0)) throw ValidationError("huber: kappa must be > 0");
    const int d = static_cast<int>(theta_star.size());
    if (static_cast<int>(data.scale.size()) != d)
        throw ValidationError("huber: scale/theta dim mismatch");

    EstimationModel mdl;
    mdl.kind = z_path ? ModelKind::z_score : ModelKind::m_smooth;
    mdl.name = z_path ? "huber_score" : "huber";
    mdl.dim = d;
    mdl.true_theta = theta_star;
    mdl.data = data;

    // Center the data so that theta* solves E rho'(theta*_j - X_j) = 0:
    // find delta_j with E rho'(delta_j - s_j E) = 0 (increasing in delta)
    // and place the data center at theta* - delta. Zero for symmetric
    // families.
    Vec delta(d, 0.0);
    for (int j = 0; j < d; ++j) {
        double s = data.scale[j];
        auto score = [&](double dl) {
            return data.expect([&](double e) { return huber_rho1(dl - s * e, kappa); });
        };
        double lo = -10.0 * s - 10.0, hi = 10.0 * s + 10.0;
        for (int it = 0; it < 200; ++it) {
            double mid = 0.5 * (lo + hi);
            if (score(mid) < 0.0)
                lo = mid;
            else
                hi = mid;
        }
        delta[j] = 0.5 * (lo + hi);
        if (std::abs(delta[j]) < 1e-12) delta[j] = 0.0;
    }
    mdl.data_center.resize(d);
    for (int j = 0; j < d; ++j) mdl.data_center[j] = theta_star[j] - delta[j];

    mdl.m = [d, kappa](const Vec& th, const double* x) {
        double s = 0.0;
        for (int j = 0; j < d; ++j) s += huber_rho(th[j] - x[j], kappa);
        return s;
    };
    mdl.mdot = [d, kappa](const Vec& th, const double* x, double* g) {
        for (int j = 0; j < d; ++j) g[j] = huber_rho1(th[j] - x[j], kappa);
    };
    mdl.mddot = [d, kappa](const Vec& th, const double* x, double* hs) {
        std::fill(hs, hs + d * d, 0.0);
        for (int j = 0; j < d; ++j) hs[j * d + j] = huber_rho2(th[j] - x[j], kappa);
    };
    // 3/kappa is a global Lipschitz constant of rho'' (|rho'''| peaks at
    // |u| = kappa/2 with value < 0.9/kappa).
    mdl.m2 = [kappa](const double*) { return 3.0 / kappa; };
    mdl.h = mdl.mdot;
    mdl.mdot_lipschitz = 1.0;  // sup |rho''| = 1

    // population quantities per coordinate via 1-D expectations of the
    // residual theta*_j - X_j = delta_j - s_j E
    const DataSpec ds = data;
    const Vec center = mdl.data_center;
    Vec sig_diag(d), v_diag(d);
    for (int j = 0; j < d; ++j) {
        double s = ds.scale[j];
        double dl = delta[j];
        sig_diag[j] = ds.expect([&](double e) {
            double r = huber_rho1(dl - s * e, kappa);
            return r * r;
        });
        v_diag[j] = ds.expect([&](double e) { return huber_rho2(dl - s * e, kappa); });
    }
    mdl.sigma_analytic = SymMatrix::diagonal(sig_diag);
    mdl.v_analytic = SymMatrix::diagonal(v_diag);

    auto psi_fn = [ds, center, kappa, d](const Vec& th) {
        Vec out(d);
        for (int j = 0; j < d; ++j) {
            double dt = th[j] - center[j];
            double s = ds.scale[j];
            out[j] = ds.expect([&](double e) { return huber_rho1(dt - s * e, kappa); });
        }
        return out;
    };
    mdl.psi = psi_fn;
    mdl.grad_m = psi_fn;

    auto& c = mdl.constants;
    c.c2 = 3.0 / kappa;
    c.c3 = 1.0;
    c.lambda_sigma = *std::min_element(sig_diag.begin(), sig_diag.end());
    c.lambda_v = *std::min_element(v_diag.begin(), v_diag.end());
    c.c1 = 0.5 / kappa;  // valid curvature constant for Psi around theta*
    double max_scale = *std::max_element(ds.scale.begin(), ds.scale.end());
    c.domain_diameter = 4.0 * max_scale * std::sqrt(static_cast<double>(d));

    // mu: half the minimal population curvature over the declared box
    double min_curv = std::numeric_limits<double>::infinity();
    for (int j = 0; j < d; ++j) {
        double s = ds.scale[j];
        double dl = delta[j];
        double radius = 2.0 * max_scale;
        for (int g = -8; g <= 8; ++g) {
            double t = dl + radius * g / 8.0;
            double curv = ds.expect([&](double e) { return huber_rho2(t - s * e, kappa); });
            min_curv = std::min(min_curv, curv);
        }
    }
    c.mu = 0.5 * min_curv;

    double m4 = 0.0;
    for (int j = 0; j < d; ++j) {
        double s = ds.scale[j];
        double dl = delta[j];
        m4 = std::max(m4, ds.expect([&](double e) {
            double r = huber_rho1(dl - s * e, kappa);
            return r * r * r * r;
        }));
    }
    c.c4 = std::pow(m4 * d * d, 0.25) / std::sqrt(static_cast<double>(d));
    return mdl;
}

}  // namespace

EstimationModel huber_location(Vec theta_star, double kappa, DataSpec data) {
    return huber_base(std::move(theta_star), kappa, std::move(data), false);
}

EstimationModel huber_score(Vec theta_star, double kappa, DataSpec data) {
    return huber_base(std::move(theta_star), kappa, std::move(data), true);
}

EstimationModel linear_score(Vec theta_star, DataSpec data) {
    EstimationModel mdl = quadratic_location(std::move(theta_star), std::move(data));
    mdl.kind = ModelKind::z_score;
    mdl.name = "linear_score";
    mdl.h = mdl.mdot;
    Vec ts = mdl.true_theta;
    mdl.psi = [ts](const Vec& th) { return th - ts; };
    mdl.constants.c1 = 0.0;  // Psi is exactly linear
    return mdl;
}

// ---- solver ---------------------------------------------------------------------

namespace {

// Row access with an optional single-row override so leave-one-out
// re-solves never copy the data.
struct DataView {
    const Rows& rows;
    long override_index = -1;
    const double* override_row = nullptr;
    const double* row(long i) const {
        return i == override_index ? override_row : rows.row(i);
    }
    long n() const { return rows.n; }
};

double objective(const EstimationModel& mdl, const DataView& data, const Vec& th) {
    double s = 0.0;
    for (long i = 0; i < data.n(); ++i) s += mdl.m(th, data.row(i));
    return s / static_cast<double>(data.n());
}

Vec gradient(const EstimationModel& mdl, const DataView& data, const Vec& th) {
    const int d = mdl.dim;
    Vec g(d, 0.0), gi(d);
    for (long i = 0; i < data.n(); ++i) {
        mdl.mdot(th, data.row(i), gi.data());
        for (int j = 0; j < d; ++j) g[j] += gi[j];
    }
    for (int j = 0; j < d; ++j) g[j] /= static_cast<double>(data.n());
    return g;
}

SymMatrix mean_hessian(const EstimationModel& mdl, const DataView& data, const Vec& th) {
    const int d = mdl.dim;
    std::vector<double> acc(static_cast<std::size_t>(d) * d, 0.0), hi(acc.size());
    for (long i = 0; i < data.n(); ++i) {
        mdl.mddot(th, data.row(i), hi.data());
        for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += hi[k];
    }
    SymMatrix h(d);
    for (std::size_t k = 0; k < acc.size(); ++k) h.a[k] = acc[k] / static_cast<double>(data.n());
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < i; ++j) {
            double v = 0.5 * (h(i, j) + h(j, i));
            h(i, j) = v;
            h(j, i) = v;
        }
    return h;
}

Vec psi_n(const EstimationModel& mdl, const DataView& data, const Vec& th) {
    const int d = mdl.dim;
    Vec g(d, 0.0), gi(d);
    for (long i = 0; i < data.n(); ++i) {
        mdl.h(th, data.row(i), gi.data());
        for (int j = 0; j < d; ++j) g[j] += gi[j];
    }
    for (int j = 0; j < d; ++j) g[j] /= static_cast<double>(data.n());
    return g;
}

Vec newton_direction(const SymMatrix& h, const Vec& g, bool* fallback) {
    try {
        Matrix l = cholesky(h, 1e-14);
        const int d = h.dim;
        Vec y(d), x(d);
        for (int i = 0; i < d; ++i) {
            double s = -g[i];
            for (int j = 0; j < i; ++j) s -= l(i, j) * y[j];
            y[i] = s / l(i, i);
        }
        for (int i = d - 1; i >= 0; --i) {
            double s = y[i];
            for (int j = i + 1; j < d; ++j) s -= l(j, i) * x[j];
            x[i] = s / l(i, i);
        }
        return x;
    } catch (const SingularError&) {
        if (fallback) *fallback = true;
        Vec x(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) x[i] = -g[i];
        return x;
    }
}

Vec solve_view(const EstimationModel& mdl, const DataView& data, const Vec& init, double tol,
               SolveDiagnostics* diag) {
    if (data.n() < mdl.dim) throw ValidationError("solve: need n >= d");
    Vec th = init;
    SolveDiagnostics local;
    const int max_iters = 200;

    if (mdl.kind == ModelKind::m_smooth) {
        double prev_grad = std::numeric_limits<double>::infinity();
        int stagnant = 0;
        for (int it = 0; it < max_iters; ++it) {
            Vec g = gradient(mdl, data, th);
            local.grad_norm = norm(g);
            local.iterations = it;
            if (local.grad_norm <= tol) {
                if (diag) *diag = local;
                return th;
            }
            // Armijo stops discriminating once objective changes drop under
            // FP resolution; inside the basin take pure Newton steps.
            if (local.grad_norm >= 0.5 * prev_grad && local.grad_norm < 1e-6) {
                if (++stagnant >= 3) break;
            } else {
                stagnant = 0;
            }
            prev_grad = local.grad_norm;

            SymMatrix h = mean_hessian(mdl, data, th);
            Vec dir = newton_direction(h, g, &local.hessian_fallback);
            if (local.grad_norm < 1e-6) {
                axpy(1.0, dir, th);
                continue;
            }
            double f0 = objective(mdl, data, th);
            double slope = dot(g, dir);
            double step = 1.0;
            Vec cand;
            for (int ls = 0; ls < 60; ++ls) {
                cand = th;
                axpy(step, dir, cand);
                if (objective(mdl, data, cand) <= f0 + 1e-4 * step * slope) break;
                step *= 0.5;
            }
            th = cand;
        }
        Vec g = gradient(mdl, data, th);
        throw ConvergenceError("solve: Newton failed to reach tolerance", th, norm(g),
                               max_iters);
    }

    // z_score: Newton on Psi_n with a central-difference Jacobian and a
    // line search on ||Psi_n||^2 / 2.
    const int d = mdl.dim;
    for (int it = 0; it < max_iters; ++it) {
        Vec f = psi_n(mdl, data, th);
        local.grad_norm = norm(f);
        local.iterations = it;
        if (local.grad_norm <= tol) {
            if (diag) *diag = local;
            return th;
        }
        SymMatrix jac(d);
        const double hstep = 1e-6;
        for (int j = 0; j < d; ++j) {
            Vec tp = th, tm = th;
            tp[j] += hstep;
            tm[j] -= hstep;
            Vec fp = psi_n(mdl, data, tp);
            Vec fm = psi_n(mdl, data, tm);
            for (int i = 0; i < d; ++i) jac(i, j) = (fp[i] - fm[i]) / (2.0 * hstep);
        }
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < i; ++j) {
                double v = 0.5 * (jac(i, j) + jac(j, i));
                jac(i, j) = v;
                jac(j, i) = v;
            }
        Vec dir = newton_direction(jac, f, &local.hessian_fallback);
        if (local.grad_norm < 1e-6) {  // pure Newton near the root
            axpy(1.0, dir, th);
            continue;
        }
        double m0 = 0.5 * dot(f, f);
        double step = 1.0;
        Vec cand;
        for (int ls = 0; ls < 60; ++ls) {
            cand = th;
            axpy(step, dir, cand);
            Vec fc = psi_n(mdl, data, cand);
            if (0.5 * dot(fc, fc) <= m0 * (1.0 - 1e-4 * step)) break;
            step *= 0.5;
        }
        th = cand;
    }
    Vec f = psi_n(mdl, data, th);
    throw ConvergenceError("solve: z-score Newton failed to reach tolerance", th, norm(f),
                           max_iters);
}

}  // namespace

Vec solve(const EstimationModel& model, const Rows& data, const Vec& init, double tol,
          SolveDiagnostics* diag) {
    DataView view{data};
    return solve_view(model, view, init, tol, diag);
}

// ---- decomposition ----------------------------------------------------------------

DecompositionResult decompose(const EstimationModel& model, const Rows& data,
                              const Vec& theta_hat, const SolveDiagnostics& solver_diag) {
    if (model.kind != ModelKind::m_smooth)
        throw ValidationError("decompose: m_smooth models only (z models use z_deltas)");
    const int d = model.dim;
    const long n = data.n;
    const double sqrt_n = std::sqrt(static_cast<double>(n));
    DataView view{data};

    DecompositionResult res;
    res.theta_hat = theta_hat;
    res.solver = solver_diag;

    SigmaVEstimate sv = estimate_sigma_v(model, &data);
    res.sigma = sv.sigma;
    res.v = sv.v;
    res.sigma_inv_sqrt = inv_sqrt_psd(sv.sigma);

    // W and the standardized summands
    res.xi_std = Rows(n, d);
    Vec w(d, 0.0), xi(d);
    double gamma3 = 0.0;
    for (long i = 0; i < n; ++i) {
        model.mdot(model.true_theta, data.row(i), xi.data());
        double* out = res.xi_std.row(i);
        double s2 = 0.0;
        for (int a = 0; a < d; ++a) {
            double v = 0.0;
            for (int b = 0; b < d; ++b) v += res.sigma_inv_sqrt(a, b) * xi[b];
            v = -v / sqrt_n;
            out[a] = v;
            w[a] += v;
            s2 += v * v;
        }
        gamma3 += s2 * std::sqrt(s2);
    }
    res.w_stat = w;
    res.gamma3 = gamma3;

    // T = sqrt(n) Sigma^{-1/2} V (theta_hat - theta*)
    Vec diff = theta_hat - model.true_theta;
    Vec vd = matvec(res.v, diff);
    res.t_stat = sqrt_n * matvec(res.sigma_inv_sqrt, vd);

    // remainder: mean-hessian deviation + integrated hessian increment
    SymMatrix hbar = mean_hessian(model, view, model.true_theta);
    res.h1 = spectral_norm([&] {
        SymMatrix m(d);
        for (std::size_t k = 0; k < m.a.size(); ++k) m.a[k] = hbar.a[k] - res.v.a[k];
        return m;
    }());
    double h2 = 0.0;
    for (long i = 0; i < n; ++i) h2 += model.m2(data.row(i));
    res.h2 = h2 / static_cast<double>(n);

    SymMatrix increment(d);  // (1/n) sum_i int_0^1 (mddot_{theta_t} - mddot_{theta*}) dt
    {
        std::vector<double> acc(static_cast<std::size_t>(d) * d, 0.0);
        Vec theta_t(d);
        for (int q = 0; q < 16; ++q) {
            for (int j = 0; j < d; ++j)
                theta_t[j] = model.true_theta[j] + gl16.t[q] * diff[j];
            SymMatrix hq = mean_hessian(model, view, theta_t);
            for (std::size_t k = 0; k < acc.size(); ++k)
                acc[k] += gl16.w[q] * (hq.a[k] - hbar.a[k]);
        }
        increment.a = acc;
    }

    Vec term1 = matvec(res.sigma_inv_sqrt, [&] {
        SymMatrix m(d);
        for (std::size_t k = 0; k < m.a.size(); ++k) m.a[k] = hbar.a[k] - res.v.a[k];
        return matvec(m, diff);
    }());
    Vec term2 = matvec(res.sigma_inv_sqrt, matvec(increment, diff));
    res.d_stat.assign(d, 0.0);
    for (int j = 0; j < d; ++j) res.d_stat[j] = -sqrt_n * (term1[j] + term2[j]);

    double dn = norm(diff);
    res.delta = sqrt_n / std::sqrt(model.constants.lambda_sigma) *
                (res.h1 * dn + res.h2 * dn * dn);

    Vec resid = res.t_stat - res.w_stat - res.d_stat;
    res.identity_residual = norm(resid);
    return res;
}

// ---- leave-one-out -----------------------------------------------------------------

LooResult delta_loo(const EstimationModel& model, const Rows& data,
                    const DecompositionResult& base, const std::vector<long>& indices,
                    const Rows& replacement_rows, double solve_tol) {
    if (static_cast<long>(indices.size()) != replacement_rows.n)
        throw ValidationError("delta_loo: one replacement row per probed index");
    const int d = model.dim;
    const long n = data.n;
    const double sqrt_n = std::sqrt(static_cast<double>(n));
    const double inv_sqrt_lambda = 1.0 / std::sqrt(model.constants.lambda_sigma);

    // mean hessian at theta* once; per-index update is rank-local
    DataView view{data};
    SymMatrix hbar = mean_hessian(model, view, model.true_theta);
    double h2_sum = 0.0;
    for (long i = 0; i < n; ++i) h2_sum += model.m2(data.row(i));

    LooResult out;
    out.delta = base.delta;
    out.indices = indices;
    out.delta_i.assign(indices.size(), 0.0);

    std::vector<double> hx(static_cast<std::size_t>(d) * d), hxp(hx.size());
    for (std::size_t k = 0; k < indices.size(); ++k) {
        long i = indices[k];
        const double* xi_row = data.row(i);
        const double* rep_row = replacement_rows.row(static_cast<long>(k));

        model.mddot(model.true_theta, xi_row, hx.data());
        model.mddot(model.true_theta, rep_row, hxp.data());
        SymMatrix hbar_i = hbar;
        for (std::size_t t = 0; t < hbar_i.a.size(); ++t)
            hbar_i.a[t] += (hxp[t] - hx[t]) / static_cast<double>(n);
        SymMatrix dev(d);
        for (std::size_t t = 0; t < dev.a.size(); ++t) dev.a[t] = hbar_i.a[t] - base.v.a[t];
        double h1_i = spectral_norm(dev);
        double h2_i = (h2_sum + model.m2(rep_row) - model.m2(xi_row)) / static_cast<double>(n);

        DataView loo_view{data, i, rep_row};
        try {
            Vec theta_i = solve_view(model, loo_view, base.theta_hat, solve_tol, nullptr);
            double dn = norm(theta_i - model.true_theta);
            out.delta_i[k] = sqrt_n * inv_sqrt_lambda * (h1_i * dn + h2_i * dn * dn);
        } catch (const ConvergenceError&) {
            ++out.failures;
            out.delta_i[k] = std::numeric_limits<double>::quiet_NaN();
        }
    }
    return out;
}

// ---- z deltas -----------------------------------------------------------------------

ZDeltas z_deltas(const EstimationModel& model, const Rows& data, const Vec& theta_hat,
                 double delta_n, int probe_count, RandomSource source) {
    if (model.kind != ModelKind::z_score) throw ValidationError("z_deltas: z_score models only");
    if (!model.psi) throw ValidationError("z_deltas: model must provide closed-form Psi");
    const int d = model.dim;
    const long n = data.n;
    const double sqrt_n = std::sqrt(static_cast<double>(n));
    const double inv_sqrt_lambda = 1.0 / std::sqrt(model.constants.lambda_sigma);
    DataView view{data};

    Vec base = psi_n(model, view, model.true_theta) - model.psi(model.true_theta);
    auto process_dev = [&](const Vec& th) {
        Vec v = psi_n(model, view, th) - model.psi(th);
        return norm(v - base);
    };

    double sup = 0.0;
    Rng rng(source);
    Vec th(d);
    for (int k = 0; k < probe_count; ++k) {
        double n2 = 0.0;
        do {
            n2 = 0.0;
            for (int j = 0; j < d; ++j) {
                th[j] = rng.gaussian();
                n2 += th[j] * th[j];
            }
        } while (n2 == 0.0);
        double radius = delta_n * std::pow(rng.uniform(), 1.0 / d);
        double f = radius / std::sqrt(n2);
        for (int j = 0; j < d; ++j) th[j] = model.true_theta[j] + f * th[j];
        sup = std::max(sup, process_dev(th));
    }
    double dist = norm(theta_hat - model.true_theta);
    if (dist <= delta_n) sup = std::max(sup, process_dev(theta_hat));

    ZDeltas zd;
    zd.delta1 = inv_sqrt_lambda * sqrt_n * sup;
    zd.delta2 = (dist <= delta_n)
                    ? model.constants.c1 * inv_sqrt_lambda * sqrt_n * dist * dist
                    : 0.0;
    return zd;
}

// ---- sigma / v ------------------------------------------------------------------------

SigmaVEstimate estimate_sigma_v(const EstimationModel& model, const Rows* data) {
    SigmaVEstimate est;
    const int d = model.dim;
    if (model.sigma_analytic && model.v_analytic) {
        est.sigma = *model.sigma_analytic;
        est.v = *model.v_analytic;
        est.analytic = true;
    } else {
        if (!data) throw ValidationError("estimate_sigma_v: sample estimate needs data");
        const long n = data->n;
        SymMatrix sig(d);
        Vec xi(d);
        for (long i = 0; i < n; ++i) {
            if (model.kind == ModelKind::m_smooth)
                model.mdot(model.true_theta, data->row(i), xi.data());
            else
                model.h(model.true_theta, data->row(i), xi.data());
            for (int a = 0; a < d; ++a)
                for (int b = a; b < d; ++b) sig(a, b) += xi[a] * xi[b] / n;
        }
        for (int a = 0; a < d; ++a)
            for (int b = 0; b < a; ++b) sig(a, b) = sig(b, a);
        est.sigma = sig;
        if (model.kind == ModelKind::m_smooth) {
            DataView view{*data};
            est.v = mean_hessian(model, view, model.true_theta);
        } else {
            // central-difference Jacobian of Psi_n at theta*
            DataView view{*data};
            SymMatrix jac(d);
            const double h = 1e-6;
            for (int j = 0; j < d; ++j) {
                Vec tp = model.true_theta, tm = model.true_theta;
                tp[j] += h;
                tm[j] -= h;
                Vec fp = psi_n(model, view, tp), fm = psi_n(model, view, tm);
                for (int i = 0; i < d; ++i) jac(i, j) = (fp[i] - fm[i]) / (2.0 * h);
            }
            for (int i = 0; i < d; ++i)
                for (int j = 0; j < i; ++j) {
                    double v = 0.5 * (jac(i, j) + jac(j, i));
                    jac(i, j) = v;
                    jac(j, i) = v;
                }
            est.v = jac;
        }
    }
    est.sigma_lambda_min = lambda_min(est.sigma);
    est.v_lambda_min = lambda_min(est.v);
    if (model.constants.lambda_sigma > 0 &&
        est.sigma_lambda_min < model.constants.lambda_sigma - 1e-9)
        est.warnings.push_back("lambda_min(Sigma) below the declared floor");
    if (model.constants.lambda_v > 0 && est.v_lambda_min < model.constants.lambda_v - 1e-9)
        est.warnings.push_back("lambda_min(V) below the declared floor");
    return est;
}

// ---- rate probe -------------------------------------------------------------------------

std::vector<RateProbeRow> rate_probe_theta(const EstimationModel& model,
                                           const std::vector<long>& n_grid, int reps,
                                           RandomSource source, double solve_tol,
                                           std::vector<double>* raw_p2,
                                           std::vector<double>* raw_p4) {
    std::vector<RateProbeRow> table;
    if (raw_p2) raw_p2->clear();
    if (raw_p4) raw_p4->clear();
    for (std::size_t pt = 0; pt < n_grid.size(); ++pt) {
        const long n = n_grid[pt];
        std::vector<double> p2(reps, 0.0), p4(reps, 0.0);
        RandomSource point_src = source.child(pt);
        par::parallel_for(reps, [&](std::int64_t r) {
            Rng rng(RandomSource{point_src.seed, point_src.stream + static_cast<std::uint64_t>(r)});
            Rows data = sample_data(model.data, model.data_center, n, rng);
            Vec th = solve(model, data, model.true_theta, solve_tol, nullptr);
            double dn2 = 0.0;
            for (int j = 0; j < model.dim; ++j)
                dn2 += (th[j] - model.true_theta[j]) * (th[j] - model.true_theta[j]);
            p2[static_cast<std::size_t>(r)] = dn2;
            p4[static_cast<std::size_t>(r)] = dn2 * dn2;
        });
        RateProbeRow row;
        row.n = n;
        for (int r = 0; r < reps; ++r) {
            row.mean_p2 += p2[r];
            row.mean_p4 += p4[r];
        }
        row.mean_p2 /= reps;
        row.mean_p4 /= reps;
        double v2 = 0, v4 = 0;
        for (int r = 0; r < reps; ++r) {
            v2 += (p2[r] - row.mean_p2) * (p2[r] - row.mean_p2);
            v4 += (p4[r] - row.mean_p4) * (p4[r] - row.mean_p4);
        }
        if (reps > 1) {
            row.se_p2 = std::sqrt(v2 / (static_cast<double>(reps) * (reps - 1)));
            row.se_p4 = std::sqrt(v4 / (static_cast<double>(reps) * (reps - 1)));
        }
        table.push_back(row);
        if (raw_p2) raw_p2->insert(raw_p2->end(), p2.begin(), p2.end());
        if (raw_p4) raw_p4->insert(raw_p4->end(), p4.begin(), p4.end());
    }
    return table;
}

}  // namespace nclt
