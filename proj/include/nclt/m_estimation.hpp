#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "nclt/linalg.hpp"
#include "nclt/rng.hpp"
#include "nclt/stats_core.hpp"

namespace nclt {

enum class ModelKind { m_smooth, z_score };

// Constants the conditions are declared with. The sigma floor is what
// the Delta formulas divide by (lambda_1 in the smooth path, lambda_2 in
// the score path of the source conditions - both are the lower bound on
// lambda_min(Sigma)); the v floor bounds lambda_min(V) respectively
// lambda_min(Psi_dot0).
struct ConditionConstants {
    double mu = 0.0;
    double c1 = 0.0, c2 = 0.0, c3 = 0.0, c4 = 0.0;
    double lambda_sigma = 0.0;
    double lambda_v = 0.0;
    double p = 3.0;              // moment order entering delta_n
    double domain_diameter = 0.0;
};

// Distribution of one data row: X = theta* + scale .* E componentwise,
// with E iid standardized (mean 0, variance 1) from the chosen family.
// two_point is the asymmetric lattice family: E = -sqrt(p/(1-p)) w.p.
// 1-p and sqrt((1-p)/p) w.p. p.
struct DataSpec {
    enum class Family { gaussian, laplace, two_point };
    Family family = Family::gaussian;
    Vec scale;       // per-coordinate, positive
    double p = 0.1;  // two_point only

    void validate() const;
    // E f(E) for one standardized component; exact for two_point,
    // quadrature otherwise.
    double expect(const std::function<double(double)>& f) const;
};

void sample_data_row(const DataSpec& spec, const Vec& theta_star, Rng& rng, double* out);
Rows sample_data(const DataSpec& spec, const Vec& theta_star, long n, Rng& rng);

// An M-/Z-estimation problem. Builtins provide analytically simplified
// callbacks (the quadratic model's m2 is identically zero, etc.) plus
// exact Sigma and V.
struct EstimationModel {
    ModelKind kind = ModelKind::m_smooth;
    std::string name;
    int dim = 0;  // theta and x share the dimension (location models)
    Vec true_theta;
    // Data rows are drawn around this center. For asymmetric data the
    // builtin constructors shift it so that true_theta really solves
    // E mdot_{theta*}(X) = 0 (the quadratic model keeps center = theta*,
    // the Huber models solve the 1-D centering equation per coordinate).
    Vec data_center;
    ConditionConstants constants;
    DataSpec data;

    // m_smooth: loss, gradient, hessian in theta at one data row.
    std::function<double(const Vec&, const double*)> m;
    std::function<void(const Vec&, const double*, double*)> mdot;
    std::function<void(const Vec&, const double*, double*)> mddot;  // d*d row-major
    // envelope: ||mddot(theta,x) - mddot(theta*,x)|| <= m2(x) ||theta - theta*||
    std::function<double(const double*)> m2;

    // z_score: score and its closed-form population version.
    std::function<void(const Vec&, const double*, double*)> h;
    std::function<Vec(const Vec&)> psi;

    // gradient of M(theta) = E m_theta(X); used by the streaming path
    std::function<Vec(const Vec&)> grad_m;

    // streaming residual eta_n(theta_prev, x) = mdot_theta(x) - mdot_theta*(x)
    // - grad M(theta) + grad M(theta*); null means the generic subtraction
    // formula. The quadratic builtin's increment cancels identically, so it
    // installs an exact zero here.
    std::function<void(const Vec&, const double*, double*)> streaming_eta;

    std::optional<SymMatrix> sigma_analytic;
    std::optional<SymMatrix> v_analytic;  // V or Psi_dot0

    double mdot_lipschitz = 0.0;  // L_F over x of theta -> mdot_theta(x)

    // delta_n = (D_Theta + 1) d n^{-(p-2)/(2p-2)}
    double delta_n(long n) const;
};

// Builtin models ------------------------------------------------------------

// m_theta(x) = ||theta - x||^2 / 2; theta_hat is the sample mean.
EstimationModel quadratic_location(Vec theta_star, DataSpec data);

// m_theta(x) = sum_j rho_kappa(theta_j - x_j),
// rho_kappa(u) = kappa^2 (sqrt(1 + (u/kappa)^2) - 1).
EstimationModel huber_location(Vec theta_star, double kappa, DataSpec data);

// z-estimator with h_theta(x) = theta - x (Psi_dot0 = I).
EstimationModel linear_score(Vec theta_star, DataSpec data);

// z-estimator with the smoothed-Huber score.
EstimationModel huber_score(Vec theta_star, double kappa, DataSpec data);

// Solver ----------------------------------------------------------------------

struct SolveDiagnostics {
    int iterations = 0;
    double grad_norm = 0.0;
    bool hessian_fallback = false;
};

// Newton with Armijo backtracking (beta = 0.5, c = 1e-4), max 200
// iterations; minimizes M_n for m_smooth models and ||Psi_n||^2/2 for
// z_score models. Throws ConvergenceError carrying the last iterate.
Vec solve(const EstimationModel& model, const Rows& data, const Vec& init, double tol,
          SolveDiagnostics* diag = nullptr);

// Decomposition ---------------------------------------------------------------

struct DecompositionResult {
    Vec theta_hat;
    Vec t_stat;  // sqrt(n) Sigma^{-1/2} V (theta_hat - theta*)
    Vec w_stat;  // -(1/sqrt n) sum_i Sigma^{-1/2} mdot_{theta*}(X_i)
    Vec d_stat;  // two-term remainder; T = W + D up to the reported residual
    double delta = 0.0;
    double h1 = 0.0, h2 = 0.0;
    SymMatrix sigma, v;
    SymMatrix sigma_inv_sqrt;
    Rows xi_std;  // the summands of W, one row per observation
    double gamma3 = 0.0;  // sum_i ||xi_std_i||^3
    double identity_residual = 0.0;
    SolveDiagnostics solver;
};

DecompositionResult decompose(const EstimationModel& model, const Rows& data,
                              const Vec& theta_hat, const SolveDiagnostics& solver_diag);

// Leave-one-out ----------------------------------------------------------------

struct LooResult {
    double delta = 0.0;               // base replication's Delta
    std::vector<long> indices;        // probed i
    std::vector<double> delta_i;      // Delta^(i), aligned with indices
    long failures = 0;                // re-solves that failed (excluded)
};

// For each probed index, replaces row i by replacement_rows[k], re-solves
// (warm started from theta_hat) and rebuilds Delta^(i). In test mode the
// replacement may be the row itself, which reproduces Delta exactly.
LooResult delta_loo(const EstimationModel& model, const Rows& data,
                    const DecompositionResult& base, const std::vector<long>& indices,
                    const Rows& replacement_rows, double solve_tol);

// Z-estimator deltas -------------------------------------------------------------

struct ZDeltas {
    double delta1 = 0.0;  // sup over the delta_n ball, probed from below
    double delta2 = 0.0;  // exact indicator form
};

// Delta1 = lambda_sigma^{-1/2} sqrt(n) sup_{||theta-theta*||<=delta_n}
//   ||(Psi_n - Psi)(theta) - (Psi_n - Psi)(theta*)||, maximized over
// probe_count random points plus theta_hat; Delta2 = c1 lambda_sigma^{-1/2}
// sqrt(n) ||theta_hat-theta*||^2 1(||theta_hat-theta*|| <= delta_n).
ZDeltas z_deltas(const EstimationModel& model, const Rows& data, const Vec& theta_hat,
                 double delta_n, int probe_count, RandomSource source);

// Condition estimates -------------------------------------------------------------

struct SigmaVEstimate {
    SymMatrix sigma;
    SymMatrix v;
    bool analytic = false;
    double sigma_lambda_min = 0.0;
    double v_lambda_min = 0.0;
    std::vector<std::string> warnings;  // declared floors that fail
};

SigmaVEstimate estimate_sigma_v(const EstimationModel& model, const Rows* data = nullptr);

// Rate probe ----------------------------------------------------------------------

struct RateProbeRow {
    long n = 0;
    double mean_p2 = 0.0;  // E ||theta_hat - theta*||^2
    double mean_p4 = 0.0;
    double se_p2 = 0.0;
    double se_p4 = 0.0;
};

// raw_p2 / raw_p4, when given, receive the per-replication values laid
// out point-major (n_grid.size() * reps entries).
std::vector<RateProbeRow> rate_probe_theta(const EstimationModel& model,
                                           const std::vector<long>& n_grid, int reps,
                                           RandomSource source, double solve_tol = 1e-12,
                                           std::vector<double>* raw_p2 = nullptr,
                                           std::vector<double>* raw_p4 = nullptr);

}  // namespace nclt
