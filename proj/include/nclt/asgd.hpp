#pragma once

#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "nclt/linalg.hpp"
#include "nclt/m_estimation.hpp"
#include "nclt/rng.hpp"
#include "nclt/stats_core.hpp"

namespace nclt {

// Learning-rate schedule ell_k = ell0 * k^{-alpha}, 1/2 < alpha <= 1.
struct Schedule {
    double ell0 = 1.0;
    double alpha = 0.75;
    long n = 0;

    void validate() const;
    double rate(long k) const;  // k >= 1; rate(0) is defined as ell0
};

enum class ObjectiveKind { quadratic, log_cosh, custom };

// Objective + noise model for the averaged-SGD recursion
//   theta_k = theta_{k-1} - ell_k (grad f(theta_{k-1}) + xi_k + eta_k),
// eta_k = g(theta_{k-1}, xi_k) with g(theta*, .) = 0. Builtins carry
// analytically simplified callbacks: the quadratic objective's remainder
// H(theta) = grad f - G (theta - theta*) is identically zero.
struct SgdProblem {
    ObjectiveKind kind = ObjectiveKind::custom;
    std::string name;
    int dim = 0;
    Vec theta_star;
    SymMatrix hessian_at_star;  // G

    std::function<Vec(const Vec&)> grad_f;
    std::function<Vec(const Vec&)> h_remainder;  // H(theta); null => generic formula

    double mu = 0.0, L = 0.0;
    double c2 = 0.0;  // hessian Lipschitz constant near theta*
    double beta = std::numeric_limits<double>::infinity();
    double c1 = 0.0;  // Lipschitz constant of g in theta

    NoiseSpec noise;  // xi_i; Sigma_i is constant across steps
    // eta map; null means g == 0
    std::function<void(const Vec&, const double*, double*)> g;

    Vec init_offset;                  // theta_0 = theta* + init_offset ...
    double init_gaussian_scale = 0.0;  // ... + scale * N(0, I)

    // L1 = max{c2, 2L/beta}; the quadratic builtin declares c2 = 0 and
    // beta = inf, so L1 = 0.
    double l1_constant() const;
    Vec remainder(const Vec& theta) const;
    void validate() const;
};

// G = mu I in dim d with additive gaussian noise (identity covariance
// scaled by noise_scale), g == 0.
SgdProblem quadratic_problem(int dim, double mu_value, Vec theta_star, double noise_scale);

// f(theta) = sum_j c log cosh(theta_j - theta*_j) + (mu/2)||theta - theta*||^2;
// smooth, strongly convex, genuinely non-quadratic remainder.
SgdProblem log_cosh_problem(int dim, double c, double mu_value, Vec theta_star,
                            double noise_scale);

// Adds the bounded multiplicative map g(theta, xi) = c_mult tanh(xi_1)
// (theta - theta*), which satisfies g(theta*,.) = 0 and is c_mult-Lipschitz.
void add_multiplicative_noise(SgdProblem& problem, double c_mult);

struct SgdTrajectory {
    Rows thetas;  // (n+1) x d, row k = theta_k
    Vec theta_bar;
    Rows xi;   // n x d, row k-1 = xi_k
    Rows eta;  // n x d
    Schedule schedule;

    Vec theta(long k) const { return thetas.row_vec(k); }
};

// Runs the recursion; deterministic given source. Throws DivergenceError
// with the step index if an iterate leaves the finite range.
SgdTrajectory run(const SgdProblem& problem, const Schedule& schedule, RandomSource source);

// Binary trajectory file: header {int64 n, int64 d, uint64 seed} then
// (n+1) x d thetas, n x d xi, n x d eta, all row-major little-endian
// doubles.
void save_trajectory(const SgdTrajectory& traj, const std::string& path,
                     std::uint64_t seed);
SgdTrajectory load_trajectory(const std::string& path, std::uint64_t* seed = nullptr);

// Q_i = ell_i sum_{j=i}^{n-1} prod_{k=i+1}^{j} (I - ell_k G), held as
// per-eigenvalue scalars in the eigenbasis of G. p[i] = ||Q_i||.
struct QWeights {
    Matrix eigvecs;  // columns
    Vec eigvals;
    Rows q;  // n x d scalars, row i = q_i per eigenvalue
    std::vector<double> p;
    long n = 0;

    Matrix q_matrix(long i) const;
};

// Backward scalar recursion S_i = 1 + (1 - ell_{i+1} lambda) S_{i+1};
// O(d^3 + n d).
QWeights compute_q(const SymMatrix& g, const Schedule& schedule);

// Same with explicit rates; rates[k] = ell_k for k >= 1, rates[0] is the
// ell_0 prefactor of Q_0.
QWeights compute_q_rates(const SymMatrix& g, const std::vector<double>& rates);

// Literal double-loop summation, O(n^2 d); the serial reference oracle.
Rows compute_q_direct(const SymMatrix& g, const Schedule& schedule);
Rows compute_q_direct_rates(const SymMatrix& g, const std::vector<double>& rates);

// Sigma_n = (1/n) sum_{i=1}^{n-1} Q_i Sigma_i Q_i^T.
SymMatrix compute_sigma_n(const QWeights& q, const SymMatrix& sigma_xi);
SymMatrix compute_sigma_n(const QWeights& q, const std::vector<SymMatrix>& sigma_list);

// Everything schedule-dependent the decomposition needs, precomputed.
struct SgdAnalysis {
    QWeights q;
    SymMatrix sigma_n;
    SymMatrix s_inv_sqrt;  // Sigma_n^{-1/2}
    double sigma_n_lambda_min = 0.0;
    bool guard_ok = true;  // n >= 4 ((2 L ell0)^alpha + 1)
};

SgdAnalysis analyze_schedule(const SgdProblem& problem, const Schedule& schedule);

struct SgdDecomposition {
    Vec t_stat;  // sqrt(n) Sigma_n^{-1/2} (theta_bar - theta*)
    Vec w_stat;  // sum of zeta_i
    Vec d1, d2, d3;
    Rows zeta;  // (n-1) x d, row i-1 = (1/sqrt n) Sigma_n^{-1/2} Q_i xi_i
    double gamma3 = 0.0;
    double delta1 = 0.0, delta2 = 0.0, delta3 = 0.0;
    double c1_realized = 0.0;  // lambda_min(Sigma_n)^{-1/2}
    double identity_residual = 0.0;
};

SgdDecomposition standardize_and_decompose(const SgdTrajectory& traj,
                                           const SgdProblem& problem,
                                           const SgdAnalysis& analysis);

// Coupled path theta^{(i)}: shares the prefix j < i bitwise, replaces
// xi_i by an independent copy, reuses xi_j for j > i with eta rebuilt
// from the coupled state.
Rows coupled_trajectory(const SgdTrajectory& traj, const SgdProblem& problem, long i,
                        RandomSource replacement_source);

struct SgdLoo {
    double delta1 = 0.0, delta2 = 0.0, delta3 = 0.0;
    std::vector<long> indices;
    std::vector<double> delta2_i;
    std::vector<double> delta3_i;
    long failures = 0;
};

SgdLoo deltas_and_loo(const SgdTrajectory& traj, const SgdProblem& problem,
                      const SgdAnalysis& analysis, const SgdDecomposition& dec,
                      const std::vector<long>& indices, RandomSource replacement_source);

struct MomentRow {
    long n = 0;
    double m2 = 0.0, m4 = 0.0;
    double se2 = 0.0, se4 = 0.0;
};

// E||theta_n - theta*||^2 and ^4 across the n grid; one trajectory per
// replication run to max(n_grid), sampled at the grid points. Raw vectors,
// when given, receive the per-replication values point-major.
std::vector<MomentRow> moment_probe(const SgdProblem& problem, double ell0, double alpha,
                                    const std::vector<long>& n_grid, int reps,
                                    RandomSource source,
                                    std::vector<double>* raw_m2 = nullptr,
                                    std::vector<double>* raw_m4 = nullptr);

// phi_beta(t) = (t^beta - 1)/beta, continuous in beta at 0 (log t).
double phi(double beta, double t);

// Streaming M-estimation theta_k = theta_{k-1} - ell_k mdot_{theta_{k-1}}(X_k)
// recorded through the xi/eta split of the noise; the quadratic builtin's
// eta is identically zero.
SgdTrajectory streaming_m_estimation(const EstimationModel& model, const Schedule& schedule,
                                     RandomSource source);

// Wraps an EstimationModel as an SgdProblem (f = M, G = V, c1 = 2 L_F)
// so streaming trajectories reuse the decomposition machinery.
SgdProblem sgd_problem_from_model(const EstimationModel& model);

}  // namespace nclt
