#pragma once

#include <string>
#include <vector>

#include "nclt/asgd.hpp"
#include "nclt/bound_engine.hpp"
#include "nclt/distance_lab.hpp"
#include "nclt/m_estimation.hpp"
#include "nclt/report.hpp"

#include "json.hpp"

namespace nclt {

// ---- building blocks shared by the CLI and the acceptance suite ------------

EstimationModel model_from_json(const nlohmann::json& j);
SgdProblem problem_from_json(const nlohmann::json& j);
TestFamily::Params family_params_from_json(const nlohmann::json& j);

// One grid point of the bound experiment: MC replications of
// (data -> solve -> decompose -> leave-one-out), coupling terms, bounds,
// and the family distance of the R T-samples.
struct BoundPoint {
    long n = 0;
    int d = 0;
    CouplingTerms terms;
    BoundReport thm21;
    BoundReport cor22;
    DistanceEstimate distance;
    double max_identity_residual = 0.0;
    long failed_replications = 0;
    // per-replication artifacts (valid replications, in order); every
    // aggregate above is recomputable from them
    Rows t_samples;
    std::vector<CouplingSample> raw;  // filled when collect_raw
    std::vector<long> raw_rep_index;
};

// solve_tol <= 0 picks the tolerance adaptively so the T = W + D identity
// residual sqrt(n) ||Sigma^{-1/2}|| ||grad M_n(theta_hat)|| stays under 1e-11.
BoundPoint run_bound_point(const EstimationModel& model, long n, long replications,
                           int loo_subsample_k, const TestFamily& family, RandomSource src,
                           double solve_tol = 0.0, bool collect_raw = false);

// Distance-only grid point (no leave-one-out): T samples and their family
// distance.
struct DistancePoint {
    long n = 0;
    DistanceEstimate distance;
    double max_identity_residual = 0.0;
    Rows t_samples;  // valid T rows in replication order
};

DistancePoint run_distance_point(const EstimationModel& model, long n, long replications,
                                 const TestFamily& family, RandomSource src,
                                 double solve_tol = 0.0);

double identity_solve_tol(const EstimationModel& model, long n);

// reps rows of W = sum_i xi_i from exactly standardized iid batches
// (xi_i = Sigma^{-1/2} X_i / sqrt(n)).
Rows iid_standardized_w(const NoiseSpec& spec, long n, long reps, RandomSource src);

// gamma_n = sum_i E||xi_i||^3 for the standardized iid batch; closed form
// for gaussian (chi moment) and rademacher (constant norm), MC otherwise.
double gamma_iid(const NoiseSpec& spec, long n, RandomSource src);

// ---- config-driven runner ----------------------------------------------------

struct RunOptions {
    std::string out_dir = ".";
    int jobs = 0;          // 0 = leave the OpenMP default
    bool keep_raw = false;
    // seed override: CLI flag beats NCLT_SEED beats config
    bool has_seed_override = false;
    std::uint64_t seed_override = 0;
};

struct RunResult {
    std::vector<ReportRow> rows;
    nlohmann::json summary;
    std::string csv_path;
    std::string summary_path;
};

// Parses + schema-validates the config (unknown keys rejected), runs the
// experiment, writes CSV + JSON summary. Throws ValidationError for bad
// configs and Error/subclasses for numerical failures.
RunResult run_experiment(const std::string& experiment, const nlohmann::json& config,
                         const RunOptions& opts);

// Numeric condition checks (eigenvalue floors, Lipschitz probes,
// g(theta*, xi) = 0); returns pass/warn lines, never throws on a failed
// condition.
std::vector<std::string> validate_conditions(const nlohmann::json& config);

}  // namespace nclt
