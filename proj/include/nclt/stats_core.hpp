#pragma once

#include <cstdint>
#include <string>

#include "nclt/convex_geom.hpp"
#include "nclt/linalg.hpp"
#include "nclt/rng.hpp"

#include "json.hpp"

namespace nclt {

// n x d array stored row-major.
struct Rows {
    long n = 0;
    int d = 0;
    std::vector<double> a;

    Rows() = default;
    Rows(long n_, int d_) : n(n_), d(d_), a(static_cast<std::size_t>(n_) * d_, 0.0) {}
    double* row(long i) { return a.data() + static_cast<std::size_t>(i) * d; }
    const double* row(long i) const { return a.data() + static_cast<std::size_t>(i) * d; }
    Vec row_vec(long i) const { return Vec(row(i), row(i) + d); }
};

enum class NoiseFamily { gaussian, rademacher, uniform_sphere, sub_exponential };

NoiseFamily noise_family_from_string(const std::string& s);
std::string to_string(NoiseFamily f);

// Distribution of one independent draw. For gaussian / rademacher /
// sub_exponential the raw unit-covariance vector is pushed through the
// Cholesky factor of `covariance` and multiplied by `scale`;
// uniform_sphere ignores the covariance (must be identity) and returns
// vectors of norm exactly `scale`. The sub-exponential family is built
// from two-sided exponential components standardized to unit variance;
// `rate` only has to be positive and is recorded as the nominal psi_1
// tail rate.
struct NoiseSpec {
    NoiseFamily family = NoiseFamily::gaussian;
    double scale = 1.0;
    SymMatrix covariance;  // SPD, d x d
    double rate = 1.0;     // sub_exponential only

    int dim() const { return covariance.dim; }
    // scale^2 * covariance
    SymMatrix effective_covariance() const;
    void validate() const;

    nlohmann::json to_json() const;
    static NoiseSpec from_json(const nlohmann::json& j);
};

// Influence terms xi_i for one realization plus the standardizing
// transform that was applied (identity if the batch already satisfied
// sum_i xi_i xi_i^T = I).
struct InfluenceBatch {
    Rows xi;
    SymMatrix standardizer;
};

// Transforms rows by S^{-1/2} where S = sum_i xi_i xi_i^T, so the summed
// (not averaged) second moment becomes the identity.
InfluenceBatch standardize(const Rows& xi_raw);

// gamma = sum_i ||xi_i||^3 for one standardized batch.
double gamma_third_moment(const InfluenceBatch& batch);

struct Estimate {
    double value = 0.0;
    double stderr_ = 0.0;
};

// Monte Carlo estimate of gamma_n = sum_i E||xi_i||^3 for batches of n
// iid draws from `spec`, exactly standardized through the spec covariance
// (xi_i = Sigma^{-1/2} X_i / sqrt(n)).
Estimate gamma_expected(const NoiseSpec& spec, long n, int reps, RandomSource source);

// Draws an n x d sample; deterministic given (spec, source).
Rows sample(const NoiseSpec& spec, long n, int d, RandomSource source);

// Reusable sampler with the covariance factor precomputed; what the
// replication loops use.
class NoiseSampler {
public:
    explicit NoiseSampler(NoiseSpec spec);
    void draw(Rng& rng, double* out) const;
    int dim() const { return spec_.dim(); }
    const NoiseSpec& spec() const { return spec_; }

private:
    NoiseSpec spec_;
    Matrix chol_;
};

enum class ProbMode { exact, mc };

// P(Z in A) for Z ~ N(0, I_d). Exact mode supports half-spaces
// (Phi(b)), centered balls (chi-square) and boxes (product of Phi
// differences); anything else throws CapabilityError.
Estimate gaussian_convex_prob(const ConvexBody& a, ProbMode mode, long reps = 0,
                              RandomSource source = {});

}  // namespace nclt
