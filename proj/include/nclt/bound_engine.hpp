#pragma once

#include <functional>
#include <string>
#include <vector>

#include "nclt/rng.hpp"
#include "nclt/stats_core.hpp"

#include "json.hpp"

namespace nclt {

// Monte Carlo estimates of the expectation terms entering the bounds.
//   wd    E{ ||W|| * Delta }            (Delta1 + Delta2 for prop41)
//   loo   sum_i E{ ||xi_i|| |Delta - Delta^(i)| }   (both j for prop41)
//   oc    P(O^c), zero when no truncation event is used
//   gamma sum_i E ||xi_i||^3
struct CouplingTerms {
    Estimate wd;
    Estimate loo;
    Estimate oc;
    Estimate gamma;
    // true when every ingredient is closed form rather than MC-estimated
    bool analytic = false;
    // solver tolerance folded into Delta wherever Delta >= ||D|| only
    // holds up to optimization error; reported, never hidden
    double solver_slack = 0.0;
};

enum class BoundFormula { thm21, cor22, cor23, prop41 };

std::string to_string(BoundFormula f);

struct BoundReport {
    BoundFormula formula = BoundFormula::thm21;
    int d = 0;
    double value = 0.0;
    // conservative linear propagation of the ingredient stderrs
    double stderr_total = 0.0;
    CouplingTerms ingredients;
    double sigma_floor = 1.0;  // cor23 only
    bool analytic = false;

    nlohmann::json to_json() const;
};

// 259 sqrt(d) gamma + 2 E{||W|| Delta} + 2 sum_i E{||xi_i|| |Delta - Delta^(i)|}
BoundReport thm21_bound(const CouplingTerms& terms, int d);

// thm21 + P(O^c)
BoundReport cor22_bound(const CouplingTerms& terms, int d);

// 259 sigma^{-3/2} sqrt(d) gamma + 2 sigma^{-1} (wd + loo), sigma > 0
BoundReport cor23_bound(const CouplingTerms& terms, int d, double sigma);

// 19 sqrt(d) gamma + 2 E{||W||(D1+D2)} + 2 sum_i sum_j E{||xi_i|| |Dj - Dj^(i)|}
BoundReport prop41_bound(const CouplingTerms& terms, int d);

// Constant-epsilon shell bound 2 sqrt(d) eps + 19 sqrt(d) gamma.
double prop41_constant_eps(double gamma, int d, double eps);

// ---- Replication averaging --------------------------------------------------
//
// The caller supplies a generator that runs one replication and returns
// the per-replication values below; the engine averages them into
// CouplingTerms. Replications run in parallel but accumulate into
// index-addressed slots, so results do not depend on the thread count.

struct CouplingSample {
    double wd = 0.0;       // ||W|| * Delta for this replication
    double loo = 0.0;      // unbiased estimate of sum_i ||xi_i|| |Delta - Delta^(i)|
    double oc = 0.0;       // indicator of O^c
    double gamma3 = 0.0;   // sum_i ||xi_i||^3
    double slack = 0.0;    // solver slack for this replication
    bool valid = true;     // false drops the replication (counted)
};

struct CouplingOptions {
    long replications = 1000;
    // Leave-one-out indices probed per replication; the generator scales
    // its partial sum by n/k to stay unbiased. k = min(n, 64) by default.
    int loo_subsample = 64;
};

using ReplicationFn = std::function<CouplingSample(long rep, RandomSource rep_source)>;

struct CouplingEstimate {
    CouplingTerms terms;
    long replications_used = 0;
    long replications_failed = 0;
};

// Replication r uses stream base.stream + r.
CouplingEstimate estimate_coupling(const CouplingOptions& opts, RandomSource base,
                                   const ReplicationFn& generate);

// k distinct indices uniform over [0, n), in increasing order.
std::vector<long> loo_subsample(long n, int k, Rng& rng);

}  // namespace nclt
