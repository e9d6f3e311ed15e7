#include "nclt/bound_engine.hpp"

#include <algorithm>
#include <cmath>

#include "nclt/parallel.hpp"

namespace nclt {

std::string to_string(BoundFormula f) {
    switch (f) {
        case BoundFormula::thm21: return "thm21";
        case BoundFormula::cor22: return "cor22";
        case BoundFormula::cor23: return "cor23";
        case BoundFormula::prop41: return "prop41";
    }
    return "?";
}

nlohmann::json BoundReport::to_json() const {
    nlohmann::json j;
    j["formula"] = to_string(formula);
    j["d"] = d;
    j["value"] = value;
    j["stderr"] = stderr_total;
    j["analytic"] = analytic;
    j["ingredients"] = {
        {"gamma", {{"value", ingredients.gamma.value}, {"stderr", ingredients.gamma.stderr_}}},
        {"wd", {{"value", ingredients.wd.value}, {"stderr", ingredients.wd.stderr_}}},
        {"loo", {{"value", ingredients.loo.value}, {"stderr", ingredients.loo.stderr_}}},
        {"oc", {{"value", ingredients.oc.value}, {"stderr", ingredients.oc.stderr_}}},
    };
    j["solver_slack"] = ingredients.solver_slack;
    if (formula == BoundFormula::cor23) j["sigma_floor"] = sigma_floor;
    return j;
}

namespace {
void check_terms(const CouplingTerms& t, int d) {
    if (d < 1) throw ValidationError("bound: d must be >= 1");
    auto bad = [](const Estimate& e) {
        return e.value < 0.0 || e.stderr_ < 0.0 || !std::isfinite(e.value);
    };
    if (bad(t.wd) || bad(t.loo) || bad(t.gamma) || bad(t.oc))
        throw ValidationError("bound: coupling terms must be finite and >= 0");
    if (t.oc.value > 1.0) throw ValidationError("bound: oc probability must be <= 1");
}
}  // namespace

BoundReport thm21_bound(const CouplingTerms& terms, int d) {
    check_terms(terms, d);
    const double sd = std::sqrt(static_cast<double>(d));
    BoundReport r;
    r.formula = BoundFormula::thm21;
    r.d = d;
    r.ingredients = terms;
    r.analytic = terms.analytic;
    r.value = 259.0 * sd * terms.gamma.value + 2.0 * terms.wd.value + 2.0 * terms.loo.value;
    r.stderr_total =
        259.0 * sd * terms.gamma.stderr_ + 2.0 * terms.wd.stderr_ + 2.0 * terms.loo.stderr_;
    return r;
}

BoundReport cor22_bound(const CouplingTerms& terms, int d) {
    BoundReport r = thm21_bound(terms, d);
    r.formula = BoundFormula::cor22;
    r.value += terms.oc.value;
    r.stderr_total += terms.oc.stderr_;
    return r;
}

BoundReport cor23_bound(const CouplingTerms& terms, int d, double sigma) {
    check_terms(terms, d);
    if (!(sigma > 0.0)) throw ValidationError("cor23: sigma must be > 0");
    const double sd = std::sqrt(static_cast<double>(d));
    const double s32 = std::pow(sigma, -1.5);
    const double s1 = 1.0 / sigma;
    BoundReport r;
    r.formula = BoundFormula::cor23;
    r.d = d;
    r.sigma_floor = sigma;
    r.ingredients = terms;
    r.analytic = terms.analytic;
    r.value = 259.0 * s32 * sd * terms.gamma.value + 2.0 * s1 * terms.wd.value +
              2.0 * s1 * terms.loo.value;
    r.stderr_total = 259.0 * s32 * sd * terms.gamma.stderr_ + 2.0 * s1 * terms.wd.stderr_ +
                     2.0 * s1 * terms.loo.stderr_;
    return r;
}

BoundReport prop41_bound(const CouplingTerms& terms, int d) {
    check_terms(terms, d);
    const double sd = std::sqrt(static_cast<double>(d));
    BoundReport r;
    r.formula = BoundFormula::prop41;
    r.d = d;
    r.ingredients = terms;
    r.analytic = terms.analytic;
    r.value = 19.0 * sd * terms.gamma.value + 2.0 * terms.wd.value + 2.0 * terms.loo.value;
    r.stderr_total =
        19.0 * sd * terms.gamma.stderr_ + 2.0 * terms.wd.stderr_ + 2.0 * terms.loo.stderr_;
    return r;
}

double prop41_constant_eps(double gamma, int d, double eps) {
    if (gamma < 0.0 || eps < 0.0) throw ValidationError("prop41: gamma and eps must be >= 0");
    if (d < 1) throw ValidationError("prop41: d must be >= 1");
    const double sd = std::sqrt(static_cast<double>(d));
    return 2.0 * sd * eps + 19.0 * sd * gamma;
}

CouplingEstimate estimate_coupling(const CouplingOptions& opts, RandomSource base,
                                   const ReplicationFn& generate) {
    if (opts.replications < 1) throw ValidationError("estimate_coupling: replications >= 1");
    const long reps = opts.replications;
    std::vector<CouplingSample> slots(static_cast<std::size_t>(reps));

    par::parallel_for(reps, [&](std::int64_t r) {
        RandomSource src{base.seed, base.stream + static_cast<std::uint64_t>(r)};
        slots[static_cast<std::size_t>(r)] = generate(r, src);
    });

    // Fixed-order reduction: identical output for any thread count.
    CouplingEstimate out;
    double swd = 0, sloo = 0, soc = 0, sg = 0;
    double max_slack = 0.0;
    long used = 0;
    for (const auto& s : slots) {
        if (!s.valid) continue;
        swd += s.wd;
        sloo += s.loo;
        soc += s.oc;
        sg += s.gamma3;
        max_slack = std::max(max_slack, s.slack);
        ++used;
    }
    if (used == 0) throw Error("estimate_coupling: every replication failed");
    const double n = static_cast<double>(used);
    CouplingTerms t;
    t.wd.value = swd / n;
    t.loo.value = sloo / n;
    t.oc.value = soc / n;
    t.gamma.value = sg / n;
    double vwd = 0, vloo = 0, voc = 0, vg = 0;
    for (const auto& s : slots) {
        if (!s.valid) continue;
        vwd += (s.wd - t.wd.value) * (s.wd - t.wd.value);
        vloo += (s.loo - t.loo.value) * (s.loo - t.loo.value);
        voc += (s.oc - t.oc.value) * (s.oc - t.oc.value);
        vg += (s.gamma3 - t.gamma.value) * (s.gamma3 - t.gamma.value);
    }
    const double denom = used > 1 ? n * (n - 1.0) : n;
    t.wd.stderr_ = std::sqrt(vwd / denom);
    t.loo.stderr_ = std::sqrt(vloo / denom);
    t.oc.stderr_ = std::sqrt(voc / denom);
    t.gamma.stderr_ = std::sqrt(vg / denom);
    t.solver_slack = max_slack;
    t.analytic = false;
    out.terms = t;
    out.replications_used = used;
    out.replications_failed = reps - used;
    return out;
}

std::vector<long> loo_subsample(long n, int k, Rng& rng) {
    if (n < 1) throw ValidationError("loo_subsample: n must be >= 1");
    k = static_cast<int>(std::min<long>(k, n));
    // Floyd's algorithm for a uniform k-subset.
    std::vector<long> chosen;
    chosen.reserve(k);
    for (long j = n - k; j < n; ++j) {
        long t = static_cast<long>(rng.below(static_cast<std::uint64_t>(j + 1)));
        if (std::find(chosen.begin(), chosen.end(), t) == chosen.end())
            chosen.push_back(t);
        else
            chosen.push_back(j);
    }
    std::sort(chosen.begin(), chosen.end());
    return chosen;
}

}  // namespace nclt
