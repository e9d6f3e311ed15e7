#include "nclt/stats_core.hpp"

#include <cmath>

#include "nclt/parallel.hpp"
#include "nclt/special.hpp"

namespace nclt {

NoiseFamily noise_family_from_string(const std::string& s) {
    if (s == "gaussian") return NoiseFamily::gaussian;
    if (s == "rademacher") return NoiseFamily::rademacher;
    if (s == "uniform_sphere") return NoiseFamily::uniform_sphere;
    if (s == "sub_exponential") return NoiseFamily::sub_exponential;
    throw ValidationError("unknown noise family: " + s);
}

std::string to_string(NoiseFamily f) {
    switch (f) {
        case NoiseFamily::gaussian: return "gaussian";
        case NoiseFamily::rademacher: return "rademacher";
        case NoiseFamily::uniform_sphere: return "uniform_sphere";
        case NoiseFamily::sub_exponential: return "sub_exponential";
    }
    return "?";
}

SymMatrix NoiseSpec::effective_covariance() const {
    SymMatrix c = covariance;
    for (auto& v : c.a) v *= scale * scale;
    return c;
}

void NoiseSpec::validate() const {
    if (covariance.dim < 1) throw ValidationError("noise covariance missing");
    if (!(scale > 0.0)) throw ValidationError("noise scale must be > 0");
    if (family == NoiseFamily::sub_exponential && !(rate > 0.0))
        throw ValidationError("sub_exponential rate must be > 0");
    if (lambda_min(covariance) <= 0.0)
        throw ValidationError("noise covariance must be SPD");
    if (family == NoiseFamily::uniform_sphere) {
        for (int i = 0; i < covariance.dim; ++i)
            for (int j = 0; j < covariance.dim; ++j)
                if (std::abs(covariance(i, j) - (i == j ? 1.0 : 0.0)) > 1e-12)
                    throw ValidationError(
                        "uniform_sphere does not support a covariance transform");
    }
}

nlohmann::json NoiseSpec::to_json() const {
    nlohmann::json j;
    j["family"] = to_string(family);
    j["scale"] = scale;
    j["covariance"] = covariance.a;
    j["dim"] = covariance.dim;
    if (family == NoiseFamily::sub_exponential) j["rate"] = rate;
    return j;
}

NoiseSpec NoiseSpec::from_json(const nlohmann::json& j) {
    NoiseSpec s;
    s.family = noise_family_from_string(j.at("family").get<std::string>());
    s.scale = j.value("scale", 1.0);
    int d = j.at("dim").get<int>();
    if (j.contains("covariance"))
        s.covariance = SymMatrix(d, j.at("covariance").get<std::vector<double>>());
    else
        s.covariance = SymMatrix::identity(d);
    s.rate = j.value("rate", 1.0);
    s.validate();
    return s;
}

InfluenceBatch standardize(const Rows& xi_raw) {
    if (xi_raw.n < 1 || xi_raw.d < 1) throw ValidationError("standardize: empty batch");
    const int d = xi_raw.d;
    SymMatrix s(d);
    for (long i = 0; i < xi_raw.n; ++i) {
        const double* r = xi_raw.row(i);
        for (int a = 0; a < d; ++a)
            for (int b = a; b < d; ++b) s(a, b) += r[a] * r[b];
    }
    for (int a = 0; a < d; ++a)
        for (int b = 0; b < a; ++b) s(a, b) = s(b, a);

    SymMatrix root = inv_sqrt_psd(s);  // throws SingularError when rank-deficient

    InfluenceBatch out;
    out.standardizer = root;
    out.xi = Rows(xi_raw.n, d);
    for (long i = 0; i < xi_raw.n; ++i) {
        const double* r = xi_raw.row(i);
        double* o = out.xi.row(i);
        for (int a = 0; a < d; ++a) {
            double v = 0.0;
            for (int b = 0; b < d; ++b) v += root(a, b) * r[b];
            o[a] = v;
        }
    }
    return out;
}

double gamma_third_moment(const InfluenceBatch& batch) {
    double g = 0.0;
    for (long i = 0; i < batch.xi.n; ++i) {
        double s2 = 0.0;
        const double* r = batch.xi.row(i);
        for (int a = 0; a < batch.xi.d; ++a) s2 += r[a] * r[a];
        g += s2 * std::sqrt(s2);
    }
    return g;
}

Estimate gamma_expected(const NoiseSpec& spec, long n, int reps, RandomSource source) {
    if (n < 1 || reps < 1) throw ValidationError("gamma_expected: n and reps must be >= 1");
    const int d = spec.dim();
    NoiseSampler sampler(spec);
    SymMatrix whiten = inv_sqrt_psd(spec.effective_covariance());
    const double inv_sqrt_n = 1.0 / std::sqrt(static_cast<double>(n));

    std::vector<double> per_rep(reps, 0.0);
    par::parallel_for(reps, [&](std::int64_t r) {
        Rng rng(source.child(static_cast<std::uint64_t>(r)));
        std::vector<double> x(d), w(d);
        double g = 0.0;
        for (long i = 0; i < n; ++i) {
            sampler.draw(rng, x.data());
            double s2 = 0.0;
            for (int a = 0; a < d; ++a) {
                double v = 0.0;
                for (int b = 0; b < d; ++b) v += whiten(a, b) * x[b];
                w[a] = v * inv_sqrt_n;
                s2 += w[a] * w[a];
            }
            g += s2 * std::sqrt(s2);
        }
        per_rep[static_cast<std::size_t>(r)] = g;
    });

    double mean = 0.0;
    for (double v : per_rep) mean += v;
    mean /= reps;
    double var = 0.0;
    for (double v : per_rep) var += (v - mean) * (v - mean);
    var = reps > 1 ? var / (reps - 1) : 0.0;
    return {mean, std::sqrt(var / reps)};
}

NoiseSampler::NoiseSampler(NoiseSpec spec) : spec_(std::move(spec)) {
    spec_.validate();
    chol_ = cholesky(spec_.covariance, 0.0);
}

void NoiseSampler::draw(Rng& rng, double* out) const {
    const int d = spec_.dim();
    switch (spec_.family) {
        case NoiseFamily::gaussian:
            for (int a = 0; a < d; ++a) out[a] = rng.gaussian();
            break;
        case NoiseFamily::rademacher:
            for (int a = 0; a < d; ++a) out[a] = rng.rademacher();
            break;
        case NoiseFamily::uniform_sphere: {
            double n2 = 0.0;
            do {
                n2 = 0.0;
                for (int a = 0; a < d; ++a) {
                    out[a] = rng.gaussian();
                    n2 += out[a] * out[a];
                }
            } while (n2 == 0.0);
            double f = spec_.scale / std::sqrt(n2);
            for (int a = 0; a < d; ++a) out[a] *= f;
            return;  // no covariance transform, norm is exactly scale
        }
        case NoiseFamily::sub_exponential: {
            // Two-sided exponential standardized to unit variance; the
            // standardized shape does not depend on the nominal rate.
            const double inv_sqrt2 = 0.70710678118654752440;
            for (int a = 0; a < d; ++a)
                out[a] = rng.rademacher() * rng.exponential() * inv_sqrt2;
            break;
        }
    }
    // Correlate and scale in place: out <- scale * L out (L lower
    // triangular, so walk rows from the bottom).
    for (int i = d - 1; i >= 0; --i) {
        double v = 0.0;
        for (int j = 0; j <= i; ++j) v += chol_(i, j) * out[j];
        out[i] = spec_.scale * v;
    }
}

Rows sample(const NoiseSpec& spec, long n, int d, RandomSource source) {
    if (d != spec.dim()) throw ValidationError("sample: d does not match the spec covariance");
    NoiseSampler sampler(spec);
    Rows rows(n, d);
    Rng rng(source);
    for (long i = 0; i < n; ++i) sampler.draw(rng, rows.row(i));
    return rows;
}

Estimate gaussian_convex_prob(const ConvexBody& a, ProbMode mode, long reps,
                              RandomSource source) {
    if (a.is_empty()) return {0.0, 0.0};
    const int d = a.dim();
    if (mode == ProbMode::exact) {
        if (const auto* h = std::get_if<HalfSpace>(&a.raw()))
            return {std_normal_cdf(h->offset), 0.0};
        if (const auto* b = std::get_if<Ball>(&a.raw())) {
            if (norm(b->center) > 1e-14)
                throw CapabilityError("exact gaussian probability needs a centered ball");
            return {chi_square_cdf(b->radius * b->radius, d), 0.0};
        }
        if (const auto* b = std::get_if<Box>(&a.raw())) {
            double p = 1.0;
            for (int i = 0; i < d; ++i)
                p *= std_normal_cdf(b->upper[i]) - std_normal_cdf(b->lower[i]);
            return {p, 0.0};
        }
        throw CapabilityError("exact gaussian probability unsupported for " + a.describe());
    }
    if (reps < 1) throw ValidationError("gaussian_convex_prob: mc mode needs reps >= 1");
    Rng rng(source);
    Vec x(d);
    long hits = 0;
    for (long r = 0; r < reps; ++r) {
        for (int i = 0; i < d; ++i) x[i] = rng.gaussian();
        if (a.contains(x)) ++hits;
    }
    double p = static_cast<double>(hits) / static_cast<double>(reps);
    return {p, std::sqrt(p * (1.0 - p) / static_cast<double>(reps))};
}

}  // namespace nclt
