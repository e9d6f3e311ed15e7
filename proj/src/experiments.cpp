#include "nclt/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <set>
#include <sstream>

#include "nclt/parallel.hpp"
#include "nclt/special.hpp"

namespace nclt {

namespace {

void check_keys(const nlohmann::json& j, const std::set<std::string>& allowed,
                const std::string& context) {
    if (!j.is_object()) throw ValidationError("config: " + context + " must be an object");
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!allowed.count(it.key()))
            throw ValidationError("config: unknown key '" + it.key() + "' in " + context);
}

DataSpec data_spec_from_json(const nlohmann::json& j) {
    check_keys(j, {"family", "scale", "p"}, "data");
    DataSpec ds;
    const std::string fam = j.value("family", std::string("gaussian"));
    if (fam == "gaussian")
        ds.family = DataSpec::Family::gaussian;
    else if (fam == "laplace")
        ds.family = DataSpec::Family::laplace;
    else if (fam == "two_point")
        ds.family = DataSpec::Family::two_point;
    else
        throw ValidationError("config: unknown data family '" + fam + "'");
    ds.scale = j.at("scale").get<Vec>();
    ds.p = j.value("p", 0.1);
    ds.validate();
    return ds;
}

}  // namespace

EstimationModel model_from_json(const nlohmann::json& j) {
    check_keys(j, {"kind", "theta_star", "kappa", "data"}, "model");
    const std::string kind = j.at("kind").get<std::string>();
    Vec theta_star = j.at("theta_star").get<Vec>();
    DataSpec data = data_spec_from_json(j.at("data"));
    if (kind == "quadratic") return quadratic_location(theta_star, data);
    if (kind == "huber") return huber_location(theta_star, j.value("kappa", 1.0), data);
    if (kind == "linear_score") return linear_score(theta_star, data);
    if (kind == "huber_score") return huber_score(theta_star, j.value("kappa", 1.0), data);
    throw ValidationError("config: unknown model kind '" + kind + "'");
}

SgdProblem problem_from_json(const nlohmann::json& j) {
    check_keys(j,
               {"kind", "d", "mu", "c", "noise_scale", "noise", "theta_star",
                "init_offset", "init_gaussian_scale", "multiplicative_c"},
               "problem");
    const std::string kind = j.at("kind").get<std::string>();
    const int d = j.at("d").get<int>();
    Vec theta_star = j.contains("theta_star") ? j.at("theta_star").get<Vec>() : Vec(d, 0.0);
    if (static_cast<int>(theta_star.size()) != d)
        throw ValidationError("config: problem theta_star dim mismatch");
    const double noise_scale = j.value("noise_scale", 1.0);
    SgdProblem p;
    if (kind == "quadratic") {
        p = quadratic_problem(d, j.value("mu", 1.0), theta_star, noise_scale);
    } else if (kind == "log_cosh") {
        p = log_cosh_problem(d, j.value("c", 1.0), j.value("mu", 1.0), theta_star,
                             noise_scale);
    } else {
        throw ValidationError("config: unknown problem kind '" + kind + "'");
    }
    if (j.contains("noise")) {  // full NoiseSpec block overrides noise_scale
        p.noise = NoiseSpec::from_json(j.at("noise"));
        if (p.noise.dim() != d) throw ValidationError("config: noise dim mismatch");
    }
    if (j.contains("init_offset")) {
        p.init_offset = j.at("init_offset").get<Vec>();
        if (static_cast<int>(p.init_offset.size()) != d)
            throw ValidationError("config: init_offset dim mismatch");
    }
    p.init_gaussian_scale = j.value("init_gaussian_scale", 0.0);
    const double cm = j.value("multiplicative_c", 0.0);
    if (cm > 0.0) add_multiplicative_noise(p, cm);
    return p;
}

TestFamily::Params family_params_from_json(const nlohmann::json& j) {
    check_keys(j, {"halfspace_directions", "offsets", "balls", "boxes", "box_seed"},
               "family");
    TestFamily::Params fp;
    fp.halfspace_directions = j.value("halfspace_directions", 64);
    fp.offsets_per_direction = j.value("offsets", 21);
    fp.centered_balls = j.value("balls", 21);
    fp.random_boxes = j.value("boxes", 32);
    fp.box_seed = j.value("box_seed", 7ull);
    return fp;
}

// ---- bound / distance points ---------------------------------------------------

double identity_solve_tol(const EstimationModel& model, long n) {
    SigmaVEstimate sv = estimate_sigma_v(model);
    double snorm = spectral_norm(inv_sqrt_psd(sv.sigma));
    return std::min(1e-12,
                    1e-11 / (std::sqrt(static_cast<double>(n)) * std::max(snorm, 1e-6)));
}

BoundPoint run_bound_point(const EstimationModel& model, long n, long replications,
                           int loo_subsample_k, const TestFamily& family, RandomSource src,
                           double solve_tol, bool collect_raw) {
    if (solve_tol <= 0.0) solve_tol = identity_solve_tol(model, n);
    const int d = model.dim;
    Rows t_samples(replications, d);
    std::vector<double> residuals(static_cast<std::size_t>(replications), 0.0);
    std::vector<char> valid(static_cast<std::size_t>(replications), 1);
    std::vector<CouplingSample> sample_slots(
        collect_raw ? static_cast<std::size_t>(replications) : 0);

    CouplingOptions copts;
    copts.replications = replications;
    copts.loo_subsample = loo_subsample_k;

    auto gen = [&](long rep, RandomSource rep_src) -> CouplingSample {
        CouplingSample out;
        try {
            Rng rng(rep_src);
            Rows data = sample_data(model.data, model.data_center, n, rng);
            SolveDiagnostics diag;
            Vec theta_hat = solve(model, data, model.true_theta, solve_tol, &diag);
            DecompositionResult dec = decompose(model, data, theta_hat, diag);

            std::vector<long> idx = loo_subsample(n, loo_subsample_k, rng);
            Rows replacements(static_cast<long>(idx.size()), d);
            for (long k = 0; k < replacements.n; ++k)
                sample_data_row(model.data, model.data_center, rng, replacements.row(k));
            LooResult loo = delta_loo(model, data, dec, idx, replacements, solve_tol);

            double loo_sum = 0.0;
            long loo_used = 0;
            for (std::size_t k = 0; k < idx.size(); ++k) {
                if (!std::isfinite(loo.delta_i[k])) continue;
                Vec xi = dec.xi_std.row_vec(idx[k]);
                loo_sum += norm(xi) * std::abs(dec.delta - loo.delta_i[k]);
                ++loo_used;
            }
            if (loo_used == 0) throw Error("all leave-one-out re-solves failed");
            out.loo = loo_sum * static_cast<double>(n) / static_cast<double>(loo_used);
            out.wd = norm(dec.w_stat) * dec.delta;
            out.gamma3 = dec.gamma3;
            out.oc = norm(theta_hat - model.true_theta) > model.delta_n(n) ? 1.0 : 0.0;
            out.slack = dec.solver.grad_norm;
            residuals[static_cast<std::size_t>(rep)] = dec.identity_residual;
            std::copy(dec.t_stat.begin(), dec.t_stat.end(), t_samples.row(rep));
        } catch (const Error&) {
            out.valid = false;
            valid[static_cast<std::size_t>(rep)] = 0;
        }
        if (collect_raw) sample_slots[static_cast<std::size_t>(rep)] = out;
        return out;
    };

    CouplingEstimate ce = estimate_coupling(copts, src, gen);

    BoundPoint pt;
    pt.n = n;
    pt.d = d;
    pt.terms = ce.terms;
    pt.failed_replications = ce.replications_failed;
    pt.thm21 = thm21_bound(ce.terms, d);
    pt.cor22 = cor22_bound(ce.terms, d);
    for (double r : residuals) pt.max_identity_residual = std::max(pt.max_identity_residual, r);

    // compact valid T rows in replication order
    Rows compact(ce.replications_used, d);
    long row = 0;
    for (long r = 0; r < replications; ++r)
        if (valid[static_cast<std::size_t>(r)]) {
            std::copy(t_samples.row(r), t_samples.row(r) + d, compact.row(row));
            if (collect_raw) {
                pt.raw.push_back(sample_slots[static_cast<std::size_t>(r)]);
                pt.raw_rep_index.push_back(r);
            }
            ++row;
        }
    pt.distance = empirical_distance(compact, family);
    pt.t_samples = std::move(compact);
    return pt;
}

DistancePoint run_distance_point(const EstimationModel& model, long n, long replications,
                                 const TestFamily& family, RandomSource src,
                                 double solve_tol) {
    if (solve_tol <= 0.0) solve_tol = identity_solve_tol(model, n);
    const int d = model.dim;
    Rows t_samples(replications, d);
    std::vector<double> residuals(static_cast<std::size_t>(replications), 0.0);
    std::vector<char> valid(static_cast<std::size_t>(replications), 1);

    par::parallel_for(replications, [&](std::int64_t rep) {
        RandomSource rep_src{src.seed, src.stream + static_cast<std::uint64_t>(rep)};
        try {
            Rng rng(rep_src);
            Rows data = sample_data(model.data, model.data_center, n, rng);
            SolveDiagnostics diag;
            Vec theta_hat = solve(model, data, model.true_theta, solve_tol, &diag);
            DecompositionResult dec = decompose(model, data, theta_hat, diag);
            residuals[static_cast<std::size_t>(rep)] = dec.identity_residual;
            std::copy(dec.t_stat.begin(), dec.t_stat.end(), t_samples.row(rep));
        } catch (const Error&) {
            valid[static_cast<std::size_t>(rep)] = 0;
        }
    });

    long used = 0;
    for (char v : valid) used += v;
    if (used < 100) throw Error("run_distance_point: too many failed replications");
    Rows compact(used, d);
    long row = 0;
    for (long r = 0; r < replications; ++r)
        if (valid[static_cast<std::size_t>(r)]) {
            std::copy(t_samples.row(r), t_samples.row(r) + d, compact.row(row));
            ++row;
        }
    DistancePoint pt;
    pt.n = n;
    pt.distance = empirical_distance(compact, family);
    for (double r : residuals) pt.max_identity_residual = std::max(pt.max_identity_residual, r);
    pt.t_samples = std::move(compact);
    return pt;
}

Rows iid_standardized_w(const NoiseSpec& spec, long n, long reps, RandomSource src) {
    const int d = spec.dim();
    NoiseSampler sampler(spec);
    SymMatrix whiten = inv_sqrt_psd(spec.effective_covariance());
    const double inv_sqrt_n = 1.0 / std::sqrt(static_cast<double>(n));

    Rows w(reps, d);
    par::parallel_for(reps, [&](std::int64_t rep) {
        Rng rng(RandomSource{src.seed, src.stream + static_cast<std::uint64_t>(rep)});
        std::vector<double> x(d);
        double* out = w.row(rep);
        std::fill(out, out + d, 0.0);
        for (long i = 0; i < n; ++i) {
            sampler.draw(rng, x.data());
            for (int a = 0; a < d; ++a) {
                double v = 0.0;
                for (int b = 0; b < d; ++b) v += whiten(a, b) * x[b];
                out[a] += v * inv_sqrt_n;
            }
        }
    });
    return w;
}

double gamma_iid(const NoiseSpec& spec, long n, RandomSource src) {
    const int d = spec.dim();
    const double inv_sqrt_n = 1.0 / std::sqrt(static_cast<double>(n));
    bool identity_cov = true;
    for (int i = 0; i < d && identity_cov; ++i)
        for (int j = 0; j < d; ++j)
            if (std::abs(spec.covariance(i, j) - (i == j ? 1.0 : 0.0)) > 1e-14) {
                identity_cov = false;
                break;
            }
    if (identity_cov && spec.family == NoiseFamily::rademacher)
        return std::pow(static_cast<double>(d), 1.5) * inv_sqrt_n;
    if (identity_cov && spec.family == NoiseFamily::gaussian) {
        // E chi_d^3 = 2^{3/2} Gamma((d+3)/2) / Gamma(d/2)
        double m3 = std::exp(1.5 * std::log(2.0) + std::lgamma(0.5 * (d + 3)) -
                             std::lgamma(0.5 * d));
        return m3 * inv_sqrt_n;
    }
    return gamma_expected(spec, n, 2000, src).value;
}

// ---- config-driven runner -------------------------------------------------------

namespace {

std::vector<long> n_grid_from(const nlohmann::json& config) {
    auto grid = config.at("n_grid").get<std::vector<long>>();
    if (grid.empty()) throw ValidationError("config: n_grid must be non-empty");
    for (long n : grid)
        if (n < 1) throw ValidationError("config: n_grid entries must be >= 1");
    return grid;
}

std::optional<double> slope_row_from(const std::vector<std::pair<double, double>>& pts,
                                     ReportRow& row) {
    RateFit fit = rate_fit(pts);
    row.value = fit.slope;
    row.slope = fit.slope;
    std::ostringstream extra;
    extra << "r2=" << format_double(fit.r_squared);
    row.extra = extra.str();
    return fit.slope;
}

void run_bound_experiment(const nlohmann::json& config, std::uint64_t seed,
                          std::vector<ReportRow>& rows, nlohmann::json& summary,
                          std::vector<std::string>& raw, bool keep_raw) {
    EstimationModel model = model_from_json(config.at("model"));
    const long reps = config.value("replications", 1000L);
    const int loo_k = config.value("loo_subsample", 64);
    TestFamily family = TestFamily::make(
        model.dim, config.contains("family") ? family_params_from_json(config.at("family"))
                                             : TestFamily::Params{});
    auto grid = n_grid_from(config);
    auto points = nlohmann::json::array();
    if (keep_raw) raw.push_back("point,n,rep,wd,loo,oc,gamma3,t...");
    for (std::size_t pi = 0; pi < grid.size(); ++pi) {
        RandomSource src = RandomSource{seed, 0}.child(pi);
        BoundPoint pt =
            run_bound_point(model, grid[pi], reps, loo_k, family, src, 0.0, keep_raw);
        const int d = pt.d;
        if (keep_raw) {
            for (std::size_t k = 0; k < pt.raw.size(); ++k) {
                std::ostringstream os;
                os << pi << "," << pt.n << "," << pt.raw_rep_index[k] << ","
                   << format_double(pt.raw[k].wd) << "," << format_double(pt.raw[k].loo)
                   << "," << format_double(pt.raw[k].oc) << ","
                   << format_double(pt.raw[k].gamma3);
                for (int c = 0; c < d; ++c)
                    os << "," << format_double(pt.t_samples.row(static_cast<long>(k))[c]);
                raw.push_back(os.str());
            }
        }
        rows.push_back({"bound:gamma", pt.n, d, pt.terms.gamma.value, pt.terms.gamma.stderr_,
                        std::nullopt, ""});
        rows.push_back({"bound:thm21", pt.n, d, pt.thm21.value, pt.thm21.stderr_total,
                        std::nullopt, ""});
        rows.push_back({"bound:cor22", pt.n, d, pt.cor22.value, pt.cor22.stderr_total,
                        std::nullopt, ""});
        rows.push_back({"bound:distance", pt.n, d, pt.distance.value,
                        pt.distance.argmax_stderr, std::nullopt,
                        "argmax=" + pt.distance.argmax});
        double margin = pt.thm21.value + 3.0 * pt.thm21.stderr_total - pt.distance.value;
        rows.push_back({"bound:margin", pt.n, d, margin, 0.0, std::nullopt, ""});
        nlohmann::json jp;
        jp["n"] = pt.n;
        jp["thm21"] = pt.thm21.to_json();
        jp["cor22"] = pt.cor22.to_json();
        jp["distance"] = pt.distance.to_json();
        jp["max_identity_residual"] = pt.max_identity_residual;
        jp["failed_replications"] = pt.failed_replications;
        points.push_back(std::move(jp));
    }
    summary["points"] = std::move(points);
}

void run_distance_experiment(const nlohmann::json& config, std::uint64_t seed,
                             std::vector<ReportRow>& rows, nlohmann::json& summary,
                             std::vector<std::string>& raw, bool keep_raw) {
    EstimationModel model = model_from_json(config.at("model"));
    const long reps = config.value("replications", 10000L);
    TestFamily family = TestFamily::make(
        model.dim, config.contains("family") ? family_params_from_json(config.at("family"))
                                             : TestFamily::Params{});
    auto grid = n_grid_from(config);
    std::vector<std::pair<double, double>> pts;
    auto points = nlohmann::json::array();
    if (keep_raw) raw.push_back("point,n,rep,t...");
    for (std::size_t pi = 0; pi < grid.size(); ++pi) {
        RandomSource src = RandomSource{seed, 0}.child(pi);
        DistancePoint pt = run_distance_point(model, grid[pi], reps, family, src);
        rows.push_back({"distance:value", pt.n, model.dim, pt.distance.value,
                        pt.distance.argmax_stderr, std::nullopt,
                        "argmax=" + pt.distance.argmax});
        pts.push_back({static_cast<double>(pt.n), pt.distance.value});
        nlohmann::json jp;
        jp["n"] = pt.n;
        jp["distance"] = pt.distance.to_json();
        jp["max_identity_residual"] = pt.max_identity_residual;
        points.push_back(std::move(jp));
        if (keep_raw) {
            for (long r = 0; r < pt.t_samples.n; ++r) {
                std::ostringstream os;
                os << pi << "," << pt.n << "," << r;
                for (int c = 0; c < model.dim; ++c)
                    os << "," << format_double(pt.t_samples.row(r)[c]);
                raw.push_back(os.str());
            }
        }
    }
    if (pts.size() >= 3) {
        ReportRow slope{"distance:slope", 0, model.dim, 0.0, 0.0, std::nullopt, ""};
        slope_row_from(pts, slope);
        rows.push_back(slope);
        summary["slope"] = *rows.back().slope;
    }
    summary["points"] = std::move(points);
}

void run_mest_rates_experiment(const nlohmann::json& config, std::uint64_t seed,
                               std::vector<ReportRow>& rows, nlohmann::json& summary,
                               std::vector<std::string>& raw, bool keep_raw) {
    const int reps = static_cast<int>(config.value("replications", 2000L));
    auto grid = n_grid_from(config);

    // optional d sweep: the scalar model block is broadcast per dimension
    std::vector<int> d_grid;
    if (config.contains("d_grid")) d_grid = config.at("d_grid").get<std::vector<int>>();

    auto run_one = [&](const EstimationModel& model, const std::string& tag,
                       std::uint64_t stream) {
        std::vector<double> raw_p2, raw_p4;
        auto table = rate_probe_theta(model, grid, reps, RandomSource{seed, stream}, 1e-12,
                                      keep_raw ? &raw_p2 : nullptr,
                                      keep_raw ? &raw_p4 : nullptr);
        std::vector<std::pair<double, double>> p2, p4;
        for (std::size_t pi = 0; pi < table.size(); ++pi) {
            const auto& row = table[pi];
            rows.push_back({"mest_rates:p2", row.n, model.dim, row.mean_p2, row.se_p2,
                            std::nullopt, tag});
            rows.push_back({"mest_rates:p4", row.n, model.dim, row.mean_p4, row.se_p4,
                            std::nullopt, tag});
            p2.push_back({static_cast<double>(row.n), row.mean_p2});
            p4.push_back({static_cast<double>(row.n), row.mean_p4});
            if (keep_raw) {
                for (int r = 0; r < reps; ++r) {
                    std::ostringstream os;
                    os << model.dim << "," << row.n << "," << r << ","
                       << format_double(raw_p2[pi * reps + r]) << ","
                       << format_double(raw_p4[pi * reps + r]);
                    raw.push_back(os.str());
                }
            }
        }
        nlohmann::json out;
        if (table.size() >= 3) {
            ReportRow s2{"mest_rates:p2_slope", 0, model.dim, 0.0, 0.0, std::nullopt, tag};
            slope_row_from(p2, s2);
            s2.extra = tag;
            rows.push_back(s2);
            ReportRow s4{"mest_rates:p4_slope", 0, model.dim, 0.0, 0.0, std::nullopt, tag};
            slope_row_from(p4, s4);
            s4.extra = tag;
            rows.push_back(s4);
            out["p2_slope"] = *s2.slope;
            out["p4_slope"] = *s4.slope;
        }
        return out;
    };

    if (keep_raw) raw.push_back("d,n,rep,p2,p4");
    if (d_grid.empty()) {
        EstimationModel model = model_from_json(config.at("model"));
        summary.update(run_one(model, "", 0));
    } else {
        const auto& mj = config.at("model");
        auto per_d = nlohmann::json::array();
        for (std::size_t di = 0; di < d_grid.size(); ++di) {
            int d = d_grid[di];
            if (d < 1) throw ValidationError("config: d_grid entries must be >= 1");
            nlohmann::json scalar = mj;
            double th = mj.contains("theta_star") ? mj.at("theta_star")[0].get<double>()
                                                  : 0.0;
            double sc = mj.at("data").at("scale")[0].get<double>();
            scalar["theta_star"] = std::vector<double>(d, th);
            scalar["data"]["scale"] = std::vector<double>(d, sc);
            EstimationModel model = model_from_json(scalar);
            nlohmann::json one = run_one(model, "d=" + std::to_string(d), di);
            one["d"] = d;
            per_d.push_back(std::move(one));
        }
        summary["per_d"] = std::move(per_d);
    }
}

void run_asgd_rates_experiment(const nlohmann::json& config, std::uint64_t seed,
                               std::vector<ReportRow>& rows, nlohmann::json& summary,
                               std::vector<std::string>& raw, bool keep_raw) {
    SgdProblem problem = problem_from_json(config.at("problem"));
    const int reps = static_cast<int>(config.value("replications", 200L));
    auto grid = n_grid_from(config);
    const double ell0 = config.value("ell0", 1.0);
    std::vector<double> alphas;
    if (config.contains("alpha_grid"))
        alphas = config.at("alpha_grid").get<std::vector<double>>();
    else
        alphas = {config.value("alpha", 0.75)};

    if (keep_raw) raw.push_back("alpha,n,rep,m2,m4");
    auto alpha_summaries = nlohmann::json::array();
    for (std::size_t ai = 0; ai < alphas.size(); ++ai) {
        const double alpha = alphas[ai];
        if (!(alpha > 0.5 && alpha <= 1.0))
            throw ValidationError("config: alpha must be in (1/2, 1]");
        RandomSource src = RandomSource{seed, 0}.child(ai);
        std::vector<double> raw_m2, raw_m4;
        auto table = moment_probe(problem, ell0, alpha, grid, reps, src,
                                  keep_raw ? &raw_m2 : nullptr,
                                  keep_raw ? &raw_m4 : nullptr);
        std::ostringstream atag;
        atag << "alpha=" << format_double(alpha);
        std::vector<std::pair<double, double>> p2, p4;
        for (std::size_t pi = 0; pi < table.size(); ++pi) {
            const auto& row = table[pi];
            rows.push_back({"asgd:m2", row.n, problem.dim, row.m2, row.se2, std::nullopt,
                            atag.str()});
            rows.push_back({"asgd:m4", row.n, problem.dim, row.m4, row.se4, std::nullopt,
                            atag.str()});
            p2.push_back({static_cast<double>(row.n), row.m2});
            p4.push_back({static_cast<double>(row.n), row.m4});
            if (keep_raw) {
                for (int r = 0; r < reps; ++r) {
                    std::ostringstream os;
                    os << format_double(alpha) << "," << row.n << "," << r << ","
                       << format_double(raw_m2[pi * reps + r]) << ","
                       << format_double(raw_m4[pi * reps + r]);
                    raw.push_back(os.str());
                }
            }
        }
        nlohmann::json asum{{"alpha", alpha}};
        if (table.size() >= 3) {
            ReportRow s2{"asgd:m2_slope", 0, problem.dim, 0.0, 0.0, std::nullopt, atag.str()};
            slope_row_from(p2, s2);
            s2.extra = atag.str();
            rows.push_back(s2);
            ReportRow s4{"asgd:m4_slope", 0, problem.dim, 0.0, 0.0, std::nullopt, atag.str()};
            slope_row_from(p4, s4);
            s4.extra = atag.str();
            rows.push_back(s4);
            asum["m2_slope"] = *s2.slope;
            asum["m4_slope"] = *s4.slope;
        }
        alpha_summaries.push_back(std::move(asum));
    }
    summary["alphas"] = std::move(alpha_summaries);

    if (config.contains("coupling")) {
        const auto& cj = config.at("coupling");
        check_keys(cj, {"i", "j_grid", "replications", "alpha", "ell0"}, "coupling");
        const long i = cj.at("i").get<long>();
        auto j_grid = cj.at("j_grid").get<std::vector<long>>();
        const int creps = static_cast<int>(cj.value("replications", 2000L));
        const double calpha = cj.value("alpha", 0.75);
        const double cell0 = cj.value("ell0", ell0);
        long n_max = *std::max_element(j_grid.begin(), j_grid.end());
        Schedule sched{cell0, calpha, n_max};
        sched.validate();

        std::vector<double> acc(j_grid.size() * static_cast<std::size_t>(creps), 0.0);
        RandomSource src = RandomSource{seed, 0}.child(1000);
        par::parallel_for(creps, [&](std::int64_t r) {
            RandomSource rs{src.seed, src.stream + static_cast<std::uint64_t>(r)};
            SgdTrajectory traj = run(problem, sched, rs);
            Rows coupled = coupled_trajectory(traj, problem, i, rs.child(0xc0));
            for (std::size_t gi = 0; gi < j_grid.size(); ++gi) {
                const double* a = traj.thetas.row(j_grid[gi]);
                const double* b = coupled.row(j_grid[gi]);
                double s = 0.0;
                for (int t = 0; t < problem.dim; ++t) s += (a[t] - b[t]) * (a[t] - b[t]);
                acc[gi * creps + static_cast<std::size_t>(r)] = s;
            }
        });
        std::vector<std::pair<double, double>> pts;
        if (keep_raw) raw.push_back("coupling_j,rep,sq_dist");
        for (std::size_t gi = 0; gi < j_grid.size(); ++gi) {
            double mean = 0.0;
            for (int r = 0; r < creps; ++r) mean += acc[gi * creps + r];
            mean /= creps;
            double var = 0.0;
            for (int r = 0; r < creps; ++r)
                var += (acc[gi * creps + r] - mean) * (acc[gi * creps + r] - mean);
            double se = creps > 1 ? std::sqrt(var / (static_cast<double>(creps) * (creps - 1)))
                                  : 0.0;
            rows.push_back({"asgd:coupling", j_grid[gi], problem.dim, mean, se, std::nullopt,
                            "i=" + std::to_string(i)});
            pts.push_back({static_cast<double>(j_grid[gi]), mean});
            if (keep_raw) {
                for (int r = 0; r < creps; ++r) {
                    std::ostringstream os;
                    os << j_grid[gi] << "," << r << "," << format_double(acc[gi * creps + r]);
                    raw.push_back(os.str());
                }
            }
        }
        if (pts.size() >= 3) {
            ReportRow sc{"asgd:coupling_slope", 0, problem.dim, 0.0, 0.0, std::nullopt, ""};
            slope_row_from(pts, sc);
            rows.push_back(sc);
            summary["coupling_slope"] = *sc.slope;
        }
    }
}

void run_shell_experiment(const nlohmann::json& config, std::uint64_t seed,
                          std::vector<ReportRow>& rows, nlohmann::json& summary,
                          std::vector<std::string>& raw, bool keep_raw) {
    const auto& sj = config.at("shell");
    check_keys(sj, {"dims", "noise_families", "eps", "bodies", "n", "ball_radius"},
               "shell");
    auto dims = sj.value("dims", std::vector<int>{1, 2, 3});
    auto fams = sj.value("noise_families",
                         std::vector<std::string>{"gaussian", "rademacher"});
    auto eps_list = sj.value("eps", std::vector<double>{0.05, 0.1});
    auto bodies = sj.value("bodies", std::vector<std::string>{"ball", "half_space"});
    const long n = sj.value("n", 500L);
    const double ball_radius = sj.value("ball_radius", 1.0);
    const long reps = config.value("replications", 200000L);

    if (keep_raw) raw.push_back("d,family,rep,w...");
    auto points = nlohmann::json::array();
    std::size_t combo = 0;
    for (int d : dims) {
        for (const auto& fam : fams) {
            NoiseSpec spec;
            spec.family = noise_family_from_string(fam);
            spec.scale = 1.0;
            spec.covariance = SymMatrix::identity(d);
            RandomSource src = RandomSource{seed, 0}.child(combo++);
            Rows w = iid_standardized_w(spec, n, reps, src);
            double gamma = gamma_iid(spec, n, src.child(99));
            if (keep_raw) {
                for (long r = 0; r < reps; ++r) {
                    std::ostringstream os;
                    os << d << "," << fam << "," << r;
                    for (int c = 0; c < d; ++c) os << "," << format_double(w.row(r)[c]);
                    raw.push_back(os.str());
                }
            }
            for (const auto& body_name : bodies) {
                ConvexBody body = body_name == "ball"
                                      ? ConvexBody::ball(Vec(d, 0.0), ball_radius)
                                      : ConvexBody::half_space(
                                            [&] {
                                                Vec u(d, 0.0);
                                                u[0] = 1.0;
                                                return u;
                                            }(),
                                            0.0);
                if (body.inradius() <= gamma) continue;  // proposition precondition
                for (double eps : eps_list) {
                    double freq = shell_event_probability(w, body, gamma, eps, 0.0);
                    double bound = prop41_constant_eps(gamma, d, eps);
                    double se = std::sqrt(freq * (1.0 - freq) / static_cast<double>(reps));
                    std::ostringstream extra;
                    extra << "family=" << fam << ";body=" << body_name
                          << ";eps=" << format_double(eps)
                          << ";bound=" << format_double(bound);
                    rows.push_back({"shell:freq", n, d, freq, se, std::nullopt, extra.str()});
                    rows.push_back({"shell:margin", n, d, bound + 3.0 * se - freq, 0.0,
                                    std::nullopt, extra.str()});
                    nlohmann::json jp{{"d", d},       {"family", fam}, {"body", body_name},
                                      {"eps", eps},   {"freq", freq},  {"bound", bound},
                                      {"gamma", gamma}};
                    points.push_back(std::move(jp));
                }
            }
        }
    }
    summary["points"] = std::move(points);
}

}  // namespace

RunResult run_experiment(const std::string& experiment, const nlohmann::json& config,
                         const RunOptions& opts) {
    check_keys(config,
               {"experiment", "seed", "replications", "n_grid", "d_grid", "model",
                "problem", "family", "shell", "alpha_grid", "alpha", "ell0",
                "loo_subsample", "coupling", "out_prefix"},
               "config");
    const std::string cfg_exp = config.at("experiment").get<std::string>();
    if (cfg_exp != experiment)
        throw ValidationError("config: experiment '" + cfg_exp +
                              "' does not match the requested '" + experiment + "'");

    std::uint64_t seed = config.value("seed", 0ull);
    if (const char* env = std::getenv("NCLT_SEED")) seed = std::strtoull(env, nullptr, 10);
    if (opts.has_seed_override) seed = opts.seed_override;

    if (opts.jobs > 0) par::set_threads(opts.jobs);

    RunResult result;
    result.summary["experiment"] = experiment;
    result.summary["seed"] = seed;
    std::vector<std::string> raw;

    if (experiment == "bound")
        run_bound_experiment(config, seed, result.rows, result.summary, raw, opts.keep_raw);
    else if (experiment == "distance")
        run_distance_experiment(config, seed, result.rows, result.summary, raw,
                                opts.keep_raw);
    else if (experiment == "mest_rates")
        run_mest_rates_experiment(config, seed, result.rows, result.summary, raw,
                                  opts.keep_raw);
    else if (experiment == "asgd_rates")
        run_asgd_rates_experiment(config, seed, result.rows, result.summary, raw,
                                  opts.keep_raw);
    else if (experiment == "shell_check")
        run_shell_experiment(config, seed, result.rows, result.summary, raw, opts.keep_raw);
    else
        throw ValidationError("unknown experiment '" + experiment + "'");

    const std::string prefix = config.value("out_prefix", experiment);
    std::filesystem::create_directories(opts.out_dir);
    result.csv_path = opts.out_dir + "/" + prefix + ".csv";
    result.summary_path = opts.out_dir + "/" + prefix + "_summary.json";
    write_csv(result.csv_path, result.rows);
    result.summary["rows"] = rows_to_json(result.rows);
    write_text(result.summary_path, result.summary.dump(2) + "\n");
    if (opts.keep_raw) {
        std::string raw_text;
        for (const auto& line : raw) {
            raw_text += line;
            raw_text += '\n';
        }
        write_text(opts.out_dir + "/" + prefix + "_raw.csv", raw_text);
    }
    return result;
}

std::vector<std::string> validate_conditions(const nlohmann::json& config) {
    std::vector<std::string> lines;
    auto pass = [&](const std::string& what) { lines.push_back("pass: " + what); };
    auto warn = [&](const std::string& what) { lines.push_back("warn: " + what); };

    if (config.contains("model")) {
        EstimationModel model = model_from_json(config.at("model"));
        Rng rng(RandomSource{0xc0deu, 0});
        Rows data = sample_data(model.data, model.data_center, 2000, rng);
        SigmaVEstimate sv = estimate_sigma_v(model, &data);
        if (sv.sigma_lambda_min >= model.constants.lambda_sigma - 1e-9)
            pass("lambda_min(Sigma) = " + format_double(sv.sigma_lambda_min) +
                 " >= declared " + format_double(model.constants.lambda_sigma));
        else
            warn("lambda_min(Sigma) = " + format_double(sv.sigma_lambda_min) +
                 " below declared " + format_double(model.constants.lambda_sigma));
        if (sv.v_lambda_min >= model.constants.lambda_v - 1e-9)
            pass("lambda_min(V) = " + format_double(sv.v_lambda_min) + " >= declared " +
                 format_double(model.constants.lambda_v));
        else
            warn("lambda_min(V) = " + format_double(sv.v_lambda_min) + " below declared " +
                 format_double(model.constants.lambda_v));

        // gradient check: mdot vs central differences of m
        if (model.kind == ModelKind::m_smooth) {
            double worst = 0.0;
            Vec g(model.dim), th(model.dim);
            for (int probe = 0; probe < 32; ++probe) {
                const double* x = data.row(probe);
                for (int j = 0; j < model.dim; ++j)
                    th[j] = model.true_theta[j] + 0.5 * rng.gaussian();
                model.mdot(th, x, g.data());
                for (int j = 0; j < model.dim; ++j) {
                    Vec tp = th, tm = th;
                    tp[j] += 1e-5;
                    tm[j] -= 1e-5;
                    double fd = (model.m(tp, x) - model.m(tm, x)) / 2e-5;
                    worst = std::max(worst, std::abs(fd - g[j]) / (1.0 + std::abs(g[j])));
                }
            }
            if (worst <= 1e-6)
                pass("mdot matches finite differences (max rel err " + format_double(worst) +
                     ")");
            else
                warn("mdot deviates from finite differences by " + format_double(worst));
        }
    }

    if (config.contains("problem")) {
        SgdProblem problem = problem_from_json(config.at("problem"));
        Rng rng(RandomSource{0xc0deu, 1});
        // hessian eigenvalue range via finite differences of grad_f
        double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
        for (int probe = 0; probe < 16; ++probe) {
            Vec th(problem.dim);
            for (int j = 0; j < problem.dim; ++j)
                th[j] = problem.theta_star[j] + rng.gaussian();
            SymMatrix hess(problem.dim);
            for (int j = 0; j < problem.dim; ++j) {
                Vec tp = th, tm = th;
                tp[j] += 1e-5;
                tm[j] -= 1e-5;
                Vec gp = problem.grad_f(tp), gm = problem.grad_f(tm);
                for (int i = 0; i < problem.dim; ++i)
                    hess(i, j) = (gp[i] - gm[i]) / 2e-5;
            }
            for (int i = 0; i < problem.dim; ++i)
                for (int j = 0; j < i; ++j) {
                    double v = 0.5 * (hess(i, j) + hess(j, i));
                    hess(i, j) = v;
                    hess(j, i) = v;
                }
            lo = std::min(lo, lambda_min(hess));
            hi = std::max(hi, lambda_max(hess));
        }
        if (lo >= problem.mu - 1e-6 && hi <= problem.L + 1e-6)
            pass("hessian range [" + format_double(lo) + ", " + format_double(hi) +
                 "] within declared [mu, L]");
        else
            warn("hessian range [" + format_double(lo) + ", " + format_double(hi) +
                 "] violates declared [mu, L] = [" + format_double(problem.mu) + ", " +
                 format_double(problem.L) + "]");

        if (problem.g) {
            NoiseSampler sampler(problem.noise);
            Vec xi(problem.dim), out(problem.dim);
            double gstar = 0.0, lip = 0.0;
            for (int probe = 0; probe < 1000; ++probe) {
                sampler.draw(rng, xi.data());
                problem.g(problem.theta_star, xi.data(), out.data());
                gstar = std::max(gstar, norm(out));
                Vec th1(problem.dim), th2(problem.dim);
                for (int j = 0; j < problem.dim; ++j) {
                    th1[j] = problem.theta_star[j] + rng.gaussian();
                    th2[j] = problem.theta_star[j] + rng.gaussian();
                }
                Vec o1(problem.dim), o2(problem.dim);
                problem.g(th1, xi.data(), o1.data());
                problem.g(th2, xi.data(), o2.data());
                double dn = norm(th1 - th2);
                if (dn > 1e-12) lip = std::max(lip, norm(o1 - o2) / dn);
            }
            if (gstar <= 1e-12)
                pass("g(theta*, xi) = 0 on samples");
            else
                warn("g(theta*, xi) reaches norm " + format_double(gstar));
            if (lip <= problem.c1 + 1e-9)
                pass("g Lipschitz probe " + format_double(lip) + " <= declared c1 = " +
                     format_double(problem.c1));
            else
                warn("g Lipschitz probe " + format_double(lip) + " exceeds declared c1 = " +
                     format_double(problem.c1));
        } else {
            pass("g == 0 (no multiplicative noise)");
        }
    }

    if (!config.contains("model") && !config.contains("problem"))
        warn("config has neither model nor problem block; nothing to validate");
    return lines;
}

}  // namespace nclt
