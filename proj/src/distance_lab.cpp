#include "nclt/distance_lab.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "nclt/parallel.hpp"
#include "nclt/special.hpp"

namespace nclt {

bool TestBody::contains(const double* x, int d) const {
    switch (kind) {
        case Kind::half_space: {
            double s = 0.0;
            for (int i = 0; i < d; ++i) s += dir[i] * x[i];
            return s <= offset;
        }
        case Kind::ball: {
            double s = 0.0;
            for (int i = 0; i < d; ++i) s += x[i] * x[i];
            return s <= radius * radius;
        }
        case Kind::rotated_box: {
            for (int i = 0; i < d; ++i) {
                double y = 0.0;
                for (int k = 0; k < d; ++k) y += rot(k, i) * x[k];
                if (y < lower[i] || y > upper[i]) return false;
            }
            return true;
        }
    }
    return false;
}

std::string TestBody::describe() const {
    std::ostringstream os;
    switch (kind) {
        case Kind::half_space: {
            os << "half_space(offset=" << offset << ", dir=[";
            for (std::size_t i = 0; i < dir.size(); ++i) os << (i ? ";" : "") << dir[i];
            os << "])";
            break;
        }
        case Kind::ball:
            os << "ball(r=" << radius << ")";
            break;
        case Kind::rotated_box:
            os << "rotated_box(p=" << gauss_prob << ")";
            break;
    }
    return os.str();
}

namespace {

// Fibonacci-type direction grids: the golden-angle circle for d = 2, the
// spherical Fibonacci lattice for d = 3, and seeded quasi-uniform
// directions for higher d. d = 1 only has the two signs.
std::vector<Vec> sphere_grid(int d, int m) {
    const double golden = 0.6180339887498948482;
    std::vector<Vec> dirs;
    if (d == 1) {
        dirs.push_back({1.0});
        if (m > 1) dirs.push_back({-1.0});
        return dirs;
    }
    if (d == 2) {
        for (int k = 0; k < m; ++k) {
            double a = 6.283185307179586 * std::fmod(k * golden, 1.0);
            dirs.push_back({std::cos(a), std::sin(a)});
        }
        return dirs;
    }
    if (d == 3) {
        for (int k = 0; k < m; ++k) {
            double z = 1.0 - 2.0 * (k + 0.5) / m;
            double r = std::sqrt(std::max(0.0, 1.0 - z * z));
            double a = 6.283185307179586 * std::fmod(k * golden, 1.0);
            dirs.push_back({r * std::cos(a), r * std::sin(a), z});
        }
        return dirs;
    }
    Rng rng(RandomSource{0xd1f5u, static_cast<std::uint64_t>(d)});
    for (int k = 0; k < m; ++k) {
        Vec v(d);
        double n2 = 0.0;
        do {
            n2 = 0.0;
            for (auto& vi : v) {
                vi = rng.gaussian();
                n2 += vi * vi;
            }
        } while (n2 == 0.0);
        double f = 1.0 / std::sqrt(n2);
        for (auto& vi : v) vi *= f;
        dirs.push_back(std::move(v));
    }
    return dirs;
}

}  // namespace

TestFamily TestFamily::make(int d, const Params& params) {
    if (d < 1) throw ValidationError("TestFamily: d must be >= 1");
    if (params.halfspace_directions < 1)
        throw ValidationError("TestFamily: need at least one half-space direction");
    TestFamily fam;
    fam.d = d;

    // Quantile levels 0.025 .. 0.975, evenly spaced; offsets concentrate
    // where near-Gaussian laws put their discrepancies.
    auto levels = [](int count) {
        std::vector<double> q(count);
        for (int i = 0; i < count; ++i)
            q[i] = count == 1 ? 0.5 : 0.025 + 0.95 * i / (count - 1);
        return q;
    };

    const auto dirs = sphere_grid(d, params.halfspace_directions);
    for (const auto& dir : dirs) {
        for (double q : levels(params.offsets_per_direction)) {
            TestBody b;
            b.kind = TestBody::Kind::half_space;
            b.dir = dir;
            b.offset = std_normal_quantile(q);
            b.gauss_prob = q;
            fam.bodies.push_back(std::move(b));
        }
    }

    for (double q : levels(params.centered_balls)) {
        TestBody b;
        b.kind = TestBody::Kind::ball;
        b.radius = std::sqrt(chi_square_quantile(q, d));
        b.gauss_prob = q;
        fam.bodies.push_back(std::move(b));
    }

    if (d >= 2) {
        Rng rng(RandomSource{params.box_seed, 0});
        for (int k = 0; k < params.random_boxes; ++k) {
            // Random rotation from Gram-Schmidt on gaussian columns.
            Matrix q(d, d);
            for (int j = 0; j < d; ++j) {
                Vec v(d);
                for (auto& vi : v) vi = rng.gaussian();
                for (int prev = 0; prev < j; ++prev) {
                    double s = 0.0;
                    for (int i = 0; i < d; ++i) s += q(i, prev) * v[i];
                    for (int i = 0; i < d; ++i) v[i] -= s * q(i, prev);
                }
                double nv = norm(v);
                if (nv < 1e-12) {
                    v.assign(d, 0.0);
                    v[j] = 1.0;
                    nv = 1.0;
                }
                for (int i = 0; i < d; ++i) q(i, j) = v[i] / nv;
            }
            TestBody b;
            b.kind = TestBody::Kind::rotated_box;
            b.rot = std::move(q);
            b.lower.resize(d);
            b.upper.resize(d);
            double p = 1.0;
            for (int i = 0; i < d; ++i) {
                double qa = rng.uniform(0.05, 0.45);
                double qb = rng.uniform(0.55, 0.95);
                b.lower[i] = std_normal_quantile(qa);
                b.upper[i] = std_normal_quantile(qb);
                p *= (qb - qa);
            }
            b.gauss_prob = p;
            fam.bodies.push_back(std::move(b));
        }
    } else {
        // 1-D "boxes" are intervals; reuse quantile pairs.
        Rng rng(RandomSource{params.box_seed, 0});
        for (int k = 0; k < params.random_boxes; ++k) {
            TestBody b;
            b.kind = TestBody::Kind::rotated_box;
            b.rot = Matrix::identity(1);
            double qa = rng.uniform(0.05, 0.45);
            double qb = rng.uniform(0.55, 0.95);
            b.lower = {std_normal_quantile(qa)};
            b.upper = {std_normal_quantile(qb)};
            b.gauss_prob = qb - qa;
            fam.bodies.push_back(std::move(b));
        }
    }
    return fam;
}

nlohmann::json DistanceEstimate::to_json() const {
    return nlohmann::json{{"value", value},
                          {"argmax", argmax},
                          {"argmax_stderr", argmax_stderr},
                          {"max_stderr", max_stderr},
                          {"sample_size", sample_size}};
}

DistanceEstimate empirical_distance(const Rows& samples_t, const TestFamily& family) {
    if (family.bodies.empty()) throw ValidationError("empirical_distance: empty family");
    if (samples_t.d != family.d) throw ValidationError("empirical_distance: dim mismatch");
    if (samples_t.n < 100) throw ValidationError("empirical_distance: need N >= 100");

    const long n = samples_t.n;
    const int d = samples_t.d;
    const std::size_t m = family.bodies.size();
    std::vector<long> hits(m, 0);

    par::parallel_for(static_cast<std::int64_t>(m), [&](std::int64_t bi) {
        const TestBody& b = family.bodies[static_cast<std::size_t>(bi)];
        long h = 0;
        for (long i = 0; i < n; ++i)
            if (b.contains(samples_t.row(i), d)) ++h;
        hits[static_cast<std::size_t>(bi)] = h;
    });

    DistanceEstimate est;
    est.sample_size = n;
    est.per_body_stderr.resize(m);
    std::size_t arg = 0;
    double best = -1.0;
    for (std::size_t bi = 0; bi < m; ++bi) {
        double p_hat = static_cast<double>(hits[bi]) / static_cast<double>(n);
        double disc = std::abs(p_hat - family.bodies[bi].gauss_prob);
        double se = std::sqrt(p_hat * (1.0 - p_hat) / static_cast<double>(n));
        est.per_body_stderr[bi] = se;
        est.max_stderr = std::max(est.max_stderr, se);
        if (disc > best) {
            best = disc;
            arg = bi;
        }
    }
    est.value = best;
    est.argmax = family.bodies[arg].describe();
    est.argmax_stderr = est.per_body_stderr[arg];
    return est;
}

double shell_event_probability(const Rows& samples_w, const ConvexBody& a, double gamma,
                               double delta1, double delta2) {
    std::vector<double> d1(static_cast<std::size_t>(samples_w.n), delta1);
    std::vector<double> d2(static_cast<std::size_t>(samples_w.n), delta2);
    return shell_event_probability(samples_w, a, gamma, d1, d2);
}

double shell_event_probability(const Rows& samples_w, const ConvexBody& a, double gamma,
                               std::span<const double> delta1,
                               std::span<const double> delta2) {
    if (gamma < 0.0) throw ValidationError("shell: gamma must be >= 0");
    if (delta1.size() != static_cast<std::size_t>(samples_w.n) ||
        delta2.size() != static_cast<std::size_t>(samples_w.n))
        throw ValidationError("shell: per-sample delta arrays must match N");
    const double r = a.inradius();
    if (!(r > gamma))
        throw ValidationError("shell: requires inradius(closure A) > gamma");

    long hits = 0;
    Vec x(samples_w.d);
    for (long i = 0; i < samples_w.n; ++i) {
        const double* row = samples_w.row(i);
        x.assign(row, row + samples_w.d);
        double dist = a.distance(x);
        double dd1 = std::max(delta1[static_cast<std::size_t>(i)], 0.0);
        double d2bar = std::min(std::max(delta2[static_cast<std::size_t>(i)], 0.0), r - gamma);
        if (dist > 4.0 * gamma + dd1) continue;
        // outside the inner set A^{4 gamma - d2bar}?
        double inner_level = 4.0 * gamma - d2bar;
        bool in_inner;
        if (inner_level >= 0.0) {
            in_inner = dist <= inner_level;
        } else {
            ConvexBody shrunk = a.shrink(-inner_level);
            in_inner = !shrunk.is_empty() && shrunk.contains(x);
        }
        if (!in_inner) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(samples_w.n);
}

RateFit rate_fit(const std::vector<std::pair<double, double>>& points) {
    if (points.size() < 3) throw ValidationError("rate_fit: need at least 3 points");
    double sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
    const double n = static_cast<double>(points.size());
    for (const auto& [pn, pv] : points) {
        if (!(pn > 0.0) || !(pv > 0.0))
            throw ValidationError("rate_fit: n and value must be positive");
        double x = std::log(pn), y = std::log(pv);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
        syy += y * y;
    }
    double denom = n * sxx - sx * sx;
    if (denom <= 0.0) throw ValidationError("rate_fit: degenerate n grid");
    RateFit fit;
    fit.slope = (n * sxy - sx * sy) / denom;
    fit.intercept = (sy - fit.slope * sx) / n;
    double ss_tot = syy - sy * sy / n;
    double ss_res = 0.0;
    for (const auto& [pn, pv] : points) {
        double e = std::log(pv) - (fit.intercept + fit.slope * std::log(pn));
        ss_res += e * e;
    }
    fit.r_squared = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 1.0;
    return fit;
}

}  // namespace nclt
