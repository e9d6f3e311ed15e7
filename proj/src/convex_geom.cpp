#include "nclt/convex_geom.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "nclt/rng.hpp"

namespace nclt {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void check_unit(const Vec& u) {
    if (std::abs(norm(u) - 1.0) > 1e-12)
        throw ValidationError("half-space normal must have unit norm");
}

double slack(const Polytope& p, const Vec& x) {
    double s = kInf;
    for (const auto& f : p.faces) s = std::min(s, f.offset - dot(f.unit_normal, x));
    return s;
}

// Projected subgradient ascent on the min-slack function; used both as
// the construction-time feasibility probe and as the coarse stage of the
// Chebyshev center solve. Approximate by design.
Vec chebyshev_ascent(const Polytope& p, int iters) {
    const int d = static_cast<int>(p.faces.front().unit_normal.size());
    Vec x(d, 0.0);
    Vec best = x;
    double best_slack = slack(p, x);
    double step0 = 1.0;
    for (const auto& f : p.faces) step0 = std::max(step0, std::abs(f.offset));
    for (int k = 1; k <= iters; ++k) {
        // steepest face
        double s = kInf;
        const HalfSpace* tight = nullptr;
        for (const auto& f : p.faces) {
            double si = f.offset - dot(f.unit_normal, x);
            if (si < s) {
                s = si;
                tight = &f;
            }
        }
        axpy(-step0 / std::sqrt(static_cast<double>(k)), tight->unit_normal, x);
        double sx = slack(p, x);
        if (sx > best_slack) {
            best_slack = sx;
            best = x;
        }
    }
    return best;
}

// Exact refinement of the Chebyshev LP for small face counts: the optimum
// of max r s.t. <u_i,x> + r <= b_i sits on <= d+1 active constraints, so
// enumerate active sets of size d+1 and keep the best feasible candidate.
std::optional<double> chebyshev_enumerate(const Polytope& p) {
    const int d = static_cast<int>(p.faces.front().unit_normal.size());
    const int m = static_cast<int>(p.faces.size());
    const int k = d + 1;
    if (m < k) return std::nullopt;

    double combos = 1.0;
    for (int i = 0; i < k; ++i) combos *= static_cast<double>(m - i) / (i + 1);
    if (combos > 20000.0) return std::nullopt;

    std::vector<int> idx(k);
    for (int i = 0; i < k; ++i) idx[i] = i;
    double best = -kInf;
    bool found = false;

    auto solve_subset = [&](const std::vector<int>& sub) {
        // [u_i 1] [x; r] = b_i
        Matrix a(k, k);
        Vec b(k);
        for (int r = 0; r < k; ++r) {
            const auto& f = p.faces[sub[r]];
            for (int c = 0; c < d; ++c) a(r, c) = f.unit_normal[c];
            a(r, d) = 1.0;
            b[r] = f.offset;
        }
        // Gaussian elimination with partial pivoting.
        for (int c = 0; c < k; ++c) {
            int piv = c;
            for (int r = c + 1; r < k; ++r)
                if (std::abs(a(r, c)) > std::abs(a(piv, c))) piv = r;
            if (std::abs(a(piv, c)) < 1e-12) return;
            if (piv != c) {
                for (int cc = 0; cc < k; ++cc) std::swap(a(piv, cc), a(c, cc));
                std::swap(b[piv], b[c]);
            }
            for (int r = c + 1; r < k; ++r) {
                double f = a(r, c) / a(c, c);
                for (int cc = c; cc < k; ++cc) a(r, cc) -= f * a(c, cc);
                b[r] -= f * b[c];
            }
        }
        Vec xr(k);
        for (int r = k - 1; r >= 0; --r) {
            double s = b[r];
            for (int c = r + 1; c < k; ++c) s -= a(r, c) * xr[c];
            xr[r] = s / a(r, r);
        }
        double r = xr[d];
        Vec x(xr.begin(), xr.begin() + d);
        if (r < -1e-12) return;
        if (slack(p, x) < r - 1e-9 * (1.0 + std::abs(r))) return;
        if (!found || r > best) {
            best = r;
            found = true;
        }
    };

    while (true) {
        solve_subset(idx);
        int i = k - 1;
        while (i >= 0 && idx[i] == m - k + i) --i;
        if (i < 0) break;
        ++idx[i];
        for (int j = i + 1; j < k; ++j) idx[j] = idx[j - 1] + 1;
    }
    if (!found) return std::nullopt;
    return best;
}

}  // namespace

// -- construction ------------------------------------------------------------

ConvexBody ConvexBody::ball(Vec center, double radius) {
    check_finite(center, "ball center");
    if (!(radius >= 0.0)) throw ValidationError("ball radius must be >= 0");
    int d = static_cast<int>(center.size());
    if (d < 1) throw ValidationError("ball: dim must be >= 1");
    return ConvexBody(d, Ball{std::move(center), radius});
}

ConvexBody ConvexBody::half_space(Vec unit_normal, double offset) {
    check_finite(unit_normal, "half-space normal");
    check_unit(unit_normal);
    int d = static_cast<int>(unit_normal.size());
    return ConvexBody(d, HalfSpace{std::move(unit_normal), offset});
}

ConvexBody ConvexBody::half_space_normalized(Vec normal, double offset) {
    double nn = norm(normal);
    if (nn <= 0.0) throw ValidationError("half-space normal must be nonzero");
    for (auto& v : normal) v /= nn;
    return half_space(std::move(normal), offset / nn);
}

ConvexBody ConvexBody::box(Vec lower, Vec upper) {
    check_finite(lower, "box lower");
    check_finite(upper, "box upper");
    if (lower.size() != upper.size()) throw ValidationError("box bounds size mismatch");
    for (std::size_t i = 0; i < lower.size(); ++i)
        if (lower[i] > upper[i]) throw ValidationError("box lower must be <= upper");
    int d = static_cast<int>(lower.size());
    return ConvexBody(d, Box{std::move(lower), std::move(upper)});
}

ConvexBody ConvexBody::polytope(std::vector<HalfSpace> faces) {
    if (faces.empty()) throw ValidationError("polytope needs at least one face");
    int d = static_cast<int>(faces.front().unit_normal.size());
    for (const auto& f : faces) {
        if (static_cast<int>(f.unit_normal.size()) != d)
            throw ValidationError("polytope faces have inconsistent dims");
        check_unit(f.unit_normal);
    }
    Polytope p{std::move(faces)};
    Vec probe = chebyshev_ascent(p, 1000);
    if (slack(p, probe) < -1e-9)
        throw ValidationError("polytope feasibility probe found no interior point");
    return ConvexBody(d, std::move(p));
}

ConvexBody ConvexBody::empty(int dim) {
    if (dim < 1) throw ValidationError("empty body: dim must be >= 1");
    return ConvexBody(dim, EmptySet{});
}

// -- projection / distance ---------------------------------------------------

Vec ConvexBody::project(const Vec& x) const {
    if (static_cast<int>(x.size()) != dim_) throw ValidationError("project: dim mismatch");
    if (is_empty()) throw ValidationError("project: body is empty");
    return std::visit(
        [&](const auto& b) -> Vec {
            using T = std::decay_t<decltype(b)>;
            if constexpr (std::is_same_v<T, Ball>) {
                Vec r = x - b.center;
                double n = norm(r);
                if (n <= b.radius) return x;
                return b.center + (b.radius / n) * r;
            } else if constexpr (std::is_same_v<T, HalfSpace>) {
                double excess = dot(b.unit_normal, x) - b.offset;
                if (excess <= 0.0) return x;
                return x - excess * b.unit_normal;
            } else if constexpr (std::is_same_v<T, Box>) {
                Vec p = x;
                for (std::size_t i = 0; i < p.size(); ++i)
                    p[i] = std::clamp(p[i], b.lower[i], b.upper[i]);
                return p;
            } else if constexpr (std::is_same_v<T, Polytope>) {
                // Dykstra's alternating projections with per-face corrections.
                const auto& faces = b.faces;
                Vec p = x;
                std::vector<Vec> corr(faces.size(), Vec(x.size(), 0.0));
                for (int sweep = 0; sweep < 10000; ++sweep) {
                    double moved = 0.0;
                    for (std::size_t i = 0; i < faces.size(); ++i) {
                        Vec y = p + corr[i];
                        double excess = dot(faces[i].unit_normal, y) - faces[i].offset;
                        Vec pn = (excess <= 0.0) ? y : y - excess * faces[i].unit_normal;
                        corr[i] = y - pn;
                        moved += norm(pn - p);
                        p = std::move(pn);
                    }
                    if (moved < 1e-10) break;
                }
                return p;
            } else {
                throw ValidationError("project: body is empty");
            }
        },
        body_);
}

double ConvexBody::distance(const Vec& x) const {
    if (static_cast<int>(x.size()) != dim_) throw ValidationError("distance: dim mismatch");
    if (is_empty()) throw ValidationError("distance: body is empty");
    return std::visit(
        [&](const auto& b) -> double {
            using T = std::decay_t<decltype(b)>;
            if constexpr (std::is_same_v<T, Ball>) {
                return std::max(0.0, norm(x - b.center) - b.radius);
            } else if constexpr (std::is_same_v<T, HalfSpace>) {
                return std::max(0.0, dot(b.unit_normal, x) - b.offset);
            } else if constexpr (std::is_same_v<T, Box>) {
                double s = 0.0;
                for (std::size_t i = 0; i < x.size(); ++i) {
                    double e = std::max({b.lower[i] - x[i], x[i] - b.upper[i], 0.0});
                    s += e * e;
                }
                return std::sqrt(s);
            } else {
                return norm(x - project(x));
            }
        },
        body_);
}

bool ConvexBody::contains(const Vec& x, double tol) const {
    if (is_empty()) return false;
    return distance(x) <= tol;
}

double ConvexBody::inradius() const {
    if (is_empty()) throw ValidationError("inradius: body is empty");
    return std::visit(
        [&](const auto& b) -> double {
            using T = std::decay_t<decltype(b)>;
            if constexpr (std::is_same_v<T, Ball>) {
                return b.radius;
            } else if constexpr (std::is_same_v<T, HalfSpace>) {
                return kInf;
            } else if constexpr (std::is_same_v<T, Box>) {
                double r = kInf;
                for (std::size_t i = 0; i < b.lower.size(); ++i)
                    r = std::min(r, 0.5 * (b.upper[i] - b.lower[i]));
                return r;
            } else if constexpr (std::is_same_v<T, Polytope>) {
                // Unbounded when some direction recedes from every face.
                const int d = dim_;
                Rng rng(RandomSource{0x706f6c79u, 0});
                for (int probe = 0; probe < 512; ++probe) {
                    Vec v(d);
                    for (auto& vi : v) vi = rng.gaussian();
                    double nv = norm(v);
                    if (nv == 0.0) continue;
                    // descend h(v) = max_i <u_i, v> a few steps
                    for (auto& vi : v) vi /= nv;
                    for (int it = 0; it < 64; ++it) {
                        double h = -kInf;
                        const HalfSpace* worst = nullptr;
                        for (const auto& f : b.faces) {
                            double hv = dot(f.unit_normal, v);
                            if (hv > h) {
                                h = hv;
                                worst = &f;
                            }
                        }
                        if (h < -1e-9) return kInf;
                        axpy(-0.5 / (1 + it), worst->unit_normal, v);
                        double n2 = norm(v);
                        if (n2 == 0.0) break;
                        for (auto& vi : v) vi /= n2;
                    }
                }
                auto exact = chebyshev_enumerate(b);
                if (exact) return std::max(*exact, 0.0);
                Vec c = chebyshev_ascent(b, 200000);
                return std::max(slack(b, c), 0.0);
            } else {
                throw ValidationError("inradius: body is empty");
            }
        },
        body_);
}

ConvexBody ConvexBody::shrink(double eps) const {
    if (eps < 0.0) throw ValidationError("shrink: eps must be >= 0");
    if (is_empty()) return *this;
    if (eps == 0.0) return *this;
    return std::visit(
        [&](const auto& b) -> ConvexBody {
            using T = std::decay_t<decltype(b)>;
            if constexpr (std::is_same_v<T, Ball>) {
                if (eps > b.radius) return ConvexBody::empty(dim_);
                return ConvexBody::ball(b.center, b.radius - eps);
            } else if constexpr (std::is_same_v<T, HalfSpace>) {
                return ConvexBody::half_space(b.unit_normal, b.offset - eps);
            } else if constexpr (std::is_same_v<T, Box>) {
                Vec lo = b.lower, hi = b.upper;
                for (std::size_t i = 0; i < lo.size(); ++i) {
                    lo[i] += eps;
                    hi[i] -= eps;
                    if (lo[i] > hi[i]) return ConvexBody::empty(dim_);
                }
                return ConvexBody::box(lo, hi);
            } else if constexpr (std::is_same_v<T, Polytope>) {
                std::vector<HalfSpace> faces = b.faces;
                for (auto& f : faces) f.offset -= eps;
                Polytope shrunk{faces};
                Vec probe = chebyshev_ascent(shrunk, 1000);
                if (slack(shrunk, probe) < -1e-9) return ConvexBody::empty(dim_);
                return ConvexBody(dim_, std::move(shrunk));
            } else {
                return ConvexBody::empty(dim_);
            }
        },
        body_);
}

std::optional<ConvexBody> ConvexBody::enlarge_exact(double eps) const {
    if (eps < 0.0) throw ValidationError("enlarge: eps must be >= 0");
    if (is_empty()) return std::nullopt;
    if (const auto* b = std::get_if<Ball>(&body_))
        return ConvexBody::ball(b->center, b->radius + eps);
    if (const auto* h = std::get_if<HalfSpace>(&body_))
        return ConvexBody::half_space(h->unit_normal, h->offset + eps);
    return std::nullopt;
}

std::string ConvexBody::describe() const {
    std::ostringstream os;
    std::visit(
        [&](const auto& b) {
            using T = std::decay_t<decltype(b)>;
            if constexpr (std::is_same_v<T, Ball>)
                os << "ball(r=" << b.radius << ")";
            else if constexpr (std::is_same_v<T, HalfSpace>)
                os << "half_space(b=" << b.offset << ")";
            else if constexpr (std::is_same_v<T, Box>)
                os << "box";
            else if constexpr (std::is_same_v<T, Polytope>)
                os << "polytope(" << b.faces.size() << " faces)";
            else
                os << "empty";
        },
        body_);
    return os.str();
}

// -- views -------------------------------------------------------------------

EnlargedView::EnlargedView(const ConvexBody& base, double eps) : base_(base), eps_(eps) {
    if (eps < 0.0) throw ValidationError("enlarge: eps must be >= 0");
}

bool EnlargedView::contains(const Vec& x) const { return base_.distance(x) <= eps_; }

double EnlargedView::distance(const Vec& x) const {
    return std::max(0.0, base_.distance(x) - eps_);
}

Vec EnlargedView::project(const Vec& x) const {
    double d = base_.distance(x);
    if (d <= eps_) return x;
    Vec p = base_.project(x);
    Vec r = x - p;
    return p + (eps_ / d) * r;
}

// -- transport field ---------------------------------------------------------

Vec stein_transport(const SteinTransportSpec& spec, const Vec& x) {
    if (spec.body.is_empty()) throw ValidationError("stein_transport: body is empty");
    if (spec.epsilon < 0.0) throw ValidationError("stein_transport: epsilon must be >= 0");
    Vec p = spec.body.project(x);
    Vec r = x - p;
    double d = norm(r);
    if (d == 0.0) return Vec(x.size(), 0.0);
    if (d <= spec.epsilon) return r;
    // P_{A^eps}(x) - P_A(x) for the outer case collapses to eps * r / d.
    return (spec.epsilon / d) * r;
}

// -- serialization -----------------------------------------------------------

nlohmann::json ConvexBody::to_json() const {
    nlohmann::json j;
    std::visit(
        [&](const auto& b) {
            using T = std::decay_t<decltype(b)>;
            if constexpr (std::is_same_v<T, Ball>) {
                j["variant"] = "ball";
                j["center"] = b.center;
                j["radius"] = b.radius;
            } else if constexpr (std::is_same_v<T, HalfSpace>) {
                j["variant"] = "half_space";
                j["normal"] = b.unit_normal;
                j["offset"] = b.offset;
            } else if constexpr (std::is_same_v<T, Box>) {
                j["variant"] = "box";
                j["lower"] = b.lower;
                j["upper"] = b.upper;
            } else if constexpr (std::is_same_v<T, Polytope>) {
                j["variant"] = "polytope";
                auto faces = nlohmann::json::array();
                for (const auto& f : b.faces)
                    faces.push_back({{"normal", f.unit_normal}, {"offset", f.offset}});
                j["faces"] = faces;
            } else {
                j["variant"] = "empty";
                j["dim"] = dim_;
            }
        },
        body_);
    return j;
}

ConvexBody ConvexBody::from_json(const nlohmann::json& j) {
    const std::string variant = j.at("variant").get<std::string>();
    if (variant == "ball")
        return ball(j.at("center").get<Vec>(), j.at("radius").get<double>());
    if (variant == "half_space")
        return half_space_normalized(j.at("normal").get<Vec>(), j.at("offset").get<double>());
    if (variant == "box")
        return box(j.at("lower").get<Vec>(), j.at("upper").get<Vec>());
    if (variant == "polytope") {
        std::vector<HalfSpace> faces;
        for (const auto& f : j.at("faces")) {
            Vec n = f.at("normal").get<Vec>();
            double nn = norm(n);
            if (nn <= 0.0) throw ValidationError("polytope face normal must be nonzero");
            for (auto& v : n) v /= nn;
            faces.push_back(HalfSpace{std::move(n), f.at("offset").get<double>() / nn});
        }
        return polytope(std::move(faces));
    }
    if (variant == "empty") return empty(j.at("dim").get<int>());
    throw ValidationError("unknown body variant: " + variant);
}

}  // namespace nclt
