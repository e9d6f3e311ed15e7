#pragma once

#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "nclt/linalg.hpp"

#include "json.hpp"

namespace nclt {

// {x : <unit_normal, x> <= offset}
struct HalfSpace {
    Vec unit_normal;
    double offset = 0.0;
};

struct Ball {
    Vec center;
    double radius = 0.0;
};

struct Box {
    Vec lower;
    Vec upper;
};

struct Polytope {
    std::vector<HalfSpace> faces;
};

struct EmptySet {};

// A convex subset of R^d from one of the families with exact or iterative
// projection. Immutable; every operation is reentrant.
class ConvexBody {
public:
    static ConvexBody ball(Vec center, double radius);
    // Requires ||normal|| = 1 within 1e-12.
    static ConvexBody half_space(Vec unit_normal, double offset);
    // Normalizes (normal, offset) to a unit normal.
    static ConvexBody half_space_normalized(Vec normal, double offset);
    static ConvexBody box(Vec lower, Vec upper);
    // Runs an approximate feasibility probe and rejects empty input.
    static ConvexBody polytope(std::vector<HalfSpace> faces);
    static ConvexBody empty(int dim);

    int dim() const { return dim_; }
    bool is_empty() const { return std::holds_alternative<EmptySet>(body_); }

    // Nearest point of x in the closure. Exact for ball/half-space/box,
    // Dykstra alternating projections for polytopes.
    Vec project(const Vec& x) const;

    // d(x, A) = ||x - project(x)||, with closed forms where they exist.
    double distance(const Vec& x) const;

    bool contains(const Vec& x, double tol = 0.0) const;

    // Radius of the largest inscribed ball; +infinity for half-spaces and
    // unbounded polytopes.
    double inradius() const;

    // A^{-eps} = {x in A : B(x, eps) subset A}; exact for all four
    // families, may be Empty.
    ConvexBody shrink(double eps) const;

    // Exact enlarged body where the family is closed under enlargement
    // (ball, half-space); nullopt otherwise - use the EnlargedView.
    std::optional<ConvexBody> enlarge_exact(double eps) const;

    const std::variant<Ball, HalfSpace, Box, Polytope, EmptySet>& raw() const { return body_; }

    std::string describe() const;
    nlohmann::json to_json() const;
    static ConvexBody from_json(const nlohmann::json& j);

private:
    ConvexBody(int dim, std::variant<Ball, HalfSpace, Box, Polytope, EmptySet> b)
        : dim_(dim), body_(std::move(b)) {}
    int dim_;
    std::variant<Ball, HalfSpace, Box, Polytope, EmptySet> body_;
};

// Membership/projection view of A^eps = {x : d(x, A) <= eps}. Non-owning;
// the base body must outlive the view.
class EnlargedView {
public:
    EnlargedView(const ConvexBody& base, double eps);
    bool contains(const Vec& x) const;
    double distance(const Vec& x) const;
    // x when inside, else x - (d(x,A) - eps) * (x - P_A(x)) / d(x,A).
    Vec project(const Vec& x) const;

private:
    const ConvexBody& base_;
    double eps_;
};

inline EnlargedView enlarge(const ConvexBody& a, double eps) { return EnlargedView(a, eps); }

// Specification of the transport field f_{A,eps}: epsilon already carries
// the full layer width (the paper-facing eps + 8 gamma is folded in by
// the caller; the split is never needed inside f).
struct SteinTransportSpec {
    ConvexBody body;
    double epsilon = 0.0;
};

// Three-case projection-difference field:
//   0                          x in closure(A)
//   x - P_A(x)                 x in A^eps \ closure(A)
//   P_{A^eps}(x) - P_A(x)      otherwise
// Always has norm <= epsilon.
Vec stein_transport(const SteinTransportSpec& spec, const Vec& x);

}  // namespace nclt
