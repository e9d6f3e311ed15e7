#pragma once

#include <span>
#include <string>
#include <vector>

#include "nclt/convex_geom.hpp"
#include "nclt/stats_core.hpp"

#include "json.hpp"

namespace nclt {

// One member of the convex test family. Membership tests are exact and
// P(Z in body) has a closed form for every kind: half-space offsets sit
// at normal quantiles, ball radii at chi-square quantiles, and a rotated
// box has the same Gaussian probability as its unrotated version.
struct TestBody {
    enum class Kind { half_space, ball, rotated_box };
    Kind kind = Kind::half_space;
    Vec dir;           // half_space: {x : <dir, x> <= offset}
    double offset = 0.0;
    double radius = 0.0;  // ball, centered
    Matrix rot;           // rotated_box: rot^T x in [lower, upper]
    Vec lower, upper;
    double gauss_prob = 0.0;  // exact P(Z in body)

    bool contains(const double* x, int d) const;
    std::string describe() const;
};

// Half-space direction grid (Fibonacci-type sphere points) with offsets
// at N(0,1) quantiles, centered balls at chi-square quantile radii, and
// random rotated boxes from a seeded generator. Deterministic given the
// arguments.
struct TestFamily {
    int d = 0;
    std::vector<TestBody> bodies;

    struct Params {
        int halfspace_directions = 64;
        int offsets_per_direction = 21;
        int centered_balls = 21;
        int random_boxes = 32;
        std::uint64_t box_seed = 7;
    };

    static TestFamily make(int d, const Params& params);
    static TestFamily make(int d) { return make(d, Params{}); }
};

struct DistanceEstimate {
    double value = 0.0;           // max over family of |p_hat(A) - P(Z in A)|
    std::string argmax;           // description of the maximizing body
    double argmax_stderr = 0.0;   // sqrt(p_hat (1-p_hat) / N) at the argmax
    double max_stderr = 0.0;      // largest per-body stderr in the family
    long sample_size = 0;
    std::vector<double> per_body_stderr;

    nlohmann::json to_json() const;
};

// Family lower bound for sup_A |P(T in A) - P(Z in A)| from N samples of
// T. Requires N >= 100.
DistanceEstimate empirical_distance(const Rows& samples_t, const TestFamily& family);

// Empirical frequency of W in A^{4 gamma + Delta1} \ A^{4 gamma - Delta2bar};
// Delta2bar = min(delta2, r(closure A) - gamma) is truncated here. Requires
// r(closure A) > gamma. Constant and per-sample Delta variants.
double shell_event_probability(const Rows& samples_w, const ConvexBody& a, double gamma,
                               double delta1, double delta2);
double shell_event_probability(const Rows& samples_w, const ConvexBody& a, double gamma,
                               std::span<const double> delta1,
                               std::span<const double> delta2);

struct RateFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r_squared = 0.0;
};

// Least squares of log(value) on log(n). Needs >= 3 points with positive
// values.
RateFit rate_fit(const std::vector<std::pair<double, double>>& points);

}  // namespace nclt
