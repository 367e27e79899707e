#pragma once

#include <functional>
#include <vector>

#include "tunnelflow/hamflow.hpp"
#include "tunnelflow/manifold.hpp"

namespace tunnelflow {

/// Smooth monotone switch B((t - t_center)/eps) from 0 to 1 that freezes the
/// modified characteristics onto the common front speed. The default shape
/// is logistic; `off` is the B == 0 sentinel (plain characteristics).
struct BlendProfile {
    std::function<double(double)> B;
    double eps = 1e-2;
    double t_center = 0.0;  ///< focusing time of the modified construction
    double A = 1.0;         ///< initial-shift constant
    double beta = 0.05;     ///< insertion half-width
    bool off = false;
    /// When set, fan builders throw if the measured floor constant is not
    /// positive; the automated A-search disables this to iterate.
    bool enforce_floor = true;

    double weight(double t) const {
        return off ? 0.0 : B((t - t_center) / eps);
    }
    /// Enforces the scale condition eps << beta (eps <= beta/10) and the
    /// shape constraints.
    void validate() const;

    static BlendProfile logistic(double eps, double t_center, double A, double beta);
    static BlendProfile disabled(double beta);
};

/// Insertion-modified initial velocity on (x0* - beta, x0* + beta): u1
/// solves P'_xi(u1, t) = -K(t) x0 + b(t) with endpoint matching to u0, so
/// the insertion Jacobian vanishes identically at t_focus.
struct Insertion {
    double x0_star = 0.0;
    double beta = 0.0;
    double t_focus = 0.0;
    double p_left = 0.0;   ///< u0 at x0* - beta
    double p_right = 0.0;  ///< u0 at x0* + beta
    std::function<double(double)> K;
    std::function<double(double)> b;
    std::function<double(double, double)> u1;  ///< u1(x0, t)
};

Insertion insertion_initial_data(const HamiltonianSymbol& sym,
                                 const std::function<double(double)>& u0, double x0_star,
                                 double beta, double t_max);

/// Fan evolved with blended characteristics; block labels freeze onto the
/// Rankine-Hugoniot speed while outer labels keep the plain dynamics.
/// Outer labels entering the frozen block are marked absorbed.
struct BlendedFan {
    TrajectoryFan fan;
    std::size_t block_lo = 0;  ///< label index range of the modified block
    std::size_t block_hi = 0;
    double t_center = 0.0;
    double shift_eps = 0.0;       ///< the applied shift is A eps ramp(x0)
    double min_block_J = 0.0;     ///< min over block labels for t >= t_center + 2 beta
    double floor_C = 0.0;         ///< min_block_J / eps
    bool sorted_live = true;      ///< label -> x strictly increasing among live labels
};

BlendedFan blended_fan_homogeneous(const HamiltonianSymbol& sym,
                                   const std::function<double(double)>& u0,
                                   const std::function<double(double)>& u0_prime,
                                   const Insertion& insertion, const BlendProfile& blend,
                                   const std::vector<double>& labels,
                                   const std::vector<double>& tgrid,
                                   const EvolveOptions& options = {});

/// Lagrangian manifold with the fold excised: essential outer branches
/// joined by a vertical segment at the equal-action point, plus the
/// backward-flowed curve the blended fan restarts from.
struct SurgeredManifold {
    double t1_star = 0.0;              ///< surgery time (t* + beta)
    double x1_star = 0.0;              ///< equal-action point
    double p_left = 0.0, p_right = 0.0;  ///< angle-point momenta at x1*
    std::vector<CurvePoint> points;    ///< surgered curve at t1*, ordered in x
    std::size_t angle_lo = 0, angle_hi = 0;  ///< vertical-segment index range

    double t1 = 0.0;  ///< back-flow time actually used
    std::vector<CurvePoint> backflowed;  ///< curve at t1* - t1, x strictly increasing
    double a1 = 0.0, a2 = 0.0;           ///< backflowed angle-point positions
};

/// Requires exactly one fold (three branches). The nonessential middle
/// branch is discarded, the outer branches are cut at the equal-action
/// point and joined by a vertical segment; actions match across it by
/// construction.
SurgeredManifold manifold_surgery(const LagrangianCurve& curve, double tol = 1e-6);

struct BackflowResult {
    SurgeredManifold surgered;
    BlendedFan blended;
};

/// Applies g^{-t1} to the surgered manifold (t1 halved until the segment
/// unfolds), then evolves the blended fan from t1* - t1 with plain
/// dynamics outside the angle window and blended dynamics inside it.
/// Requires a time-independent symbol.
BackflowResult backflow_and_blend(const HamiltonianSymbol& sym, SurgeredManifold surgered,
                                  const BlendProfile& blend, double t_end, double dt_out,
                                  double t1 = 0.0, const EvolveOptions& options = {});

/// Doubles A starting from A0 until the measured floor constant turns
/// positive. The floor evaluation receives the candidate A.
double search_shift_constant(const std::function<double(double)>& floor_of_A, double A0 = 1.0,
                             int max_doublings = 12);

/// Marks outer labels absorbed once they cross the block edge trajectories
/// and reports whether the live labels stay strictly sorted at every node.
bool absorb_and_check_sorted(TrajectoryFan& fan, std::size_t block_lo, std::size_t block_hi);

}  // namespace tunnelflow
