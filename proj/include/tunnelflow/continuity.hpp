#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "tunnelflow/hamflow.hpp"

namespace tunnelflow {

/// Coefficient rule for the a-term of the continuity equation
/// rho_t + (u rho)_x + a rho = 0.
struct ARule {
    enum class Kind { Zero, Smooth, OfVelocity, Madelung };
    Kind kind = Kind::Zero;
    std::function<double(double, double)> a_xt;  ///< smooth a(x, t)
    std::function<double(double)> f;             ///< a = f(u); f(v_i) acts on strata

    static ARule zero() { return {}; }
    static ARule smooth(std::function<double(double, double)> a) {
        ARule r;
        r.kind = Kind::Smooth;
        r.a_xt = std::move(a);
        return r;
    }
    static ARule of_velocity(std::function<double(double)> f) {
        ARule r;
        r.kind = Kind::OfVelocity;
        r.f = std::move(f);
        return r;
    }
    /// a = -H_xp(x, p) along trajectories: the squared transport amplitude
    /// then satisfies the continuity equation.
    static ARule madelung() {
        ARule r;
        r.kind = Kind::Madelung;
        return r;
    }
};

/// Tracked singular-support point: position, velocity, and delta-amplitude
/// samples over time, plus the merge lineage.
struct ShockStratum {
    int id = 0;
    double birth_time = 0.0;
    bool alive = true;
    std::vector<double> t;
    std::vector<double> x;
    std::vector<double> velocity;
    std::vector<double> e;           ///< delta mass in x at fixed t (e_std)
    std::vector<int> parents;        ///< ids merged into this stratum

    bool exists_at(double tq) const {
        return !t.empty() && tq >= t.front() - 1e-12 && tq <= t.back() + 1e-12;
    }
    double position(double tq) const;
    double amplitude(double tq) const;
    double speed(double tq) const;
};

/// Rankine-Hugoniot stratum velocity [H]/[p] across the momentum jump.
double stratum_velocity(const HamiltonianSymbol& sym, double x, double p_left, double p_right,
                        double t = 0.0, double p_jump_tol = 1e-9);

/// One explicit step (the hamflow one-step scheme) of the 1D jump ODE
///   de/dt = [R u] - phi_dot [R] + f(v) e,   [g] = g_left - g_right.
/// Side values are the trajectory limits brought to the stratum. The
/// entering condition u_left >= phi_dot >= u_right is enforced.
double amplitude_step(double e, double R_left, double R_right, double u_left, double u_right,
                      double phi_dot, double f_value, double dt);

/// Merge two strata whose paths intersect inside the sampled window:
/// the child is born at the intersection with e3 = e1 + e2 and its velocity
/// recomputed from the outer side momenta. Paths that approach within
/// `proximity` without a sampled sign change also count as intersecting.
/// Throws when the paths do not intersect.
ShockStratum merge_strata(const ShockStratum& s1, const ShockStratum& s2,
                          const HamiltonianSymbol& sym, double p_left_outer,
                          double p_right_outer, int child_id, double proximity = 0.0);

/// Cumulative integral of the a-coefficient along each trajectory,
/// trapezoid on the fan's time grid; layout matches the fan state arrays.
std::vector<double> accumulate_a_integral(const TrajectoryFan& fan, const HamiltonianSymbol& sym,
                                          const ARule& a_rule);

/// Regular part of the density by the Cauchy formula
///   R(x,t) = rho0(x0) |Dx/Dx0|^{-1} exp(-int a dt')
/// inverted on the essential branch of the (non-crossing) live fan.
class RegularDensity {
public:
    RegularDensity(HamiltonianSymbol sym, std::shared_ptr<const TrajectoryFan> fan,
                   std::function<double(double)> rho0, ARule a_rule,
                   std::vector<ShockStratum> strata, double tube_radius = 0.01);

    /// Throws when (x,t) lies inside a stratum tube or the live fan is
    /// multivalued at x (crossing trajectories).
    double eval(double x, double t) const;

    /// Same inversion but interpolating straight across stratum tubes;
    /// used by mass quadratures.
    double eval_across_tubes(double x, double t) const { return eval_impl(x, t, true); }

    /// Total mass integral R dx + sum of stratum amplitudes at time t.
    double total_mass(double t, double x_lo, double x_hi, std::size_t n_quad = 2001) const;

    const std::vector<ShockStratum>& strata() const { return strata_; }
    const TrajectoryFan& fan() const { return *fan_; }
    double tube_radius() const { return tube_radius_; }

private:
    double eval_impl(double x, double t, bool allow_tube) const;

    HamiltonianSymbol sym_;
    std::shared_ptr<const TrajectoryFan> fan_;
    std::function<double(double)> rho0_;
    ARule a_rule_;
    std::vector<ShockStratum> strata_;
    double tube_radius_;
    std::vector<double> a_int_;  ///< per fan state node
};

struct TrackOptions {
    double tube_radius = 0.01;
    int side_offset_cells = 3;        ///< side samples at +- offset label cells
    double birth_cluster_radius = 0.05;
    double tol_caustic = 1e-6;
    double p_jump_tol = 1e-9;
};

struct TrackResult {
    std::vector<ShockStratum> strata;        ///< children appended after parents
    std::shared_ptr<TrajectoryFan> fan;      ///< absorbed labels marked
};

/// Front tracking driver: births strata at caustic events of the fan,
/// advances positions with the Rankine-Hugoniot velocity, amplitudes with
/// the jump ODE (side values extrapolated onto the stratum from the
/// entering trajectories), absorbs entering labels, and applies the
/// Kirchhoff rule at merges.
TrackResult track_fronts(const HamiltonianSymbol& sym, TrajectoryFan fan,
                         const std::function<double(double)>& rho0, const ARule& a_rule,
                         const TrackOptions& options = {});

struct WeakAsymptotic {
    std::vector<double> eps;
    std::vector<double> residual;
    double loglog_slope = 0.0;
};

/// Residual of the weak-asymptotic square-root identity: for each eps,
///   integral ( sqrt(R + (e/eps) w((x-phi)/eps)) - sqrt(R) ) zeta(x) dx
/// evaluated in the stretched variable. Default kernel w is the unit-mass
/// Gaussian. Radicands must stay nonnegative.
WeakAsymptotic weak_asymptotic_residual(const std::function<double(double)>& R_profile,
                                        double e_amp, double stratum_x,
                                        const std::vector<double>& eps_list,
                                        const std::function<double(double)>& zeta,
                                        std::function<double(double)> omega = {});

void write_strata_paths_csv(const std::vector<ShockStratum>& strata, const std::string& path);
void write_density_csv(const RegularDensity& density, const std::vector<double>& tsample,
                       const std::vector<double>& xgrid, const std::string& path);
void write_merge_graph_json(const std::vector<ShockStratum>& strata, const std::string& path);

}  // namespace tunnelflow
