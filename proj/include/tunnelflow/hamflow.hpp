#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "tunnelflow/symbol.hpp"

namespace tunnelflow {

/// Family of phase-space trajectories indexed by initial label x0.
/// States are stored per (label, time-node); per-label trajectories are
/// independent, and the fan is immutable once built.
struct TrajectoryFan {
    std::vector<double> labels;  ///< strictly increasing initial labels x0
    std::vector<double> tgrid;   ///< ordered times, tgrid[0] = start time
    // Column-major over labels: index = ti * labels.size() + li.
    std::vector<double> x;
    std::vector<double> p;
    std::vector<double> S;       ///< accumulated action along the trajectory
    std::vector<double> J;       ///< variational Jacobian dx/dx0
    std::vector<double> dpdx0;   ///< variational dp/dx0
    /// First time index at which the label counts as absorbed into a
    /// stratum tube; tgrid.size() when never absorbed.
    std::vector<std::uint32_t> absorbed_at;

    std::size_t n_labels() const { return labels.size(); }
    std::size_t n_times() const { return tgrid.size(); }
    std::size_t idx(std::size_t ti, std::size_t li) const { return ti * labels.size() + li; }
    bool absorbed(std::size_t ti, std::size_t li) const { return absorbed_at[li] <= ti; }
    double t_begin() const { return tgrid.front(); }
    double t_end() const { return tgrid.back(); }

    /// Time index pair bracketing t plus interpolation weight.
    void locate_time(double t, std::size_t& i0, std::size_t& i1, double& w) const;
};

/// Initial data for a fan: labels, initial momentum p0(x0), initial action
/// S0(x0), and an optional position shift applied at t = 0 (the shift's
/// derivative enters the initial Jacobian).
struct FanInitial {
    std::vector<double> labels;
    std::function<double(double)> p0;
    std::function<double(double)> S0;
    std::function<double(double)> p0_prime;   ///< optional; finite differences otherwise
    std::function<double(double)> shift;      ///< optional initial x shift
    std::function<double(double)> shift_prime;
};

struct EvolveOptions {
    /// Internal substeps are chosen so one step <= substep_fraction * horizon.
    double substep_fraction = 1e-3;
};

struct CausticEvent {
    double t_star = 0.0;
    double label_star = 0.0;
    double x_star = 0.0;
};

/// Integrates the Hamiltonian system with accumulated action and the
/// variational pair (J, dp/dx0) over the whole label family. Fixed-step
/// classic fourth-order Runge-Kutta; runs are reproducible bit-for-bit
/// for a fixed configuration.
TrajectoryFan evolve_fan(const HamiltonianSymbol& sym, const FanInitial& initial,
                         const std::vector<double>& tgrid, const EvolveOptions& options = {});

struct JacobianField {
    std::vector<double> variational;  ///< J from the variational ODEs
    std::vector<double> neighbor_fd;  ///< cross-check: (x_{i+1}-x_{i-1}) / (x0_{i+1}-x0_{i-1})
};

JacobianField jacobian_field(const TrajectoryFan& fan);

/// Locates all sign changes of J in t per label by bisection, earliest
/// event first. Empty when J > 0 everywhere.
std::vector<CausticEvent> detect_caustic(const HamiltonianSymbol& sym, const TrajectoryFan& fan,
                                         double tol_caustic = 1e-6);

/// Integrates a single trajectory (x, p, S, J, dpdx0) from the given state
/// over [t0, t1] (either direction); used by the bisection refinements and
/// the reversibility checks.
struct TrajectoryState {
    double x, p, S, J, dpdx0;
};

TrajectoryState integrate_state(const HamiltonianSymbol& sym, TrajectoryState state, double t0,
                                double t1, std::size_t n_steps);

/// Columnar CSV (label, t, x, p, S, J) and a compact binary cache.
void write_fan_csv(const TrajectoryFan& fan, const std::string& path);
void write_fan_binary(const TrajectoryFan& fan, const std::string& path);
TrajectoryFan read_fan_binary(const std::string& path);

}  // namespace tunnelflow
