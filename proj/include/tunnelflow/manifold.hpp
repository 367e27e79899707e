#pragma once

#include <optional>
#include <string>
#include <vector>

#include "tunnelflow/hamflow.hpp"

namespace tunnelflow {

struct CurvePoint {
    double x0, x, p, S, J;
};

/// Time slice of a fan, ordered by label.
struct LagrangianCurve {
    double t = 0.0;
    std::vector<CurvePoint> points;
};

/// Maximal label range on which the curve projects one-to-one on the
/// x-axis. Branch interiors keep one sign of J; boundaries sit at J sign
/// changes or curve endpoints.
struct Branch {
    std::size_t first = 0;  ///< inclusive index range into the curve
    std::size_t last = 0;
    bool increasing = true;
    double x_min = 0.0, x_max = 0.0;
    /// Coverage window including the small extrapolation past fold-side
    /// boundaries (the true turning point lies between samples; queries in
    /// that sliver clamp to the boundary point).
    double x_lo_ext = 0.0, x_hi_ext = 0.0;
};

struct Candidate {
    double S, p, J, x0;
    std::size_t branch_id;
};

class BranchField {
public:
    BranchField(LagrangianCurve curve, std::vector<Branch> branches)
        : curve_(std::move(curve)), branches_(std::move(branches)) {}

    const LagrangianCurve& curve() const { return curve_; }
    const std::vector<Branch>& branches() const { return branches_; }

    /// All branch values over the query point; exactly one entry per
    /// branch whose projection covers x.
    std::vector<Candidate> candidates(double x) const;

    /// Value of one specific branch at x, when covered.
    std::optional<Candidate> eval_branch(std::size_t branch_id, double x) const;

private:
    LagrangianCurve curve_;
    std::vector<Branch> branches_;
};

struct Kink {
    double x = 0.0;
    std::size_t branch_left = 0, branch_right = 0;
    double p_left = 0.0, p_right = 0.0;
};

/// Global phase phi(x,t) = min over branches of S_j(x,t) with the winning
/// branch per grid point and the refined locations where the winner changes.
struct GlobalPhase {
    double t = 0.0;
    std::vector<double> xgrid;
    std::vector<double> phi;
    std::vector<double> p_win;
    std::vector<std::size_t> winner;
    std::vector<Kink> kinks;
};

struct Stratum {
    int id = 0;
    double birth_time = 0.0;
    std::vector<double> t;
    std::vector<double> x;
};

/// Time slice of the fan with linear interpolation between stored nodes.
LagrangianCurve snapshot(const TrajectoryFan& fan, double t);

/// Splits the curve into maximal single-valued branches. Throws when the
/// projection is not proper (pathologically many branches).
BranchField branch_decompose(const LagrangianCurve& curve, std::size_t max_branches = 64);

GlobalPhase min_action(const BranchField& field, const std::vector<double>& xgrid,
                       double xtol = 1e-6);

/// Tracks min-action kinks across the sample times into continuous strata
/// by nearest-neighbor continuation.
std::vector<Stratum> singular_support(const TrajectoryFan& fan,
                                      const std::vector<double>& tsample,
                                      const std::vector<double>& xgrid, double xtol = 1e-6);

void write_phase_csv(const GlobalPhase& phase, const std::string& path);
void write_strata_csv(const std::vector<Stratum>& strata, const std::string& path);

}  // namespace tunnelflow
