#pragma once

#include "policyfx/date.hpp"
#include "policyfx/paneldata.hpp"

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace policyfx {

struct SynthSpec {
    std::string treated_unit;
    std::vector<std::string> donor_units;
    Date treatment_date;  ///< T0: first post-treatment day
    std::size_t max_iterations = 10000;
    double tolerance = 1e-8;
    /// Unit-level covariates matched alongside pre-period outcomes; each is
    /// standardized across treated + donors and enters as one extra row with
    /// the same weight as a pre-period day.
    std::vector<std::string> covariate_names;
    /// When set, only the last N days before T0 form the pre-period.
    std::optional<int> pre_window_days;
};

struct WeightOptions {
    std::size_t max_iterations = 10000;
    double tolerance = 1e-8;
};

struct WeightFit {
    Eigen::VectorXd weights;
    double objective = 0.0;  ///< ||y - X w||^2
    double pre_rmse = 0.0;   ///< sqrt(objective / rows)
    bool converged = false;
    std::size_t iterations = 0;
    /// Objective after every accepted step, starting at the uniform start.
    std::vector<double> objective_trace;
    std::size_t best_vertex = 0;
    double best_vertex_objective = 0.0;
};

/// Euclidean projection onto {w : w >= 0, sum w = 1} (sort-based).
Eigen::VectorXd project_to_simplex(const Eigen::VectorXd& v);

/// Simplex-constrained least squares: min ||pre_treated - pre_donors w||^2.
///
/// Projected gradient with step 1/L from uniform weights, followed by an
/// active-set refinement on the iterate's support. The refinement only
/// replaces the iterate when it does not increase the objective, and the
/// result is never worse than the best single-donor vertex. Returns the best
/// iterate with `converged = false` when neither the decrease test nor the
/// optimality check passed within max_iterations.
WeightFit fit_weights(const Eigen::VectorXd& pre_treated, const Eigen::MatrixXd& pre_donors,
                      const WeightOptions& options = {});

struct PlaceboGap {
    std::string unit;
    Eigen::VectorXd gap;  ///< per panel date, NaN where undefined
    double pre_rmse = 0.0;
    double post_rmse = 0.0;
    double post_pre_ratio = 0.0;
};

struct SynthFit {
    std::string treated_unit;
    std::vector<std::string> donor_units;
    Date treatment_date;
    std::vector<Date> dates;
    Eigen::VectorXd weights;  ///< aligned with donor_units

    /// Per panel date; NaN where the treated unit or any donor is masked.
    Eigen::VectorXd observed;
    Eigen::VectorXd counterfactual;
    Eigen::VectorXd gap;

    double pre_rmse = 0.0;
    double post_rmse = 0.0;
    double post_pre_ratio = 0.0;  ///< post RMSPE / pre RMSPE
    double mean_post_gap = 0.0;
    std::size_t pre_count = 0;
    std::size_t post_count = 0;

    bool converged = false;
    std::size_t iterations = 0;
    double objective = 0.0;

    /// Filled by randomization inference.
    std::optional<double> p_value;
    std::vector<PlaceboGap> placebo_gaps;
    std::vector<std::pair<std::string, std::string>> skipped_placebos;
};

SynthFit fit_synth(const PanelDataset& panel, const SynthSpec& spec);

struct RandomizationResult {
    double p_value = 1.0;
    std::vector<PlaceboGap> placebo_gaps;  ///< in donor order, skipped ones omitted
    std::vector<std::pair<std::string, std::string>> skipped;  ///< unit, reason
};

/// Refits with each donor as pseudo-treated against the remaining donors.
/// p = (1 + #{placebo ratio >= treated ratio}) / (J + 1 - skipped).
/// Placebo refits run concurrently; the result does not depend on scheduling.
RandomizationResult randomization_inference(const PanelDataset& panel, const SynthSpec& spec,
                                            const SynthFit& fit);

/// Copies p-value and placebo series into the fit.
void attach_inference(SynthFit& fit, RandomizationResult result);

/// post RMSPE / pre RMSPE with 0/0 = 0 and x/0 = inf.
double rmspe_ratio(double post_rmse, double pre_rmse);

}  // namespace policyfx
