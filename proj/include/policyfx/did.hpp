#pragma once

#include "policyfx/date.hpp"
#include "policyfx/paneldata.hpp"

#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace policyfx {

struct DidSpec {
    std::vector<std::string> treated_units;
    std::vector<std::string> control_units;
    Date treatment_date;  ///< T0: first post-treatment day
    /// Numeric covariates enter as-is; categorical ones expand to k-1 dummies
    /// with the alphabetically first level as baseline.
    std::vector<std::string> covariate_names;
    bool time_trend = true;
};

/// Two-way DiD fit. `beta0` is the coefficient on treated x post.
struct DidFit {
    double alpha = 0.0;
    double beta0 = 0.0;
    double group_effect = 0.0;  ///< treated-group level shift
    double post_effect = 0.0;   ///< common post-period shift
    std::vector<std::pair<std::string, double>> covariate_betas;
    std::optional<double> gamma;  ///< per-day trend, absent when disabled
    double stderr_beta0 = 0.0;
    double t_statistic = 0.0;
    double p_value = 1.0;
    std::pair<double, double> confidence_interval{0.0, 0.0};  ///< 95%
    std::size_t n_obs = 0;
    std::size_t dof = 0;
};

struct TrendGap {
    double slope_gap = 0.0;  ///< treated minus control pre-period slope, per day
    double slope_gap_stderr = 0.0;
};

/// Y = alpha + beta0 D + g G + p P + X b + gamma t + e over all observed cells
/// of the spec's units; t is days from the first panel date, centered.
DidFit fit_did(const PanelDataset& panel, const DidSpec& spec);

/// Group-specific linear trends on pre-T0 data.
TrendGap parallel_trends_diagnostic(const PanelDataset& panel, const DidSpec& spec);

}  // namespace policyfx
