#include "policyfx/did.hpp"

#include "policyfx/error.hpp"
#include "policyfx/ols.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <set>

namespace policyfx {

namespace {

struct UnitRole {
    std::size_t index;
    bool treated;
};

/// Units of the spec in canonical (sorted id) order, so row stacking does not
/// depend on the panel's unit order.
std::vector<UnitRole> resolve_units(const PanelDataset& panel, const DidSpec& spec) {
    if (spec.treated_units.empty() || spec.control_units.empty()) {
        throw ValidationError("DiD needs non-empty treated and control groups");
    }
    std::set<std::string> treated(spec.treated_units.begin(), spec.treated_units.end());
    std::set<std::string> control(spec.control_units.begin(), spec.control_units.end());
    for (const auto& t : treated) {
        if (control.count(t)) {
            throw ValidationError("unit '" + t + "' is both treated and control");
        }
    }
    std::vector<std::pair<std::string, bool>> all;
    for (const auto& t : treated) all.emplace_back(t, true);
    for (const auto& c : control) all.emplace_back(c, false);
    std::sort(all.begin(), all.end());

    std::vector<UnitRole> roles;
    std::string missing;
    for (const auto& [id, is_treated] : all) {
        if (auto idx = panel.unit_index(id)) {
            roles.push_back({*idx, is_treated});
        } else {
            missing += (missing.empty() ? "" : ", ") + id;
        }
    }
    if (!missing.empty()) {
        throw ValidationError("unit(s) not in panel: " + missing);
    }
    return roles;
}

struct CovariateColumns {
    std::vector<std::string> names;
    Eigen::MatrixXd values;  ///< unit x column
};

CovariateColumns expand_covariates(const PanelDataset& panel, const std::vector<std::string>& names) {
    CovariateColumns out;
    out.values.resize(static_cast<Eigen::Index>(panel.unit_count()), 0);
    auto append = [&](const std::string& name, const Eigen::VectorXd& col) {
        out.names.push_back(name);
        out.values.conservativeResize(Eigen::NoChange, out.values.cols() + 1);
        out.values.col(out.values.cols() - 1) = col;
    };
    for (const auto& name : names) {
        if (auto c = panel.covariate_index(name)) {
            append(name, panel.covariates.col(static_cast<Eigen::Index>(*c)));
        } else if (auto k = panel.categorical_index(name)) {
            const auto& values = panel.categorical_values[*k];
            std::set<std::string> levels(values.begin(), values.end());
            bool baseline = true;
            for (const auto& level : levels) {
                if (baseline) {
                    baseline = false;
                    continue;
                }
                Eigen::VectorXd col(static_cast<Eigen::Index>(values.size()));
                for (std::size_t u = 0; u < values.size(); ++u) {
                    col(static_cast<Eigen::Index>(u)) = values[u] == level ? 1.0 : 0.0;
                }
                append(name + "=" + level, col);
            }
        } else {
            throw ValidationError("covariate '" + name + "' not in panel");
        }
    }
    return out;
}

double two_sided_p(double t, double dof) {
    if (std::isnan(t)) {
        return 1.0;
    }
    if (std::isinf(t)) {
        return 0.0;
    }
    const boost::math::students_t dist(dof);
    return std::clamp(2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t))), 0.0, 1.0);
}

}  // namespace

DidFit fit_did(const PanelDataset& panel, const DidSpec& spec) {
    const auto roles = resolve_units(panel, spec);
    if (panel.dates.empty() || !(panel.dates.front() < spec.treatment_date) ||
        spec.treatment_date > panel.dates.back()) {
        throw ValidationError("treatment date " + spec.treatment_date.iso() +
                              " is not strictly inside the panel date range");
    }
    const auto covs = expand_covariates(panel, spec.covariate_names);

    const double center = 0.5 * static_cast<double>(panel.dates.back() - panel.dates.front());
    std::size_t counts[2][2] = {{0, 0}, {0, 0}};  // [treated][post]
    std::size_t n = 0;
    for (const auto& r : roles) {
        for (std::size_t t = 0; t < panel.date_count(); ++t) {
            if (panel.observed(r.index, t)) {
                ++counts[r.treated][panel.dates[t] >= spec.treatment_date];
                ++n;
            }
        }
    }
    if (counts[0][1] == 0 && counts[1][1] == 0) {
        throw ValidationError("empty post-period: no observations on or after " + spec.treatment_date.iso());
    }
    for (int g = 0; g < 2; ++g) {
        for (int post = 0; post < 2; ++post) {
            if (counts[g][post] < 2) {
                throw ValidationError(std::string("fewer than 2 observations for the ") +
                                      (g ? "treated" : "control") + " group " +
                                      (post ? "on/after " : "before ") + spec.treatment_date.iso());
            }
        }
    }

    std::vector<std::string> names{"intercept", "treated_x_post", "treated_group", "post_period"};
    names.insert(names.end(), covs.names.begin(), covs.names.end());
    if (spec.time_trend) {
        names.emplace_back("time");
    }
    const auto p = static_cast<Eigen::Index>(names.size());
    Eigen::MatrixXd x(static_cast<Eigen::Index>(n), p);
    Eigen::VectorXd y(static_cast<Eigen::Index>(n));
    Eigen::Index row = 0;
    for (const auto& r : roles) {
        for (std::size_t t = 0; t < panel.date_count(); ++t) {
            if (!panel.observed(r.index, t)) {
                continue;
            }
            const double post = panel.dates[t] >= spec.treatment_date ? 1.0 : 0.0;
            const double group = r.treated ? 1.0 : 0.0;
            x(row, 0) = 1.0;
            x(row, 1) = group * post;
            x(row, 2) = group;
            x(row, 3) = post;
            for (Eigen::Index c = 0; c < covs.values.cols(); ++c) {
                x(row, 4 + c) = covs.values(static_cast<Eigen::Index>(r.index), c);
            }
            if (spec.time_trend) {
                x(row, p - 1) = static_cast<double>(panel.dates[t] - panel.dates.front()) - center;
            }
            y(row) = panel.outcomes(static_cast<Eigen::Index>(r.index), static_cast<Eigen::Index>(t));
            ++row;
        }
    }

    const auto ols = solve_ols(x, y, names);
    if (ols.dof == 0) {
        throw ValidationError("DiD design has no residual degrees of freedom");
    }

    DidFit fit;
    fit.alpha = ols.coefficients(0);
    fit.beta0 = ols.coefficients(1);
    fit.group_effect = ols.coefficients(2);
    fit.post_effect = ols.coefficients(3);
    for (std::size_t c = 0; c < covs.names.size(); ++c) {
        fit.covariate_betas.emplace_back(covs.names[c], ols.coefficients(4 + static_cast<Eigen::Index>(c)));
    }
    if (spec.time_trend) {
        fit.gamma = ols.coefficients(p - 1);
    }
    fit.stderr_beta0 = ols.stderrs(1);
    fit.n_obs = n;
    fit.dof = static_cast<std::size_t>(ols.dof);
    const double dof = static_cast<double>(ols.dof);
    if (fit.stderr_beta0 > 0.0) {
        fit.t_statistic = fit.beta0 / fit.stderr_beta0;
    } else {
        // Exact fit: any nonzero effect is infinitely significant.
        fit.t_statistic = fit.beta0 == 0.0 ? 0.0 : std::copysign(INFINITY, fit.beta0);
    }
    fit.p_value = two_sided_p(fit.t_statistic, dof);
    const double q = boost::math::quantile(boost::math::students_t(dof), 0.975);
    fit.confidence_interval = {fit.beta0 - q * fit.stderr_beta0, fit.beta0 + q * fit.stderr_beta0};
    return fit;
}

TrendGap parallel_trends_diagnostic(const PanelDataset& panel, const DidSpec& spec) {
    const auto roles = resolve_units(panel, spec);
    std::size_t pre_dates = 0;
    for (const auto& d : panel.dates) {
        pre_dates += d < spec.treatment_date;
    }
    if (pre_dates < 3) {
        throw ValidationError("parallel-trends diagnostic unavailable: " + std::to_string(pre_dates) +
                              " pre-period dates (need >= 3)");
    }
    const double center = 0.5 * static_cast<double>(pre_dates - 1);
    std::vector<double> rows;
    std::vector<double> ys;
    for (const auto& r : roles) {
        for (std::size_t t = 0; t < pre_dates; ++t) {
            if (!panel.observed(r.index, t)) {
                continue;
            }
            const double g = r.treated ? 1.0 : 0.0;
            const double time = static_cast<double>(panel.dates[t] - panel.dates.front()) - center;
            rows.insert(rows.end(), {1.0, g, time, g * time});
            ys.push_back(panel.outcomes(static_cast<Eigen::Index>(r.index), static_cast<Eigen::Index>(t)));
        }
    }
    const auto n = static_cast<Eigen::Index>(ys.size());
    const Eigen::MatrixXd x = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, 4, Eigen::RowMajor>>(
        rows.data(), n, 4);
    const Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(ys.data(), n);
    const std::vector<std::string> names{"intercept", "treated_group", "time", "treated_x_time"};
    if (n <= 4) {
        throw ValidationError("parallel-trends diagnostic unavailable: too few observed pre-period cells");
    }
    const auto ols = solve_ols(x, y, names);
    return {ols.coefficients(3), ols.stderrs(3)};
}

}  // namespace policyfx
