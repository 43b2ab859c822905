#include "policyfx/synthcontrol.hpp"

#include "policyfx/error.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <future>
#include <limits>
#include <numeric>
#include <thread>

namespace policyfx {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double largest_eigenvalue(const Eigen::MatrixXd& gram) {
    const auto n = gram.rows();
    Eigen::VectorXd v = Eigen::VectorXd::Ones(n) / std::sqrt(static_cast<double>(n));
    double lambda = 0.0;
    for (int i = 0; i < 200; ++i) {
        const Eigen::VectorXd next = gram * v;
        const double norm = next.norm();
        if (norm == 0.0) {
            return 0.0;
        }
        v = next / norm;
        const double estimate = v.dot(gram * v);
        if (std::abs(estimate - lambda) <= 1e-12 * std::abs(estimate)) {
            return estimate;
        }
        lambda = estimate;
    }
    return lambda;
}

/// Minimizes ||y - X_S v||^2 subject to sum v = 1 over the support S by
/// eliminating the last support coordinate. Empty result when X_S is
/// rank-deficient on the constraint plane.
std::optional<Eigen::VectorXd> solve_on_support(const Eigen::VectorXd& y, const Eigen::MatrixXd& x,
                                                const std::vector<Eigen::Index>& support) {
    const auto s = static_cast<Eigen::Index>(support.size());
    Eigen::VectorXd v = Eigen::VectorXd::Zero(x.cols());
    if (s == 1) {
        v(support.front()) = 1.0;
        return v;
    }
    const Eigen::VectorXd last = x.col(support.back());
    Eigen::MatrixXd a(x.rows(), s - 1);
    for (Eigen::Index i = 0; i + 1 < s; ++i) {
        a.col(i) = x.col(support[static_cast<std::size_t>(i)]) - last;
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
    qr.setThreshold(1e-10);
    if (qr.rank() < s - 1) {
        return std::nullopt;
    }
    const Eigen::VectorXd z = qr.solve(y - last);
    double rest = 1.0;
    for (Eigen::Index i = 0; i + 1 < s; ++i) {
        v(support[static_cast<std::size_t>(i)]) = z(i);
        rest -= z(i);
    }
    v(support.back()) = rest;
    return v;
}

std::vector<Eigen::Index> support_of(const Eigen::VectorXd& w) {
    std::vector<Eigen::Index> s;
    for (Eigen::Index j = 0; j < w.size(); ++j) {
        if (w(j) > 0.0) {
            s.push_back(j);
        }
    }
    return s;
}

}  // namespace

Eigen::VectorXd project_to_simplex(const Eigen::VectorXd& v) {
    const auto n = v.size();
    if (n == 0) {
        return v;
    }
    std::vector<double> sorted(v.data(), v.data() + n);
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    double cumulative = 0.0;
    double theta = 0.0;
    for (Eigen::Index k = 0; k < n; ++k) {
        cumulative += sorted[static_cast<std::size_t>(k)];
        const double candidate = (cumulative - 1.0) / static_cast<double>(k + 1);
        if (sorted[static_cast<std::size_t>(k)] - candidate > 0.0) {
            theta = candidate;
        }
    }
    Eigen::VectorXd w = (v.array() - theta).max(0.0).matrix();
    const double sum = w.sum();
    if (sum > 0.0) {
        w /= sum;
    } else {
        // Only reachable through rounding with all entries equal; fall back to the barycenter.
        w.setConstant(1.0 / static_cast<double>(n));
    }
    return w;
}

WeightFit fit_weights(const Eigen::VectorXd& pre_treated, const Eigen::MatrixXd& pre_donors,
                      const WeightOptions& options) {
    const Eigen::Index rows = pre_donors.rows();
    const Eigen::Index j = pre_donors.cols();
    if (pre_treated.size() != rows) {
        throw ValidationError("treated pre-period length differs from donor matrix rows");
    }
    if (rows < 2) {
        throw ValidationError("synthetic control needs at least 2 pre-period observations");
    }
    if (j < 1) {
        throw ValidationError("synthetic control needs at least one donor");
    }
    if (!pre_treated.allFinite() || !pre_donors.allFinite()) {
        throw ValidationError("synthetic control inputs contain non-finite values");
    }
    if (!(options.tolerance > 0.0)) {
        throw ValidationError("synthetic control tolerance must be positive");
    }

    const auto& y = pre_treated;
    const auto& x = pre_donors;
    auto objective = [&](const Eigen::VectorXd& w) { return (y - x * w).squaredNorm(); };

    const Eigen::MatrixXd gram = x.transpose() * x;
    const Eigen::VectorXd xty = x.transpose() * y;
    double lipschitz = 2.0 * largest_eigenvalue(gram) * 1.01;
    if (!(lipschitz > 0.0)) {
        lipschitz = 1.0;
    }

    WeightFit fit;
    Eigen::VectorXd w = Eigen::VectorXd::Constant(j, 1.0 / static_cast<double>(j));
    double f = objective(w);
    const double scale = std::max(1.0, f);
    fit.objective_trace.push_back(f);

    bool decrease_converged = false;
    std::size_t it = 0;
    while (it < options.max_iterations) {
        ++it;
        const Eigen::VectorXd grad = 2.0 * (gram * w - xty);
        const Eigen::VectorXd z = project_to_simplex(w - grad / lipschitz);
        const double fz = objective(z);
        if (fz > f) {
            // 1/L was too long a step (eigenvalue underestimated); shrink and retry.
            lipschitz *= 2.0;
            continue;
        }
        const double decrease = f - fz;
        w = z;
        f = fz;
        fit.objective_trace.push_back(f);
        if (decrease <= options.tolerance * scale) {
            decrease_converged = true;
            break;
        }
    }
    fit.iterations = it;

    // Active-set refinement from the projected-gradient support.
    bool certified = false;
    const double kkt_tol = 1e-9 * (gram.cwiseAbs().maxCoeff() + xty.cwiseAbs().maxCoeff() + 1.0);
    auto support = support_of(w);
    for (Eigen::Index round = 0; round < 4 * j + 4 && !support.empty(); ++round) {
        const auto v = solve_on_support(y, x, support);
        if (!v) {
            break;
        }
        double min_ratio = std::numeric_limits<double>::infinity();
        Eigen::Index blocking = -1;
        for (auto s : support) {
            if ((*v)(s) < 0.0) {
                const double ratio = w(s) / (w(s) - (*v)(s));
                if (ratio < min_ratio) {
                    min_ratio = ratio;
                    blocking = s;
                }
            }
        }
        Eigen::VectorXd candidate;
        if (blocking >= 0) {
            candidate = w + min_ratio * (*v - w);
            candidate(blocking) = 0.0;
            candidate = candidate.cwiseMax(0.0);
            candidate /= candidate.sum();
        } else {
            candidate = *v;
        }
        const double fc = objective(candidate);
        if (fc > f) {
            break;
        }
        w = candidate;
        f = fc;
        fit.objective_trace.push_back(f);
        if (blocking >= 0) {
            support = support_of(w);
            continue;
        }
        const Eigen::VectorXd grad = 2.0 * (gram * w - xty);
        double level = 0.0;
        for (auto s : support) {
            level += grad(s);
        }
        level /= static_cast<double>(support.size());
        Eigen::Index entering = -1;
        double most_negative = -kkt_tol;
        for (Eigen::Index k = 0; k < j; ++k) {
            if (w(k) == 0.0 && grad(k) - level < most_negative) {
                most_negative = grad(k) - level;
                entering = k;
            }
        }
        if (entering < 0) {
            certified = true;
            break;
        }
        support.push_back(entering);
        std::sort(support.begin(), support.end());
    }

    fit.best_vertex_objective = std::numeric_limits<double>::infinity();
    for (Eigen::Index k = 0; k < j; ++k) {
        const double fv = (y - x.col(k)).squaredNorm();
        if (fv < fit.best_vertex_objective) {
            fit.best_vertex_objective = fv;
            fit.best_vertex = static_cast<std::size_t>(k);
        }
    }
    if (fit.best_vertex_objective < f) {
        w.setZero();
        w(static_cast<Eigen::Index>(fit.best_vertex)) = 1.0;
        f = fit.best_vertex_objective;
        fit.objective_trace.push_back(f);
    }

    fit.weights = std::move(w);
    fit.objective = f;
    fit.pre_rmse = std::sqrt(f / static_cast<double>(rows));
    fit.converged = decrease_converged || certified;
    return fit;
}

double rmspe_ratio(double post_rmse, double pre_rmse) {
    if (pre_rmse > 0.0) {
        return post_rmse / pre_rmse;
    }
    return post_rmse > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
}

namespace {

SynthFit fit_synth_units(const PanelDataset& panel, std::size_t treated,
                         const std::vector<std::size_t>& donors, const SynthSpec& spec) {
    if (panel.dates.empty() || !(panel.dates.front() < spec.treatment_date) ||
        spec.treatment_date > panel.dates.back()) {
        throw ValidationError("treatment date " + spec.treatment_date.iso() +
                              " is not strictly inside the panel date range");
    }
    const auto nt = panel.date_count();
    const auto tu = static_cast<Eigen::Index>(treated);
    auto donors_observed = [&](std::size_t t) {
        return std::all_of(donors.begin(), donors.end(), [&](std::size_t d) { return panel.observed(d, t); });
    };
    const Date window_start = spec.pre_window_days
                                  ? spec.treatment_date - *spec.pre_window_days
                                  : panel.dates.front();

    std::vector<std::size_t> pre;
    std::vector<std::size_t> post;
    for (std::size_t t = 0; t < nt; ++t) {
        if (!panel.observed(treated, t) || !donors_observed(t)) {
            continue;
        }
        if (panel.dates[t] >= spec.treatment_date) {
            post.push_back(t);
        } else if (panel.dates[t] >= window_start) {
            pre.push_back(t);
        }
    }
    if (post.empty()) {
        throw ValidationError("post-period for '" + panel.unit_ids[treated] + "' is entirely masked");
    }

    std::vector<std::size_t> covariates;
    for (const auto& name : spec.covariate_names) {
        const auto c = panel.covariate_index(name);
        if (!c) {
            throw ValidationError("covariate '" + name + "' not in panel");
        }
        covariates.push_back(*c);
    }

    const auto j = static_cast<Eigen::Index>(donors.size());
    const auto rows = static_cast<Eigen::Index>(pre.size() + covariates.size());
    Eigen::VectorXd y(rows);
    Eigen::MatrixXd x(rows, j);
    Eigen::Index r = 0;
    for (auto t : pre) {
        y(r) = panel.outcomes(tu, static_cast<Eigen::Index>(t));
        for (Eigen::Index k = 0; k < j; ++k) {
            x(r, k) = panel.outcomes(static_cast<Eigen::Index>(donors[static_cast<std::size_t>(k)]),
                                     static_cast<Eigen::Index>(t));
        }
        ++r;
    }
    for (auto c : covariates) {
        const auto ci = static_cast<Eigen::Index>(c);
        Eigen::VectorXd values(j + 1);
        values(0) = panel.covariates(tu, ci);
        for (Eigen::Index k = 0; k < j; ++k) {
            values(k + 1) = panel.covariates(static_cast<Eigen::Index>(donors[static_cast<std::size_t>(k)]), ci);
        }
        const double mean = values.mean();
        const double sd = std::sqrt((values.array() - mean).square().mean());
        const double inv = sd > 0.0 ? 1.0 / sd : 0.0;
        y(r) = (values(0) - mean) * inv;
        for (Eigen::Index k = 0; k < j; ++k) {
            x(r, k) = (values(k + 1) - mean) * inv;
        }
        ++r;
    }
    if (pre.size() < 2) {
        throw ValidationError("fewer than 2 usable pre-period dates for '" + panel.unit_ids[treated] + "'");
    }

    const auto weights = fit_weights(y, x, {spec.max_iterations, spec.tolerance});

    SynthFit fit;
    fit.treated_unit = panel.unit_ids[treated];
    for (auto d : donors) {
        fit.donor_units.push_back(panel.unit_ids[d]);
    }
    fit.treatment_date = spec.treatment_date;
    fit.dates = panel.dates;
    fit.weights = weights.weights;
    fit.converged = weights.converged;
    fit.iterations = weights.iterations;
    fit.objective = weights.objective;

    const auto n = static_cast<Eigen::Index>(nt);
    fit.observed = Eigen::VectorXd::Constant(n, kNaN);
    fit.counterfactual = Eigen::VectorXd::Constant(n, kNaN);
    fit.gap = Eigen::VectorXd::Constant(n, kNaN);
    for (std::size_t t = 0; t < nt; ++t) {
        const auto ti = static_cast<Eigen::Index>(t);
        if (panel.observed(treated, t)) {
            fit.observed(ti) = panel.outcomes(tu, ti);
        }
        if (donors_observed(t)) {
            double cf = 0.0;
            for (Eigen::Index k = 0; k < j; ++k) {
                cf += fit.weights(k) *
                      panel.outcomes(static_cast<Eigen::Index>(donors[static_cast<std::size_t>(k)]), ti);
            }
            fit.counterfactual(ti) = cf;
            if (panel.observed(treated, t)) {
                fit.gap(ti) = fit.observed(ti) - cf;
            }
        }
    }
    auto rms = [&](const std::vector<std::size_t>& idx) {
        double s = 0.0;
        for (auto t : idx) {
            s += fit.gap(static_cast<Eigen::Index>(t)) * fit.gap(static_cast<Eigen::Index>(t));
        }
        return std::sqrt(s / static_cast<double>(idx.size()));
    };
    fit.pre_rmse = rms(pre);
    fit.post_rmse = rms(post);
    fit.post_pre_ratio = rmspe_ratio(fit.post_rmse, fit.pre_rmse);
    double post_sum = 0.0;
    for (auto t : post) {
        post_sum += fit.gap(static_cast<Eigen::Index>(t));
    }
    fit.mean_post_gap = post_sum / static_cast<double>(post.size());
    fit.pre_count = pre.size();
    fit.post_count = post.size();
    return fit;
}

std::size_t require_unit(const PanelDataset& panel, const std::string& id, std::string_view role) {
    const auto idx = panel.unit_index(id);
    if (!idx) {
        throw ValidationError(std::string(role) + " unit '" + id + "' not in panel");
    }
    return *idx;
}

}  // namespace

SynthFit fit_synth(const PanelDataset& panel, const SynthSpec& spec) {
    const auto treated = require_unit(panel, spec.treated_unit, "treated");
    if (spec.donor_units.size() < 2) {
        throw ValidationError("synthetic control needs at least 2 donor units");
    }
    std::vector<std::size_t> donors;
    for (const auto& d : spec.donor_units) {
        if (d == spec.treated_unit) {
            throw ValidationError("treated unit '" + d + "' is also listed as a donor");
        }
        const auto idx = require_unit(panel, d, "donor");
        if (std::find(donors.begin(), donors.end(), idx) != donors.end()) {
            throw ValidationError("donor '" + d + "' listed twice");
        }
        donors.push_back(idx);
    }
    return fit_synth_units(panel, treated, donors, spec);
}

RandomizationResult randomization_inference(const PanelDataset& panel, const SynthSpec& spec,
                                            const SynthFit& fit) {
    std::vector<std::size_t> donors;
    for (const auto& d : spec.donor_units) {
        donors.push_back(require_unit(panel, d, "donor"));
    }

    struct Outcome {
        std::optional<PlaceboGap> placebo;
        std::string error;
    };
    auto run_one = [&](std::size_t k) {
        Outcome out;
        std::vector<std::size_t> pool;
        for (std::size_t m = 0; m < donors.size(); ++m) {
            if (m != k) {
                pool.push_back(donors[m]);
            }
        }
        try {
            const auto pf = fit_synth_units(panel, donors[k], pool, spec);
            out.placebo = PlaceboGap{pf.treated_unit, pf.gap, pf.pre_rmse, pf.post_rmse, pf.post_pre_ratio};
        } catch (const Error& e) {
            out.error = e.what();
        }
        return out;
    };

    // Each refit writes only its own slot; the reduction below runs in donor order.
    std::vector<Outcome> outcomes(donors.size());
    const std::size_t workers = std::max(1u, std::thread::hardware_concurrency());
    for (std::size_t begin = 0; begin < donors.size(); begin += workers) {
        const std::size_t end = std::min(donors.size(), begin + workers);
        std::vector<std::future<Outcome>> batch;
        for (std::size_t k = begin; k < end; ++k) {
            batch.push_back(std::async(std::launch::async, run_one, k));
        }
        for (std::size_t k = begin; k < end; ++k) {
            outcomes[k] = batch[k - begin].get();
        }
    }

    RandomizationResult result;
    std::size_t at_least = 0;
    for (std::size_t k = 0; k < donors.size(); ++k) {
        auto& o = outcomes[k];
        if (!o.placebo) {
            result.skipped.emplace_back(panel.unit_ids[donors[k]], o.error);
            continue;
        }
        if (o.placebo->post_pre_ratio >= fit.post_pre_ratio) {
            ++at_least;
        }
        result.placebo_gaps.push_back(std::move(*o.placebo));
    }
    result.p_value = static_cast<double>(1 + at_least) /
                     static_cast<double>(1 + result.placebo_gaps.size());
    return result;
}

void attach_inference(SynthFit& fit, RandomizationResult result) {
    fit.p_value = result.p_value;
    fit.placebo_gaps = std::move(result.placebo_gaps);
    fit.skipped_placebos = std::move(result.skipped);
}

}  // namespace policyfx
