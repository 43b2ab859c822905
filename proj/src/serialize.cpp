#include "policyfx/serialize.hpp"

#include "policyfx/csv.hpp"
#include "policyfx/error.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace policyfx {

namespace {

Json number_or_null(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

Json dated_series(std::span<const Date> dates, const Eigen::VectorXd& values) {
    Json arr = Json::array();
    for (std::size_t t = 0; t < dates.size(); ++t) {
        arr.push_back(Json::array({dates[t].iso(), number_or_null(values(static_cast<Eigen::Index>(t)))}));
    }
    return arr;
}

std::string cell(double v) { return std::isfinite(v) ? csv::format_double(v) : "NA"; }

}  // namespace

void write_file_atomic(const std::filesystem::path& path, std::string_view content) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw IoError("cannot open '" + tmp.string() + "' for writing");
        }
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        out.flush();
        if (!out) {
            std::error_code ignored;
            std::filesystem::remove(tmp, ignored);
            throw IoError("failed writing '" + tmp.string() + "'");
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::error_code ignored;
        std::filesystem::remove(tmp, ignored);
        throw IoError("cannot move '" + tmp.string() + "' to '" + path.string() + "': " + ec.message());
    }
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open '" + path.string() + "'");
    }
    std::ostringstream s;
    s << in.rdbuf();
    if (in.bad()) {
        throw IoError("failed reading '" + path.string() + "'");
    }
    return s.str();
}

std::string dump_json(const Json& doc) { return doc.dump(2) + "\n"; }

std::string format_decimal(double value) {
    std::string s = csv::format_double(value);
    if (std::isfinite(value) && s.find_first_of(".eE") == std::string::npos) {
        s += ".0";
    }
    return s;
}

double quantile(std::vector<double> values, double q) {
    std::erase_if(values, [](double v) { return !std::isfinite(v); });
    if (values.empty()) {
        return std::numeric_limits<double>::quiet_NaN();
    }
    std::sort(values.begin(), values.end());
    const double pos = q * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return values[lo] + frac * (values[hi] - values[lo]);
}

Json to_json(const DidFit& fit) {
    Json doc;
    doc["alpha"] = fit.alpha;
    doc["beta0"] = fit.beta0;
    doc["group_effect"] = fit.group_effect;
    doc["post_effect"] = fit.post_effect;
    Json betas = Json::object();
    for (const auto& [name, value] : fit.covariate_betas) {
        betas[name] = value;
    }
    doc["covariate_betas"] = betas;
    doc["gamma"] = fit.gamma ? Json(*fit.gamma) : Json(nullptr);
    doc["stderr_beta0"] = number_or_null(fit.stderr_beta0);
    doc["t_statistic"] = number_or_null(fit.t_statistic);
    doc["p_value"] = number_or_null(fit.p_value);
    doc["confidence_interval"] = Json::array({number_or_null(fit.confidence_interval.first),
                                              number_or_null(fit.confidence_interval.second)});
    doc["n_obs"] = fit.n_obs;
    doc["dof"] = fit.dof;
    return doc;
}

Json to_json(const TrendGap& gap) {
    return Json{{"slope_gap", gap.slope_gap}, {"slope_gap_stderr", number_or_null(gap.slope_gap_stderr)}};
}

Json to_json(const SynthFit& fit) {
    Json doc;
    doc["treated_unit"] = fit.treated_unit;
    doc["treatment_date"] = fit.treatment_date.iso();
    Json weights = Json::object();
    for (std::size_t j = 0; j < fit.donor_units.size(); ++j) {
        weights[fit.donor_units[j]] = fit.weights(static_cast<Eigen::Index>(j));
    }
    doc["weights"] = weights;
    doc["pre_rmse"] = fit.pre_rmse;
    doc["post_rmse"] = fit.post_rmse;
    doc["post_pre_ratio"] = number_or_null(fit.post_pre_ratio);
    doc["mean_post_gap"] = fit.mean_post_gap;
    doc["pre_count"] = fit.pre_count;
    doc["post_count"] = fit.post_count;
    doc["converged"] = fit.converged;
    doc["iterations"] = fit.iterations;
    doc["objective"] = fit.objective;
    doc["p_value"] = fit.p_value ? Json(*fit.p_value) : Json(nullptr);
    Json skipped = Json::array();
    for (const auto& [unit, reason] : fit.skipped_placebos) {
        skipped.push_back(Json{{"unit", unit}, {"reason", reason}});
    }
    doc["skipped_placebos"] = skipped;
    doc["observed"] = dated_series(fit.dates, fit.observed);
    doc["counterfactual"] = dated_series(fit.dates, fit.counterfactual);
    doc["gap"] = dated_series(fit.dates, fit.gap);
    Json placebos = Json::object();
    for (const auto& p : fit.placebo_gaps) {
        placebos[p.unit] = Json{{"pre_rmse", p.pre_rmse},
                                {"post_rmse", p.post_rmse},
                                {"post_pre_ratio", number_or_null(p.post_pre_ratio)},
                                {"gap", dated_series(fit.dates, p.gap)}};
    }
    doc["placebo_gaps"] = placebos;
    return doc;
}

std::string synth_plot_csv(const SynthFit& fit) {
    std::ostringstream out;
    csv::write_row(out, std::vector<std::string>{"date", "observed", "counterfactual", "gap", "placebo_q05",
                                                 "placebo_q50", "placebo_q95"});
    for (std::size_t t = 0; t < fit.dates.size(); ++t) {
        const auto i = static_cast<Eigen::Index>(t);
        std::vector<double> gaps;
        for (const auto& p : fit.placebo_gaps) {
            gaps.push_back(p.gap(i));
        }
        csv::write_row(out, std::vector<std::string>{fit.dates[t].iso(), cell(fit.observed(i)),
                                                     cell(fit.counterfactual(i)), cell(fit.gap(i)),
                                                     cell(quantile(gaps, 0.05)), cell(quantile(gaps, 0.5)),
                                                     cell(quantile(gaps, 0.95))});
    }
    return out.str();
}

Json to_json(const Segmentation& seg, std::span<const Date> dates) {
    Json doc;
    doc["n"] = seg.n;
    doc["segments"] = seg.k();
    doc["breakpoints"] = seg.breakpoints;
    if (!dates.empty()) {
        Json bd = Json::array();
        for (auto b : seg.breakpoints) {
            bd.push_back(dates[b].iso());
        }
        doc["breakpoint_dates"] = bd;
    }
    doc["segment_means"] = seg.segment_means;
    doc["total_cost"] = seg.total_cost;
    doc["penalty"] = seg.penalty;
    return doc;
}

std::string segmentation_plot_csv(const Segmentation& seg, std::span<const double> series,
                                  std::span<const Date> dates) {
    std::ostringstream out;
    csv::write_row(out, std::vector<std::string>{dates.empty() ? "index" : "date", "value", "segment_mean"});
    std::size_t segment = 0;
    for (std::size_t t = 0; t < series.size(); ++t) {
        while (segment < seg.breakpoints.size() && t >= seg.breakpoints[segment]) {
            ++segment;
        }
        csv::write_row(out, std::vector<std::string>{dates.empty() ? std::to_string(t) : dates[t].iso(),
                                                     cell(series[t]), cell(seg.segment_means[segment])});
    }
    return out.str();
}

std::string persona_counts_csv(const PersonaCountSeries& series) {
    std::ostringstream out;
    std::vector<std::string> header{"window_start"};
    header.insert(header.end(), series.persona_names.begin(), series.persona_names.end());
    csv::write_row(out, header);
    for (Eigen::Index w = 0; w < series.counts.rows(); ++w) {
        std::vector<std::string> row{series.window_starts[static_cast<std::size_t>(w)].iso()};
        for (Eigen::Index c = 0; c < series.counts.cols(); ++c) {
            row.push_back(std::to_string(series.counts(w, c)));
        }
        csv::write_row(out, row);
    }
    return out.str();
}

std::string persona_zscores_csv(const PersonaCountSeries& series) {
    std::ostringstream out;
    std::vector<std::string> header{"window_start"};
    header.insert(header.end(), series.persona_names.begin(), series.persona_names.end());
    csv::write_row(out, header);
    for (Eigen::Index w = 0; w < series.zscores.rows(); ++w) {
        std::vector<std::string> row{series.window_starts[static_cast<std::size_t>(w + 1)].iso()};
        for (Eigen::Index c = 0; c < series.zscores.cols(); ++c) {
            row.push_back(cell(series.zscores(w, c)));
        }
        csv::write_row(out, row);
    }
    return out.str();
}

Json to_json(const PersonaModel& model) {
    Json doc;
    doc["persona_names"] = model.persona_names;
    doc["feature_names"] = model.feature_names;
    Json rows = Json::array();
    for (Eigen::Index c = 0; c < model.centroids.rows(); ++c) {
        Json row = Json::array();
        for (Eigen::Index f = 0; f < model.centroids.cols(); ++f) {
            row.push_back(model.centroids(c, f));
        }
        rows.push_back(row);
    }
    doc["centroids"] = rows;
    return doc;
}

PersonaModel persona_model_from_json(const Json& doc) {
    PersonaModel model;
    try {
        model.persona_names = doc.at("persona_names").get<std::vector<std::string>>();
        model.feature_names = doc.at("feature_names").get<std::vector<std::string>>();
        const auto rows = doc.at("centroids").get<std::vector<std::vector<double>>>();
        const auto k = static_cast<Eigen::Index>(rows.size());
        const auto d = static_cast<Eigen::Index>(model.feature_names.size());
        model.centroids.resize(k, d);
        for (Eigen::Index c = 0; c < k; ++c) {
            if (static_cast<Eigen::Index>(rows[static_cast<std::size_t>(c)].size()) != d) {
                throw ValidationError("persona model: centroid " + std::to_string(c) + " has the wrong width");
            }
            for (Eigen::Index f = 0; f < d; ++f) {
                model.centroids(c, f) = rows[static_cast<std::size_t>(c)][static_cast<std::size_t>(f)];
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("persona model: ") + e.what());
    }
    if (model.k() < 2 || model.persona_names.size() != model.k()) {
        throw ValidationError("persona model needs at least two named centroids");
    }
    model.frozen = true;
    return model;
}

}  // namespace policyfx
