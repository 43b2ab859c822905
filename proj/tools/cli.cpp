#include "cli.hpp"

#include "policyfx/changepoint.hpp"
#include "policyfx/csv.hpp"
#include "policyfx/did.hpp"
#include "policyfx/error.hpp"
#include "policyfx/paneldata.hpp"
#include "policyfx/persona.hpp"
#include "policyfx/serialize.hpp"
#include "policyfx/simgen.hpp"
#include "policyfx/synthcontrol.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <sstream>

namespace policyfx::cli {

namespace {

namespace fs = std::filesystem;

struct Global {
    std::string out_dir;
    std::string format = "json";
    std::optional<std::uint64_t> seed;
    bool quiet = false;
};

class Context {
public:
    Context(const Global& g, std::ostream& out, std::ostream& err) : global(g), out(out), err_(err) {}

    void log(const std::string& message) const {
        if (!global.quiet) {
            err_ << message << '\n';
        }
    }

    fs::path out_dir() const {
        std::string dir = global.out_dir;
        if (dir.empty()) {
            if (const char* env = std::getenv("POLICYFX_OUT")) {
                dir = env;
            }
        }
        if (dir.empty()) {
            dir = ".";
        }
        std::error_code ec;
        fs::create_directories(dir, ec);
        if (ec || !fs::is_directory(dir)) {
            throw IoError("cannot create output directory '" + dir + "'");
        }
        return dir;
    }

    bool csv() const { return global.format == "csv"; }

    /// Files are staged in memory and written only once the command has succeeded.
    void stage(std::string name, std::string content) { files_.emplace_back(std::move(name), std::move(content)); }

    void commit() {
        const auto dir = out_dir();
        for (const auto& [name, content] : files_) {
            write_file_atomic(dir / name, content);
            log("wrote " + (dir / name).string());
        }
    }

    const Global& global;
    std::ostream& out;

private:
    std::ostream& err_;
    std::vector<std::pair<std::string, std::string>> files_;
};

[[noreturn]] void rethrow_in(const Error& e, const std::string& where) {
    const std::string msg = where + ": " + e.what();
    switch (e.kind()) {
        case ErrorKind::Parse: throw ParseError(msg);
        case ErrorKind::Validation: throw ValidationError(msg);
        case ErrorKind::Numerical: throw NumericalError(msg);
        case ErrorKind::Io: throw IoError(msg);
    }
    throw ValidationError(msg);
}

template <typename F>
auto with_source(const std::string& path, F&& parse) {
    const std::string text = read_file(path);
    std::istringstream in(text);
    try {
        return parse(in);
    } catch (const Error& e) {
        rethrow_in(e, "'" + path + "'");
    }
}

PanelDataset load_panel(const std::string& path) {
    return with_source(path, [](std::istream& in) { return read_panel(in); });
}

std::size_t require_unit(const PanelDataset& panel, const std::string& unit) {
    const auto idx = panel.unit_index(unit);
    if (!idx) {
        throw ValidationError("unit '" + unit + "' is not in the panel");
    }
    return *idx;
}

std::string group_suffix(std::string_view id) {
    const auto sep = id.find(kGroupSeparator);
    return sep == std::string_view::npos ? "" : std::string(id.substr(sep + 1));
}

struct ResolvedDate {
    Date date;
    std::optional<EventKind> event;
};

ResolvedDate resolve_date(const PanelDataset& panel, const std::string& unit, const std::string& date_text,
                          const std::string& event) {
    if (!date_text.empty()) {
        return {Date::parse(date_text), std::nullopt};
    }
    const EventKind kind = event == "deactivation" ? EventKind::Deactivation : EventKind::Activation;
    const auto u = require_unit(panel, unit);
    if (!panel.policy_codes) {
        throw ValidationError("panel has no policy codes; pass --date");
    }
    for (const auto& e : panel_treatment_events(panel, u)) {
        if (e.kind == kind) {
            return {e.date, kind};
        }
    }
    throw ValidationError("unit '" + unit + "' has no " + std::string(to_string(kind)) + " event");
}

Json group_json(const PanelDataset& panel, std::size_t unit) {
    Json g = Json::object();
    for (const char* field : {"chassis", "cpu_family", "vpro"}) {
        if (const auto v = panel.group_value(unit, field)) {
            g[field] = *v;
        }
    }
    return g;
}

Json system_count(const PanelDataset& panel, std::span<const std::size_t> units) {
    const auto c = panel.covariate_index("system_count");
    if (!c || units.empty()) {
        return nullptr;
    }
    double total = 0.0;
    for (auto u : units) {
        total += panel.covariates(static_cast<Eigen::Index>(u), static_cast<Eigen::Index>(*c));
    }
    return total / static_cast<double>(units.size());
}

Json event_json(const std::optional<EventKind>& e) {
    return e ? Json(std::string(to_string(*e))) : Json(nullptr);
}

void flatten(const Json& node, const std::string& prefix, std::vector<std::vector<std::string>>& rows) {
    if (node.is_object()) {
        for (const auto& [key, value] : node.items()) {
            flatten(value, prefix.empty() ? key : prefix + "." + key, rows);
        }
        return;
    }
    std::string text;
    if (node.is_array()) {
        for (const auto& item : node) {
            if (item.is_structured()) {
                return;
            }
            text += (text.empty() ? "" : ";") + (item.is_string() ? item.get<std::string>() : item.dump());
        }
    } else if (node.is_string()) {
        text = node.get<std::string>();
    } else if (node.is_null()) {
        text = "NA";
    } else {
        text = node.dump();
    }
    rows.push_back({prefix, text});
}

std::string flat_csv(const Json& doc) {
    std::vector<std::vector<std::string>> rows;
    flatten(doc, "", rows);
    std::ostringstream out;
    csv::write_row(out, std::vector<std::string>{"key", "value"});
    for (const auto& r : rows) {
        csv::write_row(out, r);
    }
    return out.str();
}

void stage_document(Context& ctx, const std::string& stem, const Json& doc) {
    if (ctx.csv()) {
        ctx.stage(stem + ".csv", flat_csv(doc));
    } else {
        ctx.stage(stem + ".json", dump_json(doc));
    }
}

std::string fmt(double v) { return csv::format_double(v); }

// simulate ----------------------------------------------------------------------

struct SimulateOptions {
    std::string scenario;
};

void cmd_simulate(Context& ctx, const SimulateOptions& o) {
    auto config = with_source(o.scenario, [](std::istream& in) {
        std::ostringstream s;
        s << in.rdbuf();
        return parse_scenario(s.str());
    });
    if (ctx.global.seed) {
        config.seed = *ctx.global.seed;
    }
    const auto scenario = generate(config);
    ctx.log("simulate: " + std::to_string(config.units.size()) + " units, " + std::to_string(config.days) +
            " days, " + std::to_string(scenario.telemetry.size()) + " telemetry records");
    write_scenario(ctx.out_dir(), config, scenario);
    ctx.out << describe(scenario.manifest);
}

// ingest ------------------------------------------------------------------------

struct IngestOptions {
    std::string telemetry;
    std::string policy;
    std::string indicator = "C2";
    std::string outcome = "usage_hours";
    std::vector<std::string> group_by{"unit_id"};
    std::string units;
};

void cmd_ingest(Context& ctx, const IngestOptions& o) {
    const auto records = with_source(o.telemetry, [](std::istream& in) { return parse_telemetry_csv(in); });
    const auto timelines =
        with_source(o.policy, [&](std::istream& in) { return parse_policy_csv(in, o.indicator); });
    auto panel = merge_panels(aggregate_telemetry(records, o.group_by, o.outcome), timelines);
    if (!o.units.empty()) {
        with_source(o.units, [&](std::istream& in) {
            attach_unit_attributes(panel, in);
            return 0;
        });
    }
    std::ostringstream text;
    write_panel(text, panel);
    ctx.stage("panel.txt", text.str());

    std::ostringstream events;
    csv::write_row(events, std::vector<std::string>{"unit_id", "event", "date"});
    for (const auto& t : timelines) {
        for (const auto& e : extract_treatment_events(t)) {
            csv::write_row(events, std::vector<std::string>{e.unit_id, std::string(to_string(e.kind)), e.date.iso()});
        }
    }
    ctx.stage("events.csv", events.str());
    ctx.commit();
    ctx.out << "panel: " << panel.unit_count() << " units x " << panel.date_count() << " dates ("
            << panel.outcome_name << ")\n";
}

// did ---------------------------------------------------------------------------

struct DidOptions {
    std::string panel;
    std::vector<std::string> treated;
    std::vector<std::string> control;
    std::string date;
    std::string event = "activation";
    std::vector<std::string> covariates;
    bool no_trend = false;
};

void cmd_did(Context& ctx, const DidOptions& o) {
    const auto panel = load_panel(o.panel);
    DidSpec spec;
    spec.treated_units = o.treated;
    spec.control_units = o.control;
    spec.covariate_names = o.covariates;
    spec.time_trend = !o.no_trend;
    std::vector<std::size_t> treated_idx;
    for (const auto& t : o.treated) {
        treated_idx.push_back(require_unit(panel, t));
    }
    if (spec.control_units.empty()) {
        const auto suffix = group_suffix(o.treated.front());
        for (const auto& u : panel.unit_ids) {
            if (group_suffix(u) == suffix && std::find(o.treated.begin(), o.treated.end(), u) == o.treated.end()) {
                spec.control_units.push_back(u);
            }
        }
    }
    const auto resolved = resolve_date(panel, o.treated.front(), o.date, o.event);
    spec.treatment_date = resolved.date;
    ctx.log("did: " + std::to_string(spec.treated_units.size()) + " treated, " +
            std::to_string(spec.control_units.size()) + " control, T0=" + spec.treatment_date.iso());
    const auto fit = fit_did(panel, spec);

    Json trends = nullptr;
    try {
        trends = to_json(parallel_trends_diagnostic(panel, spec));
    } catch (const ValidationError& e) {
        ctx.log(std::string("did: parallel-trends diagnostic unavailable: ") + e.what());
    }

    Json doc;
    doc["schema"] = "policyfx-did";
    doc["version"] = 1;
    doc["outcome"] = panel.outcome_name;
    doc["treated_units"] = spec.treated_units;
    doc["control_units"] = spec.control_units;
    doc["treatment_date"] = spec.treatment_date.iso();
    doc["event"] = event_json(resolved.event);
    doc["group"] = group_json(panel, treated_idx.front());
    doc["system_count"] = system_count(panel, treated_idx);
    doc["fit"] = to_json(fit);
    doc["parallel_trends"] = trends;
    stage_document(ctx, "did", doc);
    ctx.commit();
    ctx.out << "beta0=" << fmt(fit.beta0) << " stderr=" << fmt(fit.stderr_beta0) << " p=" << fmt(fit.p_value)
            << " ci=[" << fmt(fit.confidence_interval.first) << ", " << fmt(fit.confidence_interval.second)
            << "]\n";
}

// synth -------------------------------------------------------------------------

struct SynthOptions {
    std::string panel;
    std::string treated;
    std::vector<std::string> donors;
    std::string date;
    std::string event = "activation";
    std::optional<int> pre_window;
    std::vector<std::string> covariates;
    bool no_inference = false;
    std::size_t max_iterations = 10000;
    double tolerance = 1e-8;
};

constexpr int kDeactivationPreWindowDays = 60;

void cmd_synth(Context& ctx, const SynthOptions& o) {
    const auto panel = load_panel(o.panel);
    const auto treated = require_unit(panel, o.treated);
    SynthSpec spec;
    spec.treated_unit = o.treated;
    spec.donor_units = o.donors;
    spec.max_iterations = o.max_iterations;
    spec.tolerance = o.tolerance;
    spec.covariate_names = o.covariates;
    if (spec.donor_units.empty()) {
        const auto suffix = group_suffix(o.treated);
        const auto key = policy_unit_of(o.treated);
        for (const auto& u : panel.unit_ids) {
            if (group_suffix(u) == suffix && policy_unit_of(u) != key) {
                spec.donor_units.push_back(u);
            }
        }
    }
    const auto resolved = resolve_date(panel, o.treated, o.date, o.event);
    spec.treatment_date = resolved.date;
    spec.pre_window_days = o.pre_window;
    if (!spec.pre_window_days && resolved.event == EventKind::Deactivation) {
        spec.pre_window_days = kDeactivationPreWindowDays;
    }
    ctx.log("synth: " + std::to_string(spec.donor_units.size()) + " donors, T0=" + spec.treatment_date.iso());
    auto fit = fit_synth(panel, spec);
    if (!fit.converged) {
        ctx.log("synth: warning: weight optimizer stopped at the iteration limit");
    }
    if (!o.no_inference) {
        attach_inference(fit, randomization_inference(panel, spec, fit));
        for (const auto& [unit, reason] : fit.skipped_placebos) {
            ctx.log("synth: placebo '" + unit + "' skipped: " + reason);
        }
    }

    Json doc;
    doc["schema"] = "policyfx-synth";
    doc["version"] = 1;
    doc["outcome"] = panel.outcome_name;
    doc["treated_unit"] = spec.treated_unit;
    doc["event"] = event_json(resolved.event);
    doc["pre_window_days"] = spec.pre_window_days ? Json(*spec.pre_window_days) : Json(nullptr);
    doc["group"] = group_json(panel, treated);
    const std::array<std::size_t, 1> one{treated};
    doc["system_count"] = system_count(panel, one);
    doc["fit"] = to_json(fit);
    if (ctx.csv()) {
        for (const char* key : {"observed", "counterfactual", "gap", "placebo_gaps"}) {
            doc["fit"].erase(key);
        }
    }
    stage_document(ctx, "synth", doc);
    ctx.stage("synth_plot.csv", synth_plot_csv(fit));
    ctx.commit();
    ctx.out << "mean_post_gap=" << fmt(fit.mean_post_gap) << " pre_rmse=" << fmt(fit.pre_rmse)
            << " p=" << (fit.p_value ? fmt(*fit.p_value) : std::string("NA")) << '\n';
}

// cpd ---------------------------------------------------------------------------

struct CpdOptions {
    std::string series;
    std::string panel;
    std::string unit;
    std::string penalty = "bic";
    std::optional<double> lambda;
    std::optional<double> noise_scale;
    std::optional<std::size_t> k;
    std::size_t k_max = 20;
    std::vector<double> lambdas;
};

struct DenseSeries {
    std::vector<double> values;
    std::vector<Date> dates;             ///< empty when the input has no calendar
    std::vector<std::size_t> positions;  ///< index of each value in the uncompressed input
};

DenseSeries read_series_file(const std::string& path) {
    return with_source(path, [&](std::istream& in) {
        const auto table = csv::read(in);
        auto value_col = table.column("value");
        if (!value_col) {
            if (table.header.size() != 1) {
                throw ParseError("series table needs a 'value' column");
            }
            value_col = 0;
        }
        const auto date_col = table.column("date");
        DenseSeries s;
        for (std::size_t r = 0; r < table.rows.size(); ++r) {
            const auto text = csv::trim(table.rows[r][*value_col]);
            if (text.empty() || text == "NA") {
                continue;
            }
            const auto v = csv::parse_double(text);
            if (!v) {
                throw ParseError("line " + std::to_string(table.lines[r]) + ": bad value '" + std::string(text) + "'");
            }
            s.values.push_back(*v);
            s.positions.push_back(r);
            if (date_col) {
                s.dates.push_back(Date::parse(csv::trim(table.rows[r][*date_col])));
            }
        }
        return s;
    });
}

DenseSeries panel_series(const std::string& path, const std::string& unit) {
    const auto panel = load_panel(path);
    const auto u = require_unit(panel, unit);
    DenseSeries s;
    for (std::size_t t = 0; t < panel.date_count(); ++t) {
        if (panel.observed(u, t)) {
            s.values.push_back(panel.outcomes(static_cast<Eigen::Index>(u), static_cast<Eigen::Index>(t)));
            s.dates.push_back(panel.dates[t]);
            s.positions.push_back(t);
        }
    }
    return s;
}

PenaltyConfig penalty_config(const std::string& name, std::optional<double> lambda, std::optional<double> noise_scale,
                             std::size_t k_max) {
    PenaltyConfig p;
    p.k_max = k_max;
    p.noise_scale = noise_scale;
    if (name == "aic") {
        p.kind = PenaltyKind::AIC;
    } else if (name == "manual") {
        if (!lambda) {
            throw ValidationError("--penalty manual needs --lambda");
        }
        p.kind = PenaltyKind::Manual;
        p.lambda = *lambda;
    }
    return p;
}

Json segmentation_doc(const Segmentation& seg, const DenseSeries& s) {
    Json doc = to_json(seg, s.dates);
    Json original = Json::array();
    for (auto b : seg.breakpoints) {
        original.push_back(s.positions[b]);
    }
    doc["breakpoints_original"] = original;
    return doc;
}

std::string plural(std::size_t n, const char* word) {
    return std::to_string(n) + " " + word + (n == 1 ? "" : "s");
}

void cmd_cpd(Context& ctx, const CpdOptions& o) {
    if (o.series.empty() == o.panel.empty()) {
        throw ValidationError("cpd needs exactly one of --series or --panel");
    }
    if (!o.panel.empty() && o.unit.empty()) {
        throw ValidationError("cpd --panel needs --unit");
    }
    const auto s = o.series.empty() ? panel_series(o.panel, o.unit) : read_series_file(o.series);
    if (s.values.empty()) {
        throw ValidationError("series has no observed values");
    }
    Segmentation seg;
    Json doc;
    doc["schema"] = "policyfx-cpd";
    doc["version"] = 1;
    doc["source"] = o.series.empty() ? o.unit : fs::path(o.series).filename().string();
    if (o.k) {
        seg = detect_known_k(s.values, *o.k);
        doc["mode"] = "known_k";
    } else {
        const auto penalty = penalty_config(o.penalty, o.lambda, o.noise_scale, o.k_max);
        seg = detect_penalized(s.values, penalty);
        doc["mode"] = o.penalty;
    }
    doc["segmentation"] = segmentation_doc(seg, s);
    if (!o.lambdas.empty()) {
        Json scan = Json::array();
        for (const auto& [lambda, result] : stability_scan(s.values, o.lambdas, o.k_max)) {
            scan.push_back(Json{{"lambda", lambda}, {"segmentation", segmentation_doc(result, s)}});
        }
        doc["stability_scan"] = scan;
    }
    stage_document(ctx, "cpd", doc);
    ctx.stage("cpd_plot.csv", segmentation_plot_csv(seg, s.values, s.dates));
    ctx.commit();
    ctx.out << plural(seg.k(), "segment") << ", " << plural(seg.breakpoints.size(), "breakpoint");
    for (std::size_t i = 0; i < seg.breakpoints.size(); ++i) {
        const auto b = seg.breakpoints[i];
        ctx.out << (i ? ", " : ": ") << (s.dates.empty() ? std::to_string(b) : s.dates[b].iso());
    }
    ctx.out << '\n';
}

// persona -----------------------------------------------------------------------

struct PersonaOptions {
    std::string usage;
    std::string model;
    std::size_t k = kDefaultPersonaNames.size();
    std::string fit_start;
    int width = 28;
    int stride = 14;
    std::string penalty = "bic";
};

void cmd_persona(Context& ctx, const PersonaOptions& o) {
    const auto stream = with_source(o.usage, [](std::istream& in) { return parse_usage_csv(in); });
    if (stream.records.empty()) {
        throw ValidationError("'" + o.usage + "': no usage records");
    }
    PersonaModel model;
    if (!o.model.empty()) {
        model = persona_model_from_json(with_source(o.model, [](std::istream& in) {
            try {
                return Json::parse(in);
            } catch (const nlohmann::json::parse_error& e) {
                throw ParseError(e.what());
            }
        }));
    } else {
        Date start = stream.records.front().date;
        for (const auto& r : stream.records) {
            start = std::min(start, r.date);
        }
        if (!o.fit_start.empty()) {
            start = Date::parse(o.fit_start);
        }
        const auto features = window_features(stream, start, o.width);
        const auto fit = fit_kmeans(features, o.k, ctx.global.seed.value_or(1));
        ctx.log("persona: k-means on " + std::to_string(features.vectors.size()) + " devices from " + start.iso() +
                ", " + std::to_string(fit.iterations) + " iterations");
        model = fit.model;
    }
    const auto series = windowed_counts(stream, model, o.width, o.stride);
    const auto segs = persona_changepoint(series, penalty_config(o.penalty, std::nullopt, std::nullopt, 20));

    std::vector<Date> transition_dates(series.window_starts.begin() + 1, series.window_starts.end());
    Json cpd;
    cpd["schema"] = "policyfx-persona-cpd";
    cpd["version"] = 1;
    Json personas = Json::object();
    for (std::size_t c = 0; c < segs.size(); ++c) {
        personas[series.persona_names[c]] = to_json(segs[c], transition_dates);
    }
    cpd["personas"] = personas;

    ctx.stage("persona_model.json", dump_json(to_json(model)));
    ctx.stage("persona_counts.csv", persona_counts_csv(series));
    ctx.stage("persona_zscores.csv", persona_zscores_csv(series));
    stage_document(ctx, "persona_cpd", cpd);
    ctx.commit();
    for (std::size_t c = 0; c < segs.size(); ++c) {
        ctx.out << series.persona_names[c] << ": " << plural(segs[c].breakpoints.size(), "breakpoint");
        for (std::size_t i = 0; i < segs[c].breakpoints.size(); ++i) {
            ctx.out << (i ? ", " : " at ") << transition_dates[segs[c].breakpoints[i]].iso();
        }
        ctx.out << '\n';
    }
}

// report ------------------------------------------------------------------------

struct ReportOptions {
    std::vector<std::string> artifacts;
};

struct ReportCell {
    std::string chassis;
    std::string cpu_family;
    std::string unit;
    double effect = 0.0;
    Json system_count;
    Json p_value;
    std::string source;
};

template <typename Parse>
int enum_rank(const std::string& text, Parse parse) {
    const auto v = parse(text);
    return v ? static_cast<int>(*v) : 1000;
}

void cmd_report(Context& ctx, const ReportOptions& o) {
    if (o.artifacts.empty()) {
        throw ValidationError("report needs at least one artifact");
    }
    std::string schema;
    std::string outcome;
    std::vector<ReportCell> cells;
    for (const auto& path : o.artifacts) {
        const Json doc = with_source(path, [](std::istream& in) {
            try {
                return Json::parse(in);
            } catch (const nlohmann::json::parse_error& e) {
                throw ParseError(e.what());
            }
        });
        const std::string s = doc.is_object() ? doc.value("schema", "") : "";
        if (s != "policyfx-did" && s != "policyfx-synth") {
            throw ValidationError("'" + path + "' is not a did or synth result");
        }
        const std::string out_name = doc.value("outcome", "");
        if (!schema.empty() && (s != schema || out_name != outcome)) {
            throw ValidationError("'" + path + "' (" + s + ", " + out_name + ") does not match earlier artifacts (" +
                                  schema + ", " + outcome + ")");
        }
        schema = s;
        outcome = out_name;
        try {
            ReportCell cell;
            const auto& group = doc.at("group");
            cell.chassis = group.value("chassis", "all");
            cell.cpu_family = group.value("cpu_family", "all");
            const auto& fit = doc.at("fit");
            if (s == "policyfx-did") {
                cell.unit = doc.at("treated_units").at(0).get<std::string>();
                cell.effect = fit.at("beta0").get<double>();
            } else {
                cell.unit = doc.at("treated_unit").get<std::string>();
                cell.effect = fit.at("mean_post_gap").get<double>();
            }
            cell.p_value = fit.at("p_value");
            cell.system_count = doc.at("system_count");
            cell.source = fs::path(path).filename().string();
            cells.push_back(std::move(cell));
        } catch (const nlohmann::json::exception& e) {
            throw ValidationError("'" + path + "': " + e.what());
        }
    }

    auto chassis_rank = [](const std::string& s) { return enum_rank(s, parse_chassis); };
    auto cpu_rank = [](const std::string& s) { return enum_rank(s, parse_cpu_family); };
    std::sort(cells.begin(), cells.end(), [&](const ReportCell& a, const ReportCell& b) {
        return std::tuple(chassis_rank(a.chassis), a.chassis, cpu_rank(a.cpu_family), a.cpu_family) <
               std::tuple(chassis_rank(b.chassis), b.chassis, cpu_rank(b.cpu_family), b.cpu_family);
    });
    std::vector<std::string> rows;
    std::vector<std::string> cols;
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i > 0 && cells[i].chassis == cells[i - 1].chassis && cells[i].cpu_family == cells[i - 1].cpu_family) {
            throw ValidationError("two artifacts for " + cells[i].chassis + " x " + cells[i].cpu_family + " ('" +
                                  cells[i - 1].source + "', '" + cells[i].source + "')");
        }
        if (std::find(rows.begin(), rows.end(), cells[i].chassis) == rows.end()) {
            rows.push_back(cells[i].chassis);
        }
        if (std::find(cols.begin(), cols.end(), cells[i].cpu_family) == cols.end()) {
            cols.push_back(cells[i].cpu_family);
        }
    }
    std::sort(cols.begin(), cols.end(), [&](const std::string& a, const std::string& b) {
        return std::pair(cpu_rank(a), a) < std::pair(cpu_rank(b), b);
    });

    if (ctx.csv()) {
        std::ostringstream csv_out;
        csv::write_row(csv_out, std::vector<std::string>{"chassis", "cpu_family", "unit", "effect", "system_count",
                                                         "p_value", "source"});
        auto num = [](const Json& j) { return j.is_number() ? fmt(j.get<double>()) : std::string("NA"); };
        for (const auto& c : cells) {
            csv::write_row(csv_out, std::vector<std::string>{c.chassis, c.cpu_family, c.unit, fmt(c.effect),
                                                             num(c.system_count), num(c.p_value), c.source});
        }
        ctx.stage("report.csv", csv_out.str());
    } else {
        Json doc;
        doc["schema"] = "policyfx-report";
        doc["version"] = 1;
        doc["kind"] = schema == "policyfx-did" ? "did" : "synth";
        doc["outcome"] = outcome;
        doc["rows"] = rows;
        doc["columns"] = cols;
        Json arr = Json::array();
        for (const auto& c : cells) {
            arr.push_back(Json{{"chassis", c.chassis},
                               {"cpu_family", c.cpu_family},
                               {"unit", c.unit},
                               {"effect", c.effect},
                               {"system_count", c.system_count},
                               {"p_value", c.p_value},
                               {"source", c.source}});
        }
        doc["cells"] = arr;
        ctx.stage("report.json", dump_json(doc));
    }
    ctx.commit();

    ctx.out << "chassis";
    for (const auto& c : cols) {
        ctx.out << '\t' << c;
    }
    ctx.out << '\n';
    for (const auto& r : rows) {
        ctx.out << r;
        for (const auto& c : cols) {
            const auto it = std::find_if(cells.begin(), cells.end(), [&](const ReportCell& x) {
                return x.chassis == r && x.cpu_family == c;
            });
            ctx.out << '\t';
            if (it == cells.end()) {
                ctx.out << '-';
            } else {
                std::ostringstream s;
                s.setf(std::ios::fixed);
                s.precision(2);
                s << it->effect;
                if (it->p_value.is_number()) {
                    s << " (p=" << std::setprecision(3) << it->p_value.get<double>() << ")";
                }
                ctx.out << s.str();
            }
        }
        ctx.out << '\n';
    }
}

}  // namespace

int run(std::span<const std::string> args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Policy-response causal inference on panel telemetry", "policyfx"};
    app.require_subcommand(1);
    app.set_config("--config", "", "Options file (TOML/INI); command-line flags take precedence");

    Global global;
    app.add_option("--out", global.out_dir, "Output directory (default: $POLICYFX_OUT, then .)");
    app.add_option("--format", global.format, "Result document format")->check(CLI::IsMember({"json", "csv"}));
    app.add_option("--seed", global.seed, "Random seed");
    app.add_flag("--quiet", global.quiet, "Suppress diagnostics");

    SimulateOptions sim;
    auto* simulate = app.add_subcommand("simulate", "Generate a synthetic scenario with ground truth");
    simulate->add_option("--scenario", sim.scenario, "Scenario JSON")->required();

    IngestOptions ing;
    auto* ingest = app.add_subcommand("ingest", "Aggregate telemetry and merge it with policy timelines");
    ingest->add_option("--telemetry", ing.telemetry, "Telemetry CSV")->required();
    ingest->add_option("--policy", ing.policy, "Policy CSV")->required();
    ingest->add_option("--indicator", ing.indicator, "Policy indicator column");
    ingest->add_option("--outcome", ing.outcome, "usage_hours or cpu_watts");
    ingest->add_option("--group-by", ing.group_by, "Group fields")->delimiter(',');
    ingest->add_option("--units", ing.units, "Unit attribute CSV");

    DidOptions did;
    auto* did_cmd = app.add_subcommand("did", "Difference-in-differences");
    did_cmd->add_option("--panel", did.panel, "Panel file")->required();
    did_cmd->add_option("--treated", did.treated, "Treated units")->required()->delimiter(',');
    did_cmd->add_option("--control", did.control, "Control units")->delimiter(',');
    did_cmd->add_option("--date", did.date, "Treatment date T0");
    did_cmd->add_option("--event", did.event, "Derive T0 from policy codes")
        ->check(CLI::IsMember({"activation", "deactivation"}));
    did_cmd->add_option("--covariates", did.covariates, "Covariate names")->delimiter(',');
    did_cmd->add_flag("--no-trend", did.no_trend, "Drop the linear time trend");

    SynthOptions syn;
    auto* synth = app.add_subcommand("synth", "Synthetic control with randomization inference");
    synth->add_option("--panel", syn.panel, "Panel file")->required();
    synth->add_option("--treated", syn.treated, "Treated unit")->required();
    synth->add_option("--donors", syn.donors, "Donor units")->delimiter(',');
    synth->add_option("--date", syn.date, "Treatment date T0");
    synth->add_option("--event", syn.event, "Derive T0 from policy codes")
        ->check(CLI::IsMember({"activation", "deactivation"}));
    synth->add_option("--pre-window", syn.pre_window, "Pre-period length in days");
    synth->add_option("--covariates", syn.covariates, "Covariates to match")->delimiter(',');
    synth->add_flag("--no-inference", syn.no_inference, "Skip placebo refits");
    synth->add_option("--max-iterations", syn.max_iterations, "Optimizer iteration limit");
    synth->add_option("--tolerance", syn.tolerance, "Optimizer tolerance");

    CpdOptions cpdo;
    auto* cpd = app.add_subcommand("cpd", "Offline change-point detection");
    cpd->add_option("--series", cpdo.series, "Series CSV (value column, optional date)");
    cpd->add_option("--panel", cpdo.panel, "Panel file");
    cpd->add_option("--unit", cpdo.unit, "Panel unit");
    cpd->add_option("--penalty", cpdo.penalty, "Penalty")->check(CLI::IsMember({"aic", "bic", "manual"}));
    cpd->add_option("--lambda", cpdo.lambda, "Manual penalty per segment");
    cpd->add_option("--noise-scale", cpdo.noise_scale, "Noise scale override");
    cpd->add_option("--k", cpdo.k, "Known number of segments");
    cpd->add_option("--k-max", cpdo.k_max, "Largest segment count considered");
    cpd->add_option("--lambdas", cpdo.lambdas, "Stability scan penalties")->delimiter(',');

    PersonaOptions per;
    auto* persona = app.add_subcommand("persona", "Persona clustering and drift");
    persona->add_option("--usage", per.usage, "Usage CSV")->required();
    persona->add_option("--model", per.model, "Frozen persona model JSON");
    persona->add_option("--k", per.k, "Number of personas");
    persona->add_option("--fit-start", per.fit_start, "First day of the clustering window");
    persona->add_option("--width", per.width, "Window width in days");
    persona->add_option("--stride", per.stride, "Window stride in days");
    persona->add_option("--penalty", per.penalty, "Penalty")->check(CLI::IsMember({"aic", "bic"}));

    ReportOptions rep;
    auto* report = app.add_subcommand("report", "Consolidate did/synth results into a chassis x CPU table");
    report->add_option("artifacts", rep.artifacts, "Result JSON files");

    std::vector<std::string> storage{"policyfx"};
    storage.insert(storage.end(), args.begin(), args.end());
    std::vector<const char*> argv;
    for (const auto& s : storage) {
        argv.push_back(s.c_str());
    }
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            out << app.help();
            return 0;
        }
        err << "error: " << e.what() << '\n';
        return static_cast<int>(ErrorKind::Parse);
    }

    Context ctx(global, out, err);
    try {
        if (simulate->parsed()) cmd_simulate(ctx, sim);
        else if (ingest->parsed()) cmd_ingest(ctx, ing);
        else if (did_cmd->parsed()) cmd_did(ctx, did);
        else if (synth->parsed()) cmd_synth(ctx, syn);
        else if (cpd->parsed()) cmd_cpd(ctx, cpdo);
        else if (persona->parsed()) cmd_persona(ctx, per);
        else if (report->parsed()) cmd_report(ctx, rep);
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return static_cast<int>(e.kind());
    } catch (const fs::filesystem_error& e) {
        err << "error: " << e.what() << '\n';
        return static_cast<int>(ErrorKind::Io);
    }
    return 0;
}

}  // namespace policyfx::cli
