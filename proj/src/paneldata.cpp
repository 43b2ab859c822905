#include "policyfx/paneldata.hpp"

#include "policyfx/csv.hpp"
#include "policyfx/error.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <unordered_map>

namespace policyfx {

namespace {

std::string line_ref(std::size_t line) { return "line " + std::to_string(line); }

std::size_t resolve_indicator(const csv::Table& table, std::string_view indicator) {
    if (auto exact = table.column(indicator)) {
        return *exact;
    }
    const std::string prefix = std::string(indicator) + "_";
    std::vector<std::size_t> matches;
    for (std::size_t i = 0; i < table.header.size(); ++i) {
        const auto& h = table.header[i];
        if (h.rfind(prefix, 0) == 0 && h.find("Flag") == std::string::npos) {
            matches.push_back(i);
        }
    }
    if (matches.size() == 1) {
        return matches.front();
    }
    if (matches.empty()) {
        throw ParseError("indicator column '" + std::string(indicator) + "' not found in header");
    }
    throw ParseError("indicator '" + std::string(indicator) + "' matches several columns");
}

enum class DateFormat { Compact, Iso };

std::optional<Date> parse_with(DateFormat f, std::string_view text) {
    return f == DateFormat::Compact ? Date::parse_compact(text) : Date::parse_iso(text);
}

struct PolicyRow {
    Date date;
    std::optional<int> code;
    std::size_t line;
};

}  // namespace

// ---------------------------------------------------------------------------

std::optional<int> PolicyTimeline::code_on(Date date) const {
    if (dates.empty() || date < dates.front() || date > dates.back()) {
        return std::nullopt;
    }
    return codes[static_cast<std::size_t>(date - dates.front())];
}

std::string_view to_string(EventKind kind) {
    return kind == EventKind::Activation ? "activation" : "deactivation";
}

std::vector<PolicyTimeline> parse_policy_csv(std::istream& source, std::string_view indicator_column) {
    const csv::Table table = csv::read(source);

    const auto unit_col = table.column("unit_id");
    const auto country_col = table.column("CountryName");
    const auto region_col = table.column("RegionName");
    if (!unit_col && !country_col) {
        throw ParseError("policy table needs a 'unit_id' or 'CountryName' column");
    }
    auto date_col = table.column("Date");
    if (!date_col) {
        date_col = table.require("date");
    }
    const std::size_t code_col = resolve_indicator(table, indicator_column);

    std::vector<std::string> order;
    std::unordered_map<std::string, std::vector<PolicyRow>> by_unit;
    std::optional<DateFormat> format;

    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& row = table.rows[r];
        const std::size_t line = table.lines[r];

        std::string unit;
        if (unit_col) {
            unit = std::string(csv::trim(row[*unit_col]));
        } else {
            unit = std::string(csv::trim(row[*country_col]));
            if (region_col) {
                const auto region = csv::trim(row[*region_col]);
                if (!region.empty()) {
                    unit += "/" + std::string(region);
                }
            }
        }
        if (unit.empty()) {
            throw ParseError(line_ref(line) + ": empty unit name");
        }

        const auto date_text = csv::trim(row[*date_col]);
        if (!format) {
            if (Date::parse_compact(date_text)) {
                format = DateFormat::Compact;
            } else if (Date::parse_iso(date_text)) {
                format = DateFormat::Iso;
            } else {
                throw ParseError(line_ref(line) + ": malformed date '" + std::string(date_text) + "'");
            }
        }
        const auto date = parse_with(*format, date_text);
        if (!date) {
            throw ParseError(line_ref(line) + ": malformed date '" + std::string(date_text) + "'");
        }

        std::optional<int> code;
        const auto code_text = csv::trim(row[code_col]);
        if (!code_text.empty()) {
            const auto value = csv::parse_double(code_text);
            if (!value) {
                throw ParseError(line_ref(line) + ": non-numeric policy code '" +
                                 std::string(code_text) + "'");
            }
            if (*value != std::floor(*value) || *value < 0.0 || *value > 3.0) {
                throw ValidationError(line_ref(line) + ": policy code " + std::string(code_text) +
                                      " outside {0..3} for unit '" + unit + "'");
            }
            code = static_cast<int>(*value);
        }

        auto [it, inserted] = by_unit.try_emplace(unit);
        if (inserted) {
            order.push_back(unit);
        }
        it->second.push_back({*date, code, line});
    }

    std::vector<PolicyTimeline> out;
    out.reserve(order.size());
    for (const auto& unit : order) {
        auto& rows = by_unit[unit];
        std::stable_sort(rows.begin(), rows.end(),
                         [](const PolicyRow& a, const PolicyRow& b) { return a.date < b.date; });
        PolicyTimeline t;
        t.unit_id = unit;
        int last = 0;
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (i > 0) {
                const auto step = rows[i].date - rows[i - 1].date;
                if (step == 0) {
                    throw ValidationError(line_ref(rows[i].line) + ": duplicate date " +
                                          rows[i].date.iso() + " for unit '" + unit + "'");
                }
                if (step > 1) {
                    throw ValidationError("calendar gap for unit '" + unit + "' between " +
                                          rows[i - 1].date.iso() + " and " + rows[i].date.iso());
                }
            }
            if (rows[i].code) {
                last = *rows[i].code;
            }
            t.dates.push_back(rows[i].date);
            t.codes.push_back(last);
        }
        out.push_back(std::move(t));
    }
    return out;
}

void write_policy_csv(std::ostream& out, std::span<const PolicyTimeline> timelines,
                      std::string_view indicator_column) {
    const std::array<std::string, 3> header{"unit_id", "Date", std::string(indicator_column)};
    csv::write_row(out, header);
    for (const auto& t : timelines) {
        for (std::size_t i = 0; i < t.dates.size(); ++i) {
            const std::array<std::string, 3> row{t.unit_id, t.dates[i].compact(),
                                                 std::to_string(t.codes[i])};
            csv::write_row(out, row);
        }
    }
}

std::vector<TreatmentEvent> extract_treatment_events(const PolicyTimeline& timeline) {
    std::vector<TreatmentEvent> events;
    const auto activation = std::find_if(timeline.codes.begin(), timeline.codes.end(),
                                         [](int c) { return c >= 3; });
    if (activation == timeline.codes.end()) {
        return events;
    }
    const auto a = static_cast<std::size_t>(activation - timeline.codes.begin());
    events.push_back({timeline.unit_id, EventKind::Activation, timeline.dates[a]});
    for (std::size_t i = a + 1; i < timeline.codes.size(); ++i) {
        if (timeline.codes[i] == 2) {
            events.push_back({timeline.unit_id, EventKind::Deactivation, timeline.dates[i]});
            break;
        }
    }
    return events;
}

// ---------------------------------------------------------------------------
// Telemetry

std::string_view to_string(Chassis c) {
    switch (c) {
        case Chassis::Notebook: return "Notebook";
        case Chassis::Desktop: return "Desktop";
        case Chassis::TwoInOne: return "2-in-1";
        case Chassis::NUC: return "NUC";
    }
    return "?";
}

std::string_view to_string(CpuFamily c) {
    switch (c) {
        case CpuFamily::i3: return "i3";
        case CpuFamily::i5: return "i5";
        case CpuFamily::i7: return "i7";
        case CpuFamily::i9: return "i9";
        case CpuFamily::Other: return "Other";
    }
    return "?";
}

std::optional<Chassis> parse_chassis(std::string_view text) {
    text = csv::trim(text);
    if (text == "Notebook") return Chassis::Notebook;
    if (text == "Desktop") return Chassis::Desktop;
    if (text == "2-in-1" || text == "TwoInOne") return Chassis::TwoInOne;
    if (text == "NUC") return Chassis::NUC;
    return std::nullopt;
}

std::optional<CpuFamily> parse_cpu_family(std::string_view text) {
    text = csv::trim(text);
    if (text == "i3") return CpuFamily::i3;
    if (text == "i5") return CpuFamily::i5;
    if (text == "i7") return CpuFamily::i7;
    if (text == "i9") return CpuFamily::i9;
    if (text == "Other") return CpuFamily::Other;
    return std::nullopt;
}

std::vector<TelemetryRecord> parse_telemetry_csv(std::istream& source) {
    const csv::Table table = csv::read(source);
    const auto c_date = table.require("date");
    const auto c_device = table.require("device_id");
    const auto c_unit = table.require("unit_id");
    const auto c_chassis = table.require("chassis");
    const auto c_cpu = table.require("cpu_family");
    const auto c_vpro = table.require("vpro");
    const auto c_hours = table.require("usage_hours");
    const auto c_watts = table.require("cpu_watts");

    std::vector<TelemetryRecord> records;
    records.reserve(table.rows.size());
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& row = table.rows[r];
        const auto where = line_ref(table.lines[r]);
        TelemetryRecord rec;
        const auto date_text = csv::trim(row[c_date]);
        auto date = Date::parse_iso(date_text);
        if (!date) {
            date = Date::parse_compact(date_text);
        }
        if (!date) {
            throw ParseError(where + ": malformed date '" + std::string(date_text) + "'");
        }
        rec.date = *date;
        rec.device_id = std::string(csv::trim(row[c_device]));
        rec.unit_id = std::string(csv::trim(row[c_unit]));
        if (rec.unit_id.empty() || rec.device_id.empty()) {
            throw ParseError(where + ": empty unit_id or device_id");
        }
        const auto chassis = parse_chassis(row[c_chassis]);
        if (!chassis) {
            throw ParseError(where + ": unknown chassis '" + row[c_chassis] + "'");
        }
        rec.chassis = *chassis;
        const auto cpu = parse_cpu_family(row[c_cpu]);
        if (!cpu) {
            throw ParseError(where + ": unknown cpu_family '" + row[c_cpu] + "'");
        }
        rec.cpu_family = *cpu;
        const auto vpro = csv::trim(row[c_vpro]);
        if (vpro == "1" || vpro == "true") {
            rec.vpro = true;
        } else if (vpro == "0" || vpro == "false") {
            rec.vpro = false;
        } else {
            throw ParseError(where + ": vpro must be 0/1, got '" + std::string(vpro) + "'");
        }
        const auto hours = csv::parse_double(row[c_hours]);
        const auto watts = csv::parse_double(row[c_watts]);
        if (!hours || !watts) {
            throw ParseError(where + ": non-numeric usage_hours or cpu_watts");
        }
        if (*hours < 0.0 || *hours > 24.0) {
            throw ValidationError(where + ": usage_hours " + row[c_hours] + " outside [0, 24]");
        }
        if (*watts < 0.0) {
            throw ValidationError(where + ": negative cpu_watts " + row[c_watts]);
        }
        rec.usage_hours = *hours;
        rec.cpu_watts = *watts;
        records.push_back(std::move(rec));
    }
    return records;
}

void write_telemetry_csv(std::ostream& out, std::span<const TelemetryRecord> records) {
    const std::array<std::string, 8> header{"date",       "device_id", "unit_id",     "chassis",
                                            "cpu_family", "vpro",      "usage_hours", "cpu_watts"};
    csv::write_row(out, header);
    for (const auto& r : records) {
        const std::array<std::string, 8> row{r.date.iso(),
                                             r.device_id,
                                             r.unit_id,
                                             std::string(to_string(r.chassis)),
                                             std::string(to_string(r.cpu_family)),
                                             r.vpro ? "1" : "0",
                                             csv::format_double(r.usage_hours),
                                             csv::format_double(r.cpu_watts)};
        csv::write_row(out, row);
    }
}

// ---------------------------------------------------------------------------
// Panel

std::optional<std::size_t> PanelDataset::unit_index(std::string_view id) const {
    for (std::size_t i = 0; i < unit_ids.size(); ++i) {
        if (unit_ids[i] == id) {
            return i;
        }
    }
    return std::nullopt;
}

std::optional<std::size_t> PanelDataset::date_index(Date date) const {
    const auto it = std::lower_bound(dates.begin(), dates.end(), date);
    if (it == dates.end() || *it != date) {
        return std::nullopt;
    }
    return static_cast<std::size_t>(it - dates.begin());
}

std::optional<std::size_t> PanelDataset::covariate_index(std::string_view name) const {
    for (std::size_t i = 0; i < covariate_names.size(); ++i) {
        if (covariate_names[i] == name) {
            return i;
        }
    }
    return std::nullopt;
}

std::optional<std::size_t> PanelDataset::categorical_index(std::string_view name) const {
    for (std::size_t i = 0; i < categorical_names.size(); ++i) {
        if (categorical_names[i] == name) {
            return i;
        }
    }
    return std::nullopt;
}

std::optional<std::string> PanelDataset::group_value(std::size_t unit, std::string_view field) const {
    std::string_view id = unit_ids.at(unit);
    for (const auto& g : group_by) {
        const auto sep = id.find(kGroupSeparator);
        const auto part = id.substr(0, sep);
        if (g == field) {
            return std::string(part);
        }
        if (sep == std::string_view::npos) {
            break;
        }
        id.remove_prefix(sep + 1);
    }
    return std::nullopt;
}

void PanelDataset::validate() const {
    const auto nu = static_cast<Eigen::Index>(unit_ids.size());
    const auto nt = static_cast<Eigen::Index>(dates.size());
    if (outcomes.rows() != nu || outcomes.cols() != nt) {
        throw ValidationError("panel outcome matrix is not units x dates");
    }
    if (missing.rows() != nu || missing.cols() != nt) {
        throw ValidationError("panel mask dimensions differ from outcome matrix");
    }
    if (covariates.rows() != nu || covariates.cols() != static_cast<Eigen::Index>(covariate_names.size())) {
        throw ValidationError("panel covariate matrix is not units x covariates");
    }
    if (categorical_values.size() != categorical_names.size()) {
        throw ValidationError("categorical covariate names and values differ in count");
    }
    for (const auto& v : categorical_values) {
        if (v.size() != unit_ids.size()) {
            throw ValidationError("categorical covariate has wrong unit count");
        }
    }
    if (policy_codes && (policy_codes->rows() != nu || policy_codes->cols() != nt)) {
        throw ValidationError("policy code matrix is not units x dates");
    }
    for (std::size_t t = 1; t < dates.size(); ++t) {
        if (!(dates[t - 1] < dates[t])) {
            throw ValidationError("panel dates are not strictly increasing at " + dates[t].iso());
        }
    }
    std::set<std::string_view> seen;
    for (const auto& u : unit_ids) {
        if (!seen.insert(u).second) {
            throw ValidationError("duplicate panel unit '" + u + "'");
        }
    }
    for (Eigen::Index u = 0; u < nu; ++u) {
        for (Eigen::Index t = 0; t < nt; ++t) {
            if (!missing(u, t) && !std::isfinite(outcomes(u, t))) {
                throw ValidationError("non-finite observed value for unit '" +
                                      unit_ids[static_cast<std::size_t>(u)] + "' on " +
                                      dates[static_cast<std::size_t>(t)].iso());
            }
        }
    }
}

std::string_view policy_unit_of(std::string_view panel_unit_id) {
    return panel_unit_id.substr(0, panel_unit_id.find(kGroupSeparator));
}

namespace {

constexpr std::array<std::string_view, 4> kGroupFields{"unit_id", "chassis", "cpu_family", "vpro"};

std::string group_field_value(const TelemetryRecord& r, std::string_view field) {
    if (field == "unit_id") return r.unit_id;
    if (field == "chassis") return std::string(to_string(r.chassis));
    if (field == "cpu_family") return std::string(to_string(r.cpu_family));
    return r.vpro ? "vpro" : "no_vpro";
}

struct CellAccumulator {
    std::vector<double> values;
    std::set<std::string> devices;
};

struct GroupAccumulator {
    std::map<std::int32_t, CellAccumulator> cells;
    std::set<std::string> devices;
    std::set<std::string> vpro_devices;
};

}  // namespace

PanelDataset aggregate_telemetry(std::span<const TelemetryRecord> records,
                                 std::span<const std::string> group_by, std::string_view outcome,
                                 Statistic statistic) {
    (void)statistic;  // Mean is the only statistic.
    if (outcome != "usage_hours" && outcome != "cpu_watts") {
        throw ValidationError("unknown outcome field '" + std::string(outcome) +
                              "' (expected usage_hours or cpu_watts)");
    }
    if (records.empty()) {
        throw ValidationError("no telemetry records to aggregate");
    }
    std::vector<std::string> fields;
    for (auto f : kGroupFields) {
        if (std::find(group_by.begin(), group_by.end(), f) != group_by.end()) {
            fields.emplace_back(f);
        }
    }
    for (const auto& g : group_by) {
        if (std::find(kGroupFields.begin(), kGroupFields.end(), g) == kGroupFields.end()) {
            throw ValidationError("cannot group by '" + g + "'");
        }
    }
    if (fields.empty()) {
        throw ValidationError("group_by must name at least one field");
    }

    std::map<std::string, GroupAccumulator> groups;
    Date first = records.front().date;
    Date last = records.front().date;
    for (const auto& r : records) {
        if (!(r.usage_hours >= 0.0 && r.usage_hours <= 24.0) || !(r.cpu_watts >= 0.0)) {
            throw ValidationError("telemetry record for device '" + r.device_id + "' on " +
                                  r.date.iso() + " violates value bounds");
        }
        std::string key;
        for (std::size_t i = 0; i < fields.size(); ++i) {
            if (i > 0) {
                key.push_back(kGroupSeparator);
            }
            key += group_field_value(r, fields[i]);
        }
        auto& g = groups[key];
        auto& cell = g.cells[r.date.days()];
        cell.values.push_back(outcome == "usage_hours" ? r.usage_hours : r.cpu_watts);
        cell.devices.insert(r.device_id);
        g.devices.insert(r.device_id);
        if (r.vpro) {
            g.vpro_devices.insert(r.device_id);
        }
        first = std::min(first, r.date);
        last = std::max(last, r.date);
    }

    PanelDataset panel;
    panel.outcome_name = std::string(outcome);
    panel.group_by = fields;
    for (Date d = first; d <= last; d = d + 1) {
        panel.dates.push_back(d);
    }
    const auto nu = static_cast<Eigen::Index>(groups.size());
    const auto nt = static_cast<Eigen::Index>(panel.dates.size());
    panel.outcomes = Eigen::MatrixXd::Constant(nu, nt, std::numeric_limits<double>::quiet_NaN());
    panel.missing = MaskMatrix::Constant(nu, nt, true);
    panel.covariate_names = {"system_count", "vpro_fraction"};
    panel.covariates = Eigen::MatrixXd::Zero(nu, 2);

    Eigen::Index u = 0;
    for (auto& [key, g] : groups) {
        panel.unit_ids.push_back(key);
        double device_days = 0.0;
        for (auto& [day, cell] : g.cells) {
            // Sorting first makes the sum independent of record order.
            std::sort(cell.values.begin(), cell.values.end());
            double sum = 0.0;
            for (double v : cell.values) {
                sum += v;
            }
            const Eigen::Index t = day - first.days();
            panel.outcomes(u, t) = sum / static_cast<double>(cell.values.size());
            panel.missing(u, t) = false;
            device_days += static_cast<double>(cell.devices.size());
        }
        panel.covariates(u, 0) = device_days / static_cast<double>(g.cells.size());
        panel.covariates(u, 1) =
            static_cast<double>(g.vpro_devices.size()) / static_cast<double>(g.devices.size());
        ++u;
    }
    return panel;
}

PanelDataset merge_panels(const PanelDataset& outcome_panel, std::span<const PolicyTimeline> timelines) {
    std::map<std::string_view, const PolicyTimeline*> by_unit;
    for (const auto& t : timelines) {
        if (!by_unit.emplace(t.unit_id, &t).second) {
            throw ValidationError("duplicate policy timeline for unit '" + t.unit_id + "'");
        }
    }
    std::vector<const PolicyTimeline*> matched;
    std::vector<std::string> missing_units;
    for (const auto& id : outcome_panel.unit_ids) {
        const auto it = by_unit.find(policy_unit_of(id));
        if (it == by_unit.end()) {
            missing_units.push_back(id);
            matched.push_back(nullptr);
        } else {
            matched.push_back(it->second);
        }
    }
    if (!missing_units.empty()) {
        std::string list;
        for (const auto& m : missing_units) {
            list += (list.empty() ? "" : ", ") + m;
        }
        throw ValidationError("no policy timeline for unit(s): " + list);
    }

    std::vector<std::size_t> keep;
    for (std::size_t t = 0; t < outcome_panel.dates.size(); ++t) {
        const Date d = outcome_panel.dates[t];
        const bool covered = std::all_of(matched.begin(), matched.end(),
                                         [&](const PolicyTimeline* p) { return p->code_on(d).has_value(); });
        if (covered) {
            keep.push_back(t);
        }
    }
    if (keep.empty()) {
        throw ValidationError("panel and policy timelines share no dates");
    }

    PanelDataset out = outcome_panel;
    const auto nu = static_cast<Eigen::Index>(outcome_panel.unit_count());
    const auto nt = static_cast<Eigen::Index>(keep.size());
    out.dates.clear();
    out.outcomes.resize(nu, nt);
    out.missing.resize(nu, nt);
    Eigen::MatrixXi codes(nu, nt);
    for (Eigen::Index j = 0; j < nt; ++j) {
        const auto src = static_cast<Eigen::Index>(keep[static_cast<std::size_t>(j)]);
        out.dates.push_back(outcome_panel.dates[static_cast<std::size_t>(src)]);
        out.outcomes.col(j) = outcome_panel.outcomes.col(src);
        out.missing.col(j) = outcome_panel.missing.col(src);
        for (Eigen::Index u = 0; u < nu; ++u) {
            codes(u, j) = *matched[static_cast<std::size_t>(u)]->code_on(out.dates.back());
        }
    }
    out.policy_codes = std::move(codes);
    return out;
}

void attach_unit_attributes(PanelDataset& panel, std::istream& source) {
    const csv::Table table = csv::read(source);
    const auto id_col = table.require("unit_id");
    std::map<std::string, std::size_t> row_of;
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        row_of[std::string(csv::trim(table.rows[r][id_col]))] = r;
    }
    std::vector<std::size_t> rows;
    for (const auto& id : panel.unit_ids) {
        const auto it = row_of.find(std::string(policy_unit_of(id)));
        if (it == row_of.end()) {
            throw ValidationError("unit attributes missing for unit '" + id + "'");
        }
        rows.push_back(it->second);
    }
    for (std::size_t c = 0; c < table.header.size(); ++c) {
        if (c == id_col) {
            continue;
        }
        const auto& name = table.header[c];
        if (panel.covariate_index(name) || panel.categorical_index(name)) {
            throw ValidationError("unit attribute '" + name + "' already present in panel");
        }
        bool numeric = true;
        for (const auto& row : table.rows) {
            numeric = numeric && csv::parse_double(row[c]).has_value();
        }
        if (numeric) {
            const auto k = panel.covariates.cols();
            panel.covariates.conservativeResize(Eigen::NoChange, k + 1);
            for (std::size_t u = 0; u < rows.size(); ++u) {
                panel.covariates(static_cast<Eigen::Index>(u), k) = *csv::parse_double(table.rows[rows[u]][c]);
            }
            panel.covariate_names.push_back(name);
        } else {
            std::vector<std::string> values;
            for (auto r : rows) {
                values.emplace_back(csv::trim(table.rows[r][c]));
            }
            panel.categorical_names.push_back(name);
            panel.categorical_values.push_back(std::move(values));
        }
    }
}

std::vector<TreatmentEvent> panel_treatment_events(const PanelDataset& panel, std::size_t unit) {
    if (!panel.policy_codes) {
        throw ValidationError("panel has no policy codes attached; merge it with policy timelines first");
    }
    PolicyTimeline t;
    t.unit_id = std::string(policy_unit_of(panel.unit_ids.at(unit)));
    for (std::size_t d = 0; d < panel.dates.size(); ++d) {
        const int code = (*panel.policy_codes)(static_cast<Eigen::Index>(unit), static_cast<Eigen::Index>(d));
        if (code >= 0) {
            t.dates.push_back(panel.dates[d]);
            t.codes.push_back(code);
        }
    }
    return extract_treatment_events(t);
}

PanelDataset select_units(const PanelDataset& panel, std::span<const std::string> unit_ids) {
    PanelDataset out;
    out.outcome_name = panel.outcome_name;
    out.group_by = panel.group_by;
    out.dates = panel.dates;
    out.covariate_names = panel.covariate_names;
    out.categorical_names = panel.categorical_names;
    out.categorical_values.resize(panel.categorical_names.size());
    const auto n = static_cast<Eigen::Index>(unit_ids.size());
    out.outcomes.resize(n, panel.outcomes.cols());
    out.missing.resize(n, panel.missing.cols());
    out.covariates.resize(n, panel.covariates.cols());
    if (panel.policy_codes) {
        out.policy_codes = Eigen::MatrixXi(n, panel.policy_codes->cols());
    }
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& id = unit_ids[static_cast<std::size_t>(i)];
        const auto src = panel.unit_index(id);
        if (!src) {
            throw ValidationError("unit '" + id + "' not in panel");
        }
        const auto s = static_cast<Eigen::Index>(*src);
        out.unit_ids.push_back(id);
        out.outcomes.row(i) = panel.outcomes.row(s);
        out.missing.row(i) = panel.missing.row(s);
        out.covariates.row(i) = panel.covariates.row(s);
        for (std::size_t c = 0; c < panel.categorical_values.size(); ++c) {
            out.categorical_values[c].push_back(panel.categorical_values[c][*src]);
        }
        if (panel.policy_codes) {
            out.policy_codes->row(i) = panel.policy_codes->row(s);
        }
    }
    return out;
}

}  // namespace policyfx
