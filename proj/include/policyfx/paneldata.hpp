#pragma once

#include "policyfx/date.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace policyfx {

// ---------------------------------------------------------------------------
// Policy timelines
// ---------------------------------------------------------------------------

/// Daily ordinal policy levels for one unit (country, or "Country/Region").
/// Dates are consecutive calendar days; codes are in {0, 1, 2, 3}.
struct PolicyTimeline {
    std::string unit_id;
    std::vector<Date> dates;
    std::vector<int> codes;

    std::optional<int> code_on(Date date) const;
    bool operator==(const PolicyTimeline&) const = default;
};

enum class EventKind { Activation, Deactivation };

std::string_view to_string(EventKind kind);

struct TreatmentEvent {
    std::string unit_id;
    EventKind kind = EventKind::Activation;
    Date date;

    bool operator==(const TreatmentEvent&) const = default;
};

/// Parses an OxCGRT-style policy table.
///
/// Units are keyed by a `unit_id` column when present, otherwise by
/// `CountryName`, extended to "CountryName/RegionName" for sub-national rows.
/// The indicator column is matched exactly, or by the unique non-flag column
/// whose name starts with "<indicator>_". Empty indicator cells carry the
/// previous value forward; leading empties are 0. Dates are YYYYMMDD or
/// YYYY-MM-DD, detected once per file.
std::vector<PolicyTimeline> parse_policy_csv(std::istream& source, std::string_view indicator_column);

/// Writes `unit_id,Date,<indicator>` rows with YYYYMMDD dates.
void write_policy_csv(std::ostream& out, std::span<const PolicyTimeline> timelines,
                      std::string_view indicator_column);

/// Activation: first date with code 3. Deactivation: first later date with code 2.
std::vector<TreatmentEvent> extract_treatment_events(const PolicyTimeline& timeline);

// ---------------------------------------------------------------------------
// Telemetry
// ---------------------------------------------------------------------------

enum class Chassis { Notebook, Desktop, TwoInOne, NUC };
enum class CpuFamily { i3, i5, i7, i9, Other };

std::string_view to_string(Chassis c);
std::string_view to_string(CpuFamily c);
std::optional<Chassis> parse_chassis(std::string_view text);
std::optional<CpuFamily> parse_cpu_family(std::string_view text);

struct TelemetryRecord {
    Date date;
    std::string device_id;
    std::string unit_id;
    Chassis chassis = Chassis::Notebook;
    CpuFamily cpu_family = CpuFamily::Other;
    bool vpro = false;
    double usage_hours = 0.0;  ///< hours/day in C0 state, within [0, 24]
    double cpu_watts = 0.0;

    bool operator==(const TelemetryRecord&) const = default;
};

/// Columns: date, device_id, unit_id, chassis, cpu_family, vpro, usage_hours,
/// cpu_watts. Unknown columns are ignored.
std::vector<TelemetryRecord> parse_telemetry_csv(std::istream& source);
void write_telemetry_csv(std::ostream& out, std::span<const TelemetryRecord> records);

// ---------------------------------------------------------------------------
// Panel
// ---------------------------------------------------------------------------

using MaskMatrix = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// Separator between group fields inside a panel unit id, e.g. "China|Notebook|i7".
inline constexpr char kGroupSeparator = '|';

/// Aligned unit x date outcome panel with unit-level covariates.
///
/// `missing(u, t)` marks absent cells; their outcome entries hold NaN.
/// Unit ids built by aggregation join the group_by fields with '|'; the
/// first field is the policy unit.
struct PanelDataset {
    std::string outcome_name;
    std::vector<std::string> group_by;
    std::vector<std::string> unit_ids;
    std::vector<Date> dates;
    Eigen::MatrixXd outcomes;
    MaskMatrix missing;

    std::vector<std::string> covariate_names;
    Eigen::MatrixXd covariates;  ///< unit x covariate

    std::vector<std::string> categorical_names;
    std::vector<std::vector<std::string>> categorical_values;  ///< [covariate][unit]

    /// Attached by merge_panels; unit x date, -1 where no code exists.
    std::optional<Eigen::MatrixXi> policy_codes;

    std::size_t unit_count() const { return unit_ids.size(); }
    std::size_t date_count() const { return dates.size(); }
    bool observed(std::size_t unit, std::size_t date) const { return !missing(unit, date); }

    std::optional<std::size_t> unit_index(std::string_view id) const;
    std::optional<std::size_t> date_index(Date date) const;
    std::optional<std::size_t> covariate_index(std::string_view name) const;
    std::optional<std::size_t> categorical_index(std::string_view name) const;

    /// Value of a group field ("unit_id", "chassis", ...) for a unit, if grouped by it.
    std::optional<std::string> group_value(std::size_t unit, std::string_view field) const;

    /// Throws ValidationError when a structural invariant is broken.
    void validate() const;
};

/// Policy key of a panel unit: the part of the id before the first '|'.
std::string_view policy_unit_of(std::string_view panel_unit_id);

enum class Statistic { Mean };

/// Per-(group, date) mean of an outcome field ("usage_hours" or "cpu_watts").
///
/// Groups are keyed by the requested subset of {unit_id, chassis, cpu_family,
/// vpro}, joined in that canonical order. The calendar spans the first to the
/// last record date; empty cells are masked. Covariates: `system_count`
/// (mean distinct devices per observed day) and `vpro_fraction` (share of
/// distinct devices with vPro).
PanelDataset aggregate_telemetry(std::span<const TelemetryRecord> records,
                                 std::span<const std::string> group_by, std::string_view outcome,
                                 Statistic statistic = Statistic::Mean);

/// Restricts the panel to dates shared with every relevant timeline and
/// attaches the policy codes.
PanelDataset merge_panels(const PanelDataset& outcome_panel, std::span<const PolicyTimeline> timelines);

/// Adds unit attributes from a table with a `unit_id` column: numeric columns
/// become covariates, other columns categorical covariates. Rows match panel
/// units by policy key; every panel unit must be covered.
void attach_unit_attributes(PanelDataset& panel, std::istream& source);

/// Treatment events derived from the attached policy codes of one unit.
std::vector<TreatmentEvent> panel_treatment_events(const PanelDataset& panel, std::size_t unit);

/// Subset of units, in the given order.
PanelDataset select_units(const PanelDataset& panel, std::span<const std::string> unit_ids);

// Text interchange -----------------------------------------------------------

/// Writes the self-describing panel text format (tab-separated; "NA" marks
/// masked cells).
void write_panel(std::ostream& out, const PanelDataset& panel);
PanelDataset read_panel(std::istream& in);

}  // namespace policyfx
