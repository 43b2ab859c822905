#pragma once

#include "policyfx/date.hpp"
#include "policyfx/paneldata.hpp"
#include "policyfx/persona.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace policyfx {

struct UnitConfig {
    std::string id;  ///< "Country" or "Country/Region"
    double baseline_hours = 6.0;
    double baseline_watts = 12.0;
    double trend_per_day = 0.0;  ///< hours/day; watts move by the same relative amount
    std::string continent = "Europe";
    double vpro_fraction = 0.5;
    int devices_per_day = 10;  ///< rounded up to an even count
    /// Standard deviation of the daily increments of a latent random walk
    /// shared by both outcomes. Zero gives a straight line.
    double walk_sigma = 0.0;
};

struct TreatmentConfig {
    std::string unit;
    Date activation;
    std::optional<Date> deactivation;
    double effect_hours = 0.0;
    double effect_watts = 0.0;
    int effect_onset_days = 0;  ///< linear ramp length; 0 is an instant step
    /// Added to the activation effect from the deactivation date on.
    double deactivation_effect_hours = 0.0;
    double deactivation_effect_watts = 0.0;
    int deactivation_onset_days = 0;
};

struct OutlierConfig {
    double probability = 0.0;  ///< per unit-day
    double magnitude = 0.0;    ///< hours; watts spikes are scaled by baseline_watts / baseline_hours
};

struct DeviceProfile {
    Chassis chassis = Chassis::Notebook;
    CpuFamily cpu_family = CpuFamily::i7;
};

struct PersonaConfig {
    int devices_per_persona = 100;
    double report_probability = 0.9;    ///< per device-day
    double presence_probability = 0.8;  ///< per device and 14-day block
    double feature_noise = 0.2;         ///< relative daily noise on each feature
};

struct PersonaShiftConfig {
    Date date;
    std::string from = "Office/Productivity";
    std::string to = "Casual Gamers";
    double fraction = 0.2;
};

struct ScenarioConfig {
    std::vector<UnitConfig> units;
    std::optional<TreatmentConfig> treatment;
    /// Treated latent path = sum of weight * donor latent path.
    std::map<std::string, double> donor_mixture;
    double noise_sigma = 0.0;  ///< Gaussian noise on daily unit means (hours; watts scaled)
    double device_spread = 0.5;
    OutlierConfig outliers;
    double dropout_probability = 0.0;  ///< unit-days without any report
    std::vector<DeviceProfile> device_mix{DeviceProfile{}};
    std::optional<PersonaConfig> personas;
    std::optional<PersonaShiftConfig> persona_shift;
    std::uint64_t seed = 1;
    Date start_date = Date::from_days(18262);  // 2020-01-01
    int days = 200;

    /// Throws ValidationError on an inconsistent configuration.
    void validate() const;
};

/// Reads a JSON scenario; absent fields take their defaults.
ScenarioConfig parse_scenario(std::string_view json_text);
/// Canonical JSON (sorted keys, every field present); input of the scenario hash.
std::string canonical_json(const ScenarioConfig& config);
/// Lower-case hex SHA-256 of the canonical JSON.
std::string scenario_hash(const ScenarioConfig& config);

struct GroundTruthManifest {
    std::optional<std::string> treated_unit;
    std::optional<Date> activation;
    std::optional<Date> deactivation;
    double true_effect_hours = 0.0;
    double true_effect_watts = 0.0;
    std::vector<Date> true_breakpoints;
    /// Donor id and weight, in donor id order.
    std::optional<std::vector<std::pair<std::string, double>>> true_weights;
    std::optional<Date> persona_shift_date;
    std::string scenario_hash;
};

std::string manifest_json(const GroundTruthManifest& manifest);
GroundTruthManifest parse_manifest(std::string_view json_text);

/// One `key=value` line per field; missing optionals read "absent".
std::string describe(const GroundTruthManifest& manifest);

inline constexpr std::array<std::string_view, 6> kPersonaFeatureNames{
    "gaming", "web", "communication", "content_creation", "office", "file_sharing"};

struct GeneratedScenario {
    std::vector<PolicyTimeline> timelines;
    std::vector<TelemetryRecord> telemetry;
    std::optional<UsageStream> usage;
    GroundTruthManifest manifest;
};

/// Deterministic in the configuration (the seed is part of it).
GeneratedScenario generate(const ScenarioConfig& config);

/// OxCGRT-style policy table: CountryName, RegionName, Jurisdiction, Date
/// (YYYYMMDD), "C2_Workplace closing", C2_Flag.
void write_policy_table(std::ostream& out, std::span<const PolicyTimeline> timelines);

/// unit_id, continent
void write_unit_table(std::ostream& out, const ScenarioConfig& config);

/// Writes policy.csv, telemetry.csv, units.csv, manifest.json and, when
/// personas are configured, personas.csv into `dir`.
void write_scenario(const std::filesystem::path& dir, const ScenarioConfig& config,
                    const GeneratedScenario& scenario);

}  // namespace policyfx
