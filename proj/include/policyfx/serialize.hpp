#pragma once

#include "policyfx/changepoint.hpp"
#include "policyfx/did.hpp"
#include "policyfx/persona.hpp"
#include "policyfx/synthcontrol.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace policyfx {

using Json = nlohmann::ordered_json;

/// Writes to a sibling temporary file and renames it over `path`, so readers
/// never observe a partial file. Throws IoError.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

/// Reads a whole file; throws IoError naming the path.
std::string read_file(const std::filesystem::path& path);

/// Pretty-printed with a trailing newline.
std::string dump_json(const Json& doc);

/// Shortest round-trip form that always shows a decimal point or exponent.
std::string format_decimal(double value);

Json to_json(const DidFit& fit);
Json to_json(const TrendGap& gap);

/// Weights keyed by donor id; series as [date, value] pairs (null where undefined).
Json to_json(const SynthFit& fit);

/// Per-date observed, counterfactual and gap plus the 5/50/95% quantiles of
/// the placebo gaps at that date.
std::string synth_plot_csv(const SynthFit& fit);

/// Breakpoints as indices, and as dates when `dates` (one per series value) is given.
Json to_json(const Segmentation& seg, std::span<const Date> dates = {});

/// Rows of (date, value, segment_mean); dates may be empty, then the index is used.
std::string segmentation_plot_csv(const Segmentation& seg, std::span<const double> series,
                                  std::span<const Date> dates = {});

/// window_start plus one column per persona.
std::string persona_counts_csv(const PersonaCountSeries& series);
/// window_start of the later window of each transition plus one column per persona.
std::string persona_zscores_csv(const PersonaCountSeries& series);

Json to_json(const PersonaModel& model);
PersonaModel persona_model_from_json(const Json& doc);

/// Linear-interpolation quantile of the finite values; NaN when there are none.
double quantile(std::vector<double> values, double q);

}  // namespace policyfx
