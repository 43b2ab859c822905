#pragma once

#include "policyfx/changepoint.hpp"
#include "policyfx/date.hpp"

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <istream>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace policyfx {

inline constexpr std::array<std::string_view, 6> kDefaultPersonaNames{
    "Casual Gamers", "Web Users", "Communication Users", "Content Creators", "Office/Productivity",
    "File & Network Sharer"};

/// Per-device app-category usage for one window (mean hours/day per category).
struct UsageFeatureVector {
    std::string device_id;
    Date window_start;
    std::vector<double> features;
};

struct FeatureSet {
    std::vector<std::string> feature_names;
    std::vector<UsageFeatureVector> vectors;
};

struct PersonaModel {
    Eigen::MatrixXd centroids;  ///< k x d
    std::vector<std::string> persona_names;
    std::vector<std::string> feature_names;
    bool frozen = true;

    std::size_t k() const { return static_cast<std::size_t>(centroids.rows()); }
};

struct KMeansFit {
    PersonaModel model;
    std::vector<std::size_t> labels;  ///< per input vector
    /// Within-cluster sum of squares after each Lloyd iteration.
    std::vector<double> sse_history;
    std::size_t iterations = 0;
    bool converged = false;
};

/// Lloyd's algorithm from 10 seeded greedy k-means++ initializations; the run
/// with the lowest final SSE is kept. Empty clusters are reseeded at the point
/// farthest from its centroid. Each run stops when assignments stop changing
/// or after 300 iterations. Clusters are returned ordered by
/// their dominant feature (ties: lexicographic centroid order).
KMeansFit fit_kmeans(const FeatureSet& vectors, std::size_t k, std::uint64_t seed,
                     std::vector<std::string> persona_names = {});

/// Nearest centroid by Euclidean distance; ties go to the lowest index.
std::size_t nearest_persona(const PersonaModel& model, std::span<const double> features);

std::map<std::string, std::size_t> assign_personas(const FeatureSet& vectors, const PersonaModel& model);

/// Daily per-device category usage.
struct UsageRecord {
    Date date;
    std::string device_id;
    std::vector<double> features;
};

struct UsageStream {
    std::vector<std::string> feature_names;
    std::vector<UsageRecord> records;
};

/// Columns: date, device_id, then one column per feature.
UsageStream parse_usage_csv(std::istream& source);
void write_usage_csv(std::ostream& out, const UsageStream& stream);

/// Mean daily features per device over [start, start + width_days), in device
/// id order. Devices without records, or with zero total usage, are left out.
FeatureSet window_features(const UsageStream& stream, Date start, int width_days);

struct PersonaCountSeries {
    std::vector<std::string> persona_names;
    std::vector<Date> window_starts;
    Eigen::MatrixXi counts;    ///< windows x k
    Eigen::MatrixXi diffs;     ///< (windows - 1) x k; row w = counts[w+1] - counts[w]
    Eigen::MatrixXd zscores;   ///< (windows - 1) x k; population std, 0 for constant columns
};

/// Builds diffs and z-scores from a count matrix.
PersonaCountSeries make_count_series(std::vector<std::string> persona_names, std::vector<Date> window_starts,
                                     Eigen::MatrixXi counts);

/// Persona counts over sliding windows (default: 28-day width, 14-day stride)
/// against a frozen model.
PersonaCountSeries windowed_counts(const UsageStream& stream, const PersonaModel& model, int width_days = 28,
                                   int stride_days = 14);

/// Penalized change points on each persona's z-score column.
std::vector<Segmentation> persona_changepoint(const PersonaCountSeries& series,
                                              const PenaltyConfig& penalty = {});

}  // namespace policyfx
