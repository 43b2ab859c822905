#pragma once

#include <optional>
#include <span>
#include <utility>
#include <vector>

namespace policyfx {

/// Piecewise-constant segmentation of a dense series.
struct Segmentation {
    /// First index of each segment after the first; strictly increasing in (0, n).
    std::vector<std::size_t> breakpoints;
    std::vector<double> segment_means;
    /// Sum over segments of squared deviations from the segment mean.
    double total_cost = 0.0;
    std::size_t n = 0;
    /// Per-segment penalty used to select k (0 for known-k runs).
    double penalty = 0.0;

    std::size_t k() const { return breakpoints.size() + 1; }
};

enum class PenaltyKind { AIC, BIC, Manual };

struct PenaltyConfig {
    PenaltyKind kind = PenaltyKind::BIC;
    double lambda = 0.0;                ///< used when Manual
    std::optional<double> noise_scale;  ///< overrides the robust sigma estimate
    std::size_t k_max = 20;
};

struct SegmentCost {
    double cost = 0.0;
    double mean = 0.0;
};

/// Constant-time segment costs from prefix sums of the median-shifted series.
class SegmentCostTable {
public:
    explicit SegmentCostTable(std::span<const double> series);

    /// Cost and mean of [start, end); throws on an empty or out-of-range interval.
    SegmentCost operator()(std::size_t start, std::size_t end) const;
    std::size_t size() const { return sum_.size() - 1; }

private:
    double offset_ = 0.0;
    std::vector<double> sum_;
    std::vector<double> sum_sq_;
};

SegmentCost segment_cost(std::span<const double> series, std::size_t start, std::size_t end);

/// Exact minimum-cost segmentation into `k` segments, O(k n^2). Among
/// equal-cost optima the lexicographically smallest breakpoint list wins.
Segmentation detect_known_k(std::span<const double> series, std::size_t k);

/// Minimizes cost + lambda_eff * k over k in [1, min(n, k_max)]; ties go to
/// the smaller k.
Segmentation detect_penalized(std::span<const double> series, const PenaltyConfig& penalty = {});

/// median |y[t+1] - y[t]| / 0.9539, where 0.9539 = Phi^-1(0.75) * sqrt(2).
/// Falls back to the RMS successive difference / sqrt(2) when that median is 0.
double estimate_noise_scale(std::span<const double> series);

/// AIC: 2 sigma^2. BIC: 3 sigma^2 ln n (modified BIC for mean shifts). Manual: lambda.
double effective_penalty(std::span<const double> series, const PenaltyConfig& penalty);

/// detect_penalized in Manual mode for each lambda, in input order.
std::vector<std::pair<double, Segmentation>> stability_scan(std::span<const double> series,
                                                            std::span<const double> lambdas,
                                                            std::size_t k_max = 20);

/// Direct two-pass evaluation of the piecewise-constant loss for given breakpoints.
double segmentation_cost(std::span<const double> series, std::span<const std::size_t> breakpoints);

}  // namespace policyfx
