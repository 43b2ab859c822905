#include "policyfx/changepoint.hpp"

#include "policyfx/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace policyfx {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void require_finite(std::span<const double> series) {
    for (std::size_t i = 0; i < series.size(); ++i) {
        if (!std::isfinite(series[i])) {
            throw ValidationError("series value at index " + std::to_string(i) + " is not finite");
        }
    }
}

double median(std::vector<double> v) {
    const auto mid = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
    const double upper = v[mid];
    if (v.size() % 2 == 1) {
        return upper;
    }
    const double lower = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
    return 0.5 * (lower + upper);
}

/// best[k][s]: minimum cost of splitting [s, n) into k segments.
struct SuffixTable {
    std::vector<std::vector<double>> best;
};

SuffixTable build_suffix_table(const SegmentCostTable& costs, std::size_t k_max) {
    const std::size_t n = costs.size();
    SuffixTable table;
    table.best.assign(k_max + 1, std::vector<double>(n + 1, kInf));
    for (std::size_t s = 0; s < n; ++s) {
        table.best[1][s] = costs(s, n).cost;
    }
    for (std::size_t k = 2; k <= k_max; ++k) {
        for (std::size_t s = 0; s + k <= n; ++s) {
            double best = kInf;
            for (std::size_t b = s + 1; b + (k - 1) <= n; ++b) {
                const double v = costs(s, b).cost + table.best[k - 1][b];
                if (v < best) {
                    best = v;
                }
            }
            table.best[k][s] = best;
        }
    }
    return table;
}

/// Walks forward taking the smallest breakpoint that stays optimal within tol.
std::vector<std::size_t> reconstruct(const SegmentCostTable& costs, const SuffixTable& table, std::size_t k,
                                     double tol) {
    const std::size_t n = costs.size();
    std::vector<std::size_t> breakpoints;
    std::size_t s = 0;
    for (std::size_t remaining = k; remaining > 1; --remaining) {
        const double target = table.best[remaining][s];
        for (std::size_t b = s + 1; b + (remaining - 1) <= n; ++b) {
            if (costs(s, b).cost + table.best[remaining - 1][b] <= target + tol) {
                breakpoints.push_back(b);
                s = b;
                break;
            }
        }
    }
    return breakpoints;
}

Segmentation finish(std::span<const double> series, std::vector<std::size_t> breakpoints, double penalty) {
    Segmentation seg;
    seg.n = series.size();
    seg.breakpoints = std::move(breakpoints);
    seg.penalty = penalty;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= seg.breakpoints.size(); ++i) {
        const std::size_t end = i < seg.breakpoints.size() ? seg.breakpoints[i] : seg.n;
        double sum = 0.0;
        for (std::size_t t = start; t < end; ++t) {
            sum += series[t];
        }
        seg.segment_means.push_back(sum / static_cast<double>(end - start));
        start = end;
    }
    seg.total_cost = segmentation_cost(series, seg.breakpoints);
    return seg;
}

double tie_tolerance(const SegmentCostTable& costs) { return 1e-12 * costs(0, costs.size()).cost; }

}  // namespace

SegmentCostTable::SegmentCostTable(std::span<const double> series) {
    require_finite(series);
    if (!series.empty()) {
        // Shifting by the median limits cancellation and makes constant runs cost exactly zero.
        offset_ = median(std::vector<double>(series.begin(), series.end()));
    }
    sum_.assign(series.size() + 1, 0.0);
    sum_sq_.assign(series.size() + 1, 0.0);
    for (std::size_t i = 0; i < series.size(); ++i) {
        const double v = series[i] - offset_;
        sum_[i + 1] = sum_[i] + v;
        sum_sq_[i + 1] = sum_sq_[i] + v * v;
    }
}

SegmentCost SegmentCostTable::operator()(std::size_t start, std::size_t end) const {
    if (start >= end || end > size()) {
        throw ValidationError("segment [" + std::to_string(start) + ", " + std::to_string(end) +
                              ") is empty or exceeds series length " + std::to_string(size()));
    }
    const double m = static_cast<double>(end - start);
    const double s = sum_[end] - sum_[start];
    const double s2 = sum_sq_[end] - sum_sq_[start];
    return {std::max(0.0, s2 - s * s / m), offset_ + s / m};
}

SegmentCost segment_cost(std::span<const double> series, std::size_t start, std::size_t end) {
    return SegmentCostTable(series)(start, end);
}

double segmentation_cost(std::span<const double> series, std::span<const std::size_t> breakpoints) {
    double total = 0.0;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= breakpoints.size(); ++i) {
        const std::size_t end = i < breakpoints.size() ? breakpoints[i] : series.size();
        if (end <= start || end > series.size()) {
            throw ValidationError("breakpoints are not strictly increasing inside the series");
        }
        double sum = 0.0;
        for (std::size_t t = start; t < end; ++t) {
            sum += series[t];
        }
        const double mean = sum / static_cast<double>(end - start);
        for (std::size_t t = start; t < end; ++t) {
            total += (series[t] - mean) * (series[t] - mean);
        }
        start = end;
    }
    return total;
}

Segmentation detect_known_k(std::span<const double> series, std::size_t k) {
    const std::size_t n = series.size();
    if (k < 1 || k > n) {
        throw ValidationError("segment count " + std::to_string(k) + " outside [1, " + std::to_string(n) + "]");
    }
    const SegmentCostTable costs(series);
    const auto table = build_suffix_table(costs, k);
    return finish(series, reconstruct(costs, table, k, tie_tolerance(costs)), 0.0);
}

double estimate_noise_scale(std::span<const double> series) {
    if (series.size() < 2) {
        throw ValidationError("noise scale needs at least 2 values");
    }
    std::vector<double> diffs;
    diffs.reserve(series.size() - 1);
    for (std::size_t i = 1; i < series.size(); ++i) {
        diffs.push_back(std::abs(series[i] - series[i - 1]));
    }
    const double robust = median(diffs) / 0.9539;
    if (robust > 0.0) {
        return robust;
    }
    // More than half the steps are exactly zero (e.g. integer-valued series).
    double sum_sq = 0.0;
    for (double d : diffs) {
        sum_sq += d * d;
    }
    return std::sqrt(sum_sq / (2.0 * static_cast<double>(diffs.size())));
}

double effective_penalty(std::span<const double> series, const PenaltyConfig& penalty) {
    if (penalty.kind == PenaltyKind::Manual) {
        if (!(penalty.lambda >= 0.0) || !std::isfinite(penalty.lambda)) {
            throw ValidationError("manual penalty must be a finite non-negative number");
        }
        return penalty.lambda;
    }
    double sigma = 0.0;
    if (penalty.noise_scale) {
        if (!(*penalty.noise_scale > 0.0)) {
            throw ValidationError("noise scale override must be positive");
        }
        sigma = *penalty.noise_scale;
    } else {
        sigma = estimate_noise_scale(series);
    }
    const double var = sigma * sigma;
    if (penalty.kind == PenaltyKind::AIC) {
        return 2.0 * var;
    }
    return 3.0 * var * std::log(static_cast<double>(series.size()));
}

Segmentation detect_penalized(std::span<const double> series, const PenaltyConfig& penalty) {
    const std::size_t n = series.size();
    if (n < 2) {
        throw ValidationError("penalized detection needs a series of length >= 2");
    }
    if (penalty.k_max < 1) {
        throw ValidationError("k_max must be at least 1");
    }
    const double lambda = effective_penalty(series, penalty);
    const SegmentCostTable costs(series);
    const std::size_t k_max = std::min(n, penalty.k_max);
    const auto table = build_suffix_table(costs, k_max);
    const double tol = tie_tolerance(costs);

    std::size_t best_k = 1;
    double best = table.best[1][0] + lambda;
    for (std::size_t k = 2; k <= k_max; ++k) {
        const double v = table.best[k][0] + lambda * static_cast<double>(k);
        if (v < best - tol) {
            best = v;
            best_k = k;
        }
    }
    return finish(series, reconstruct(costs, table, best_k, tol), lambda);
}

std::vector<std::pair<double, Segmentation>> stability_scan(std::span<const double> series,
                                                            std::span<const double> lambdas,
                                                            std::size_t k_max) {
    if (lambdas.empty()) {
        throw ValidationError("stability scan needs at least one penalty value");
    }
    std::vector<std::pair<double, Segmentation>> out;
    for (double lambda : lambdas) {
        PenaltyConfig config;
        config.kind = PenaltyKind::Manual;
        config.lambda = lambda;
        config.k_max = k_max;
        out.emplace_back(lambda, detect_penalized(series, config));
    }
    return out;
}

}  // namespace policyfx
