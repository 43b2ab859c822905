#include "policyfx/persona.hpp"

#include "policyfx/csv.hpp"
#include "policyfx/error.hpp"
#include "policyfx/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

namespace policyfx {

namespace {

constexpr std::size_t kMaxLloydIterations = 300;
constexpr std::uint64_t kRestarts = 10;

double squared_distance(const Eigen::MatrixXd& points, Eigen::Index i, const Eigen::MatrixXd& centroids,
                        Eigen::Index c) {
    return (points.row(i) - centroids.row(c)).squaredNorm();
}

std::size_t nearest_row(const Eigen::MatrixXd& centroids, const Eigen::RowVectorXd& point) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < centroids.rows(); ++c) {
        const double d = (point - centroids.row(c)).squaredNorm();
        if (d < best_d) {
            best_d = d;
            best = static_cast<std::size_t>(c);
        }
    }
    return best;
}

void check_features(const std::string& device, std::span<const double> features, std::size_t expected) {
    if (features.size() != expected) {
        throw ValidationError("device '" + device + "' has " + std::to_string(features.size()) +
                              " features, expected " + std::to_string(expected));
    }
    for (double f : features) {
        if (!std::isfinite(f) || f < 0.0) {
            throw ValidationError("device '" + device + "' has a negative or non-finite feature");
        }
    }
}

struct LloydRun {
    Eigen::MatrixXd centroids;
    std::vector<std::size_t> labels;
    std::vector<double> sse_history;
    std::size_t iterations = 0;
    bool converged = false;
    double sse = 0.0;
};

/// Greedy k-means++: each new centre is the best of several D^2-weighted
/// candidates. Points equal to a chosen centre have zero weight, so the seeds
/// are distinct.
Eigen::MatrixXd seed_centroids(const Eigen::MatrixXd& points, std::size_t k, Rng& rng) {
    const Eigen::Index n = points.rows();
    const auto kk = static_cast<Eigen::Index>(k);
    const auto trials = 2 + static_cast<int>(std::log(static_cast<double>(k)));
    Eigen::MatrixXd centroids(kk, points.cols());
    centroids.row(0) = points.row(static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n))));
    Eigen::VectorXd dist2(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        dist2(i) = squared_distance(points, i, centroids, 0);
    }
    for (Eigen::Index c = 1; c < kk; ++c) {
        const double total = dist2.sum();
        Eigen::Index chosen = -1;
        double chosen_potential = std::numeric_limits<double>::infinity();
        Eigen::VectorXd chosen_dist2;
        for (int trial = 0; trial < trials; ++trial) {
            const double target = rng.uniform() * total;
            double cumulative = 0.0;
            Eigen::Index candidate = -1;
            for (Eigen::Index i = 0; i < n; ++i) {
                if (dist2(i) <= 0.0) {
                    continue;
                }
                cumulative += dist2(i);
                candidate = i;
                if (cumulative > target) {
                    break;
                }
            }
            Eigen::VectorXd next(n);
            for (Eigen::Index i = 0; i < n; ++i) {
                next(i) = std::min(dist2(i), (points.row(i) - points.row(candidate)).squaredNorm());
            }
            const double potential = next.sum();
            if (potential < chosen_potential) {
                chosen_potential = potential;
                chosen = candidate;
                chosen_dist2 = std::move(next);
            }
        }
        centroids.row(c) = points.row(chosen);
        dist2 = std::move(chosen_dist2);
    }
    return centroids;
}

LloydRun lloyd(const Eigen::MatrixXd& points, Eigen::MatrixXd centroids, std::size_t k) {
    const Eigen::Index n = points.rows();
    const auto kk = static_cast<Eigen::Index>(k);
    const auto d = points.cols();
    LloydRun fit;
    std::vector<std::size_t> labels(static_cast<std::size_t>(n), k);
    for (std::size_t iter = 0; iter < kMaxLloydIterations; ++iter) {
        bool changed = false;
        for (Eigen::Index i = 0; i < n; ++i) {
            const auto label = nearest_row(centroids, points.row(i));
            changed = changed || label != labels[static_cast<std::size_t>(i)];
            labels[static_cast<std::size_t>(i)] = label;
        }
        if (!changed) {
            fit.converged = true;
            break;
        }
        ++fit.iterations;

        Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(kk, d);
        std::vector<std::size_t> sizes(k, 0);
        for (Eigen::Index i = 0; i < n; ++i) {
            sums.row(static_cast<Eigen::Index>(labels[static_cast<std::size_t>(i)])) += points.row(i);
            ++sizes[labels[static_cast<std::size_t>(i)]];
        }
        std::vector<Eigen::Index> empty;
        for (Eigen::Index c = 0; c < kk; ++c) {
            if (sizes[static_cast<std::size_t>(c)] > 0) {
                centroids.row(c) = sums.row(c) / static_cast<double>(sizes[static_cast<std::size_t>(c)]);
            } else {
                empty.push_back(c);
            }
        }
        std::set<Eigen::Index> used;
        for (auto c : empty) {
            Eigen::Index far = -1;
            double far_d = -1.0;
            for (Eigen::Index i = 0; i < n; ++i) {
                const double dd =
                    squared_distance(points, i, centroids, static_cast<Eigen::Index>(labels[static_cast<std::size_t>(i)]));
                if (dd > far_d && !used.count(i)) {
                    far_d = dd;
                    far = i;
                }
            }
            used.insert(far);
            centroids.row(c) = points.row(far);
        }

        double sse = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            sse += squared_distance(points, i, centroids, static_cast<Eigen::Index>(labels[static_cast<std::size_t>(i)]));
        }
        fit.sse_history.push_back(sse);
    }
    double sse = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        sse += (points.row(i) - centroids.row(static_cast<Eigen::Index>(nearest_row(centroids, points.row(i))))).squaredNorm();
    }
    fit.sse = sse;
    fit.centroids = std::move(centroids);
    fit.labels = std::move(labels);
    return fit;
}

}  // namespace

KMeansFit fit_kmeans(const FeatureSet& vectors, std::size_t k, std::uint64_t seed,
                     std::vector<std::string> persona_names) {
    if (k < 2) {
        throw ValidationError("k-means needs k >= 2");
    }
    const std::size_t d = vectors.feature_names.size();
    const auto n = static_cast<Eigen::Index>(vectors.vectors.size());
    Eigen::MatrixXd points(n, static_cast<Eigen::Index>(d));
    std::set<std::vector<double>> distinct;
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& v = vectors.vectors[static_cast<std::size_t>(i)];
        check_features(v.device_id, v.features, d);
        for (std::size_t f = 0; f < d; ++f) {
            points(i, static_cast<Eigen::Index>(f)) = v.features[f];
        }
        distinct.insert(v.features);
    }
    if (distinct.size() < k) {
        throw ValidationError("k-means needs at least k=" + std::to_string(k) + " distinct vectors, got " +
                              std::to_string(distinct.size()));
    }
    if (persona_names.empty()) {
        for (std::size_t c = 0; c < k; ++c) {
            persona_names.push_back(k == kDefaultPersonaNames.size() ? std::string(kDefaultPersonaNames[c])
                                                                     : "persona_" + std::to_string(c));
        }
    } else if (persona_names.size() != k) {
        throw ValidationError("got " + std::to_string(persona_names.size()) + " persona names for k=" +
                              std::to_string(k));
    }

    const auto kk = static_cast<Eigen::Index>(k);
    LloydRun best;
    for (std::uint64_t restart = 0; restart < kRestarts; ++restart) {
        Rng rng(seed, restart);
        auto run = lloyd(points, seed_centroids(points, k, rng), k);
        if (restart == 0 || run.sse < best.sse) {
            best = std::move(run);
        }
    }
    Eigen::MatrixXd& centroids = best.centroids;
    std::vector<std::size_t>& labels = best.labels;
    KMeansFit fit;
    fit.sse_history = std::move(best.sse_history);
    fit.iterations = best.iterations;
    fit.converged = best.converged;

    for (Eigen::Index a = 0; a < kk; ++a) {
        for (Eigen::Index b = a + 1; b < kk; ++b) {
            if (centroids.row(a) == centroids.row(b)) {
                throw NumericalError("k-means produced duplicate centroids " + std::to_string(a) + " and " +
                                     std::to_string(b));
            }
        }
    }

    // Canonical cluster order: by dominant feature, then lexicographically.
    std::vector<Eigen::Index> order(k);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
        Eigen::Index fa = 0;
        Eigen::Index fb = 0;
        centroids.row(a).maxCoeff(&fa);
        centroids.row(b).maxCoeff(&fb);
        if (fa != fb) {
            return fa < fb;
        }
        return std::lexicographical_compare(centroids.row(a).begin(), centroids.row(a).end(),
                                            centroids.row(b).begin(), centroids.row(b).end());
    });
    std::vector<std::size_t> rank(k);
    Eigen::MatrixXd ordered(kk, static_cast<Eigen::Index>(d));
    for (std::size_t r = 0; r < k; ++r) {
        ordered.row(static_cast<Eigen::Index>(r)) = centroids.row(order[r]);
        rank[static_cast<std::size_t>(order[r])] = r;
    }
    for (auto& label : labels) {
        label = rank[label];
    }

    fit.labels = std::move(labels);
    fit.model.centroids = std::move(ordered);
    fit.model.persona_names = std::move(persona_names);
    fit.model.feature_names = vectors.feature_names;
    fit.model.frozen = true;
    return fit;
}

std::size_t nearest_persona(const PersonaModel& model, std::span<const double> features) {
    if (features.size() != static_cast<std::size_t>(model.centroids.cols())) {
        throw ValidationError("feature vector has " + std::to_string(features.size()) +
                              " entries, model expects " + std::to_string(model.centroids.cols()));
    }
    const Eigen::RowVectorXd point =
        Eigen::Map<const Eigen::RowVectorXd>(features.data(), static_cast<Eigen::Index>(features.size()));
    return nearest_row(model.centroids, point);
}

std::map<std::string, std::size_t> assign_personas(const FeatureSet& vectors, const PersonaModel& model) {
    if (vectors.feature_names != model.feature_names) {
        throw ValidationError("feature names do not match the persona model");
    }
    std::map<std::string, std::size_t> out;
    for (const auto& v : vectors.vectors) {
        check_features(v.device_id, v.features, model.feature_names.size());
        if (!out.emplace(v.device_id, nearest_persona(model, v.features)).second) {
            throw ValidationError("device '" + v.device_id + "' appears twice in one feature set");
        }
    }
    return out;
}

UsageStream parse_usage_csv(std::istream& source) {
    const csv::Table table = csv::read(source);
    const auto c_date = table.require("date");
    const auto c_device = table.require("device_id");
    UsageStream stream;
    std::vector<std::size_t> feature_cols;
    for (std::size_t c = 0; c < table.header.size(); ++c) {
        if (c != c_date && c != c_device) {
            stream.feature_names.push_back(table.header[c]);
            feature_cols.push_back(c);
        }
    }
    if (feature_cols.empty()) {
        throw ParseError("usage table has no feature columns");
    }
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& row = table.rows[r];
        const std::string where = "line " + std::to_string(table.lines[r]);
        UsageRecord rec;
        rec.date = Date::parse(csv::trim(row[c_date]));
        rec.device_id = std::string(csv::trim(row[c_device]));
        for (auto c : feature_cols) {
            const auto v = csv::parse_double(row[c]);
            if (!v) {
                throw ParseError(where + ": non-numeric feature '" + table.header[c] + "'");
            }
            if (*v < 0.0) {
                throw ValidationError(where + ": negative feature '" + table.header[c] + "'");
            }
            rec.features.push_back(*v);
        }
        stream.records.push_back(std::move(rec));
    }
    return stream;
}

void write_usage_csv(std::ostream& out, const UsageStream& stream) {
    std::vector<std::string> header{"date", "device_id"};
    header.insert(header.end(), stream.feature_names.begin(), stream.feature_names.end());
    csv::write_row(out, header);
    std::vector<std::string> row;
    for (const auto& r : stream.records) {
        row.assign({r.date.iso(), r.device_id});
        for (double f : r.features) {
            row.push_back(csv::format_double(f));
        }
        csv::write_row(out, row);
    }
}

FeatureSet window_features(const UsageStream& stream, Date start, int width_days) {
    if (width_days < 1) {
        throw ValidationError("window width must be at least one day");
    }
    const std::size_t d = stream.feature_names.size();
    const Date end = start + width_days;
    struct Acc {
        std::vector<double> sum;
        std::size_t days = 0;
    };
    std::map<std::string, Acc> devices;
    for (const auto& r : stream.records) {
        if (r.date < start || !(r.date < end)) {
            continue;
        }
        check_features(r.device_id, r.features, d);
        auto& acc = devices[r.device_id];
        if (acc.sum.empty()) {
            acc.sum.assign(d, 0.0);
        }
        for (std::size_t f = 0; f < d; ++f) {
            acc.sum[f] += r.features[f];
        }
        ++acc.days;
    }
    FeatureSet set;
    set.feature_names = stream.feature_names;
    for (auto& [device, acc] : devices) {
        double total = 0.0;
        for (double s : acc.sum) {
            total += s;
        }
        if (total <= 0.0) {
            continue;
        }
        UsageFeatureVector v;
        v.device_id = device;
        v.window_start = start;
        for (double s : acc.sum) {
            v.features.push_back(s / static_cast<double>(acc.days));
        }
        set.vectors.push_back(std::move(v));
    }
    return set;
}

PersonaCountSeries make_count_series(std::vector<std::string> persona_names, std::vector<Date> window_starts,
                                     Eigen::MatrixXi counts) {
    if (counts.rows() != static_cast<Eigen::Index>(window_starts.size()) ||
        counts.cols() != static_cast<Eigen::Index>(persona_names.size())) {
        throw ValidationError("count matrix is not windows x personas");
    }
    PersonaCountSeries s;
    s.persona_names = std::move(persona_names);
    s.window_starts = std::move(window_starts);
    const Eigen::Index w = counts.rows();
    const Eigen::Index k = counts.cols();
    const Eigen::Index m = std::max<Eigen::Index>(0, w - 1);
    s.diffs.resize(m, k);
    s.zscores = Eigen::MatrixXd::Zero(m, k);
    for (Eigen::Index r = 0; r < m; ++r) {
        s.diffs.row(r) = counts.row(r + 1) - counts.row(r);
    }
    for (Eigen::Index c = 0; c < k && m > 0; ++c) {
        const Eigen::VectorXd col = s.diffs.col(c).cast<double>();
        const double mean = col.mean();
        const double sd = std::sqrt((col.array() - mean).square().mean());
        if (sd > 0.0) {
            s.zscores.col(c) = (col.array() - mean) / sd;
        }
    }
    s.counts = std::move(counts);
    return s;
}

PersonaCountSeries windowed_counts(const UsageStream& stream, const PersonaModel& model, int width_days,
                                   int stride_days) {
    if (stream.feature_names != model.feature_names) {
        throw ValidationError("usage feature names do not match the persona model");
    }
    if (width_days < 1 || stride_days < 1) {
        throw ValidationError("window width and stride must be positive");
    }
    if (stream.records.empty()) {
        throw ValidationError("no usage records");
    }
    Date first = stream.records.front().date;
    Date last = first;
    for (const auto& r : stream.records) {
        first = std::min(first, r.date);
        last = std::max(last, r.date);
    }
    std::vector<Date> starts;
    for (Date s = first; s + (width_days - 1) <= last; s = s + stride_days) {
        starts.push_back(s);
    }
    if (starts.empty()) {
        throw ValidationError("usage records span " + std::to_string(last - first + 1) +
                              " days, shorter than one " + std::to_string(width_days) + "-day window");
    }
    const auto k = static_cast<Eigen::Index>(model.k());
    Eigen::MatrixXi counts = Eigen::MatrixXi::Zero(static_cast<Eigen::Index>(starts.size()), k);
    for (std::size_t w = 0; w < starts.size(); ++w) {
        const auto features = window_features(stream, starts[w], width_days);
        for (const auto& v : features.vectors) {
            ++counts(static_cast<Eigen::Index>(w), static_cast<Eigen::Index>(nearest_persona(model, v.features)));
        }
    }
    return make_count_series(model.persona_names, std::move(starts), std::move(counts));
}

std::vector<Segmentation> persona_changepoint(const PersonaCountSeries& series, const PenaltyConfig& penalty) {
    if (series.window_starts.size() < 4) {
        throw ValidationError("persona change points need at least 4 windows, got " +
                              std::to_string(series.window_starts.size()));
    }
    std::vector<Segmentation> out;
    for (Eigen::Index c = 0; c < series.zscores.cols(); ++c) {
        const Eigen::VectorXd col = series.zscores.col(c);
        out.push_back(detect_penalized(std::span<const double>(col.data(), static_cast<std::size_t>(col.size())),
                                       penalty));
    }
    return out;
}

}  // namespace policyfx
