#include "oracles.hpp"

#include "policyfx/error.hpp"
#include "policyfx/persona.hpp"
#include "policyfx/simgen.hpp"

#include <doctest.h>

#include <random>
#include <sstream>

using namespace policyfx;

namespace {

const Date kStart = Date::from_ymd(2020, 1, 1);

FeatureSet points_to_set(const oracle::Mat& pts) {
    FeatureSet s;
    for (std::size_t f = 0; f < pts.front().size(); ++f) s.feature_names.push_back("f" + std::to_string(f));
    for (std::size_t i = 0; i < pts.size(); ++i) s.vectors.push_back({"d" + std::to_string(i), kStart, pts[i]});
    return s;
}

oracle::Mat random_points(std::mt19937_64& gen, std::size_t n, std::size_t d, double scale = 1.0) {
    std::uniform_real_distribution<double> u(0.0, scale);
    oracle::Mat pts(n, oracle::Vec(d));
    for (auto& p : pts) {
        for (auto& x : p) x = u(gen);
    }
    return pts;
}

double sse_of(const FeatureSet& s, const KMeansFit& fit) {
    double total = 0.0;
    for (std::size_t i = 0; i < s.vectors.size(); ++i) {
        for (std::size_t f = 0; f < s.feature_names.size(); ++f) {
            const double diff = s.vectors[i].features[f] -
                                fit.model.centroids(static_cast<Eigen::Index>(fit.labels[i]), static_cast<Eigen::Index>(f));
            total += diff * diff;
        }
    }
    return total;
}

oracle::Mat centroid_rows(const PersonaModel& m) {
    oracle::Mat c(m.k(), oracle::Vec(m.feature_names.size()));
    for (std::size_t i = 0; i < m.k(); ++i) {
        for (std::size_t f = 0; f < m.feature_names.size(); ++f) {
            c[i][f] = m.centroids(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(f));
        }
    }
    return c;
}

ScenarioConfig persona_scenario(int devices, int days, std::optional<Date> shift, std::uint64_t seed) {
    ScenarioConfig cfg;
    UnitConfig u;
    u.id = "Anywhere";
    u.devices_per_day = 2;
    cfg.units.push_back(u);
    cfg.days = days;
    cfg.seed = seed;
    PersonaConfig pc;
    pc.devices_per_persona = devices;
    cfg.personas = pc;
    if (shift) {
        PersonaShiftConfig sc;
        sc.date = *shift;
        cfg.persona_shift = sc;
    }
    return cfg;
}

std::size_t index_of(const std::vector<std::string>& names, const std::string& name) {
    return static_cast<std::size_t>(std::find(names.begin(), names.end(), name) - names.begin());
}

}  // namespace

TEST_CASE("k-means: well separated clouds") {
    std::mt19937_64 gen(1);
    std::normal_distribution<double> z(0.0, 0.1);
    oracle::Mat pts;
    oracle::Vec mean_a(2, 0.0);
    oracle::Vec mean_b(2, 0.0);
    for (int i = 0; i < 50; ++i) {
        pts.push_back({1.0 + z(gen), 1.0 + z(gen)});
        for (int f = 0; f < 2; ++f) mean_a[f] += pts.back()[f] / 50.0;
        pts.push_back({10.0 + z(gen), 10.0 + z(gen)});
        for (int f = 0; f < 2; ++f) mean_b[f] += pts.back()[f] / 50.0;
    }
    const auto fit = fit_kmeans(points_to_set(pts), 2, 42);
    const auto c = centroid_rows(fit.model);
    const auto& lo = c[0][0] < c[1][0] ? c[0] : c[1];
    const auto& hi = c[0][0] < c[1][0] ? c[1] : c[0];
    for (int f = 0; f < 2; ++f) {
        CHECK(std::abs(lo[f] - mean_a[f]) <= 1e-9);
        CHECK(std::abs(hi[f] - mean_b[f]) <= 1e-9);
    }
    CHECK(fit.converged);
    CHECK(fit.model.persona_names == std::vector<std::string>{"persona_0", "persona_1"});
}

TEST_CASE("k-means: k equal to the number of distinct points") {
    const oracle::Mat pts{{0, 0}, {1, 0}, {0, 1}, {1, 0}, {5, 5}};
    const auto s = points_to_set(pts);
    const auto fit = fit_kmeans(s, 4, 7);
    CHECK(sse_of(s, fit) == 0.0);
    CHECK(fit.labels[1] == fit.labels[3]);
    CHECK_THROWS_AS(fit_kmeans(s, 5, 7), ValidationError);
    CHECK_THROWS_AS(fit_kmeans(s, 1, 7), ValidationError);
    CHECK_THROWS_AS(fit_kmeans(s, 2, 7, {"only one"}), ValidationError);
}

TEST_CASE("k-means: SSE no worse than the median of random-restart Lloyd runs") {
    std::mt19937_64 gen(2024);
    for (int rep = 0; rep < 5; ++rep) {
        const auto pts = random_points(gen, 200, 3);
        const auto s = points_to_set(pts);
        const auto fit = fit_kmeans(s, 4, 100 + static_cast<std::uint64_t>(rep));
        std::vector<double> restarts;
        for (int r = 0; r < 50; ++r) restarts.push_back(oracle::naive_lloyd(pts, 4, gen));
        std::nth_element(restarts.begin(), restarts.begin() + 25, restarts.end());
        CHECK(sse_of(s, fit) <= restarts[25] + 1e-9);
    }
}

TEST_CASE("k-means: monotone SSE, determinism and canonical order") {
    std::mt19937_64 gen(3);
    for (int rep = 0; rep < 20; ++rep) {
        const auto pts = random_points(gen, 60 + rep, 4, 5.0);
        const auto s = points_to_set(pts);
        const std::size_t k = 2 + static_cast<std::size_t>(rep) % 5;
        const auto fit = fit_kmeans(s, k, static_cast<std::uint64_t>(rep));
        for (std::size_t i = 1; i < fit.sse_history.size(); ++i) {
            CHECK(fit.sse_history[i] <= fit.sse_history[i - 1] + 1e-9);
        }
        if (!fit.sse_history.empty()) CHECK(fit.sse_history.back() == doctest::Approx(sse_of(s, fit)));
        CHECK(fit.sse_history.size() == fit.iterations);

        const auto again = fit_kmeans(s, k, static_cast<std::uint64_t>(rep));
        CHECK((again.model.centroids.array() == fit.model.centroids.array()).all());
        CHECK(again.labels == fit.labels);

        // Labels are nearest centroids, rows pairwise distinct, dominant features sorted.
        const auto c = centroid_rows(fit.model);
        for (std::size_t i = 0; i < pts.size(); ++i) CHECK(fit.labels[i] == oracle::argmin_distance(c, pts[i]));
        std::size_t prev = 0;
        for (std::size_t i = 0; i < c.size(); ++i) {
            const auto dom = static_cast<std::size_t>(std::max_element(c[i].begin(), c[i].end()) - c[i].begin());
            CHECK(dom >= prev);
            prev = dom;
            for (std::size_t j = i + 1; j < c.size(); ++j) CHECK(c[i] != c[j]);
        }
    }
}

TEST_CASE("assignment examples and tie rule") {
    PersonaModel m;
    m.centroids.resize(3, 2);
    m.centroids << 0, 0, 2, 0, 5, 5;
    m.persona_names = {"a", "b", "c"};
    m.feature_names = {"x", "y"};
    CHECK(nearest_persona(m, std::vector<double>{5, 5}) == 2);
    CHECK(nearest_persona(m, std::vector<double>{1, 0}) == 0);
    CHECK(nearest_persona(m, std::vector<double>{1.9, 0.1}) == 1);
    CHECK_THROWS_AS(nearest_persona(m, std::vector<double>{1}), ValidationError);

    FeatureSet s;
    s.feature_names = {"x", "z"};
    s.vectors.push_back({"d", kStart, {1, 1}});
    CHECK_THROWS_AS(assign_personas(s, m), ValidationError);
    s.feature_names = {"x", "y"};
    s.vectors.push_back({"d", kStart, {2, 1}});
    CHECK_THROWS_AS(assign_personas(s, m), ValidationError);
}

TEST_CASE("assignment agrees with an argmin oracle and leaves the model untouched") {
    std::mt19937_64 gen(8);
    const auto train = random_points(gen, 300, 6, 3.0);
    const auto model = fit_kmeans(points_to_set(train), 6, 1).model;
    const Eigen::MatrixXd before = model.centroids;
    const auto c = centroid_rows(model);
    auto test = random_points(gen, 1000, 6, 3.0);
    for (const auto& row : c) test.push_back(row);
    const auto set = points_to_set(test);
    const auto labels = assign_personas(set, model);
    CHECK(labels.size() == test.size());
    for (std::size_t i = 0; i < test.size(); ++i) {
        CHECK(labels.at("d" + std::to_string(i)) == oracle::argmin_distance(c, test[i]));
    }
    CHECK((model.centroids.array() == before.array()).all());
}

TEST_CASE("count series: hand computation") {
    Eigen::MatrixXi counts(3, 1);
    counts << 100, 110, 90;
    const auto s = make_count_series({"p"}, {kStart, kStart + 14, kStart + 28}, counts);
    CHECK(s.diffs(0, 0) == 10);
    CHECK(s.diffs(1, 0) == -20);
    CHECK(s.zscores(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(s.zscores(1, 0) == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK_THROWS_AS(make_count_series({"p", "q"}, {kStart}, counts), ValidationError);
}

TEST_CASE("count series: z-score normalization property") {
    std::mt19937_64 gen(10);
    std::uniform_int_distribution<int> c(0, 500);
    for (int rep = 0; rep < 100; ++rep) {
        const int w = 2 + rep % 20;
        Eigen::MatrixXi counts(w, 3);
        std::vector<Date> starts;
        for (int i = 0; i < w; ++i) {
            starts.push_back(kStart + 14 * i);
            counts(i, 0) = c(gen);
            counts(i, 1) = 42;
            counts(i, 2) = c(gen) % 3;
        }
        const auto s = make_count_series({"a", "b", "c"}, starts, counts);
        for (Eigen::Index r = 0; r + 1 < w; ++r) {
            CHECK(s.diffs.row(r) == counts.row(r + 1) - counts.row(r));
        }
        CHECK(s.zscores.col(1).cwiseAbs().maxCoeff() == 0.0);
        for (Eigen::Index col : {0, 2}) {
            const Eigen::VectorXd z = s.zscores.col(col);
            const Eigen::VectorXd d = s.diffs.col(col).cast<double>();
            if ((d.array() == d(0)).all()) {
                CHECK(z.cwiseAbs().maxCoeff() == 0.0);
                continue;
            }
            CHECK(std::abs(z.mean()) <= 1e-9);
            CHECK(std::abs(std::sqrt(z.squaredNorm() / static_cast<double>(z.size())) - 1.0) <= 1e-9);
        }
    }
}

TEST_CASE("window features and usage csv") {
    UsageStream st;
    st.feature_names = {"a", "b"};
    st.records = {{kStart, "x", {1, 2}}, {kStart + 1, "x", {3, 4}}, {kStart, "y", {0, 0}},
                  {kStart + 2, "z", {5, 5}}, {kStart + 1, "w", {1, 1}}};
    const auto f = window_features(st, kStart, 2);
    REQUIRE(f.vectors.size() == 2);
    CHECK(f.vectors[0].device_id == "w");
    CHECK(f.vectors[1].device_id == "x");
    CHECK(f.vectors[1].features == std::vector<double>{2, 3});
    CHECK_THROWS_AS(window_features(st, kStart, 0), ValidationError);

    std::ostringstream out;
    write_usage_csv(out, st);
    std::istringstream in(out.str());
    const auto back = parse_usage_csv(in);
    CHECK(back.feature_names == st.feature_names);
    REQUIRE(back.records.size() == st.records.size());
    CHECK(back.records[1].features == st.records[1].features);

    std::istringstream neg("date,device_id,a\n2020-01-01,x,-1\n");
    CHECK_THROWS_AS(parse_usage_csv(neg), ValidationError);
    std::istringstream none("date,device_id\n2020-01-01,x\n");
    CHECK_THROWS_AS(parse_usage_csv(none), ParseError);
}

TEST_CASE("windowed counts: constant population gives zero changes") {
    UsageStream st;
    st.feature_names = {"a", "b"};
    for (int t = 0; t < 90; ++t) {
        st.records.push_back({kStart + t, "x", {3, 0}});
        st.records.push_back({kStart + t, "y", {0, 3}});
        st.records.push_back({kStart + t, "z", {0, 2.5}});
    }
    PersonaModel m;
    m.centroids.resize(2, 2);
    m.centroids << 3, 0, 0, 3;
    m.persona_names = {"A", "B"};
    m.feature_names = {"a", "b"};
    const auto s = windowed_counts(st, m);
    CHECK(s.window_starts.size() == 5);  // 0, 14, 28, 42, 56; 70 + 27 > 89
    CHECK((s.counts.col(0).array() == 1).all());
    CHECK((s.counts.col(1).array() == 2).all());
    CHECK(s.diffs.cwiseAbs().maxCoeff() == 0);
    CHECK(s.zscores.cwiseAbs().maxCoeff() == 0.0);
    for (const auto& seg : persona_changepoint(s)) CHECK(seg.breakpoints.empty());

    UsageStream short_st = st;
    short_st.records.resize(3 * 20);
    CHECK_THROWS_AS(windowed_counts(short_st, m), ValidationError);
    CHECK_THROWS_AS(persona_changepoint(windowed_counts(short_st, m, 7, 7)), ValidationError);
}

TEST_CASE("persona shift scenario") {
    // Shift lands 15 days into window m; window m+1 then adds a block that is fully post-shift.
    const int m = 10;
    const Date shift = kStart + 14 * m + 15;
    const auto cfg = persona_scenario(150, 365, shift, 5);
    const auto g = generate(cfg);
    REQUIRE(g.usage.has_value());
    const auto& usage = *g.usage;
    CHECK(g.manifest.persona_shift_date == shift);

    const auto fit = fit_kmeans(window_features(usage, kStart, 28), 6, 1);
    CHECK(fit.model.persona_names.front() == "Casual Gamers");
    const Eigen::MatrixXd frozen = fit.model.centroids;
    const auto series = windowed_counts(usage, fit.model);
    CHECK((fit.model.centroids.array() == frozen.array()).all());

    // Count conservation against the independent window feature count.
    for (std::size_t w = 0; w < series.window_starts.size(); ++w) {
        const auto present = window_features(usage, series.window_starts[w], 28).vectors.size();
        CHECK(static_cast<std::size_t>(series.counts.row(static_cast<Eigen::Index>(w)).sum()) == present);
    }

    const auto gamers = index_of(series.persona_names, "Casual Gamers");
    const auto office = index_of(series.persona_names, "Office/Productivity");
    CHECK(series.zscores.col(static_cast<Eigen::Index>(office)).minCoeff() < -2.0);
    Eigen::Index row = 0;
    Eigen::Index col = 0;
    series.zscores.maxCoeff(&row, &col);
    CHECK(static_cast<std::size_t>(col) == gamers);
    CHECK(row == m);
    CHECK(series.window_starts[static_cast<std::size_t>(row + 1)] == kStart + 14 * (m + 1));

    REQUIRE(persona_changepoint(series).size() == 6);
}

TEST_CASE("persona shift: breakpoints near the injected window across seeds") {
    const int m = 10;
    const Date shift = kStart + 14 * m + 15;
    int gamer_hits = 0;
    int office_hits = 0;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const auto usage = *generate(persona_scenario(200, 365, shift, seed)).usage;
        const auto fit = fit_kmeans(window_features(usage, kStart, 28), 6, 1);
        const auto series = windowed_counts(usage, fit.model);
        Eigen::Index row = 0;
        Eigen::Index col = 0;
        series.zscores.maxCoeff(&row, &col);
        CHECK(row == m);
        CHECK(series.persona_names[static_cast<std::size_t>(col)] == "Casual Gamers");
        const auto segs = persona_changepoint(series);
        auto near = [&](const std::string& name) {
            for (auto b : segs[index_of(series.persona_names, name)].breakpoints) {
                if (std::abs(static_cast<long>(b) - m) <= 1) return true;
            }
            return false;
        };
        gamer_hits += near("Casual Gamers");
        office_hits += near("Office/Productivity");
    }
    MESSAGE("breakpoint within one window: gamers " << gamer_hits << "/10, office " << office_hits << "/10");
    CHECK(gamer_hits > 5);
    CHECK(office_hits > 5);
}

TEST_CASE("persona pipeline is deterministic") {
    const auto cfg = persona_scenario(40, 120, std::nullopt, 9);
    const auto a = generate(cfg);
    const auto b = generate(cfg);
    const auto fa = fit_kmeans(window_features(*a.usage, kStart, 28), 6, 3);
    const auto fb = fit_kmeans(window_features(*b.usage, kStart, 28), 6, 3);
    CHECK((fa.model.centroids.array() == fb.model.centroids.array()).all());
    CHECK(windowed_counts(*a.usage, fa.model).counts == windowed_counts(*b.usage, fb.model).counts);
}
