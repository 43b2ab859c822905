#include "oracles.hpp"

#include "policyfx/error.hpp"
#include "policyfx/paneldata.hpp"
#include "policyfx/simgen.hpp"

#include <doctest.h>

#include <iterator>
#include <random>
#include <set>
#include <sstream>

using namespace policyfx;

namespace {

std::vector<PolicyTimeline> parse(const std::string& text, std::string_view indicator = "C2") {
    std::istringstream in(text);
    return parse_policy_csv(in, indicator);
}

PolicyTimeline timeline(const std::string& unit, Date start, std::vector<int> codes) {
    PolicyTimeline t;
    t.unit_id = unit;
    for (std::size_t i = 0; i < codes.size(); ++i) t.dates.push_back(start + static_cast<int>(i));
    t.codes = std::move(codes);
    return t;
}

TelemetryRecord record(Date d, std::string device, std::string unit, double hours, double watts = 10.0) {
    TelemetryRecord r;
    r.date = d;
    r.device_id = std::move(device);
    r.unit_id = std::move(unit);
    r.usage_hours = hours;
    r.cpu_watts = watts;
    return r;
}

const std::vector<std::string> kByUnit{"unit_id"};

}  // namespace

TEST_CASE("policy csv: activation date read from a national row") {
    const auto ts = parse(
        "CountryName,RegionName,Jurisdiction,Date,C2_Workplace closing,C2_Flag\n"
        "United States,,NAT_TOTAL,20200315,2,1\n"
        "United States,,NAT_TOTAL,20200316,3,1\n");
    REQUIRE(ts.size() == 1);
    CHECK(ts[0].unit_id == "United States");
    CHECK(ts[0].code_on(Date::from_ymd(2020, 3, 16)) == 3);
    CHECK(ts[0].code_on(Date::from_ymd(2020, 3, 15)) == 2);
    CHECK_FALSE(ts[0].code_on(Date::from_ymd(2020, 3, 17)).has_value());
}

TEST_CASE("policy csv: header only gives no timelines") {
    CHECK(parse("CountryName,Date,C2\n").empty());
}

TEST_CASE("policy csv: calendar gap is rejected") {
    CHECK_THROWS_AS(parse("CountryName,Date,C2\nX,20200101,0\nX,20200103,2\n"), ValidationError);
}

TEST_CASE("policy csv: forward fill and leading zeros") {
    const auto ts = parse("CountryName,Date,C2\nX,20200101,\nX,20200102,3\nX,20200103,\nX,20200104,2\n");
    REQUIRE(ts.size() == 1);
    CHECK(ts[0].codes == std::vector<int>{0, 3, 3, 2});
}

TEST_CASE("policy csv: errors") {
    CHECK_THROWS_AS(parse("CountryName,Date,C2\nX,20200101,4\n"), ValidationError);
    CHECK_THROWS_AS(parse("CountryName,Date,C2\nX,20200101,1.5\n"), ValidationError);
    CHECK_THROWS_AS(parse("CountryName,Date,C2\nX,2020011,1\n"), ParseError);
    CHECK_THROWS_AS(parse("CountryName,Date,C2\nX,20200101,1\nX,2020-01-02,1\n"), ParseError);
    CHECK_THROWS_AS(parse("CountryName,Date,C9\nX,20200101,1\n", "C2"), ParseError);
    try {
        parse("CountryName,Date,C2\nX,20200101,1\nX,2020x102,1\n");
        FAIL("expected a parse error");
    } catch (const ParseError& e) {
        CHECK(std::string(e.what()).find("line 3") != std::string::npos);
    }
}

TEST_CASE("policy csv: iso dates, regions and flag columns") {
    const auto ts = parse(
        "CountryName,RegionName,Date,C2_Flag,C2_Workplace closing\n"
        "United States,California,2020-03-19,0,3\n"
        "United States,California,2020-03-20,0,3\n"
        "United States,,2020-03-19,1,2\n");
    REQUIRE(ts.size() == 2);
    CHECK(ts[0].unit_id == "United States/California");
    CHECK(ts[0].codes == std::vector<int>{3, 3});
    CHECK(ts[1].unit_id == "United States");
    CHECK(ts[1].codes == std::vector<int>{2});
}

TEST_CASE("policy csv round trip") {
    std::mt19937_64 gen(4);
    std::uniform_int_distribution<int> code(0, 3);
    std::uniform_int_distribution<int> length(1, 40);
    for (int rep = 0; rep < 50; ++rep) {
        std::vector<PolicyTimeline> ts;
        const int units = 1 + rep % 4;
        for (int u = 0; u < units; ++u) {
            std::vector<int> codes(static_cast<std::size_t>(length(gen)));
            for (auto& c : codes) c = code(gen);
            ts.push_back(timeline("unit" + std::to_string(u), Date::from_ymd(2020, 1, 1) + u * 7, codes));
        }
        std::ostringstream out;
        write_policy_csv(out, ts, "C2");
        CHECK(parse(out.str()) == ts);
    }
}

TEST_CASE("treatment events") {
    const Date d0 = Date::from_ymd(2020, 1, 1);
    const auto events = extract_treatment_events(timeline("X", d0, {0, 0, 3, 3, 2}));
    REQUIRE(events.size() == 2);
    CHECK(events[0] == TreatmentEvent{"X", EventKind::Activation, d0 + 2});
    CHECK(events[1] == TreatmentEvent{"X", EventKind::Deactivation, d0 + 4});

    CHECK(extract_treatment_events(timeline("X", d0, {0, 1, 2, 2})).empty());
    CHECK(extract_treatment_events(timeline("X", d0, {2, 3, 3})).size() == 1);

    const Date jan22 = Date::from_ymd(2020, 1, 22);
    std::vector<int> china(100, 0);
    const int act = Date::from_ymd(2020, 1, 26) - jan22;
    const int deact = Date::from_ymd(2020, 4, 2) - jan22;
    for (int i = act; i < deact; ++i) china[static_cast<std::size_t>(i)] = 3;
    for (int i = deact; i < 100; ++i) china[static_cast<std::size_t>(i)] = 2;
    const auto ce = extract_treatment_events(timeline("China", jan22, china));
    REQUIRE(ce.size() == 2);
    CHECK(ce[0].date.iso() == "2020-01-26");
    CHECK(ce[1].date.iso() == "2020-04-02");
}

TEST_CASE("treatment events: at most one of each, ordered") {
    std::mt19937_64 gen(12);
    std::uniform_int_distribution<int> code(0, 3);
    for (int rep = 0; rep < 500; ++rep) {
        std::vector<int> codes(1 + rep % 30);
        for (auto& c : codes) c = code(gen);
        const auto t = timeline("X", Date::from_ymd(2021, 5, 1), codes);
        const auto events = extract_treatment_events(t);
        REQUIRE(events.size() <= 2);
        if (!events.empty()) {
            CHECK(events[0].kind == EventKind::Activation);
            CHECK(t.code_on(events[0].date) == 3);
        }
        if (events.size() == 2) {
            CHECK(events[1].kind == EventKind::Deactivation);
            CHECK(events[1].date > events[0].date);
            CHECK(t.code_on(events[1].date) == 2);
        }
        for (const auto& e : events) {
            CHECK(e.date >= t.dates.front());
            CHECK(e.date <= t.dates.back());
        }
    }
}

TEST_CASE("aggregation examples") {
    const Date d = Date::from_ymd(2020, 2, 1);
    const std::vector<TelemetryRecord> two{record(d, "a", "X", 4.0), record(d, "b", "X", 6.0)};
    const auto p = aggregate_telemetry(two, kByUnit, "usage_hours");
    CHECK(p.outcomes(0, 0) == 5.0);
    CHECK(p.covariates(0, *p.covariate_index("system_count")) == 2.0);

    const std::vector<TelemetryRecord> one{record(d, "a", "X", 3.25, 17.5)};
    CHECK(aggregate_telemetry(one, kByUnit, "usage_hours").outcomes(0, 0) == 3.25);
    CHECK(aggregate_telemetry(one, kByUnit, "cpu_watts").outcomes(0, 0) == 17.5);

    CHECK_THROWS_AS(aggregate_telemetry(one, kByUnit, "gpu_watts"), ValidationError);
    CHECK_THROWS_AS(aggregate_telemetry(std::vector<TelemetryRecord>{}, kByUnit, "usage_hours"),
                    ValidationError);
    const std::vector<std::string> bad{"colour"};
    CHECK_THROWS_AS(aggregate_telemetry(one, bad, "usage_hours"), ValidationError);
    std::vector<TelemetryRecord> over = one;
    over[0].usage_hours = 25.0;
    CHECK_THROWS_AS(aggregate_telemetry(over, kByUnit, "usage_hours"), ValidationError);
}

TEST_CASE("aggregation masks missing cells and groups canonically") {
    const Date d = Date::from_ymd(2020, 2, 1);
    std::vector<TelemetryRecord> rs{record(d, "a", "X", 4.0), record(d + 2, "a", "X", 8.0),
                                    record(d, "b", "Y", 1.0)};
    rs[2].chassis = Chassis::Desktop;
    rs[2].cpu_family = CpuFamily::i5;
    const std::vector<std::string> by{"cpu_family", "unit_id"};
    const auto p = aggregate_telemetry(rs, by, "usage_hours");
    p.validate();
    CHECK(p.group_by == std::vector<std::string>{"unit_id", "cpu_family"});
    REQUIRE(p.unit_ids.size() == 2);
    CHECK(p.unit_ids[0] == "X|Other");
    CHECK(p.unit_ids[1] == "Y|i5");
    CHECK(p.date_count() == 3);
    CHECK(p.missing(0, 1));
    CHECK(std::isnan(p.outcomes(0, 1)));
    CHECK(p.outcomes(0, 2) == 8.0);
    CHECK(p.missing(1, 2));
    CHECK(p.group_value(1, "cpu_family") == "i5");
    CHECK(policy_unit_of(p.unit_ids[1]) == "Y");
}

TEST_CASE("aggregation matches a streaming mean over generator output") {
    ScenarioConfig cfg;
    for (const char* id : {"A", "B", "C"}) {
        UnitConfig u;
        u.id = id;
        u.devices_per_day = 50;
        u.baseline_hours = 5.0 + static_cast<double>(id[0] - 'A');
        cfg.units.push_back(u);
    }
    cfg.noise_sigma = 0.3;
    cfg.device_spread = 1.5;
    cfg.days = 10;
    cfg.seed = 99;
    cfg.device_mix = {DeviceProfile{Chassis::Notebook, CpuFamily::i7}, DeviceProfile{Chassis::Desktop, CpuFamily::i5}};
    const auto g = generate(cfg);

    const std::vector<std::string> by{"unit_id", "chassis", "cpu_family"};
    for (const char* field : {"usage_hours", "cpu_watts"}) {
        const auto p = aggregate_telemetry(g.telemetry, by, field);
        oracle::StreamingMean m;
        for (const auto& r : g.telemetry) {
            const std::string key = r.unit_id + "|" + std::string(to_string(r.chassis)) + "|" +
                                    std::string(to_string(r.cpu_family)) + "@" + r.date.iso();
            m.add(key, std::string(field) == "usage_hours" ? r.usage_hours : r.cpu_watts);
        }
        std::size_t observed = 0;
        for (std::size_t u = 0; u < p.unit_count(); ++u) {
            for (std::size_t t = 0; t < p.date_count(); ++t) {
                const auto expected = m.get(p.unit_ids[u] + "@" + p.dates[t].iso());
                CHECK(expected.has_value() == p.observed(u, t));
                if (expected) {
                    ++observed;
                    CHECK(std::abs(p.outcomes(static_cast<Eigen::Index>(u), static_cast<Eigen::Index>(t)) -
                                   *expected) <= 1e-12 * std::max(1.0, std::abs(*expected)));
                }
            }
        }
        CHECK(observed == m.size());
        CHECK(p.date_count() == 10);
    }
}

TEST_CASE("aggregation is invariant to record order") {
    ScenarioConfig cfg;
    for (const char* id : {"A", "B"}) {
        UnitConfig u;
        u.id = id;
        u.devices_per_day = 12;
        cfg.units.push_back(u);
    }
    cfg.noise_sigma = 0.5;
    cfg.device_spread = 2.0;
    cfg.days = 15;
    cfg.dropout_probability = 0.2;
    cfg.device_mix = {DeviceProfile{}, DeviceProfile{Chassis::NUC, CpuFamily::i9}};
    auto records = generate(cfg).telemetry;
    const std::vector<std::string> by{"unit_id", "chassis", "vpro"};
    const auto base = aggregate_telemetry(records, by, "cpu_watts");
    std::mt19937_64 gen(5);
    for (int rep = 0; rep < 20; ++rep) {
        std::shuffle(records.begin(), records.end(), gen);
        const auto p = aggregate_telemetry(records, by, "cpu_watts");
        CHECK(p.unit_ids == base.unit_ids);
        CHECK(p.dates == base.dates);
        CHECK((p.missing == base.missing).all());
        CHECK((p.covariates.array() == base.covariates.array()).all());
        for (Eigen::Index u = 0; u < p.outcomes.rows(); ++u) {
            for (Eigen::Index t = 0; t < p.outcomes.cols(); ++t) {
                if (!p.missing(u, t)) CHECK(p.outcomes(u, t) == base.outcomes(u, t));
            }
        }
    }
}

TEST_CASE("telemetry csv round trip") {
    ScenarioConfig cfg;
    UnitConfig u;
    u.id = "Germany";
    cfg.units.push_back(u);
    cfg.days = 5;
    cfg.noise_sigma = 0.4;
    const auto records = generate(cfg).telemetry;
    std::ostringstream out;
    write_telemetry_csv(out, records);
    std::istringstream in(out.str());
    const auto back = parse_telemetry_csv(in);
    REQUIRE(back.size() == records.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
        CHECK(back[i].device_id == records[i].device_id);
        CHECK(back[i].date == records[i].date);
        CHECK(back[i].vpro == records[i].vpro);
        CHECK(back[i].usage_hours == doctest::Approx(records[i].usage_hours).epsilon(1e-14));
    }

    std::istringstream missing_col("date,device_id,unit_id\n2020-01-01,a,X\n");
    CHECK_THROWS_AS(parse_telemetry_csv(missing_col), ParseError);
}

TEST_CASE("merge panels") {
    const Date jan1 = Date::from_ymd(2020, 1, 1);
    std::vector<TelemetryRecord> rs;
    for (int t = 0; t < 182; ++t) {
        rs.push_back(record(jan1 + t, "a", "X", 1.0 + t % 5));
        rs.push_back(record(jan1 + t, "b", "Y", 2.0));
    }
    const auto panel = aggregate_telemetry(rs, kByUnit, "usage_hours");
    CHECK(panel.dates.back().iso() == "2020-06-30");

    SUBCASE("identical ranges") {
        std::vector<PolicyTimeline> ts{timeline("Y", jan1, std::vector<int>(182, 1)),
                                       timeline("X", jan1, std::vector<int>(182, 3))};
        const auto m = merge_panels(panel, ts);
        CHECK(m.dates == panel.dates);
        CHECK((m.outcomes.array() == panel.outcomes.array()).all());
        REQUIRE(m.policy_codes.has_value());
        CHECK((*m.policy_codes)(0, 0) == 3);
        CHECK((*m.policy_codes)(1, 181) == 1);
    }
    SUBCASE("interval intersection") {
        const Date feb1 = Date::from_ymd(2020, 2, 1);
        const int len = Date::from_ymd(2020, 12, 31) - feb1 + 1;
        std::vector<PolicyTimeline> ts{timeline("X", feb1, std::vector<int>(static_cast<std::size_t>(len), 0)),
                                       timeline("Y", feb1, std::vector<int>(static_cast<std::size_t>(len), 0))};
        const auto m = merge_panels(panel, ts);
        CHECK(m.dates.front().iso() == "2020-02-01");
        CHECK(m.dates.back().iso() == "2020-06-30");
        CHECK(m.date_count() == 151);
        CHECK(m.outcomes(0, 0) == panel.outcomes(0, 31));
    }
    SUBCASE("missing unit") {
        std::vector<PolicyTimeline> ts{timeline("X", jan1, std::vector<int>(182, 0))};
        try {
            merge_panels(panel, ts);
            FAIL("expected a validation error");
        } catch (const ValidationError& e) {
            CHECK(std::string(e.what()).find("Y") != std::string::npos);
        }
    }
    SUBCASE("no shared dates") {
        std::vector<PolicyTimeline> ts{timeline("X", jan1 + 400, {0}), timeline("Y", jan1 + 400, {0})};
        CHECK_THROWS_AS(merge_panels(panel, ts), ValidationError);
    }
}

TEST_CASE("merge keeps exactly the intersection of date sets") {
    std::mt19937_64 gen(31);
    std::uniform_int_distribution<int> offset(-20, 20);
    std::uniform_int_distribution<int> len(5, 40);
    const Date base = Date::from_ymd(2020, 3, 1);
    for (int rep = 0; rep < 100; ++rep) {
        std::vector<TelemetryRecord> rs;
        std::set<std::int32_t> panel_days;
        const int n = len(gen);
        for (int t = 0; t < n; ++t) {
            rs.push_back(record(base + t, "a", "X", 1.0));
            rs.push_back(record(base + t, "b", "Y", 1.0));
            panel_days.insert((base + t).days());
        }
        const auto panel = aggregate_telemetry(rs, kByUnit, "usage_hours");
        std::set<std::int32_t> shared = panel_days;
        std::vector<PolicyTimeline> ts;
        for (const char* u : {"X", "Y"}) {
            const Date s = base + offset(gen);
            const auto t = timeline(u, s, std::vector<int>(static_cast<std::size_t>(len(gen)), 0));
            std::set<std::int32_t> own;
            for (auto d : t.dates) own.insert(d.days());
            std::set<std::int32_t> next;
            std::set_intersection(shared.begin(), shared.end(), own.begin(), own.end(),
                                  std::inserter(next, next.begin()));
            shared = next;
            ts.push_back(t);
        }
        if (shared.empty()) {
            CHECK_THROWS_AS(merge_panels(panel, ts), ValidationError);
            continue;
        }
        const auto m = merge_panels(panel, ts);
        std::set<std::int32_t> got;
        for (auto d : m.dates) got.insert(d.days());
        CHECK(got == shared);
    }
}

TEST_CASE("unit attributes and panel text format") {
    const Date d = Date::from_ymd(2020, 1, 1);
    std::vector<TelemetryRecord> rs;
    for (int t = 0; t < 4; ++t) {
        rs.push_back(record(d + t, "a", "X", 1.5 + t));
        if (t != 2) rs.push_back(record(d + t, "b", "Y", 2.0));
    }
    auto panel = aggregate_telemetry(rs, kByUnit, "usage_hours");
    std::istringstream attrs("unit_id,continent,gdp\nY,Asia,3.5\nX,Europe,1\nZ,Africa,2\n");
    attach_unit_attributes(panel, attrs);
    CHECK(panel.categorical_index("continent") == 0);
    CHECK(panel.categorical_values[0] == std::vector<std::string>{"Europe", "Asia"});
    CHECK(panel.covariates(1, *panel.covariate_index("gdp")) == 3.5);

    std::ostringstream out;
    write_panel(out, panel);
    CHECK(out.str().find("NA") != std::string::npos);
    std::istringstream in(out.str());
    const auto back = read_panel(in);
    CHECK(back.unit_ids == panel.unit_ids);
    CHECK(back.dates == panel.dates);
    CHECK(back.covariate_names == panel.covariate_names);
    CHECK(back.categorical_values == panel.categorical_values);
    CHECK((back.missing == panel.missing).all());
    CHECK((back.covariates.array() == panel.covariates.array()).all());
    for (Eigen::Index u = 0; u < 2; ++u) {
        for (Eigen::Index t = 0; t < 4; ++t) {
            if (!panel.missing(u, t)) CHECK(back.outcomes(u, t) == panel.outcomes(u, t));
        }
    }

    std::istringstream short_attrs("unit_id,continent\nX,Europe\n");
    auto p2 = aggregate_telemetry(rs, kByUnit, "usage_hours");
    CHECK_THROWS_AS(attach_unit_attributes(p2, short_attrs), ValidationError);
}

TEST_CASE("panel validate catches broken invariants") {
    const std::vector<TelemetryRecord> one{record(Date::from_ymd(2020, 1, 1), "a", "X", 3.0)};
    auto p = aggregate_telemetry(one, kByUnit, "usage_hours");
    p.validate();
    p.outcomes(0, 0) = std::nan("");
    CHECK_THROWS_AS(p.validate(), ValidationError);
    p.missing(0, 0) = true;
    p.validate();
    p.missing.resize(1, 2);
    CHECK_THROWS_AS(p.validate(), ValidationError);
}
