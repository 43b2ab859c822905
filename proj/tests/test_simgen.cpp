#include "policyfx/error.hpp"
#include "policyfx/serialize.hpp"
#include "policyfx/simgen.hpp"
#include "policyfx/synthcontrol.hpp"

#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <sstream>

using namespace policyfx;

namespace {

const Date kStart = Date::from_ymd(2020, 1, 1);

ScenarioConfig basic(double effect, double noise) {
    ScenarioConfig cfg;
    UnitConfig a;
    a.id = "Japan";
    UnitConfig b;
    b.id = "United States/California";
    b.continent = "North America";
    cfg.units = {a, b};
    TreatmentConfig t;
    t.unit = "United States/California";
    t.activation = kStart + 50;
    t.deactivation = kStart + 120;
    t.effect_hours = effect;
    t.effect_watts = 1.0;
    cfg.treatment = t;
    cfg.noise_sigma = noise;
    cfg.days = 150;
    return cfg;
}

PanelDataset panel_of(const GeneratedScenario& g, std::string_view outcome = "usage_hours") {
    const std::vector<std::string> by{"unit_id"};
    return aggregate_telemetry(g.telemetry, by, outcome);
}

std::string shell_sha256(const std::string& text) {
    const auto path = std::filesystem::temp_directory_path() / "policyfx_hash_input.json";
    write_file_atomic(path, text);
    const std::string cmd = "sha256sum '" + path.string() + "'";
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    char buf[128] = {};
    const std::size_t n = fread(buf, 1, 64, pipe);
    pclose(pipe);
    std::filesystem::remove(path);
    return std::string(buf, n);
}

}  // namespace

TEST_CASE("noiseless step of exactly 2.0 at activation") {
    const auto g = generate(basic(2.0, 0.0));
    const auto p = panel_of(g);
    const auto u = static_cast<Eigen::Index>(*p.unit_index("United States/California"));
    for (Eigen::Index t = 1; t < 150; ++t) {
        const double jump = p.outcomes(u, t) - p.outcomes(u, t - 1);
        CHECK(jump == doctest::Approx(t == 50 ? 2.0 : 0.0).epsilon(1e-12).scale(1.0));
    }
    const auto& tl = g.timelines[1];
    CHECK(tl.unit_id == "United States/California");
    CHECK(tl.code_on(kStart + 49) == 0);
    CHECK(tl.code_on(kStart + 50) == 3);
    CHECK(tl.code_on(kStart + 120) == 2);
    const auto events = extract_treatment_events(tl);
    REQUIRE(events.size() == 2);
    CHECK(events[0].date == kStart + 50);
    CHECK(events[1].date == kStart + 120);
    CHECK(extract_treatment_events(g.timelines[0]).empty());
    CHECK(g.manifest.true_breakpoints == std::vector<Date>{kStart + 50});
}

TEST_CASE("onset ramp and deactivation effect") {
    auto cfg = basic(3.0, 0.0);
    cfg.treatment->effect_onset_days = 3;
    cfg.treatment->deactivation_effect_hours = -1.0;
    const auto p = panel_of(generate(cfg));
    const double base = p.outcomes(1, 49);
    CHECK(p.outcomes(1, 50) - base == doctest::Approx(1.0));
    CHECK(p.outcomes(1, 51) - base == doctest::Approx(2.0));
    CHECK(p.outcomes(1, 52) - base == doctest::Approx(3.0));
    CHECK(p.outcomes(1, 53) - base == doctest::Approx(3.0));
    CHECK(p.outcomes(1, 120) - base == doctest::Approx(2.0));
}

TEST_CASE("same config gives byte-identical files") {
    auto cfg = basic(1.0, 0.4);
    cfg.outliers = {0.05, 3.0};
    cfg.dropout_probability = 0.1;
    cfg.personas = PersonaConfig{20, 0.9, 0.8, 0.2};
    cfg.days = 60;
    cfg.treatment->deactivation.reset();
    const auto a = std::filesystem::temp_directory_path() / "policyfx_simgen_a";
    const auto b = std::filesystem::temp_directory_path() / "policyfx_simgen_b";
    std::filesystem::remove_all(a);
    std::filesystem::remove_all(b);
    write_scenario(a, cfg, generate(cfg));
    write_scenario(b, cfg, generate(cfg));
    for (const char* f : {"policy.csv", "telemetry.csv", "units.csv", "personas.csv", "manifest.json"}) {
        CAPTURE(f);
        CHECK(read_file(a / f) == read_file(b / f));
        CHECK_FALSE(read_file(a / f).empty());
    }
    cfg.seed = 2;
    write_scenario(b, cfg, generate(cfg));
    CHECK(read_file(a / "telemetry.csv") != read_file(b / "telemetry.csv"));
    std::filesystem::remove_all(a);
    std::filesystem::remove_all(b);
}

TEST_CASE("generated files pass ingestion") {
    auto cfg = basic(1.0, 0.2);
    cfg.dropout_probability = 0.05;
    const auto g = generate(cfg);
    std::ostringstream policy;
    write_policy_table(policy, g.timelines);
    std::istringstream pin(policy.str());
    const auto timelines = parse_policy_csv(pin, "C2");
    REQUIRE(timelines.size() == 2);
    CHECK(timelines[0] == g.timelines[0]);
    CHECK(timelines[1] == g.timelines[1]);

    std::ostringstream tel;
    write_telemetry_csv(tel, g.telemetry);
    std::istringstream tin(tel.str());
    const auto records = parse_telemetry_csv(tin);
    CHECK(records.size() == g.telemetry.size());
    const std::vector<std::string> by{"unit_id"};
    auto panel = merge_panels(aggregate_telemetry(records, by, "cpu_watts"), timelines);
    panel.validate();
    std::ostringstream units;
    write_unit_table(units, cfg);
    std::istringstream uin(units.str());
    attach_unit_attributes(panel, uin);
    CHECK(panel.categorical_values[0] == std::vector<std::string>{"Europe", "North America"});
}

TEST_CASE("mixture (0.3, 0.7) is recovered by the weight fit") {
    ScenarioConfig cfg;
    for (const char* id : {"A", "B", "T"}) {
        UnitConfig u;
        u.id = id;
        u.walk_sigma = 0.2;
        cfg.units.push_back(u);
    }
    cfg.donor_mixture = {{"A", 0.3}, {"B", 0.7}};
    TreatmentConfig t;
    t.unit = "T";
    t.activation = kStart + 80;
    cfg.treatment = t;
    cfg.days = 100;
    const auto g = generate(cfg);
    REQUIRE(g.manifest.true_weights.has_value());
    CHECK(g.manifest.true_weights->at(0) == std::pair<std::string, double>{"A", 0.3});
    const auto p = panel_of(g);
    Eigen::VectorXd y = p.outcomes.row(2).head(80).transpose();
    Eigen::MatrixXd x = p.outcomes.topRows(2).leftCols(80).transpose();
    const auto fit = fit_weights(y, x);
    CHECK(std::abs(fit.weights(0) - 0.3) <= 1e-4);
    CHECK(std::abs(fit.weights(1) - 0.7) <= 1e-4);
}

TEST_CASE("describe output") {
    const auto g = generate(basic(2.0, 0.0));
    const auto text = describe(g.manifest);
    CHECK(text.find("true_effect_hours=2.0\n") != std::string::npos);
    CHECK(text.find("true_weights=absent\n") != std::string::npos);
    CHECK(text.find("persona_shift_date=absent\n") != std::string::npos);
    CHECK(text.find("activation=2020-02-20\n") != std::string::npos);
    CHECK(describe(g.manifest) == text);

    GroundTruthManifest empty;
    const auto e = describe(empty);
    CHECK(e.find("treated_unit=absent") != std::string::npos);
    CHECK(e.find("true_breakpoints=absent") != std::string::npos);
    CHECK(e.find("deactivation=absent") != std::string::npos);
}

TEST_CASE("scenario hash matches an external sha256") {
    auto cfg = basic(2.0, 0.1);
    const auto g = generate(cfg);
    CHECK(g.manifest.scenario_hash.size() == 64);
    CHECK(g.manifest.scenario_hash == scenario_hash(cfg));
    CHECK(g.manifest.scenario_hash == shell_sha256(canonical_json(cfg)));
    const auto line = "scenario_hash=" + g.manifest.scenario_hash + "\n";
    CHECK(describe(g.manifest).find(line) != std::string::npos);

    auto other = cfg;
    other.seed = 2;
    CHECK(scenario_hash(other) != scenario_hash(cfg));
    // The canonical form round-trips through the parser.
    CHECK(canonical_json(parse_scenario(canonical_json(cfg))) == canonical_json(cfg));
}

TEST_CASE("manifest round trip") {
    auto cfg = basic(2.0, 0.0);
    cfg.treatment->deactivation_effect_hours = -0.5;
    const auto m = generate(cfg).manifest;
    const auto back = parse_manifest(manifest_json(m));
    CHECK(back.scenario_hash == m.scenario_hash);
    CHECK(back.treated_unit == m.treated_unit);
    CHECK(back.activation == m.activation);
    CHECK(back.deactivation == m.deactivation);
    CHECK(back.true_effect_hours == m.true_effect_hours);
    CHECK(back.true_breakpoints == m.true_breakpoints);
    CHECK(back.true_breakpoints.size() == 2);
    CHECK(describe(back) == describe(m));
    CHECK_THROWS_AS(parse_manifest("{"), ParseError);
}

TEST_CASE("scenario parsing and validation") {
    const auto c = parse_scenario(R"({"units":[{"id":"X"},{"id":"Y","baseline_hours":7}],
        "treatment":{"unit":"Y","activation":"2020-03-01","effect_hours":1.5},"days":120,"seed":9})");
    CHECK(c.units.size() == 2);
    CHECK(c.units[1].baseline_hours == 7.0);
    CHECK(c.treatment->activation.iso() == "2020-03-01");
    CHECK(c.seed == 9);

    CHECK_THROWS_AS(parse_scenario("not json"), ParseError);
    CHECK_THROWS_AS(parse_scenario(R"({"units":[{"id":"X"}],"colour":1})"), ValidationError);
    CHECK_THROWS_AS(parse_scenario(R"({"units":[]})"), ValidationError);
    CHECK_THROWS_AS(parse_scenario(R"({"units":[{"id":"X"},{"id":"X"}]})"), ValidationError);
    CHECK_THROWS_AS(parse_scenario(R"({"units":[{"id":"X"}],"noise_sigma":-1})"), ValidationError);
    CHECK_THROWS_AS(parse_scenario(R"({"units":[{"id":"X","baseline_hours":"six"}]})"), ValidationError);

    auto bad = basic(1.0, 0.0);
    bad.treatment->deactivation = kStart + 10;
    CHECK_THROWS_AS(generate(bad), ValidationError);
    bad = basic(1.0, 0.0);
    bad.treatment->effect_hours = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(bad.validate(), ValidationError);
    bad = basic(1.0, 0.0);
    bad.donor_mixture = {{"Japan", 0.6}};
    CHECK_THROWS_AS(bad.validate(), ValidationError);
    bad.donor_mixture = {{"Japan", 1.0}};
    bad.validate();
    bad.donor_mixture = {{"Nowhere", 1.0}};
    CHECK_THROWS_AS(bad.validate(), ValidationError);
    bad = basic(1.0, 0.0);
    bad.treatment->unit = "Atlantis";
    CHECK_THROWS_AS(bad.validate(), ValidationError);
    bad = basic(1.0, 0.0);
    bad.persona_shift = PersonaShiftConfig{kStart + 5};
    CHECK_THROWS_AS(bad.validate(), ValidationError);
}

TEST_CASE("streams are independent per unit") {
    auto cfg = basic(0.0, 0.5);
    const auto a = panel_of(generate(cfg));
    UnitConfig extra;
    extra.id = "Zambia";
    cfg.units.push_back(extra);
    const auto b = panel_of(generate(cfg));
    CHECK((a.outcomes.array() == b.outcomes.topRows(2).array()).all());
}

TEST_CASE("outliers and dropout") {
    auto cfg = basic(0.0, 0.0);
    cfg.treatment.reset();
    cfg.dropout_probability = 0.3;
    cfg.outliers = {0.1, 5.0};
    const auto p = panel_of(generate(cfg));
    const auto masked = p.missing.count();
    CHECK(masked > 40);
    CHECK(masked < 140);
    int spikes = 0;
    for (Eigen::Index t = 0; t < p.outcomes.cols(); ++t) {
        if (!p.missing(0, t)) spikes += std::abs(p.outcomes(0, t) - 11.0) < 1e-9;
    }
    CHECK(spikes > 0);
}
