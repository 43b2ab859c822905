#include "policyfx/simgen.hpp"

#include "policyfx/csv.hpp"
#include "policyfx/error.hpp"
#include "policyfx/rng.hpp"
#include "policyfx/serialize.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <set>
#include <sstream>

namespace policyfx {

namespace {

constexpr int kPresenceBlockDays = 14;
constexpr double kPersonaBaseHours = 0.25;
constexpr double kPersonaFocusHours = 3.0;

bool finite_nonneg(double v) { return std::isfinite(v) && v >= 0.0; }

bool probability(double v) { return std::isfinite(v) && v >= 0.0 && v <= 1.0; }

std::optional<std::size_t> persona_index(std::string_view name) {
    for (std::size_t i = 0; i < kDefaultPersonaNames.size(); ++i) {
        if (kDefaultPersonaNames[i] == name) {
            return i;
        }
    }
    return std::nullopt;
}

double ramp(int days_since, int onset) {
    if (days_since < 0) {
        return 0.0;
    }
    if (onset <= 0) {
        return 1.0;
    }
    return std::min(1.0, static_cast<double>(days_since + 1) / static_cast<double>(onset));
}

std::string padded(std::size_t value, int width) {
    std::ostringstream s;
    s << std::setw(width) << std::setfill('0') << value;
    return s.str();
}

// JSON helpers ----------------------------------------------------------------

void check_keys(const Json& obj, std::string_view where, std::initializer_list<std::string_view> allowed) {
    if (!obj.is_object()) {
        throw ValidationError(std::string(where) + " must be a JSON object");
    }
    for (const auto& [key, value] : obj.items()) {
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
            throw ValidationError(std::string(where) + ": unknown field '" + key + "'");
        }
    }
}

template <typename T>
void read_field(const Json& obj, std::string_view where, const char* key, T& target) {
    const auto it = obj.find(key);
    if (it == obj.end() || it->is_null()) {
        return;
    }
    try {
        target = it->template get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ValidationError(std::string(where) + ": field '" + key + "' has the wrong type");
    }
}

void read_date(const Json& obj, std::string_view where, const char* key, Date& target) {
    std::string text;
    read_field(obj, where, key, text);
    if (!text.empty()) {
        target = Date::parse(text);
    }
}

Json date_or_null(const std::optional<Date>& d) { return d ? Json(d->iso()) : Json(nullptr); }

}  // namespace

// ---------------------------------------------------------------------------

void ScenarioConfig::validate() const {
    if (units.empty()) {
        throw ValidationError("scenario has no units");
    }
    if (days < 1) {
        throw ValidationError("scenario needs at least one day");
    }
    std::set<std::string> ids;
    for (const auto& u : units) {
        if (u.id.empty() || u.id.find_first_of("|,\"\t\r\n") != std::string::npos) {
            throw ValidationError("unit id '" + u.id + "' is empty or contains a reserved character");
        }
        if (!ids.insert(u.id).second) {
            throw ValidationError("duplicate unit '" + u.id + "'");
        }
        if (!std::isfinite(u.baseline_hours) || u.baseline_hours < 0.0 || u.baseline_hours > 24.0) {
            throw ValidationError("unit '" + u.id + "': baseline_hours must lie in [0, 24]");
        }
        if (!finite_nonneg(u.baseline_watts) || !std::isfinite(u.trend_per_day) || !finite_nonneg(u.walk_sigma)) {
            throw ValidationError("unit '" + u.id + "': watts, trend and walk_sigma must be finite (and non-negative)");
        }
        if (!probability(u.vpro_fraction)) {
            throw ValidationError("unit '" + u.id + "': vpro_fraction must lie in [0, 1]");
        }
        if (u.devices_per_day < 1) {
            throw ValidationError("unit '" + u.id + "': devices_per_day must be positive");
        }
        if (u.continent.empty() || u.continent.find_first_of(",\"\t\r\n") != std::string::npos) {
            throw ValidationError("unit '" + u.id + "': invalid continent");
        }
    }
    const Date end = start_date + days;
    if (treatment) {
        const auto& t = *treatment;
        if (!ids.count(t.unit)) {
            throw ValidationError("treated unit '" + t.unit + "' is not a scenario unit");
        }
        if (t.activation < start_date || !(t.activation < end)) {
            throw ValidationError("activation date " + t.activation.iso() + " lies outside the scenario calendar");
        }
        if (t.deactivation && !(t.activation < *t.deactivation)) {
            throw ValidationError("deactivation date " + t.deactivation->iso() + " is not after activation " +
                                  t.activation.iso());
        }
        if (t.deactivation && !(*t.deactivation < end)) {
            throw ValidationError("deactivation date " + t.deactivation->iso() +
                                  " lies outside the scenario calendar");
        }
        if (!std::isfinite(t.effect_hours) || !std::isfinite(t.effect_watts) ||
            !std::isfinite(t.deactivation_effect_hours) || !std::isfinite(t.deactivation_effect_watts)) {
            throw ValidationError("treatment effects must be finite");
        }
        if (t.effect_onset_days < 0 || t.deactivation_onset_days < 0) {
            throw ValidationError("onset lengths must be non-negative");
        }
    }
    if (!donor_mixture.empty()) {
        if (!treatment) {
            throw ValidationError("donor_mixture needs a treatment");
        }
        double total = 0.0;
        for (const auto& [donor, w] : donor_mixture) {
            if (!ids.count(donor) || donor == treatment->unit) {
                throw ValidationError("donor_mixture names '" + donor + "', which is not an untreated unit");
            }
            if (!std::isfinite(w) || w < 0.0) {
                throw ValidationError("donor_mixture weight for '" + donor + "' is negative");
            }
            total += w;
        }
        if (std::abs(total - 1.0) > 1e-9) {
            throw ValidationError("donor_mixture weights sum to " + csv::format_double(total) + ", not 1");
        }
    }
    if (!finite_nonneg(noise_sigma) || !finite_nonneg(device_spread)) {
        throw ValidationError("noise_sigma and device_spread must be finite and non-negative");
    }
    if (!probability(outliers.probability) || !std::isfinite(outliers.magnitude)) {
        throw ValidationError("outlier probability must lie in [0, 1] with a finite magnitude");
    }
    if (!probability(dropout_probability) || dropout_probability >= 1.0) {
        throw ValidationError("dropout_probability must lie in [0, 1)");
    }
    if (device_mix.empty()) {
        throw ValidationError("device_mix is empty");
    }
    if (personas) {
        if (personas->devices_per_persona < 1) {
            throw ValidationError("personas.devices_per_persona must be positive");
        }
        if (!probability(personas->report_probability) || personas->report_probability == 0.0 ||
            !probability(personas->presence_probability) || personas->presence_probability == 0.0) {
            throw ValidationError("persona probabilities must lie in (0, 1]");
        }
        if (!finite_nonneg(personas->feature_noise)) {
            throw ValidationError("personas.feature_noise must be finite and non-negative");
        }
    }
    if (persona_shift) {
        if (!personas) {
            throw ValidationError("persona_shift needs a personas section");
        }
        const auto from = persona_index(persona_shift->from);
        const auto to = persona_index(persona_shift->to);
        if (!from || !to || *from == *to) {
            throw ValidationError("persona_shift needs two different persona names");
        }
        if (!probability(persona_shift->fraction)) {
            throw ValidationError("persona_shift.fraction must lie in [0, 1]");
        }
        if (persona_shift->date < start_date || !(persona_shift->date < end)) {
            throw ValidationError("persona_shift date lies outside the scenario calendar");
        }
    }
}

ScenarioConfig parse_scenario(std::string_view json_text) {
    Json doc;
    try {
        doc = Json::parse(json_text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("scenario JSON: ") + e.what());
    }
    check_keys(doc, "scenario",
               {"units", "treatment", "donor_mixture", "noise_sigma", "device_spread", "outliers",
                "dropout_probability", "device_mix", "personas", "persona_shift", "seed", "start_date", "days"});
    ScenarioConfig c;
    if (const auto it = doc.find("units"); it != doc.end()) {
        if (!it->is_array()) {
            throw ValidationError("scenario: 'units' must be an array");
        }
        for (const auto& u : *it) {
            check_keys(u, "unit", {"id", "baseline_hours", "baseline_watts", "trend_per_day", "continent",
                                   "vpro_fraction", "devices_per_day", "walk_sigma"});
            UnitConfig unit;
            read_field(u, "unit", "id", unit.id);
            read_field(u, "unit", "baseline_hours", unit.baseline_hours);
            read_field(u, "unit", "baseline_watts", unit.baseline_watts);
            read_field(u, "unit", "trend_per_day", unit.trend_per_day);
            read_field(u, "unit", "continent", unit.continent);
            read_field(u, "unit", "vpro_fraction", unit.vpro_fraction);
            read_field(u, "unit", "devices_per_day", unit.devices_per_day);
            read_field(u, "unit", "walk_sigma", unit.walk_sigma);
            c.units.push_back(std::move(unit));
        }
    }
    if (const auto it = doc.find("treatment"); it != doc.end() && !it->is_null()) {
        check_keys(*it, "treatment",
                   {"unit", "activation", "deactivation", "effect_hours", "effect_watts", "effect_onset_days",
                    "deactivation_effect_hours", "deactivation_effect_watts", "deactivation_onset_days"});
        TreatmentConfig t;
        read_field(*it, "treatment", "unit", t.unit);
        read_date(*it, "treatment", "activation", t.activation);
        if (it->contains("deactivation") && !(*it)["deactivation"].is_null()) {
            Date d;
            read_date(*it, "treatment", "deactivation", d);
            t.deactivation = d;
        }
        read_field(*it, "treatment", "effect_hours", t.effect_hours);
        read_field(*it, "treatment", "effect_watts", t.effect_watts);
        read_field(*it, "treatment", "effect_onset_days", t.effect_onset_days);
        read_field(*it, "treatment", "deactivation_effect_hours", t.deactivation_effect_hours);
        read_field(*it, "treatment", "deactivation_effect_watts", t.deactivation_effect_watts);
        read_field(*it, "treatment", "deactivation_onset_days", t.deactivation_onset_days);
        c.treatment = t;
    }
    read_field(doc, "scenario", "donor_mixture", c.donor_mixture);
    read_field(doc, "scenario", "noise_sigma", c.noise_sigma);
    read_field(doc, "scenario", "device_spread", c.device_spread);
    if (const auto it = doc.find("outliers"); it != doc.end() && !it->is_null()) {
        check_keys(*it, "outliers", {"probability", "magnitude"});
        read_field(*it, "outliers", "probability", c.outliers.probability);
        read_field(*it, "outliers", "magnitude", c.outliers.magnitude);
    }
    read_field(doc, "scenario", "dropout_probability", c.dropout_probability);
    if (const auto it = doc.find("device_mix"); it != doc.end() && !it->is_null()) {
        if (!it->is_array()) {
            throw ValidationError("scenario: 'device_mix' must be an array");
        }
        c.device_mix.clear();
        for (const auto& m : *it) {
            check_keys(m, "device_mix entry", {"chassis", "cpu_family"});
            std::string chassis = "Notebook";
            std::string cpu = "i7";
            read_field(m, "device_mix entry", "chassis", chassis);
            read_field(m, "device_mix entry", "cpu_family", cpu);
            const auto ch = parse_chassis(chassis);
            const auto cf = parse_cpu_family(cpu);
            if (!ch || !cf) {
                throw ValidationError("device_mix entry has unknown chassis '" + chassis + "' or cpu_family '" +
                                      cpu + "'");
            }
            c.device_mix.push_back({*ch, *cf});
        }
    }
    if (const auto it = doc.find("personas"); it != doc.end() && !it->is_null()) {
        check_keys(*it, "personas",
                   {"devices_per_persona", "report_probability", "presence_probability", "feature_noise"});
        PersonaConfig p;
        read_field(*it, "personas", "devices_per_persona", p.devices_per_persona);
        read_field(*it, "personas", "report_probability", p.report_probability);
        read_field(*it, "personas", "presence_probability", p.presence_probability);
        read_field(*it, "personas", "feature_noise", p.feature_noise);
        c.personas = p;
    }
    if (const auto it = doc.find("persona_shift"); it != doc.end() && !it->is_null()) {
        check_keys(*it, "persona_shift", {"date", "from", "to", "fraction"});
        PersonaShiftConfig s;
        read_date(*it, "persona_shift", "date", s.date);
        read_field(*it, "persona_shift", "from", s.from);
        read_field(*it, "persona_shift", "to", s.to);
        read_field(*it, "persona_shift", "fraction", s.fraction);
        c.persona_shift = s;
    }
    read_field(doc, "scenario", "seed", c.seed);
    read_date(doc, "scenario", "start_date", c.start_date);
    read_field(doc, "scenario", "days", c.days);
    c.validate();
    return c;
}

std::string canonical_json(const ScenarioConfig& c) {
    nlohmann::json doc;  // std::map-backed: keys sorted
    doc["units"] = nlohmann::json::array();
    for (const auto& u : c.units) {
        doc["units"].push_back({{"id", u.id},
                                {"baseline_hours", u.baseline_hours},
                                {"baseline_watts", u.baseline_watts},
                                {"trend_per_day", u.trend_per_day},
                                {"continent", u.continent},
                                {"vpro_fraction", u.vpro_fraction},
                                {"devices_per_day", u.devices_per_day},
                                {"walk_sigma", u.walk_sigma}});
    }
    if (c.treatment) {
        const auto& t = *c.treatment;
        doc["treatment"] = {{"unit", t.unit},
                            {"activation", t.activation.iso()},
                            {"deactivation", t.deactivation ? nlohmann::json(t.deactivation->iso()) : nullptr},
                            {"effect_hours", t.effect_hours},
                            {"effect_watts", t.effect_watts},
                            {"effect_onset_days", t.effect_onset_days},
                            {"deactivation_effect_hours", t.deactivation_effect_hours},
                            {"deactivation_effect_watts", t.deactivation_effect_watts},
                            {"deactivation_onset_days", t.deactivation_onset_days}};
    } else {
        doc["treatment"] = nullptr;
    }
    doc["donor_mixture"] = nlohmann::json::object();
    for (const auto& [donor, w] : c.donor_mixture) {
        doc["donor_mixture"][donor] = w;
    }
    doc["noise_sigma"] = c.noise_sigma;
    doc["device_spread"] = c.device_spread;
    doc["outliers"] = {{"probability", c.outliers.probability}, {"magnitude", c.outliers.magnitude}};
    doc["dropout_probability"] = c.dropout_probability;
    doc["device_mix"] = nlohmann::json::array();
    for (const auto& m : c.device_mix) {
        doc["device_mix"].push_back(
            {{"chassis", std::string(to_string(m.chassis))}, {"cpu_family", std::string(to_string(m.cpu_family))}});
    }
    if (c.personas) {
        doc["personas"] = {{"devices_per_persona", c.personas->devices_per_persona},
                           {"report_probability", c.personas->report_probability},
                           {"presence_probability", c.personas->presence_probability},
                           {"feature_noise", c.personas->feature_noise}};
    } else {
        doc["personas"] = nullptr;
    }
    if (c.persona_shift) {
        doc["persona_shift"] = {{"date", c.persona_shift->date.iso()},
                                {"from", c.persona_shift->from},
                                {"to", c.persona_shift->to},
                                {"fraction", c.persona_shift->fraction}};
    } else {
        doc["persona_shift"] = nullptr;
    }
    doc["seed"] = c.seed;
    doc["start_date"] = c.start_date.iso();
    doc["days"] = c.days;
    return doc.dump();
}

std::string scenario_hash(const ScenarioConfig& config) {
    const std::string text = canonical_json(config);
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(text.data(), text.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        throw NumericalError("SHA-256 computation failed");
    }
    std::ostringstream hex;
    for (unsigned int i = 0; i < len; ++i) {
        hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
    }
    return hex.str();
}

// Manifest ---------------------------------------------------------------------

std::string manifest_json(const GroundTruthManifest& m) {
    Json doc;
    doc["scenario_hash"] = m.scenario_hash;
    doc["treated_unit"] = m.treated_unit ? Json(*m.treated_unit) : Json(nullptr);
    doc["activation"] = date_or_null(m.activation);
    doc["deactivation"] = date_or_null(m.deactivation);
    doc["true_effect_hours"] = m.true_effect_hours;
    doc["true_effect_watts"] = m.true_effect_watts;
    doc["true_breakpoints"] = Json::array();
    for (const auto& d : m.true_breakpoints) {
        doc["true_breakpoints"].push_back(d.iso());
    }
    if (m.true_weights) {
        doc["true_weights"] = Json::object();
        for (const auto& [donor, w] : *m.true_weights) {
            doc["true_weights"][donor] = w;
        }
    } else {
        doc["true_weights"] = nullptr;
    }
    doc["persona_shift_date"] = date_or_null(m.persona_shift_date);
    return dump_json(doc);
}

GroundTruthManifest parse_manifest(std::string_view json_text) {
    Json doc;
    try {
        doc = Json::parse(json_text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("manifest JSON: ") + e.what());
    }
    GroundTruthManifest m;
    read_field(doc, "manifest", "scenario_hash", m.scenario_hash);
    if (doc.contains("treated_unit") && !doc["treated_unit"].is_null()) {
        m.treated_unit = doc["treated_unit"].get<std::string>();
    }
    for (const char* key : {"activation", "deactivation", "persona_shift_date"}) {
        if (doc.contains(key) && !doc[key].is_null()) {
            const Date d = Date::parse(doc[key].get<std::string>());
            if (std::string_view(key) == "activation") {
                m.activation = d;
            } else if (std::string_view(key) == "deactivation") {
                m.deactivation = d;
            } else {
                m.persona_shift_date = d;
            }
        }
    }
    read_field(doc, "manifest", "true_effect_hours", m.true_effect_hours);
    read_field(doc, "manifest", "true_effect_watts", m.true_effect_watts);
    if (doc.contains("true_breakpoints")) {
        for (const auto& d : doc["true_breakpoints"]) {
            m.true_breakpoints.push_back(Date::parse(d.get<std::string>()));
        }
    }
    if (doc.contains("true_weights") && doc["true_weights"].is_object()) {
        m.true_weights.emplace();
        for (const auto& [donor, w] : doc["true_weights"].items()) {
            m.true_weights->emplace_back(donor, w.get<double>());
        }
    }
    return m;
}

std::string describe(const GroundTruthManifest& m) {
    std::ostringstream out;
    auto date_line = [&](const char* key, const std::optional<Date>& d) {
        out << key << '=' << (d ? d->iso() : "absent") << '\n';
    };
    out << "scenario_hash=" << m.scenario_hash << '\n';
    out << "treated_unit=" << m.treated_unit.value_or("absent") << '\n';
    date_line("activation", m.activation);
    date_line("deactivation", m.deactivation);
    out << "true_effect_hours=" << format_decimal(m.true_effect_hours) << '\n';
    out << "true_effect_watts=" << format_decimal(m.true_effect_watts) << '\n';
    out << "true_breakpoints=";
    if (m.true_breakpoints.empty()) {
        out << "absent";
    }
    for (std::size_t i = 0; i < m.true_breakpoints.size(); ++i) {
        out << (i ? "," : "") << m.true_breakpoints[i].iso();
    }
    out << '\n' << "true_weights=";
    if (!m.true_weights) {
        out << "absent";
    } else {
        for (std::size_t i = 0; i < m.true_weights->size(); ++i) {
            out << (i ? "," : "") << (*m.true_weights)[i].first << ':' << format_decimal((*m.true_weights)[i].second);
        }
    }
    out << '\n';
    date_line("persona_shift_date", m.persona_shift_date);
    return out.str();
}

// Generation -------------------------------------------------------------------

namespace {

struct Latent {
    std::vector<double> hours;
    std::vector<double> watts;
};

double watts_scale(const UnitConfig& u) {
    return u.baseline_hours > 0.0 ? u.baseline_watts / u.baseline_hours : 1.0;
}

Latent latent_path(const ScenarioConfig& c, std::size_t unit) {
    const auto& u = c.units[unit];
    Rng walk_rng(c.seed, (static_cast<std::uint64_t>(unit) << 8) | 1U);
    const double r = watts_scale(u);
    Latent path;
    double walk = 0.0;
    for (int t = 0; t < c.days; ++t) {
        if (t > 0 && u.walk_sigma > 0.0) {
            walk += u.walk_sigma * walk_rng.normal();
        }
        const double drift = u.trend_per_day * t + walk;
        path.hours.push_back(u.baseline_hours + drift);
        path.watts.push_back(u.baseline_watts + r * drift);
    }
    return path;
}

UsageStream generate_usage(const ScenarioConfig& c) {
    const auto& p = *c.personas;
    UsageStream stream;
    for (auto name : kPersonaFeatureNames) {
        stream.feature_names.emplace_back(name);
    }
    const std::size_t k = kDefaultPersonaNames.size();
    const auto n_per = static_cast<std::size_t>(p.devices_per_persona);
    std::optional<std::size_t> shift_from;
    std::optional<std::size_t> shift_to;
    std::size_t shifted = 0;
    if (c.persona_shift) {
        shift_from = persona_index(c.persona_shift->from);
        shift_to = persona_index(c.persona_shift->to);
        shifted = static_cast<std::size_t>(std::llround(c.persona_shift->fraction * static_cast<double>(n_per)));
    }

    struct Device {
        std::string id;
        std::size_t persona;
        bool shifts;
        Rng rng;
        bool present = false;
    };
    std::vector<Device> devices;
    for (std::size_t persona = 0; persona < k; ++persona) {
        for (std::size_t j = 0; j < n_per; ++j) {
            const std::size_t global = persona * n_per + j;
            devices.push_back({"dev" + padded(global, 6), persona, shift_from == persona && j < shifted,
                               Rng(c.seed, (std::uint64_t{1} << 40) + global)});
        }
    }
    for (int t = 0; t < c.days; ++t) {
        const Date date = c.start_date + t;
        for (auto& d : devices) {
            if (t % kPresenceBlockDays == 0) {
                d.present = d.rng.uniform() < p.presence_probability;
            }
            const bool reports = d.rng.uniform() < p.report_probability;
            if (!d.present || !reports) {
                continue;
            }
            std::size_t persona = d.persona;
            if (d.shifts && !(date < c.persona_shift->date)) {
                persona = *shift_to;
            }
            UsageRecord rec{date, d.id, {}};
            for (std::size_t f = 0; f < k; ++f) {
                const double level = kPersonaBaseHours + (f == persona ? kPersonaFocusHours : 0.0);
                rec.features.push_back(level * std::max(0.0, 1.0 + p.feature_noise * d.rng.normal()));
            }
            stream.records.push_back(std::move(rec));
        }
    }
    return stream;
}

}  // namespace

GeneratedScenario generate(const ScenarioConfig& c) {
    c.validate();
    GeneratedScenario out;
    const std::size_t nu = c.units.size();

    std::vector<Latent> latent(nu);
    for (std::size_t u = 0; u < nu; ++u) {
        latent[u] = latent_path(c, u);
    }
    std::optional<std::size_t> treated;
    if (c.treatment) {
        for (std::size_t u = 0; u < nu; ++u) {
            if (c.units[u].id == c.treatment->unit) {
                treated = u;
            }
        }
    }
    if (treated && !c.donor_mixture.empty()) {
        Latent mix{std::vector<double>(static_cast<std::size_t>(c.days), 0.0),
                   std::vector<double>(static_cast<std::size_t>(c.days), 0.0)};
        for (std::size_t u = 0; u < nu; ++u) {
            const auto it = c.donor_mixture.find(c.units[u].id);
            if (it == c.donor_mixture.end()) {
                continue;
            }
            for (std::size_t t = 0; t < mix.hours.size(); ++t) {
                mix.hours[t] += it->second * latent[u].hours[t];
                mix.watts[t] += it->second * latent[u].watts[t];
            }
        }
        latent[*treated] = std::move(mix);
    }

    for (std::size_t u = 0; u < nu; ++u) {
        const auto& unit = c.units[u];
        const double r = watts_scale(unit);
        Rng noise_rng(c.seed, (static_cast<std::uint64_t>(u) << 8) | 2U);
        Rng event_rng(c.seed, (static_cast<std::uint64_t>(u) << 8) | 3U);
        Rng device_rng(c.seed, (static_cast<std::uint64_t>(u) << 8) | 4U);

        const std::size_t pairs = (static_cast<std::size_t>(unit.devices_per_day) + 1) / 2;
        const auto vpro_pairs =
            static_cast<std::size_t>(std::llround(unit.vpro_fraction * static_cast<double>(pairs)));
        std::vector<double> spread(pairs);
        for (auto& s : spread) {
            s = c.device_spread * std::abs(device_rng.normal());
        }

        PolicyTimeline timeline;
        timeline.unit_id = unit.id;
        for (int t = 0; t < c.days; ++t) {
            const Date date = c.start_date + t;
            double h = latent[u].hours[static_cast<std::size_t>(t)];
            double w = latent[u].watts[static_cast<std::size_t>(t)];
            int code = 0;
            if (treated == u) {
                const auto& tr = *c.treatment;
                h += tr.effect_hours * ramp(date - tr.activation, tr.effect_onset_days);
                w += tr.effect_watts * ramp(date - tr.activation, tr.effect_onset_days);
                if (tr.deactivation) {
                    h += tr.deactivation_effect_hours * ramp(date - *tr.deactivation, tr.deactivation_onset_days);
                    w += tr.deactivation_effect_watts * ramp(date - *tr.deactivation, tr.deactivation_onset_days);
                }
                if (!(date < tr.activation)) {
                    code = 3;
                }
                if (tr.deactivation && !(date < *tr.deactivation)) {
                    code = 2;
                }
            }
            timeline.dates.push_back(date);
            timeline.codes.push_back(code);

            // Draws happen every day so streams stay aligned whatever the knobs.
            const double noise_h = noise_rng.normal();
            const double noise_w = noise_rng.normal();
            const bool dropped = event_rng.uniform() < c.dropout_probability;
            const bool outlier = event_rng.uniform() < c.outliers.probability;
            if (dropped) {
                continue;
            }
            h += c.noise_sigma * noise_h;
            w += r * c.noise_sigma * noise_w;
            if (outlier) {
                h += c.outliers.magnitude;
                w += r * c.outliers.magnitude;
            }
            h = std::clamp(h, 0.0, 24.0);
            w = std::max(w, 0.0);

            for (std::size_t p = 0; p < pairs; ++p) {
                const auto& profile = c.device_mix[p % c.device_mix.size()];
                const double dh = std::min({spread[p], h, 24.0 - h});
                const double dw = std::min(r * spread[p], w);
                for (int side = 0; side < 2; ++side) {
                    TelemetryRecord rec;
                    rec.date = date;
                    rec.device_id = "d" + padded(u, 3) + "-" + padded(2 * p + static_cast<std::size_t>(side), 5);
                    rec.unit_id = unit.id;
                    rec.chassis = profile.chassis;
                    rec.cpu_family = profile.cpu_family;
                    rec.vpro = p < vpro_pairs;
                    rec.usage_hours = side == 0 ? h + dh : h - dh;
                    rec.cpu_watts = side == 0 ? w + dw : w - dw;
                    out.telemetry.push_back(std::move(rec));
                }
            }
        }
        out.timelines.push_back(std::move(timeline));
    }
    std::stable_sort(out.telemetry.begin(), out.telemetry.end(),
                     [](const TelemetryRecord& a, const TelemetryRecord& b) { return a.date < b.date; });

    if (c.personas) {
        out.usage = generate_usage(c);
    }

    auto& m = out.manifest;
    m.scenario_hash = scenario_hash(c);
    if (c.treatment) {
        const auto& tr = *c.treatment;
        m.treated_unit = tr.unit;
        m.activation = tr.activation;
        m.deactivation = tr.deactivation;
        m.true_effect_hours = tr.effect_hours;
        m.true_effect_watts = tr.effect_watts;
        if (tr.effect_hours != 0.0 || tr.effect_watts != 0.0) {
            m.true_breakpoints.push_back(tr.activation);
        }
        if (tr.deactivation && (tr.deactivation_effect_hours != 0.0 || tr.deactivation_effect_watts != 0.0)) {
            m.true_breakpoints.push_back(*tr.deactivation);
        }
    }
    if (!c.donor_mixture.empty()) {
        m.true_weights.emplace(c.donor_mixture.begin(), c.donor_mixture.end());
    }
    if (c.persona_shift) {
        m.persona_shift_date = c.persona_shift->date;
        m.true_breakpoints.push_back(c.persona_shift->date);
    }
    std::sort(m.true_breakpoints.begin(), m.true_breakpoints.end());
    return out;
}

void write_policy_table(std::ostream& out, std::span<const PolicyTimeline> timelines) {
    const std::vector<std::string> header{"CountryName", "RegionName",           "Jurisdiction",
                                          "Date",        "C2_Workplace closing", "C2_Flag"};
    csv::write_row(out, header);
    for (const auto& t : timelines) {
        const auto slash = t.unit_id.find('/');
        const std::string country = t.unit_id.substr(0, slash);
        const std::string region = slash == std::string::npos ? "" : t.unit_id.substr(slash + 1);
        const std::string jurisdiction = region.empty() ? "NAT_TOTAL" : "STATE_TOTAL";
        for (std::size_t i = 0; i < t.dates.size(); ++i) {
            const std::vector<std::string> row{country, region, jurisdiction, t.dates[i].compact(),
                                               std::to_string(t.codes[i]), t.codes[i] > 0 ? "1" : ""};
            csv::write_row(out, row);
        }
    }
}

void write_unit_table(std::ostream& out, const ScenarioConfig& config) {
    csv::write_row(out, std::vector<std::string>{"unit_id", "continent"});
    for (const auto& u : config.units) {
        csv::write_row(out, std::vector<std::string>{u.id, u.continent});
    }
}

void write_scenario(const std::filesystem::path& dir, const ScenarioConfig& config,
                    const GeneratedScenario& scenario) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) {
        throw IoError("cannot create directory '" + dir.string() + "': " + ec.message());
    }
    std::ostringstream policy;
    write_policy_table(policy, scenario.timelines);
    write_file_atomic(dir / "policy.csv", policy.str());

    std::ostringstream telemetry;
    write_telemetry_csv(telemetry, scenario.telemetry);
    write_file_atomic(dir / "telemetry.csv", telemetry.str());

    std::ostringstream units;
    write_unit_table(units, config);
    write_file_atomic(dir / "units.csv", units.str());

    if (scenario.usage) {
        std::ostringstream usage;
        write_usage_csv(usage, *scenario.usage);
        write_file_atomic(dir / "personas.csv", usage.str());
    }
    write_file_atomic(dir / "manifest.json", manifest_json(scenario.manifest));
}

}  // namespace policyfx
