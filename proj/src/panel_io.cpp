// Panel interchange format.
//
//   policyfx-panel 1
//   outcome      <name>
//   group_by     <field>...
//   units        <id>...
//   dates        <YYYY-MM-DD>...
//   covariates   <name>...
//   categorical  <name>...
//   policy       0|1
//   [outcomes]      one row per unit: <id> <value|NA>...
//   [covariates]    one row per unit: <id> <value>...
//   [categorical]   one row per unit: <id> <level>...
//   [policy]        one row per unit: <id> <code|NA>...   (only when policy=1)
//   end
//
// Fields are tab-separated; header lines with no entries still carry the key.

#include "policyfx/csv.hpp"
#include "policyfx/error.hpp"
#include "policyfx/paneldata.hpp"

#include <limits>
#include <sstream>

namespace policyfx {

namespace {

constexpr std::string_view kMagic = "policyfx-panel 1";

void write_line(std::ostream& out, std::string_view key, const std::vector<std::string>& items) {
    out << key;
    for (const auto& item : items) {
        out << '\t' << item;
    }
    out << '\n';
}

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> parts;
    std::size_t start = 0;
    while (true) {
        const auto tab = line.find('\t', start);
        parts.push_back(line.substr(start, tab - start));
        if (tab == std::string::npos) {
            break;
        }
        start = tab + 1;
    }
    return parts;
}

class LineReader {
public:
    explicit LineReader(std::istream& in) : in_(in) {}

    std::vector<std::string> next(std::string_view expected_key) {
        std::string line;
        if (!std::getline(in_, line)) {
            throw ParseError("panel: unexpected end of input, expected '" + std::string(expected_key) + "'");
        }
        ++line_no_;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        auto parts = split_tabs(line);
        if (parts.front() != expected_key) {
            throw ParseError("panel line " + std::to_string(line_no_) + ": expected '" +
                             std::string(expected_key) + "', found '" + parts.front() + "'");
        }
        parts.erase(parts.begin());
        return parts;
    }

    std::vector<std::string> row(std::string_view unit, std::size_t width) {
        auto parts = next(unit);
        if (parts.size() != width) {
            throw ParseError("panel line " + std::to_string(line_no_) + ": unit '" + std::string(unit) +
                             "' has " + std::to_string(parts.size()) + " entries, expected " +
                             std::to_string(width));
        }
        return parts;
    }

    std::size_t line() const { return line_no_; }

private:
    std::istream& in_;
    std::size_t line_no_ = 0;
};

void check_token(const std::string& s, std::string_view what) {
    if (s.find_first_of("\t\n\r") != std::string::npos || s.empty()) {
        throw ValidationError("panel " + std::string(what) + " '" + s + "' is empty or contains tabs/newlines");
    }
}

}  // namespace

void write_panel(std::ostream& out, const PanelDataset& panel) {
    panel.validate();
    for (const auto& u : panel.unit_ids) check_token(u, "unit id");
    for (const auto& c : panel.covariate_names) check_token(c, "covariate name");
    for (const auto& c : panel.categorical_names) check_token(c, "categorical name");

    out << kMagic << '\n';
    write_line(out, "outcome", {panel.outcome_name});
    write_line(out, "group_by", panel.group_by);
    write_line(out, "units", panel.unit_ids);
    std::vector<std::string> dates;
    for (const auto& d : panel.dates) {
        dates.push_back(d.iso());
    }
    write_line(out, "dates", dates);
    write_line(out, "covariates", panel.covariate_names);
    write_line(out, "categorical", panel.categorical_names);
    write_line(out, "policy", {panel.policy_codes ? "1" : "0"});

    const auto nu = static_cast<Eigen::Index>(panel.unit_count());
    out << "[outcomes]\n";
    for (Eigen::Index u = 0; u < nu; ++u) {
        std::vector<std::string> row;
        for (Eigen::Index t = 0; t < panel.outcomes.cols(); ++t) {
            row.push_back(panel.missing(u, t) ? "NA" : csv::format_double(panel.outcomes(u, t)));
        }
        write_line(out, panel.unit_ids[static_cast<std::size_t>(u)], row);
    }
    out << "[covariates]\n";
    for (Eigen::Index u = 0; u < nu; ++u) {
        std::vector<std::string> row;
        for (Eigen::Index c = 0; c < panel.covariates.cols(); ++c) {
            row.push_back(csv::format_double(panel.covariates(u, c)));
        }
        write_line(out, panel.unit_ids[static_cast<std::size_t>(u)], row);
    }
    out << "[categorical]\n";
    for (std::size_t u = 0; u < panel.unit_count(); ++u) {
        std::vector<std::string> row;
        for (const auto& values : panel.categorical_values) {
            check_token(values[u], "categorical level");
            row.push_back(values[u]);
        }
        write_line(out, panel.unit_ids[u], row);
    }
    if (panel.policy_codes) {
        out << "[policy]\n";
        for (Eigen::Index u = 0; u < nu; ++u) {
            std::vector<std::string> row;
            for (Eigen::Index t = 0; t < panel.policy_codes->cols(); ++t) {
                const int code = (*panel.policy_codes)(u, t);
                row.push_back(code < 0 ? "NA" : std::to_string(code));
            }
            write_line(out, panel.unit_ids[static_cast<std::size_t>(u)], row);
        }
    }
    out << "end\n";
}

PanelDataset read_panel(std::istream& in) {
    std::string magic;
    if (!std::getline(in, magic) || (magic != kMagic && magic != std::string(kMagic) + "\r")) {
        throw ParseError("not a policyfx panel file (bad first line)");
    }
    LineReader reader(in);
    PanelDataset panel;
    const auto outcome = reader.next("outcome");
    panel.outcome_name = outcome.empty() ? "" : outcome.front();
    panel.group_by = reader.next("group_by");
    panel.unit_ids = reader.next("units");
    for (const auto& d : reader.next("dates")) {
        panel.dates.push_back(Date::parse(d));
    }
    panel.covariate_names = reader.next("covariates");
    panel.categorical_names = reader.next("categorical");
    const auto policy = reader.next("policy");
    const bool has_policy = !policy.empty() && policy.front() == "1";

    const auto nu = static_cast<Eigen::Index>(panel.unit_ids.size());
    const auto nt = static_cast<Eigen::Index>(panel.dates.size());
    const auto nc = static_cast<Eigen::Index>(panel.covariate_names.size());

    auto number = [&](const std::string& text) {
        const auto v = csv::parse_double(text);
        if (!v) {
            throw ParseError("panel line " + std::to_string(reader.line()) + ": bad number '" + text + "'");
        }
        return *v;
    };

    reader.next("[outcomes]");
    panel.outcomes = Eigen::MatrixXd::Constant(nu, nt, std::numeric_limits<double>::quiet_NaN());
    panel.missing = MaskMatrix::Constant(nu, nt, true);
    for (Eigen::Index u = 0; u < nu; ++u) {
        const auto row = reader.row(panel.unit_ids[static_cast<std::size_t>(u)], static_cast<std::size_t>(nt));
        for (Eigen::Index t = 0; t < nt; ++t) {
            const auto& cell = row[static_cast<std::size_t>(t)];
            if (cell != "NA") {
                panel.outcomes(u, t) = number(cell);
                panel.missing(u, t) = false;
            }
        }
    }
    reader.next("[covariates]");
    panel.covariates.resize(nu, nc);
    for (Eigen::Index u = 0; u < nu; ++u) {
        const auto row = reader.row(panel.unit_ids[static_cast<std::size_t>(u)], static_cast<std::size_t>(nc));
        for (Eigen::Index c = 0; c < nc; ++c) {
            panel.covariates(u, c) = number(row[static_cast<std::size_t>(c)]);
        }
    }
    reader.next("[categorical]");
    panel.categorical_values.assign(panel.categorical_names.size(), {});
    for (std::size_t u = 0; u < panel.unit_ids.size(); ++u) {
        const auto row = reader.row(panel.unit_ids[u], panel.categorical_names.size());
        for (std::size_t c = 0; c < row.size(); ++c) {
            panel.categorical_values[c].push_back(row[c]);
        }
    }
    if (has_policy) {
        reader.next("[policy]");
        Eigen::MatrixXi codes(nu, nt);
        for (Eigen::Index u = 0; u < nu; ++u) {
            const auto row = reader.row(panel.unit_ids[static_cast<std::size_t>(u)], static_cast<std::size_t>(nt));
            for (Eigen::Index t = 0; t < nt; ++t) {
                const auto& cell = row[static_cast<std::size_t>(t)];
                codes(u, t) = cell == "NA" ? -1 : static_cast<int>(number(cell));
            }
        }
        panel.policy_codes = std::move(codes);
    }
    reader.next("end");
    panel.validate();
    return panel;
}

}  // namespace policyfx
