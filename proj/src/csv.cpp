#include "policyfx/csv.hpp"

#include "policyfx/error.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>

namespace policyfx::csv {

namespace {

std::vector<std::string> split_line(std::string_view line, char delim, std::size_t line_no) {
    std::vector<std::string> fields;
    std::string current;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    current.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                current.push_back(c);
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == delim) {
            fields.push_back(std::move(current));
            current.clear();
        } else {
            current.push_back(c);
        }
    }
    if (quoted) {
        throw ParseError("line " + std::to_string(line_no) + ": unterminated quoted field");
    }
    fields.push_back(std::move(current));
    return fields;
}

char detect_delimiter(std::string_view header) {
    constexpr std::array<char, 3> candidates{',', '\t', ';'};
    char best = ',';
    std::size_t best_count = 0;
    for (char c : candidates) {
        const auto count = static_cast<std::size_t>(std::count(header.begin(), header.end(), c));
        if (count > best_count) {
            best = c;
            best_count = count;
        }
    }
    return best;
}

}  // namespace

std::optional<std::size_t> Table::column(std::string_view name) const {
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (header[i] == name) {
            return i;
        }
    }
    return std::nullopt;
}

std::size_t Table::require(std::string_view name) const {
    if (auto c = column(name)) {
        return *c;
    }
    throw ParseError("missing column '" + std::string(name) + "'");
}

Table read(std::istream& in) {
    Table table;
    std::string line;
    std::size_t line_no = 0;
    bool have_header = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line_no == 1 && line.rfind("\xEF\xBB\xBF", 0) == 0) {
            line.erase(0, 3);
        }
        if (trim(line).empty()) {
            continue;
        }
        if (!have_header) {
            table.delimiter = detect_delimiter(line);
            table.header = split_line(line, table.delimiter, line_no);
            for (auto& h : table.header) {
                h = std::string(trim(h));
            }
            have_header = true;
            continue;
        }
        auto fields = split_line(line, table.delimiter, line_no);
        if (fields.size() > table.header.size()) {
            throw ParseError("line " + std::to_string(line_no) + ": " +
                             std::to_string(fields.size()) + " fields, header has " +
                             std::to_string(table.header.size()));
        }
        fields.resize(table.header.size());
        table.rows.push_back(std::move(fields));
        table.lines.push_back(line_no);
    }
    if (!have_header) {
        throw ParseError("input has no header line");
    }
    return table;
}

std::string escape(std::string_view field, char delimiter) {
    const bool needs = field.find_first_of(std::string{delimiter, '"', '\n', '\r'}) !=
                       std::string_view::npos;
    if (!needs) {
        return std::string(field);
    }
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') {
            out.push_back('"');
        }
        out.push_back(c);
    }
    out.push_back('"');
    return out;
}

void write_row(std::ostream& out, std::span<const std::string> fields, char delimiter) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i > 0) {
            out << delimiter;
        }
        out << escape(fields[i], delimiter);
    }
    out << '\n';
}

std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t");
    if (first == std::string_view::npos) {
        return {};
    }
    const auto last = s.find_last_not_of(" \t");
    return s.substr(first, last - first + 1);
}

std::string format_double(double value) {
    if (std::isnan(value)) {
        return "NA";
    }
    if (value == 0.0) {
        return "0";  // folds -0
    }
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, value);
    return std::string(buf, ptr);
}

std::optional<double> parse_double(std::string_view text) {
    text = trim(text);
    if (text.empty()) {
        return std::nullopt;
    }
    if (text.front() == '+') {
        text.remove_prefix(1);
    }
    double value = 0.0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc{} || ptr != text.data() + text.size() || !std::isfinite(value)) {
        return std::nullopt;
    }
    return value;
}

}  // namespace policyfx::csv
