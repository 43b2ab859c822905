#pragma once

#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace policyfx::csv {

/// A delimiter-separated table read fully into memory.
struct Table {
    char delimiter = ',';
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    /// 1-based source line of each row, for error messages.
    std::vector<std::size_t> lines;

    std::optional<std::size_t> column(std::string_view name) const;
    /// Throws ParseError naming the column when absent.
    std::size_t require(std::string_view name) const;
};

/// Reads a table, detecting the delimiter (',', '\t' or ';') from the header
/// line. Double-quoted fields may contain delimiters and doubled quotes.
/// Blank lines are skipped; rows are padded or rejected against the header
/// width (short rows are padded with empty fields, long rows are an error).
Table read(std::istream& in);

/// Quotes a field only when it needs quoting.
std::string escape(std::string_view field, char delimiter = ',');

void write_row(std::ostream& out, std::span<const std::string> fields, char delimiter = ',');

std::string_view trim(std::string_view s);

/// Shortest round-trip decimal representation.
std::string format_double(double value);

/// Parses a finite double; whitespace around the number is allowed.
std::optional<double> parse_double(std::string_view text);

}  // namespace policyfx::csv
