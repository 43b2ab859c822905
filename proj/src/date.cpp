#include "policyfx/date.hpp"

#include "policyfx/error.hpp"

#include <charconv>
#include <chrono>
#include <cstdio>

namespace policyfx {

namespace {

std::optional<int> parse_digits(std::string_view text) {
    if (text.empty()) {
        return std::nullopt;
    }
    for (char c : text) {
        if (c < '0' || c > '9') {
            return std::nullopt;
        }
    }
    int value = 0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc{} || ptr != text.data() + text.size()) {
        return std::nullopt;
    }
    return value;
}

std::optional<Date> make(std::optional<int> y, std::optional<int> m, std::optional<int> d) {
    if (!y || !m || !d) {
        return std::nullopt;
    }
    const std::chrono::year_month_day ymd{std::chrono::year{*y},
                                          std::chrono::month{static_cast<unsigned>(*m)},
                                          std::chrono::day{static_cast<unsigned>(*d)}};
    if (!ymd.ok()) {
        return std::nullopt;
    }
    return Date::from_days(std::chrono::sys_days{ymd}.time_since_epoch().count());
}

}  // namespace

Date Date::from_ymd(int year, unsigned month, unsigned day) {
    auto d = make(year, static_cast<int>(month), static_cast<int>(day));
    if (!d) {
        throw ValidationError("invalid calendar day " + std::to_string(year) + "-" +
                              std::to_string(month) + "-" + std::to_string(day));
    }
    return *d;
}

std::optional<Date> Date::parse_iso(std::string_view text) {
    if (text.size() != 10 || text[4] != '-' || text[7] != '-') {
        return std::nullopt;
    }
    return make(parse_digits(text.substr(0, 4)), parse_digits(text.substr(5, 2)),
                parse_digits(text.substr(8, 2)));
}

std::optional<Date> Date::parse_compact(std::string_view text) {
    if (text.size() != 8) {
        return std::nullopt;
    }
    return make(parse_digits(text.substr(0, 4)), parse_digits(text.substr(4, 2)),
                parse_digits(text.substr(6, 2)));
}

Date Date::parse(std::string_view text) {
    if (auto d = parse_iso(text)) {
        return *d;
    }
    if (auto d = parse_compact(text)) {
        return *d;
    }
    throw ParseError("malformed date '" + std::string(text) + "'");
}

std::string Date::iso() const {
    const std::chrono::year_month_day ymd{std::chrono::sys_days{std::chrono::days{days_}}};
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
    return buf;
}

std::string Date::compact() const {
    const std::chrono::year_month_day ymd{std::chrono::sys_days{std::chrono::days{days_}}};
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d%02u%02u", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
    return buf;
}

}  // namespace policyfx
