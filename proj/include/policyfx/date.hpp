#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace policyfx {

/// A proleptic Gregorian calendar day, stored as days since 1970-01-01.
class Date {
public:
    constexpr Date() = default;

    static constexpr Date from_days(std::int32_t days_since_epoch) {
        Date d;
        d.days_ = days_since_epoch;
        return d;
    }
    /// Throws ValidationError for an invalid calendar day.
    static Date from_ymd(int year, unsigned month, unsigned day);

    /// "YYYY-MM-DD"
    static std::optional<Date> parse_iso(std::string_view text);
    /// "YYYYMMDD"
    static std::optional<Date> parse_compact(std::string_view text);
    /// Either form; throws ParseError naming the text on failure.
    static Date parse(std::string_view text);

    constexpr std::int32_t days() const { return days_; }
    std::string iso() const;
    std::string compact() const;

    constexpr Date operator+(std::int32_t n) const { return from_days(days_ + n); }
    constexpr Date operator-(std::int32_t n) const { return from_days(days_ - n); }
    constexpr std::int32_t operator-(Date other) const { return days_ - other.days_; }
    constexpr auto operator<=>(const Date&) const = default;

private:
    std::int32_t days_ = 0;
};

}  // namespace policyfx
