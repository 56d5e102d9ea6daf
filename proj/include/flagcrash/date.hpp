#pragma once

#include <charconv>
#include <chrono>
#include <compare>
#include <cstdint>
#include <cstdio>
#include <string>
#include <string_view>

#include "flagcrash/error.hpp"

namespace flagcrash {

// Calendar date backed by std::chrono's civil calendar.
class Date {
public:
    constexpr Date() = default;
    constexpr Date(int year, unsigned month, unsigned day)
        : ymd_{std::chrono::year{year}, std::chrono::month{month}, std::chrono::day{day}} {}
    constexpr explicit Date(std::chrono::year_month_day ymd) : ymd_(ymd) {}
    constexpr explicit Date(std::chrono::sys_days days) : ymd_(days) {}

    // Accepts YYYY-MM-DD.
    static Date parse(std::string_view text) {
        auto bad = [&] { return ParseError("invalid date '" + std::string(text) + "' (expected YYYY-MM-DD)"); };
        if (text.size() != 10 || text[4] != '-' || text[7] != '-') throw bad();
        int y = 0;
        unsigned m = 0, d = 0;
        if (!parse_field(text.substr(0, 4), y) || !parse_field(text.substr(5, 2), m) ||
            !parse_field(text.substr(8, 2), d))
            throw bad();
        Date out(y, m, d);
        if (!out.ymd_.ok()) throw bad();
        return out;
    }

    // Accepts YYYY-MM-DD, or YYYY-MM which resolves to the 15th of the month.
    static Date parse_month_or_day(std::string_view text) {
        if (text.size() == 7 && text[4] == '-') {
            int y = 0;
            unsigned m = 0;
            if (!parse_field(text.substr(0, 4), y) || !parse_field(text.substr(5, 2), m) || m < 1 || m > 12)
                throw ParseError("invalid month '" + std::string(text) + "' (expected YYYY-MM)");
            return Date(y, m, 15);
        }
        return parse(text);
    }

    constexpr int year() const { return static_cast<int>(ymd_.year()); }
    constexpr unsigned month() const { return static_cast<unsigned>(ymd_.month()); }
    constexpr unsigned day() const { return static_cast<unsigned>(ymd_.day()); }

    constexpr std::chrono::sys_days days() const { return std::chrono::sys_days{ymd_}; }
    constexpr std::int64_t serial() const { return days().time_since_epoch().count(); }

    constexpr Date plus_days(int n) const { return Date(days() + std::chrono::days{n}); }
    bool is_weekend() const {
        const std::chrono::weekday wd{days()};
        return wd == std::chrono::Saturday || wd == std::chrono::Sunday;
    }

    // YYYYMMDD packed into an integer; used by the binary archives.
    constexpr std::uint32_t packed() const {
        return static_cast<std::uint32_t>(year()) * 10000u + month() * 100u + day();
    }
    static Date from_packed(std::uint32_t v) {
        Date out(static_cast<int>(v / 10000u), (v / 100u) % 100u, v % 100u);
        if (!out.ymd_.ok()) throw ParseError("invalid packed date " + std::to_string(v));
        return out;
    }

    std::string str() const {
        char buf[16];
        std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", year(), month(), day());
        return buf;
    }
    std::string month_str() const { return str().substr(0, 7); }

    friend constexpr bool operator==(const Date& a, const Date& b) { return a.ymd_ == b.ymd_; }
    friend constexpr auto operator<=>(const Date& a, const Date& b) { return a.serial() <=> b.serial(); }

private:
    template <typename T>
    static bool parse_field(std::string_view s, T& out) {
        for (char c : s)
            if (c < '0' || c > '9') return false;
        auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
        return ec == std::errc{} && ptr == s.data() + s.size();
    }

    std::chrono::year_month_day ymd_{std::chrono::year{1970}, std::chrono::January, std::chrono::day{1}};
};

}  // namespace flagcrash
