#pragma once

// Flags from score series, matching flags to labelled stress events, and the
// resulting precision / recall / f-score.

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "flagcrash/date.hpp"
#include "flagcrash/detectors.hpp"
#include "flagcrash/error.hpp"
#include "flagcrash/text.hpp"

namespace flagcrash {

struct Event {
    Date date;
    std::string label;
};

struct EventList {
    std::vector<Event> events;
};

// `date,label` with a header row; a YYYY-MM date resolves to the 15th.
inline EventList parse_events_csv(std::string_view csv) {
    const auto rows = text::lines(csv);
    if (rows.empty()) throw ParseError("event file is empty");
    const auto header = text::split(rows.front().second);
    if (header.size() != 2 || header[0] != "date" || header[1] != "label") throw ParseError("event header must be 'date,label'");
    EventList out;
    for (std::size_t r = 1; r < rows.size(); ++r) {
        const auto& [lineno, line] = rows[r];
        const auto comma = line.find(',');
        if (comma == std::string_view::npos) throw ParseError("line " + std::to_string(lineno) + ": expected date,label");
        Event e{Date::parse_month_or_day(text::trim(line.substr(0, comma))), std::string(text::trim(line.substr(comma + 1)))};
        if (!out.events.empty() && !(out.events.back().date < e.date))
            throw ParseError("line " + std::to_string(lineno) + ": event dates must be strictly increasing");
        out.events.push_back(std::move(e));
    }
    return out;
}

inline std::string serialize_events_csv(const EventList& list) {
    std::string out = "date,label\n";
    for (const auto& e : list.events) out += e.date.str() + "," + e.label + "\n";
    return out;
}

// q-th percentile with linear interpolation between order statistics.
inline double percentile(std::vector<double> values, double q) {
    if (values.empty()) throw DataError("percentile of an empty series");
    if (!(q >= 0.0 && q <= 100.0)) throw ConfigError("percentile must lie in [0, 100]");
    std::sort(values.begin(), values.end());
    const double pos = q / 100.0 * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return values[lo] + frac * (values[hi] - values[lo]);
}

inline constexpr double kDefaultPercentile = 97.5;
inline constexpr std::size_t kDefaultLookback = 50;

// Dates whose score strictly exceeds the percentile of the series.
inline std::vector<Date> threshold_anomalies(const AnomalySeries& s, double pct = kDefaultPercentile) {
    if (s.scores.empty()) throw DataError("cannot threshold an empty score series");
    if (s.scores.size() != s.dates.size()) throw DataError("score series has mismatched dates and scores");
    if (!(pct > 0.0 && pct < 100.0)) throw ConfigError("percentile must lie strictly between 0 and 100");
    const double cut = percentile(s.scores, pct);
    std::vector<Date> flags;
    for (std::size_t i = 0; i < s.scores.size(); ++i)
        if (s.scores[i] > cut) flags.push_back(s.dates[i]);
    return flags;
}

struct Signaling {
    std::vector<bool> signaled;     // per event
    std::vector<bool> signalable;   // false when the event precedes the first trading day
    std::vector<bool> attributed;   // per flag
};

// Event e is anchored at the last trading day a on or before its date; it is
// signaled when some flag f has index in [a - lookback, a].
inline Signaling signal_events(const std::vector<Date>& flags, const std::vector<Date>& trading_days, const EventList& events,
                               std::size_t lookback = kDefaultLookback) {
    std::vector<std::size_t> flag_index;
    for (const auto& f : flags) {
        const auto it = std::lower_bound(trading_days.begin(), trading_days.end(), f);
        if (it == trading_days.end() || *it != f) throw DataError("flag date " + f.str() + " is not a trading day");
        flag_index.push_back(static_cast<std::size_t>(it - trading_days.begin()));
    }
    Signaling out{std::vector<bool>(events.events.size(), false), std::vector<bool>(events.events.size(), true),
                  std::vector<bool>(flags.size(), false)};
    for (std::size_t e = 0; e < events.events.size(); ++e) {
        const auto it = std::upper_bound(trading_days.begin(), trading_days.end(), events.events[e].date);
        if (it == trading_days.begin()) {
            out.signalable[e] = false;
            continue;
        }
        const auto anchor = static_cast<std::size_t>(it - trading_days.begin()) - 1;
        const auto first = anchor >= lookback ? anchor - lookback : 0;
        for (std::size_t k = 0; k < flags.size(); ++k)
            if (flag_index[k] >= first && flag_index[k] <= anchor) {
                out.signaled[e] = true;
                out.attributed[k] = true;
            }
    }
    return out;
}

struct DetectionReport {
    std::string method;
    double precision = 0.0;
    double recall = 0.0;
    double f_score = 0.0;
    std::vector<bool> signaled;
    std::vector<bool> signalable;
    std::vector<Date> anomalous_dates;
    std::size_t attributed_flags = 0;
};

inline double f_score(double precision, double recall) {
    return precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
}

inline DetectionReport metrics(const std::vector<Date>& flags, const std::vector<Date>& trading_days, const EventList& events,
                               std::size_t lookback = kDefaultLookback) {
    if (events.events.empty()) throw DataError("event list is empty");
    const auto sig = signal_events(flags, trading_days, events, lookback);
    DetectionReport r;
    r.signaled = sig.signaled;
    r.signalable = sig.signalable;
    r.anomalous_dates = flags;
    r.attributed_flags = static_cast<std::size_t>(std::count(sig.attributed.begin(), sig.attributed.end(), true));
    const auto hits = static_cast<double>(std::count(sig.signaled.begin(), sig.signaled.end(), true));
    r.recall = hits / static_cast<double>(events.events.size());
    r.precision = flags.empty() ? 0.0 : static_cast<double>(r.attributed_flags) / static_cast<double>(flags.size());
    r.f_score = f_score(r.precision, r.recall);
    return r;
}

// Flags per calendar month, ascending, months without flags omitted.
inline std::vector<std::pair<std::string, std::size_t>> monthly_counts(const std::vector<Date>& flags) {
    std::map<std::string, std::size_t> counts;
    for (const auto& f : flags) ++counts[f.month_str()];
    return {counts.begin(), counts.end()};
}

struct EvaluationSettings {
    double percentile = kDefaultPercentile;
    std::size_t lookback = kDefaultLookback;
};

// Thresholds the series and scores it; trading days are the series' dates.
inline DetectionReport evaluate(const AnomalySeries& s, const EventList& events, const EvaluationSettings& settings = {}) {
    auto r = metrics(threshold_anomalies(s, settings.percentile), s.dates, events, settings.lookback);
    r.method = s.method;
    return r;
}

inline nlohmann::json report_json(const DetectionReport& r, const EventList& events, const EvaluationSettings& settings) {
    nlohmann::json per_event = nlohmann::json::array();
    for (std::size_t e = 0; e < events.events.size(); ++e)
        per_event.push_back({{"label", events.events[e].label},
                             {"date", events.events[e].date.str()},
                             {"signaled", static_cast<bool>(r.signaled[e])},
                             {"signalable", static_cast<bool>(r.signalable[e])}});
    nlohmann::json months = nlohmann::json::array();
    for (const auto& [m, c] : monthly_counts(r.anomalous_dates)) months.push_back({{"month", m}, {"count", c}});
    nlohmann::json dates = nlohmann::json::array();
    for (const auto& d : r.anomalous_dates) dates.push_back(d.str());
    return {{"method", r.method},
            {"precision", r.precision},
            {"recall", r.recall},
            {"f_score", r.f_score},
            {"percentile", settings.percentile},
            {"lookback", settings.lookback},
            {"n_flags", r.anomalous_dates.size()},
            {"attributed_flags", r.attributed_flags},
            {"per_event", per_event},
            {"monthly_counts", months},
            {"anomalous_dates", dates}};
}

}  // namespace flagcrash
