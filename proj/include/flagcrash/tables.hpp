#pragma once

// CSV forms of feature tables and score series. Values are written in the
// shortest form that parses back to the same double, so a table read back
// from disk is bit-identical to the one that was written.

#include <string>
#include <string_view>
#include <vector>

#include "flagcrash/date.hpp"
#include "flagcrash/detectors.hpp"
#include "flagcrash/error.hpp"
#include "flagcrash/features.hpp"
#include "flagcrash/ph.hpp"
#include "flagcrash/text.hpp"

namespace flagcrash {

inline FeatureTable tda_table(const std::vector<TdaFeature>& rows) {
    FeatureTable t;
    t.columns = {"l1_h0", "l2_h0", "l1_h1", "l2_h1"};
    t.values.resize(static_cast<Eigen::Index>(rows.size()), 4);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const auto i = static_cast<Eigen::Index>(r);
        t.dates.push_back(rows[r].as_of);
        t.values(i, 0) = rows[r].l1_h0;
        t.values(i, 1) = rows[r].l2_h0;
        t.values(i, 2) = rows[r].l1_h1;
        t.values(i, 3) = rows[r].l2_h1;
    }
    return t;
}

inline FeatureTable select_columns(const FeatureTable& t, const std::vector<std::string>& names) {
    FeatureTable out;
    out.dates = t.dates;
    out.columns = names;
    out.values.resize(t.values.rows(), static_cast<Eigen::Index>(names.size()));
    for (std::size_t k = 0; k < names.size(); ++k) {
        const auto it = std::find(t.columns.begin(), t.columns.end(), names[k]);
        if (it == t.columns.end()) throw DataError("feature table has no column '" + names[k] + "'");
        out.values.col(static_cast<Eigen::Index>(k)) = t.values.col(it - t.columns.begin());
    }
    return out;
}

inline std::string serialize_feature_csv(const FeatureTable& t) {
    std::string out = "date";
    for (const auto& c : t.columns) out += "," + c;
    out += "\n";
    for (std::size_t r = 0; r < t.dates.size(); ++r) {
        out += t.dates[r].str();
        for (Eigen::Index j = 0; j < t.values.cols(); ++j) out += "," + text::exact(t.values(static_cast<Eigen::Index>(r), j));
        out += "\n";
    }
    return out;
}

inline FeatureTable parse_feature_csv(std::string_view csv) {
    const auto rows = text::lines(csv);
    if (rows.empty()) throw ParseError("feature file is empty");
    const auto header = text::split(rows.front().second);
    if (header.front() != "date") throw ParseError("feature header must start with 'date'");
    if (header.size() < 2) throw ParseError("feature file has no feature columns");
    FeatureTable t;
    for (std::size_t j = 1; j < header.size(); ++j) {
        if (header[j].empty()) throw ParseError("empty feature column name at position " + std::to_string(j + 1));
        t.columns.emplace_back(header[j]);
    }
    const auto d = static_cast<Eigen::Index>(t.columns.size());
    t.values.resize(static_cast<Eigen::Index>(rows.size() - 1), d);
    for (std::size_t r = 1; r < rows.size(); ++r) {
        const auto& [lineno, line] = rows[r];
        const auto cells = text::split(line);
        if (cells.size() != t.columns.size() + 1)
            throw ParseError("line " + std::to_string(lineno) + ": expected " + std::to_string(t.columns.size() + 1) + " fields");
        const auto date = Date::parse(cells[0]);
        if (!t.dates.empty() && !(t.dates.back() < date)) throw ParseError("line " + std::to_string(lineno) + ": dates must be increasing");
        t.dates.push_back(date);
        for (Eigen::Index j = 0; j < d; ++j) {
            const auto v = text::to_double(cells[static_cast<std::size_t>(j) + 1]);
            if (!v) throw ParseError("line " + std::to_string(lineno) + ": bad number '" + std::string(cells[static_cast<std::size_t>(j) + 1]) + "'");
            t.values(static_cast<Eigen::Index>(r - 1), j) = *v;
        }
    }
    return t;
}

inline std::string serialize_scores_csv(const AnomalySeries& s) {
    std::string out = "date,score\n";
    for (std::size_t i = 0; i < s.dates.size(); ++i) out += s.dates[i].str() + "," + text::exact(s.scores[i]) + "\n";
    return out;
}

inline AnomalySeries parse_scores_csv(std::string_view csv, std::string method = "") {
    const auto rows = text::lines(csv);
    if (rows.empty()) throw ParseError("score file is empty");
    const auto header = text::split(rows.front().second);
    if (header.size() != 2 || header[0] != "date" || header[1] != "score") throw ParseError("score header must be 'date,score'");
    AnomalySeries s;
    s.method = std::move(method);
    for (std::size_t r = 1; r < rows.size(); ++r) {
        const auto& [lineno, line] = rows[r];
        const auto cells = text::split(line);
        if (cells.size() != 2) throw ParseError("line " + std::to_string(lineno) + ": expected 2 fields");
        const auto date = Date::parse(cells[0]);
        if (!s.dates.empty() && !(s.dates.back() < date)) throw ParseError("line " + std::to_string(lineno) + ": dates must be increasing");
        const auto v = text::to_double(cells[1]);
        if (!v) throw ParseError("line " + std::to_string(lineno) + ": bad score '" + std::string(cells[1]) + "'");
        s.dates.push_back(date);
        s.scores.push_back(*v);
    }
    return s;
}

}  // namespace flagcrash
