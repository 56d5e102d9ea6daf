#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include <Eigen/Dense>

#include "flagcrash/date.hpp"
#include "flagcrash/error.hpp"
#include "flagcrash/text.hpp"

namespace flagcrash {

using BoolMatrix = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;

// Adjusted daily closes, dates x tickers. Missing cells hold NaN in `prices`
// and true in `missing`.
struct PriceTable {
    std::vector<Date> dates;
    std::vector<std::string> tickers;
    Eigen::MatrixXd prices;
    BoolMatrix missing;

    std::size_t rows() const { return dates.size(); }
    std::size_t cols() const { return tickers.size(); }
    bool complete() const { return !missing.any(); }
};

// Log returns; dates[t] is the later day of the price pair.
struct ReturnMatrix {
    std::vector<Date> dates;
    std::vector<std::string> tickers;
    Eigen::MatrixXd returns;

    std::size_t rows() const { return dates.size(); }
    std::size_t cols() const { return tickers.size(); }
};

// Reads `date,<ticker...>` CSV. Empty or unparseable numeric cells become
// missing; rows are sorted by date.
inline PriceTable parse_price_csv(std::string_view csv) {
    const auto lines = text::lines(csv);
    if (lines.empty()) throw ParseError("price file is empty");

    const auto header = text::split(lines.front().second);
    if (header.front() != "date") throw ParseError("malformed header: column 1 is '" + std::string(header.front()) + "', expected 'date'");
    if (header.size() < 2) throw ParseError("malformed header: no ticker columns");

    PriceTable table;
    std::unordered_set<std::string> seen;
    for (std::size_t c = 1; c < header.size(); ++c) {
        std::string name(header[c]);
        if (name.empty()) throw ParseError("malformed header: column " + std::to_string(c + 1) + " has an empty ticker name");
        if (!seen.insert(name).second) throw ParseError("malformed header: column " + std::to_string(c + 1) + " duplicates ticker '" + name + "'");
        table.tickers.push_back(std::move(name));
    }

    const std::size_t n = table.tickers.size();
    struct Row {
        Date date;
        std::vector<double> values;
    };
    std::vector<Row> rows;
    rows.reserve(lines.size() - 1);
    for (std::size_t li = 1; li < lines.size(); ++li) {
        const auto& [lineno, line] = lines[li];
        const auto fields = text::split(line);
        if (fields.size() != n + 1)
            throw ParseError("line " + std::to_string(lineno) + ": expected " + std::to_string(n + 1) + " fields, found " + std::to_string(fields.size()));
        Row row{Date::parse(fields[0]), std::vector<double>(n, std::nan(""))};
        for (std::size_t c = 0; c < n; ++c) {
            const auto v = text::to_double(fields[c + 1]);
            if (!v) continue;
            if (*v <= 0.0) throw DataError("non-positive price " + std::string(fields[c + 1]) + " at (" + row.date.str() + ", " + table.tickers[c] + ")");
            row.values[c] = *v;
        }
        rows.push_back(std::move(row));
    }

    std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.date < b.date; });
    for (std::size_t r = 1; r < rows.size(); ++r)
        if (rows[r].date == rows[r - 1].date) throw DataError("duplicate date " + rows[r].date.str());

    table.prices.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(n));
    table.missing.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(n));
    for (std::size_t r = 0; r < rows.size(); ++r) {
        table.dates.push_back(rows[r].date);
        for (std::size_t c = 0; c < n; ++c) {
            const double v = rows[r].values[c];
            table.prices(r, c) = v;
            table.missing(r, c) = std::isnan(v);
        }
    }
    return table;
}

inline std::string serialize_price_csv(const PriceTable& table) {
    std::string out = "date";
    for (const auto& t : table.tickers) out += "," + t;
    out += "\n";
    for (std::size_t r = 0; r < table.rows(); ++r) {
        out += table.dates[r].str();
        for (std::size_t c = 0; c < table.cols(); ++c) {
            out += ",";
            if (!table.missing(r, c)) out += text::exact(table.prices(r, c));
        }
        out += "\n";
    }
    return out;
}

// Restricts to [start, end], drops tickers under `min_coverage` or with a
// leading gap, and forward-fills interior gaps.
inline PriceTable align_and_filter(const PriceTable& table, Date start, Date end, double min_coverage) {
    if (!(start < end)) throw ConfigError("start date " + start.str() + " must precede end date " + end.str());
    if (!(min_coverage > 0.0 && min_coverage <= 1.0)) throw ConfigError("min_coverage must lie in (0, 1]");
    if (table.rows() == 0 || table.cols() == 0) throw DataError("price table is empty");

    std::vector<Eigen::Index> row_idx;
    for (std::size_t r = 0; r < table.rows(); ++r)
        if (table.dates[r] >= start && table.dates[r] <= end) row_idx.push_back(static_cast<Eigen::Index>(r));
    if (row_idx.empty()) throw DataError("no trading days between " + start.str() + " and " + end.str());

    const auto t_rows = static_cast<double>(row_idx.size());
    std::vector<Eigen::Index> keep;
    for (Eigen::Index c = 0; c < static_cast<Eigen::Index>(table.cols()); ++c) {
        std::size_t present = 0;
        for (auto r : row_idx) present += table.missing(r, c) ? 0 : 1;
        if (static_cast<double>(present) / t_rows < min_coverage) continue;
        if (table.missing(row_idx.front(), c)) continue;
        keep.push_back(c);
    }
    if (keep.empty()) throw DataError("no ticker survives the coverage filter");

    PriceTable out;
    for (auto r : row_idx) out.dates.push_back(table.dates[static_cast<std::size_t>(r)]);
    for (auto c : keep) out.tickers.push_back(table.tickers[static_cast<std::size_t>(c)]);
    out.prices.resize(static_cast<Eigen::Index>(row_idx.size()), static_cast<Eigen::Index>(keep.size()));
    out.missing = BoolMatrix::Constant(out.prices.rows(), out.prices.cols(), false);
    for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(keep.size()); ++j) {
        double last = 0.0;
        for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(row_idx.size()); ++i) {
            const auto r = row_idx[static_cast<std::size_t>(i)];
            const auto c = keep[static_cast<std::size_t>(j)];
            if (!table.missing(r, c)) last = table.prices(r, c);
            out.prices(i, j) = last;
        }
    }
    return out;
}

inline ReturnMatrix log_returns(const PriceTable& table) {
    if (!table.complete()) throw DataError("log_returns needs a complete panel; run align_and_filter first");
    ReturnMatrix out;
    out.tickers = table.tickers;
    const auto t = static_cast<Eigen::Index>(table.rows());
    const auto n = static_cast<Eigen::Index>(table.cols());
    if (t < 1) return out;
    out.returns.resize(t - 1, n);
    for (Eigen::Index c = 0; c < n; ++c)
        for (Eigen::Index r = 0; r < t; ++r)
            if (!(table.prices(r, c) > 0.0))
                throw DataError("non-positive price at (" + table.dates[static_cast<std::size_t>(r)].str() + ", " + table.tickers[static_cast<std::size_t>(c)] + ")");
    for (Eigen::Index r = 0; r + 1 < t; ++r) {
        out.dates.push_back(table.dates[static_cast<std::size_t>(r + 1)]);
        for (Eigen::Index c = 0; c < n; ++c)
            out.returns(r, c) = std::log(table.prices(r + 1, c)) - std::log(table.prices(r, c));
    }
    return out;
}

// `date,<ticker...>` with 12 significant digits.
inline std::string serialize_returns_csv(const ReturnMatrix& m) {
    std::string out = "date";
    for (const auto& t : m.tickers) out += "," + t;
    out += "\n";
    for (std::size_t r = 0; r < m.rows(); ++r) {
        out += m.dates[r].str();
        for (std::size_t c = 0; c < m.cols(); ++c) out += "," + text::format(m.returns(r, c), 12);
        out += "\n";
    }
    return out;
}

inline ReturnMatrix parse_returns_csv(std::string_view csv) {
    const auto lines = text::lines(csv);
    if (lines.empty()) throw ParseError("returns file is empty");
    const auto header = text::split(lines.front().second);
    if (header.front() != "date" || header.size() < 2) throw ParseError("malformed returns header");
    ReturnMatrix m;
    for (std::size_t c = 1; c < header.size(); ++c) m.tickers.emplace_back(header[c]);
    const auto n = m.tickers.size();
    m.returns.resize(static_cast<Eigen::Index>(lines.size() - 1), static_cast<Eigen::Index>(n));
    for (std::size_t li = 1; li < lines.size(); ++li) {
        const auto& [lineno, line] = lines[li];
        const auto fields = text::split(line);
        if (fields.size() != n + 1) throw ParseError("line " + std::to_string(lineno) + ": wrong field count");
        m.dates.push_back(Date::parse(fields[0]));
        if (li > 1 && !(m.dates[li - 2] < m.dates[li - 1])) throw DataError("returns dates not strictly increasing at line " + std::to_string(lineno));
        for (std::size_t c = 0; c < n; ++c) {
            const auto v = text::to_double(fields[c + 1]);
            if (!v) throw ParseError("line " + std::to_string(lineno) + ": non-numeric return in column " + std::to_string(c + 2));
            m.returns(static_cast<Eigen::Index>(li - 1), static_cast<Eigen::Index>(c)) = *v;
        }
    }
    return m;
}

}  // namespace flagcrash
