#pragma once

// Synthetic price panels with planted stress episodes, for end-to-end tests.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "flagcrash/date.hpp"
#include "flagcrash/error.hpp"
#include "flagcrash/eval.hpp"
#include "flagcrash/ingest.hpp"

namespace flagcrash {

struct StressEpisode {
    std::size_t start = 0;   // first stressed day (row index into the price panel, >= 1)
    std::size_t length = 0;  // number of stressed days
    double coupling = 0.8;
};

struct SyntheticConfig {
    std::size_t n_stocks = 20;
    std::size_t n_days = 1500;
    std::vector<StressEpisode> episodes;
    double sigma = 0.01;
    Date first_day{2000, 1, 3};
};

struct SyntheticData {
    PriceTable prices;
    EventList events;
};

// `count` episodes of `length` days, evenly spaced through the panel.
inline std::vector<StressEpisode> spread_episodes(std::size_t n_days, std::size_t count, std::size_t length, double coupling) {
    std::vector<StressEpisode> out;
    for (std::size_t k = 1; k <= count; ++k) {
        const auto end = n_days * k / (count + 1);
        if (end < length) throw ConfigError("panel too short for the requested episodes");
        out.push_back({end - length + 1, length, coupling});
    }
    return out;
}

// Weekdays from `first`, `n` of them.
inline std::vector<Date> business_days(Date first, std::size_t n) {
    std::vector<Date> out;
    for (Date d = first; out.size() < n; d = d.plus_days(1))
        if (!d.is_weekend()) out.push_back(d);
    return out;
}

// Baseline log returns are iid N(0, sigma^2). On stressed days every stock
// gets coupling * common + (1 - coupling) * own, both N(0, sigma^2). Prices
// start at 100 and follow the exponentiated cumulative returns. Each episode
// contributes one event dated on its last day.
inline SyntheticData make_synthetic(const SyntheticConfig& cfg, std::uint64_t seed) {
    if (cfg.n_stocks < 1 || cfg.n_days < 2) throw ConfigError("synthetic panel needs at least one stock and two days");
    std::vector<int> stressed(cfg.n_days, -1);
    for (std::size_t e = 0; e < cfg.episodes.size(); ++e) {
        const auto& ep = cfg.episodes[e];
        if (!(ep.coupling > 0.0 && ep.coupling <= 1.0)) throw ConfigError("episode coupling must lie in (0, 1]");
        if (ep.length < 1 || ep.start < 1 || ep.start + ep.length > cfg.n_days)
            throw ConfigError("episode " + std::to_string(e + 1) + " does not fit inside the panel");
        for (std::size_t t = ep.start; t < ep.start + ep.length; ++t) {
            if (stressed[t] >= 0) throw ConfigError("episodes " + std::to_string(stressed[t] + 1) + " and " + std::to_string(e + 1) + " overlap");
            stressed[t] = static_cast<int>(e);
        }
    }

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, cfg.sigma);
    SyntheticData out;
    auto& p = out.prices;
    p.dates = business_days(cfg.first_day, cfg.n_days);
    for (std::size_t i = 0; i < cfg.n_stocks; ++i) p.tickers.push_back("S" + std::to_string(i + 1));
    const auto t_rows = static_cast<Eigen::Index>(cfg.n_days), n = static_cast<Eigen::Index>(cfg.n_stocks);
    p.prices.resize(t_rows, n);
    p.missing = BoolMatrix::Constant(t_rows, n, false);
    std::vector<double> log_price(cfg.n_stocks, std::log(100.0));
    for (Eigen::Index i = 0; i < n; ++i) p.prices(0, i) = 100.0;
    for (std::size_t t = 1; t < cfg.n_days; ++t) {
        const double common = noise(rng);
        for (std::size_t i = 0; i < cfg.n_stocks; ++i) {
            const double own = noise(rng);
            double r = own;
            if (stressed[t] >= 0) {
                const double c = cfg.episodes[static_cast<std::size_t>(stressed[t])].coupling;
                r = c * common + (1.0 - c) * own;
            }
            log_price[i] += r;
            p.prices(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(i)) = std::exp(log_price[i]);
        }
    }
    for (std::size_t e = 0; e < cfg.episodes.size(); ++e) {
        const auto& ep = cfg.episodes[e];
        out.events.events.push_back({p.dates[ep.start + ep.length - 1], "episode " + std::to_string(e + 1)});
    }
    std::sort(out.events.events.begin(), out.events.events.end(), [](const Event& a, const Event& b) { return a.date < b.date; });
    return out;
}

}  // namespace flagcrash
