#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "flagcrash/date.hpp"
#include "flagcrash/error.hpp"
#include "flagcrash/ingest.hpp"
#include "flagcrash/parallel.hpp"

namespace flagcrash {

// Return rows [start_index, start_index + width) of a ReturnMatrix.
struct WindowSpec {
    std::size_t start_index = 0;
    std::size_t width = 25;
};

struct CcmParams {
    std::size_t embedding_dim = 2;
    std::size_t lag = 1;
};

enum class CorrKind { pearson, ccm };

inline std::string to_string(CorrKind k) { return k == CorrKind::pearson ? "pearson" : "ccm"; }
inline CorrKind corr_kind_from_string(const std::string& s) {
    if (s == "pearson") return CorrKind::pearson;
    if (s == "ccm") return CorrKind::ccm;
    throw ConfigError("unknown correlation kind '" + s + "' (expected ccm or pearson)");
}

struct CorrelationMatrix {
    Eigen::MatrixXd values;
    WindowSpec window;
    Date as_of;
    CorrKind kind = CorrKind::pearson;
};

struct Edge {
    std::size_t source = 0;
    std::size_t target = 0;
    double weight = 0.0;

    friend bool operator==(const Edge&, const Edge&) = default;
};

// No self-loops, no duplicate (source, target), weights in (0, 1].
struct WeightedDigraph {
    std::size_t n_vertices = 0;
    std::vector<Edge> edges;
    Date as_of;
};

namespace detail {

inline bool is_constant(std::span<const double> x) {
    return std::adjacent_find(x.begin(), x.end(), std::not_equal_to<>{}) == x.end();
}

}  // namespace detail

// Sample Pearson correlation; 0 when either input is constant or non-finite.
inline double pearson(std::span<const double> x, std::span<const double> y) {
    const std::size_t n = x.size();
    if (n != y.size() || n < 2 || detail::is_constant(x) || detail::is_constant(y)) return 0.0;
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dx = x[i] - mx, dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (!(sxx > 0.0) || !(syy > 0.0)) return 0.0;
    const double r = sxy / std::sqrt(sxx * syy);
    if (!std::isfinite(r)) return 0.0;
    return std::clamp(r, -1.0, 1.0);
}

inline void check_window(const ReturnMatrix& returns, const WindowSpec& w) {
    if (w.width < 3) throw ConfigError("window width must be at least 3, got " + std::to_string(w.width));
    if (w.start_index + w.width > returns.rows())
        throw DataError("window [" + std::to_string(w.start_index) + ", " + std::to_string(w.start_index + w.width) +
                        ") exceeds " + std::to_string(returns.rows()) + " return rows");
}

namespace detail {

inline std::vector<std::vector<double>> window_columns(const ReturnMatrix& returns, const WindowSpec& w) {
    std::vector<std::vector<double>> cols(returns.cols());
    for (std::size_t c = 0; c < returns.cols(); ++c) {
        cols[c].resize(w.width);
        for (std::size_t t = 0; t < w.width; ++t)
            cols[c][t] = returns.returns(static_cast<Eigen::Index>(w.start_index + t), static_cast<Eigen::Index>(c));
    }
    return cols;
}

}  // namespace detail

inline CorrelationMatrix pearson_corr(const ReturnMatrix& returns, const WindowSpec& window) {
    check_window(returns, window);
    const auto cols = detail::window_columns(returns, window);
    const auto n = static_cast<Eigen::Index>(returns.cols());
    CorrelationMatrix out{Eigen::MatrixXd::Zero(n, n), window, returns.dates[window.start_index + window.width - 1], CorrKind::pearson};
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i + 1; j < n; ++j) {
            const double r = pearson(cols[static_cast<std::size_t>(i)], cols[static_cast<std::size_t>(j)]);
            out.values(i, j) = r;
            out.values(j, i) = r;
        }
    return out;
}

// Nearest-neighbour simplex weights on one series' delay embedding. Row k
// describes shadow point k (time (E-1)*tau + k within the window).
class ShadowManifold {
public:
    ShadowManifold(std::span<const double> series, const CcmParams& p) : offset_((p.embedding_dim - 1) * p.lag) {
        const std::size_t e = p.embedding_dim;
        const std::size_t points = series.size() - offset_;
        const std::size_t k_nn = e + 1;
        neighbours_.resize(points);
        std::vector<std::pair<double, std::size_t>> dist;
        dist.reserve(points);
        for (std::size_t a = 0; a < points; ++a) {
            dist.clear();
            for (std::size_t b = 0; b < points; ++b) {
                if (b == a) continue;
                double d2 = 0.0;
                for (std::size_t l = 0; l < e; ++l) {
                    const double diff = series[offset_ + a - l * p.lag] - series[offset_ + b - l * p.lag];
                    d2 += diff * diff;
                }
                dist.emplace_back(std::sqrt(d2), b);
            }
            std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k_nn), dist.end());
            auto& nb = neighbours_[a];
            const double d1 = dist.front().first;
            if (d1 == 0.0) {
                // Collapse onto the exact duplicates.
                std::size_t zeros = 0;
                while (zeros < k_nn && dist[zeros].first == 0.0) ++zeros;
                for (std::size_t l = 0; l < zeros; ++l) nb.push_back({dist[l].second, 1.0 / static_cast<double>(zeros)});
            } else {
                double total = 0.0;
                for (std::size_t l = 0; l < k_nn; ++l) {
                    const double u = std::exp(-dist[l].first / d1);
                    nb.push_back({dist[l].second, u});
                    total += u;
                }
                for (auto& x : nb) x.weight /= total;
            }
        }
    }

    std::size_t offset() const { return offset_; }
    std::size_t points() const { return neighbours_.size(); }

    // Cross-map skill: Pearson correlation between predictions of `target`
    // and its observed values at the shadow times.
    double skill(std::span<const double> target) const {
        std::vector<double> pred(points()), obs(points());
        for (std::size_t k = 0; k < points(); ++k) {
            double s = 0.0;
            for (const auto& [idx, w] : neighbours_[k]) s += w * target[offset_ + idx];
            pred[k] = s;
            obs[k] = target[offset_ + k];
        }
        const double r = pearson(pred, obs);
        return std::isfinite(r) ? r : 0.0;
    }

private:
    struct Neighbour {
        std::size_t index;
        double weight;
    };
    std::size_t offset_;
    std::vector<std::vector<Neighbour>> neighbours_;
};

inline void check_ccm(const WindowSpec& window, const CcmParams& params) {
    if (params.embedding_dim < 2) throw ConfigError("CCM embedding dimension must be at least 2");
    if (params.lag < 1) throw ConfigError("CCM lag must be at least 1");
    const std::size_t span = (params.embedding_dim - 1) * params.lag;
    // Each shadow point needs E+1 neighbours other than itself.
    if (span >= window.width || window.width - span < params.embedding_dim + 2)
        throw ConfigError("window of " + std::to_string(window.width) + " days is too short for embedding E=" +
                          std::to_string(params.embedding_dim) + ", tau=" + std::to_string(params.lag));
}

// values(i, j) = skill of cross-mapping series j from series i's manifold.
inline CorrelationMatrix ccm_corr(const ReturnMatrix& returns, const WindowSpec& window, const CcmParams& params) {
    check_window(returns, window);
    check_ccm(window, params);
    const auto cols = detail::window_columns(returns, window);
    const auto n = static_cast<Eigen::Index>(returns.cols());
    CorrelationMatrix out{Eigen::MatrixXd::Zero(n, n), window, returns.dates[window.start_index + window.width - 1], CorrKind::ccm};
    for (Eigen::Index i = 0; i < n; ++i) {
        const ShadowManifold manifold(cols[static_cast<std::size_t>(i)], params);
        for (Eigen::Index j = 0; j < n; ++j)
            if (j != i) out.values(i, j) = manifold.skill(cols[static_cast<std::size_t>(j)]);
    }
    return out;
}

inline CorrelationMatrix threshold_nonnegative(CorrelationMatrix c) {
    c.values = c.values.cwiseMax(0.0);
    return c;
}

inline WeightedDigraph to_digraph(const CorrelationMatrix& c) {
    const auto n = c.values.rows();
    if (c.values.cols() != n) throw DataError("correlation matrix is not square");
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) {
            const double v = c.values(i, j);
            if (i != j && !(v >= 0.0 && v <= 1.0))
                throw DataError("to_digraph needs a thresholded matrix; entry (" + std::to_string(i) + ", " + std::to_string(j) + ") = " + std::to_string(v));
        }
    WeightedDigraph g{static_cast<std::size_t>(n), {}, c.as_of};
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) {
            if (i == j) continue;
            if (c.kind == CorrKind::pearson && j < i) continue;
            const double w = c.values(i, j);
            if (w > 0.0) g.edges.push_back({static_cast<std::size_t>(i), static_cast<std::size_t>(j), w});
        }
    return g;
}

// Inverse of to_digraph for a given kind: the thresholded matrix.
inline Eigen::MatrixXd adjacency(const WeightedDigraph& g, CorrKind kind) {
    const auto n = static_cast<Eigen::Index>(g.n_vertices);
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n, n);
    for (const auto& e : g.edges) {
        m(static_cast<Eigen::Index>(e.source), static_cast<Eigen::Index>(e.target)) = e.weight;
        if (kind == CorrKind::pearson) m(static_cast<Eigen::Index>(e.target), static_cast<Eigen::Index>(e.source)) = e.weight;
    }
    return m;
}

struct GraphSequenceParams {
    std::size_t window = 25;
    CorrKind kind = CorrKind::ccm;
    CcmParams ccm;
};

// One thresholded graph per sliding window (stride one trading day).
inline std::vector<WeightedDigraph> build_graph_sequence(const ReturnMatrix& returns, const GraphSequenceParams& p, unsigned jobs = 1) {
    if (p.window < 3) throw ConfigError("window width must be at least 3");
    if (p.kind == CorrKind::ccm) check_ccm(WindowSpec{0, p.window}, p.ccm);
    if (returns.rows() < p.window) return {};
    const std::size_t count = returns.rows() - p.window + 1;
    std::vector<WeightedDigraph> graphs(count);
    parallel_for(count, jobs, [&](std::size_t s) {
        const WindowSpec w{s, p.window};
        auto c = p.kind == CorrKind::pearson ? pearson_corr(returns, w) : ccm_corr(returns, w, p.ccm);
        graphs[s] = to_digraph(threshold_nonnegative(std::move(c)));
    });
    return graphs;
}

}  // namespace flagcrash
