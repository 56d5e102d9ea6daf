#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "flagcrash/date.hpp"
#include "flagcrash/error.hpp"
#include "flagcrash/features.hpp"
#include "flagcrash/parallel.hpp"

namespace flagcrash {

// Per-graph scores, higher is more anomalous.
struct AnomalySeries {
    std::vector<Date> dates;
    std::vector<double> scores;
    std::string method;
};

inline constexpr double kMahalanobisRidge = 1e-6;

// Distance of each row to the sample mean under the ridge-regularised sample
// covariance Sigma + ridge * (trace(Sigma) / d) * I.
inline std::vector<double> mahalanobis(const Eigen::MatrixXd& x, double ridge = kMahalanobisRidge) {
    const auto t = x.rows(), d = x.cols();
    if (d == 0) throw DataError("Mahalanobis distance needs at least one feature");
    if (t < 2) throw DataError("Mahalanobis distance needs at least two rows");
    const Eigen::RowVectorXd mu = x.colwise().mean();
    const Eigen::MatrixXd centred = x.rowwise() - mu;
    Eigen::MatrixXd cov = (centred.transpose() * centred) / static_cast<double>(t - 1);
    const double trace = cov.trace();
    if (!(trace > 0.0)) return std::vector<double>(static_cast<std::size_t>(t), 0.0);
    cov.diagonal().array() += ridge * trace / static_cast<double>(d);

    const Eigen::LDLT<Eigen::MatrixXd> ldlt(cov);
    if (ldlt.info() != Eigen::Success) throw DataError("covariance factorisation failed");
    const Eigen::MatrixXd solved = ldlt.solve(centred.transpose());  // d x T
    std::vector<double> out(static_cast<std::size_t>(t));
    for (Eigen::Index r = 0; r < t; ++r) out[static_cast<std::size_t>(r)] = std::sqrt(std::max(0.0, centred.row(r).dot(solved.col(r))));
    return out;
}

inline AnomalySeries mahalanobis_scores(const FeatureTable& f) {
    return {f.dates, mahalanobis(f.values), "mahalanobis"};
}

// Floor on the mean reachability distance, relative to the data diameter.
// Points inside a cluster of more than k exact duplicates hit the floor and
// score 1 against each other.
inline constexpr double kLofReachFloor = 1e-10;

// Local Outlier Factor for several neighbour counts from one distance pass.
// The k-neighbourhood of a point includes every point tied at its k-distance.
inline std::vector<std::vector<double>> lof_many(const Eigen::MatrixXd& x, const std::vector<std::size_t>& ks, unsigned jobs = 1) {
    const auto t = static_cast<std::size_t>(x.rows());
    if (t < 2) throw DataError("LOF needs at least two rows");
    std::size_t k_max = 0;
    for (auto k : ks) {
        if (k < 1 || k >= t) throw ConfigError("LOF neighbour count k=" + std::to_string(k) + " outside [1, " + std::to_string(t - 1) + "]");
        k_max = std::max(k_max, k);
    }

    // Per point: distances to its nearest neighbours (ascending, index on
    // ties), through every point tied with the k_max-th.
    std::vector<std::vector<std::pair<double, std::size_t>>> nearest(t);
    std::vector<double> row_max(t, 0.0);
    parallel_for(t, jobs, [&](std::size_t a) {
        std::vector<std::pair<double, std::size_t>> dist;
        dist.reserve(t - 1);
        for (std::size_t b = 0; b < t; ++b) {
            if (b == a) continue;
            const double dd = (x.row(static_cast<Eigen::Index>(a)) - x.row(static_cast<Eigen::Index>(b))).norm();
            dist.emplace_back(dd, b);
            row_max[a] = std::max(row_max[a], dd);
        }
        std::nth_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k_max - 1), dist.end());
        const double kd = dist[k_max - 1].first;
        auto keep_end = std::partition(dist.begin(), dist.end(), [kd](const auto& p) { return p.first <= kd; });
        dist.erase(keep_end, dist.end());
        std::sort(dist.begin(), dist.end());
        nearest[a] = std::move(dist);
    });

    const double diameter = *std::max_element(row_max.begin(), row_max.end());
    std::vector<std::vector<double>> results;
    for (auto k : ks) {
        if (diameter == 0.0) {
            results.emplace_back(t, 1.0);
            continue;
        }
        const double floor = kLofReachFloor * diameter;
        std::vector<double> k_distance(t);
        std::vector<std::size_t> hood_size(t);
        for (std::size_t a = 0; a < t; ++a) {
            const auto& nb = nearest[a];
            k_distance[a] = nb[k - 1].first;
            std::size_t m = k;
            while (m < nb.size() && nb[m].first <= k_distance[a]) ++m;
            hood_size[a] = m;
        }
        std::vector<double> mean_reach(t);
        for (std::size_t a = 0; a < t; ++a) {
            double s = 0.0;
            for (std::size_t i = 0; i < hood_size[a]; ++i) {
                const auto& [dd, b] = nearest[a][i];
                s += std::max(k_distance[b], dd);
            }
            mean_reach[a] = std::max(s / static_cast<double>(hood_size[a]), floor);
        }
        std::vector<double> out(t);
        for (std::size_t a = 0; a < t; ++a) {
            // lrd(b) / lrd(a) = mean_reach(a) / mean_reach(b)
            double s = 0.0;
            for (std::size_t i = 0; i < hood_size[a]; ++i) s += mean_reach[a] / mean_reach[nearest[a][i].second];
            out[a] = s / static_cast<double>(hood_size[a]);
        }
        results.push_back(std::move(out));
    }
    return results;
}

inline std::vector<double> lof(const Eigen::MatrixXd& x, std::size_t k, unsigned jobs = 1) {
    return std::move(lof_many(x, {k}, jobs).front());
}

inline AnomalySeries lof_scores(const FeatureTable& f, std::size_t k, unsigned jobs = 1) {
    return {f.dates, lof(f.values, k, jobs), "lof-k" + std::to_string(k)};
}

}  // namespace flagcrash
