#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "flagcrash/corrnet.hpp"
#include "flagcrash/date.hpp"
#include "flagcrash/error.hpp"

namespace flagcrash {

struct FeatureVector {
    Date as_of;
    Eigen::VectorXd values;
};

// Dated feature rows, one per graph.
struct FeatureTable {
    std::vector<Date> dates;
    std::vector<std::string> columns;
    Eigen::MatrixXd values;  // T x d
};

inline FeatureVector flatten(const CorrelationMatrix& c) {
    const auto n = c.values.rows();
    FeatureVector v{c.as_of, Eigen::VectorXd(n * c.values.cols())};
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < c.values.cols(); ++j) v.values(i * c.values.cols() + j) = c.values(i, j);
    return v;
}

// Flattened thresholded matrices of a graph sequence, one row per graph.
inline FeatureTable flatten_graphs(const std::vector<WeightedDigraph>& graphs, CorrKind kind) {
    FeatureTable t;
    if (graphs.empty()) return t;
    const auto n = static_cast<Eigen::Index>(graphs.front().n_vertices);
    t.values.resize(static_cast<Eigen::Index>(graphs.size()), n * n);
    for (std::size_t r = 0; r < graphs.size(); ++r) {
        if (static_cast<Eigen::Index>(graphs[r].n_vertices) != n) throw DataError("graphs in a sequence must share a vertex count");
        CorrelationMatrix c{adjacency(graphs[r], kind), {}, graphs[r].as_of, kind};
        t.values.row(static_cast<Eigen::Index>(r)) = flatten(c).values.transpose();
        t.dates.push_back(graphs[r].as_of);
    }
    for (Eigen::Index i = 0; i < n * n; ++i) t.columns.push_back("x" + std::to_string(i + 1));
    return t;
}

struct PcaModel {
    Eigen::VectorXd mean;                // D
    Eigen::MatrixXd components;          // d x D, orthonormal rows
    Eigen::VectorXd explained_variance;  // d, nonincreasing

    std::size_t input_dim() const { return static_cast<std::size_t>(mean.size()); }
    std::size_t output_dim() const { return static_cast<std::size_t>(components.rows()); }

    // Raw features: no centring, no projection.
    static PcaModel identity(std::size_t dim) {
        const auto d = static_cast<Eigen::Index>(dim);
        return {Eigen::VectorXd::Zero(d), Eigen::MatrixXd::Identity(d, d), Eigen::VectorXd::Zero(d)};
    }
};

inline PcaModel fit_pca(const Eigen::MatrixXd& data, std::size_t d) {
    const auto t = data.rows(), dim = data.cols();
    if (t < 2) throw DataError("PCA needs at least two rows");
    if (d < 1 || static_cast<Eigen::Index>(d) > std::min(t, dim))
        throw ConfigError("PCA target dimension " + std::to_string(d) + " outside [1, " + std::to_string(std::min(t, dim)) + "]");

    PcaModel model;
    model.mean = data.colwise().mean().transpose();
    const Eigen::MatrixXd centred = data.rowwise() - model.mean.transpose();
    Eigen::BDCSVD<Eigen::MatrixXd> svd(centred, Eigen::ComputeThinV);
    const auto k = static_cast<Eigen::Index>(d);
    model.components = svd.matrixV().leftCols(k).transpose();
    model.explained_variance = svd.singularValues().head(k).array().square() / static_cast<double>(t - 1);

    // Largest-magnitude entry of each component is positive (first on ties).
    for (Eigen::Index r = 0; r < k; ++r) {
        Eigen::Index arg = 0;
        model.components.row(r).cwiseAbs().maxCoeff(&arg);
        if (model.components(r, arg) < 0.0) model.components.row(r) *= -1.0;
    }
    return model;
}

inline FeatureVector project(const PcaModel& model, const FeatureVector& v) {
    if (static_cast<std::size_t>(v.values.size()) != model.input_dim())
        throw DataError("projection input has dimension " + std::to_string(v.values.size()) + ", model expects " +
                        std::to_string(model.input_dim()));
    return {v.as_of, model.components * (v.values - model.mean)};
}

inline FeatureTable project_table(const PcaModel& model, const FeatureTable& table) {
    if (static_cast<std::size_t>(table.values.cols()) != model.input_dim()) throw DataError("feature table dimension does not match PCA model");
    FeatureTable out;
    out.dates = table.dates;
    out.values = (table.values.rowwise() - model.mean.transpose()) * model.components.transpose();
    for (std::size_t i = 0; i < model.output_dim(); ++i) out.columns.push_back("c" + std::to_string(i + 1));
    return out;
}

}  // namespace flagcrash
