#include <algorithm>
#include <random>

#include <gtest/gtest.h>

#include "detector_oracle.hpp"
#include "flagcrash/detectors.hpp"

using namespace flagcrash;

namespace {

detector_oracle::Rows rows_of(const Eigen::MatrixXd& x) {
    detector_oracle::Rows out(static_cast<std::size_t>(x.rows()));
    for (Eigen::Index r = 0; r < x.rows(); ++r)
        for (Eigen::Index c = 0; c < x.cols(); ++c) out[static_cast<std::size_t>(r)].push_back(x(r, c));
    return out;
}

Eigen::MatrixXd grid(int side) {
    Eigen::MatrixXd x(side * side, 2);
    for (int i = 0; i < side; ++i)
        for (int j = 0; j < side; ++j) x.row(i * side + j) << i, j;
    return x;
}

Eigen::MatrixXd random_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols) {
    std::normal_distribution<double> n(0.0, 1.0);
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = n(rng);
    return m;
}

Eigen::MatrixXd random_orthogonal(std::mt19937_64& rng, Eigen::Index d) {
    return Eigen::HouseholderQR<Eigen::MatrixXd>(random_matrix(rng, d, d)).householderQ();
}

}  // namespace

TEST(Mahalanobis, Examples) {
    Eigen::MatrixXd x(5, 1);
    x << 0, 0, 0, 0, 10;
    const auto s = mahalanobis(x);
    EXPECT_EQ(std::max_element(s.begin(), s.end()) - s.begin(), 4);
    for (int i = 0; i < 4; ++i) EXPECT_LT(s[static_cast<std::size_t>(i)], s[4]);

    // Symmetric pair around a centre point: the centre sits on the mean.
    Eigen::MatrixXd y(3, 2);
    y << -1, 2, 0, 0, 1, -2;
    EXPECT_NEAR(mahalanobis(y)[1], 0.0, 1e-15);
}

TEST(Mahalanobis, IdentityCovarianceGivesEuclidean) {
    // Rows of sqrt(T-1) * Q for orthogonal Q, centred by symmetry: covariance is exactly I.
    std::mt19937_64 rng(9);
    const Eigen::Index d = 4;
    const Eigen::MatrixXd q = random_orthogonal(rng, d) * std::sqrt(2.0 * d - 1.0) / std::sqrt(2.0);
    Eigen::MatrixXd x(2 * d, d);
    x << q, -q;
    const Eigen::VectorXd offset = Eigen::VectorXd::LinSpaced(d, 1.0, 4.0);
    x.rowwise() += offset.transpose();
    const auto s = mahalanobis(x);
    for (Eigen::Index r = 0; r < x.rows(); ++r) EXPECT_NEAR(s[static_cast<std::size_t>(r)], (x.row(r) - offset.transpose()).norm(), 1e-6);
}

TEST(Mahalanobis, MatchesGaussJordanOracle) {
    std::mt19937_64 rng(10);
    for (int rep = 0; rep < 200; ++rep) {
        const Eigen::Index t = 5 + static_cast<Eigen::Index>(rng() % 40), d = 1 + static_cast<Eigen::Index>(rng() % 6);
        const Eigen::MatrixXd x = random_matrix(rng, t, d);
        const auto got = mahalanobis(x), want = detector_oracle::mahalanobis(rows_of(x));
        for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-9 * std::max(1.0, want[i]));
        EXPECT_TRUE(detector_oracle::same_ordering(got, want)) << "instance " << rep;
    }
}

TEST(Mahalanobis, OrthogonalAndTranslationInvariant) {
    std::mt19937_64 rng(11);
    for (int rep = 0; rep < 50; ++rep) {
        const Eigen::Index d = 1 + static_cast<Eigen::Index>(rng() % 6);
        const Eigen::MatrixXd x = random_matrix(rng, 30, d);
        const Eigen::MatrixXd moved = (x * random_orthogonal(rng, d)).rowwise() + random_matrix(rng, 1, d).row(0) * 5.0;
        const auto a = mahalanobis(x), b = mahalanobis(moved);
        for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-8);
    }
}

TEST(Mahalanobis, DegenerateInputs) {
    EXPECT_THROW(mahalanobis(Eigen::MatrixXd(3, 0)), DataError);
    EXPECT_THROW(mahalanobis(Eigen::MatrixXd::Zero(1, 2)), DataError);
    EXPECT_EQ(mahalanobis(Eigen::MatrixXd::Ones(4, 3)), std::vector<double>(4, 0.0));
    // Near-singular wide data stays finite thanks to the ridge.
    std::mt19937_64 rng(12);
    const auto s = mahalanobis(random_matrix(rng, 10, 50));
    for (double v : s) EXPECT_TRUE(std::isfinite(v));
}

TEST(Lof, GridInteriorNearOne) {
    const auto x = grid(10);
    const auto s = lof(x, 5);
    for (int i = 1; i < 9; ++i)
        for (int j = 1; j < 9; ++j) {
            const double v = s[static_cast<std::size_t>(i * 10 + j)];
            EXPECT_GE(v, 0.9) << i << "," << j;
            EXPECT_LE(v, 1.1) << i << "," << j;
        }
}

TEST(Lof, DistantPointIsOutlier) {
    Eigen::MatrixXd x(101, 2);
    x.topRows(100) = grid(10);
    x.row(100) << 9 + 10, 9;
    const auto s = lof(x, 5);
    EXPECT_GT(s[100], 1.5);
    EXPECT_EQ(std::max_element(s.begin(), s.end()) - s.begin(), 100);
}

TEST(Lof, DuplicatesScoreOne) {
    EXPECT_EQ(lof(Eigen::MatrixXd::Constant(6, 3, 2.5), 3), std::vector<double>(6, 1.0));
    // A cluster of more than k duplicates next to a far point.
    Eigen::MatrixXd x = Eigen::MatrixXd::Zero(7, 1);
    x(6, 0) = 4.0;
    const auto s = lof(x, 2);
    for (int i = 0; i < 6; ++i) EXPECT_DOUBLE_EQ(s[static_cast<std::size_t>(i)], 1.0);
    EXPECT_GT(s[6], 1e6);
}

TEST(Lof, Errors) {
    EXPECT_THROW(lof(Eigen::MatrixXd::Zero(1, 2), 1), DataError);
    EXPECT_THROW(lof(Eigen::MatrixXd::Random(5, 2), 0), ConfigError);
    EXPECT_THROW(lof(Eigen::MatrixXd::Random(5, 2), 5), ConfigError);
}

TEST(Lof, MatchesBruteForceOracle) {
    std::mt19937_64 rng(13);
    for (int rep = 0; rep < 200; ++rep) {
        const Eigen::Index t = 6 + static_cast<Eigen::Index>(rng() % 50), d = 1 + static_cast<Eigen::Index>(rng() % 5);
        const std::size_t k = 1 + rng() % std::min<std::size_t>(static_cast<std::size_t>(t) - 1, 12);
        const Eigen::MatrixXd x = random_matrix(rng, t, d);
        const auto got = lof(x, k), want = detector_oracle::lof(rows_of(x), k);
        for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-9) << "instance " << rep;
        EXPECT_TRUE(detector_oracle::same_ordering(got, want)) << "instance " << rep;
    }
}

TEST(Lof, MatchesOracleUnderTies) {
    // Integer lattice points: many equal distances and duplicate rows.
    std::mt19937_64 rng(14);
    for (int rep = 0; rep < 200; ++rep) {
        const Eigen::Index t = 6 + static_cast<Eigen::Index>(rng() % 30), d = 1 + static_cast<Eigen::Index>(rng() % 3);
        Eigen::MatrixXd x(t, d);
        for (Eigen::Index i = 0; i < t; ++i)
            for (Eigen::Index j = 0; j < d; ++j) x(i, j) = static_cast<double>(rng() % 4);
        const std::size_t k = 1 + rng() % 5;
        const auto got = lof(x, k), want = detector_oracle::lof(rows_of(x), k);
        for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-9 * std::max(1.0, want[i])) << "instance " << rep;
        EXPECT_TRUE(detector_oracle::same_ordering(got, want)) << "instance " << rep;
    }
}

TEST(Lof, ManyKsMatchSingleRunsAndThreads) {
    std::mt19937_64 rng(15);
    const Eigen::MatrixXd x = random_matrix(rng, 80, 3);
    const std::vector<std::size_t> ks{5, 10, 15, 20, 25, 30};
    const auto many = lof_many(x, ks, 4);
    for (std::size_t i = 0; i < ks.size(); ++i) EXPECT_EQ(many[i], lof(x, ks[i], 1));
}

TEST(Lof, TranslationAndScaleInvariant) {
    std::mt19937_64 rng(16);
    std::uniform_real_distribution<double> scale(0.01, 100.0);
    for (int rep = 0; rep < 50; ++rep) {
        const Eigen::MatrixXd x = random_matrix(rng, 40, 3);
        const double s = scale(rng);
        const Eigen::MatrixXd moved = (x * s).rowwise() + random_matrix(rng, 1, 3).row(0) * 10.0;
        const auto a = lof(x, 7), b = lof(moved, 7);
        for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-9);
    }
}

TEST(Scores, CarryDatesAndMethod) {
    FeatureTable f{{Date(2020, 1, 1), Date(2020, 1, 2), Date(2020, 1, 3)}, {"a"}, Eigen::MatrixXd(3, 1)};
    f.values << 1, 2, 4;
    const auto m = mahalanobis_scores(f);
    EXPECT_EQ(m.dates, f.dates);
    EXPECT_EQ(m.method, "mahalanobis");
    const auto l = lof_scores(f, 1);
    EXPECT_EQ(l.method, "lof-k1");
    EXPECT_EQ(l.scores.size(), 3u);
}
