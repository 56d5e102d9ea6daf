// Acceptance checks, one line per criterion.
//
//   acceptance [--known-fail N]...
//
// Exit status is 0 when every criterion passes or fails only where listed with
// --known-fail; the FAIL line is printed either way.

#include <chrono>
#include <filesystem>
#include <iostream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "detector_oracle.hpp"
#include "flagcrash/pipeline.hpp"
#include "flagcrash/synth.hpp"
#include "grad_check.hpp"
#include "ph_oracle.hpp"

using namespace flagcrash;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int digits = 4) {
    std::ostringstream s;
    s.precision(digits);
    s << v;
    return s.str();
}

Outcome ph_oracle_suite() {
    const auto digraph = [](std::size_t n, std::vector<Edge> e) { return WeightedDigraph{n, std::move(e), Date(2020, 1, 1)}; };
    int bad_examples = 0, bad_random = 0;
    for (auto method : {ReductionMethod::cohomology, ReductionMethod::homology}) {
        const auto two = persistent_homology(build_filtration(digraph(2, {{0, 1, 0.3}})), method);
        bad_examples += !(two.finite == std::vector<Bar>{{0.0, 0.3, 0}} && two.essential == std::vector<EssentialBar>{{0.0, 0}});
        const auto cyc = persistent_homology(build_filtration(digraph(3, {{0, 1, 0.5}, {1, 2, 0.5}, {2, 0, 0.5}})), method);
        bad_examples += !(cyc.finite == std::vector<Bar>{{0.0, 0.5, 0}, {0.0, 0.5, 0}} && cyc.essential == std::vector<EssentialBar>{{0.0, 0}, {0.5, 1}});
        const auto tri = persistent_homology(build_filtration(digraph(3, {{0, 1, 0.1}, {0, 2, 0.2}, {1, 2, 0.3}})), method);
        bad_examples += !(tri.finite == std::vector<Bar>{{0.0, 0.1, 0}, {0.0, 0.2, 0}} && tri.essential == std::vector<EssentialBar>{{0.0, 0}});
    }
    std::mt19937_64 rng(2024);
    for (int rep = 0; rep < 200; ++rep) {
        const auto g = ph_oracle::random_digraph(rng, 1 + rng() % 6, 0.2 + 0.7 * (rep % 5) / 4.0, rep % 2 == 0);
        const auto want = ph_oracle::brute_force_diagram(g);
        const auto d = persistent_homology(build_filtration(g));
        bad_random += !(d.finite == want.finite && d.essential == want.essential);
    }
    return {bad_examples == 0 && bad_random == 0,
            std::to_string(bad_examples) + " example mismatches, " + std::to_string(bad_random) + "/200 oracle mismatches"};
}

Outcome h0_cross_check() {
    std::mt19937_64 rng(2025);
    int bad = 0;
    for (int rep = 0; rep < 500; ++rep) {
        const auto g = ph_oracle::random_digraph(rng, 1 + rng() % 40, 0.05 + 0.3 * (rep % 4), rep % 3 == 0);
        std::vector<double> deaths;
        for (const auto& b : persistent_homology(build_filtration(g)).finite)
            if (b.dim == 0) deaths.push_back(b.death);
        std::sort(deaths.begin(), deaths.end());
        bad += deaths != ph_oracle::union_find_deaths(g);
    }
    return {bad == 0, std::to_string(bad) + "/500 mismatches"};
}

Outcome norm_properties() {
    std::mt19937_64 rng(2026);
    std::uniform_real_distribution<double> lam(0.05, 3.0);
    int order = 0, scaling = 0;
    double worst = 0.0;
    for (int rep = 0; rep < 200; ++rep) {
        const auto g = ph_oracle::random_digraph(rng, 2 + rng() % 12, 0.3 + 0.1 * (rep % 6), rep % 2 == 0);
        const double l = lam(rng);
        auto scaled = g;
        for (auto& e : scaled.edges) e.weight *= l;
        const auto a = tda_feature(g), b = tda_feature(scaled);
        order += !(a.l1_h0 >= a.l2_h0 && a.l1_h1 >= a.l2_h1);
        const double xs[4] = {a.l1_h0, a.l2_h0, a.l1_h1, a.l2_h1}, ys[4] = {b.l1_h0, b.l2_h0, b.l1_h1, b.l2_h1};
        bool ok = true;
        for (int k = 0; k < 4; ++k) {
            const double err = std::abs(ys[k] - l * xs[k]) / std::max(1.0, xs[k]);
            worst = std::max(worst, err);
            ok = ok && err <= 1e-12;
        }
        scaling += !ok;
    }
    return {order == 0 && scaling == 0,
            std::to_string(order) + " l1<l2 cases, " + std::to_string(scaling) + "/200 scaling failures, worst rel err " + fmt(worst)};
}

Eigen::MatrixXd random_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols) {
    std::normal_distribution<double> n(0.0, 1.0);
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = n(rng);
    return m;
}

Outcome detector_oracles() {
    std::mt19937_64 rng(2027);
    int value_bad = 0, order_bad = 0;
    double worst = 0.0;
    for (int rep = 0; rep < 200; ++rep) {
        const Eigen::Index t = 6 + static_cast<Eigen::Index>(rng() % 60), d = 1 + static_cast<Eigen::Index>(rng() % 6);
        const std::size_t k = 1 + rng() % std::min<std::size_t>(static_cast<std::size_t>(t) - 1, 15);
        const Eigen::MatrixXd x = random_matrix(rng, t, d);
        detector_oracle::Rows rows(static_cast<std::size_t>(t));
        for (Eigen::Index r = 0; r < t; ++r)
            for (Eigen::Index c = 0; c < d; ++c) rows[static_cast<std::size_t>(r)].push_back(x(r, c));
        const auto got = lof(x, k), want = detector_oracle::lof(rows, k);
        double err = 0.0;
        for (std::size_t i = 0; i < got.size(); ++i) err = std::max(err, std::abs(got[i] - want[i]));
        worst = std::max(worst, err);
        value_bad += err > 1e-9;
        order_bad += !detector_oracle::same_ordering(got, want);
    }

    // Rows +-sqrt((2d-1)/2) Q for orthogonal Q have mean zero and covariance exactly I.
    // The ridge shrinks every score by about 5e-7 |x|, so the 1e-6 bound only
    // holds for |x| < 2, i.e. d <= 4 here; ridge-free scores are checked at 1e-12.
    double maha_err = 0.0, exact_err = 0.0;
    for (Eigen::Index d = 2; d <= 6; ++d) {
        const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(random_matrix(rng, d, d)).householderQ();
        Eigen::MatrixXd x(2 * d, d);
        x << q * std::sqrt((2.0 * d - 1.0) / 2.0), -q * std::sqrt((2.0 * d - 1.0) / 2.0);
        const auto s = mahalanobis(x);
        const auto s0 = mahalanobis(x, 0.0);
        for (Eigen::Index r = 0; r < x.rows(); ++r) {
            const auto i = static_cast<std::size_t>(r);
            if (d <= 4) maha_err = std::max(maha_err, std::abs(s[i] - x.row(r).norm()));
            exact_err = std::max(exact_err, std::abs(s0[i] - x.row(r).norm()));
        }
    }
    return {value_bad == 0 && order_bad == 0 && maha_err <= 1e-6 && exact_err <= 1e-12,
            "LOF " + std::to_string(value_bad) + "/200 value and " + std::to_string(order_bad) + "/200 ordering mismatches (worst " + fmt(worst) +
                "), Mahalanobis vs Euclidean worst " + fmt(maha_err) + " (ridge-free " + fmt(exact_err) + ")"};
}

WeightedDigraph random_digraph(std::mt19937_64& rng, std::size_t n, double density) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    WeightedDigraph g{n, {}, Date(2020, 1, 1)};
    for (std::size_t a = 0; a < n; ++a)
        for (std::size_t b = 0; b < n; ++b)
            if (a != b && u(rng) < density) g.edges.push_back({a, b, 0.05 + 0.95 * u(rng)});
    return g;
}

// A step of 1e-5 can straddle a ReLU kink in the deeper models; 1e-7 keeps
// rounding near 1e-9 relative while stepping over far fewer kinks.
constexpr double kFdStep = 1e-7;

Outcome gradient_checks() {
    using namespace gnn;
    double worst_layer = 0.0, worst_oc = 0.0, worst_kd = 0.0;
    for (int seed = 0; seed < 50; ++seed) {
        std::mt19937_64 rng(static_cast<unsigned>(5000 + seed));
        std::vector<AttributedGraph> gs;
        for (int i = 0; i < 3; ++i) gs.push_back(attribute_graph(random_digraph(rng, 3 + rng() % 7, 0.5)));
        std::vector<std::size_t> members(gs.size());
        std::iota(members.begin(), members.end(), 0);
        const auto batch = make_batch(gs, members);
        const std::size_t layers = 2 + static_cast<std::size_t>(seed % 2);
        auto model = init_gine({2, 1, 6, layers}, rng);
        model.layers[0].eps.mutable_data()[0] = 0.2;
        const auto& l0 = model.layers[0];
        worst_layer = std::max(worst_layer, grad_check::compare({l0.eps, l0.edge_proj, l0.w1, l0.w2}, [&] {
                                                 return ad::squared_norm(gine_layer(l0, batch.x, batch));
                                             }, kFdStep).relative());
        std::vector<double> center(model.embedding_dim());
        for (auto& c : center) c = std::uniform_real_distribution<double>(-1, 1)(rng);
        worst_oc = std::max(worst_oc, grad_check::compare(model.parameters(), [&] { return ocgin_loss(model, center, batch); }, kFdStep).relative());
        const auto teacher = init_gine({2, 1, 6, layers}, rng, false);
        const double lambda = 0.1 + 0.8 * (seed % 3) / 2.0;
        worst_kd = std::max(worst_kd, grad_check::compare(model.parameters(), [&] { return glocal_loss(teacher, model, lambda, batch); }, kFdStep).relative());
    }
    return {worst_layer < 1e-4 && worst_oc < 1e-4 && worst_kd < 1e-4,
            "worst relative error: layer " + fmt(worst_layer) + ", one-class " + fmt(worst_oc) + ", distillation " + fmt(worst_kd)};
}

Outcome collapse_and_determinism() {
    using namespace gnn;
    std::mt19937_64 rng(2028);
    std::vector<AttributedGraph> gs;
    for (int i = 0; i < 100; ++i) gs.push_back(attribute_graph(random_digraph(rng, 4 + rng() % 17, 0.05 + 0.009 * i)));
    OcginConfig cfg;
    cfg.schedule.seed = 11;
    const auto a = ocgin_train(gs, cfg), b = ocgin_train(gs, cfg);
    const auto sa = ocgin_scores(a, gs), sb = ocgin_scores(b, gs);
    const double mean = std::accumulate(sa.begin(), sa.end(), 0.0) / static_cast<double>(sa.size());
    double var = 0.0;
    for (double s : sa) var += (s - mean) * (s - mean) / static_cast<double>(sa.size());
    const bool same = sa == sb && a.model.checksum() == b.model.checksum() && a.loss_history == b.loss_history;
    return {var > 1e-8 && same, "score variance " + fmt(var) + ", reruns " + (same ? "bit-identical" : "differ")};
}

Outcome threshold_contract() {
    std::mt19937_64 rng(2029);
    AnomalySeries s;
    const auto days = business_days(Date(2010, 1, 4), 200);
    std::set<double> seen;
    while (seen.size() < 200) seen.insert(std::uniform_real_distribution<double>(-5, 5)(rng));
    s.scores.assign(seen.begin(), seen.end());
    std::shuffle(s.scores.begin(), s.scores.end(), rng);
    s.dates = days;
    const auto flags = threshold_anomalies(s, 97.5);
    return {flags.size() == 5, std::to_string(flags.size()) + " of 200 flagged"};
}

Outcome synthetic_end_to_end(const fs::path& work) {
    SyntheticConfig sc;
    sc.n_stocks = 20;
    sc.n_days = 1500;
    sc.episodes = spread_episodes(sc.n_days, 3, 20, 0.8);
    const auto data = make_synthetic(sc, 7);
    fs::create_directories(work);
    text::write_file((work / "prices.csv").string(), serialize_price_csv(data.prices));
    text::write_file((work / "events.csv").string(), serialize_events_csv(data.events));
    const auto cfg = parse_config(
        "[data]\nprices = prices.csv\nevents = events.csv\nstart = 1999-01-01\nend = 2030-01-01\n"
        "[graphs]\nwindow = 25\n[tda]\nnorms = l1\n[pca]\ndims = raw\n[detectors]\nmahalanobis = true\nlof_k =\n[run]\noutput = runs\nseed = 7\n",
        work);
    const auto out = run_pipeline(cfg);
    const DetectionReport* tda = nullptr;
    const DetectionReport* pca = nullptr;
    for (const auto& r : out.results) {
        if (r.method == "tda-l1_mahalanobis") tda = &r.report;
        if (r.method == "pca-raw_mahalanobis") pca = &r.report;
    }
    if (!tda || !pca) return {false, "missing result rows"};
    const bool ok = tda->recall == 1.0 && tda->precision >= 0.5 && pca->recall >= 2.0 / 3.0;
    return {ok, "TDA-L1 precision " + fmt(tda->precision) + " recall " + fmt(tda->recall) + " (need >= 0.5, 1.0); PCA-raw recall " + fmt(pca->recall) +
                    " (need >= 0.6667); run dir " + out.dir.filename().string()};
}

}  // namespace

int main(int argc, char** argv) {
    std::set<int> known_fail;
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--known-fail" && i + 1 < argc) {
            known_fail.insert(std::stoi(argv[++i]));
        } else {
            std::cerr << "usage: acceptance [--known-fail N]...\n";
            return 2;
        }
    }

    const auto work = fs::temp_directory_path() / ("flagcrash-acceptance-" + std::to_string(std::random_device{}()));
    struct Criterion {
        int id;
        std::string name;
        double limit_s;  // 0: no runtime bound
        std::function<Outcome()> run;
    };
    const std::vector<Criterion> criteria{
        {1, "PH oracle suite", 30, ph_oracle_suite},
        {2, "H0 union-find cross-check", 60, h0_cross_check},
        {3, "norm properties", 0, norm_properties},
        {4, "detector oracles", 0, detector_oracles},
        {5, "gradient checks", 120, gradient_checks},
        {6, "non-collapse and determinism", 0, collapse_and_determinism},
        {7, "threshold contract", 0, threshold_contract},
        {8, "synthetic end-to-end", 300, [&] { return synthetic_end_to_end(work); }},
    };

    int unexpected = 0;
    for (const auto& c : criteria) {
        const auto t0 = Clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        const double secs = seconds_since(t0);
        if (c.limit_s > 0 && secs >= c.limit_s) {
            o.pass = false;
            o.detail += "; runtime over " + fmt(c.limit_s) + " s";
        }
        const bool known = !o.pass && known_fail.count(c.id);
        std::cout << (o.pass ? "PASS" : "FAIL") << " [" << c.id << "] " << c.name << ": " << o.detail << " (" << fmt(secs, 3) << " s)"
                  << (known ? " [known failure]" : "") << std::endl;
        unexpected += !o.pass && !known;
    }
    std::cout << "SKIP [9] paper-scale reproduction: needs a user-supplied TSX-60 price snapshot; documentation only" << std::endl;

    std::error_code ec;
    fs::remove_all(work, ec);
    return unexpected == 0 ? 0 : 1;
}
