#pragma once

// The full analysis driven by one INI file: ingest -> graphs -> {tda, pca,
// gnn} -> detectors -> evaluation, written into a fresh run directory.

#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <functional>
#include <optional>
#include <type_traits>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <nlohmann/json.hpp>

#include "flagcrash/corrnet.hpp"
#include "flagcrash/detectors.hpp"
#include "flagcrash/error.hpp"
#include "flagcrash/eval.hpp"
#include "flagcrash/features.hpp"
#include "flagcrash/gnn.hpp"
#include "flagcrash/graph_archive.hpp"
#include "flagcrash/ingest.hpp"
#include "flagcrash/parallel.hpp"
#include "flagcrash/ph.hpp"
#include "flagcrash/tables.hpp"
#include "flagcrash/text.hpp"

namespace flagcrash {

inline constexpr const char* kVersion = "0.1.0";

// ---- building blocks shared with the standalone commands -----------------

inline const std::vector<std::string>& tda_norm_columns(const std::string& norm) {
    static const std::vector<std::string> l1{"l1_h0", "l1_h1"}, l2{"l2_h0", "l2_h1"};
    if (norm == "l1") return l1;
    if (norm == "l2") return l2;
    throw ConfigError("unknown TDA norm '" + norm + "' (expected l1 or l2)");
}

// "raw" (flattened thresholded matrices) or a PCA dimension.
inline FeatureTable pca_features(const std::vector<WeightedDigraph>& graphs, CorrKind kind, const std::string& dim) {
    auto flat = flatten_graphs(graphs, kind);
    if (dim == "raw") return flat;
    std::size_t d = 0;
    try {
        std::size_t used = 0;
        d = std::stoul(dim, &used);
        if (used != dim.size()) throw std::invalid_argument(dim);
    } catch (const std::logic_error&) {
        throw ConfigError("PCA dimension must be 'raw' or a positive integer, got '" + dim + "'");
    }
    return project_table(fit_pca(flat.values, d), flat);
}

inline AnomalySeries score_features(const FeatureTable& f, const std::string& method, std::size_t lof_k, unsigned jobs = 1) {
    if (method == "mahalanobis") return mahalanobis_scores(f);
    if (method == "lof") return lof_scores(f, lof_k, jobs);
    throw ConfigError("unknown detector '" + method + "' (expected mahalanobis or lof)");
}

struct GnnRun {
    std::string model = "ocgin";
    double lr = 0.001;
    double weight_decay = 1e-4;  // one-class model only
    double lambda = 0.1;         // distillation only
    std::size_t layers = 3;
    std::size_t hidden = 10;
    std::size_t batch = 50;
    std::size_t epochs = 150;
    std::uint64_t seed = 7;

    std::string name() const {
        const auto f = [](double v) { return text::format(v, 6); };
        const std::string shape = "_b" + std::to_string(batch) + "_L" + std::to_string(layers) + "_h" + std::to_string(hidden);
        if (model == "ocgin") return "ocgin_lr" + f(lr) + "_wd" + f(weight_decay) + shape;
        return "glocalkd_lr" + f(lr) + "_lam" + f(lambda) + shape;
    }
};

inline AnomalySeries gnn_scores(const std::vector<WeightedDigraph>& graphs, const GnnRun& run, gnn::Checkpoint* checkpoint = nullptr) {
    const auto attributed = gnn::attribute_graphs(graphs);
    gnn::TrainSchedule schedule;
    schedule.lr = run.lr;
    schedule.batch_size = run.batch;
    schedule.epochs = run.epochs;
    schedule.seed = run.seed;
    AnomalySeries out;
    out.method = run.name();
    for (const auto& g : graphs) out.dates.push_back(g.as_of);
    if (run.model == "ocgin") {
        const auto state = gnn::ocgin_train(attributed, {schedule, run.weight_decay, run.layers, run.hidden});
        out.scores = gnn::ocgin_scores(state, attributed);
        if (checkpoint) *checkpoint = gnn::to_checkpoint(state);
    } else if (run.model == "glocalkd") {
        const auto state = gnn::glocalkd_train(attributed, {schedule, run.layers, run.hidden, run.lambda});
        out.scores = gnn::glocalkd_scores(state, attributed);
        if (checkpoint) *checkpoint = gnn::to_checkpoint(state);
    } else {
        throw ConfigError("unknown model '" + run.model + "' (expected ocgin or glocalkd)");
    }
    return out;
}

// ---- configuration --------------------------------------------------------

struct PipelineConfig {
    std::string prices_path;
    std::string events_path;
    Date start{2005, 1, 1};
    Date end{2021, 12, 31};
    double min_coverage = 1.0;

    GraphSequenceParams graphs;

    bool tda = true;
    std::vector<std::string> tda_norms{"l1", "l2"};
    EssentialPolicy essential = EssentialPolicy::drop;

    std::vector<std::string> pca_dims{"raw", "10", "100"};

    bool mahalanobis = true;
    std::vector<std::size_t> lof_k{5, 10, 15, 20, 25, 30};

    bool ocgin = false;
    std::vector<double> ocgin_lr{1e-2, 1e-3, 1e-4, 1e-5};
    std::vector<double> ocgin_weight_decay{1e-3, 1e-4, 1e-5, 1e-6};
    std::vector<std::size_t> ocgin_batch{25, 50, 100};
    std::vector<std::size_t> ocgin_layers{2, 3};
    std::size_t ocgin_hidden = 10;
    std::size_t ocgin_epochs = 150;

    bool glocalkd = false;
    std::vector<double> glocalkd_lr{1e-2, 1e-3, 1e-4, 1e-5};
    std::vector<std::size_t> glocalkd_batch{25, 50, 100};
    std::vector<std::size_t> glocalkd_layers{2, 3};
    std::vector<double> glocalkd_lambda{0.1, 0.5, 0.9};
    std::size_t glocalkd_hidden = 10;
    std::size_t glocalkd_epochs = 150;

    double percentile = kDefaultPercentile;
    std::size_t lookback = kDefaultLookback;
    std::string output_dir = "runs";
    std::uint64_t seed = 7;

    std::vector<GnnRun> gnn_runs() const {
        std::vector<GnnRun> runs;
        if (ocgin)
            for (auto lr : ocgin_lr)
                for (auto wd : ocgin_weight_decay)
                    for (auto b : ocgin_batch)
                        for (auto l : ocgin_layers) runs.push_back({"ocgin", lr, wd, 0.0, l, ocgin_hidden, b, ocgin_epochs, seed});
        if (glocalkd)
            for (auto lr : glocalkd_lr)
                for (auto lam : glocalkd_lambda)
                    for (auto b : glocalkd_batch)
                        for (auto l : glocalkd_layers) runs.push_back({"glocalkd", lr, 0.0, lam, l, glocalkd_hidden, b, glocalkd_epochs, seed});
        return runs;
    }

    bool any_detector() const { return mahalanobis || !lof_k.empty(); }
};

namespace detail {

template <typename T>
std::vector<T> parse_list(const std::string& key, const std::string& value) {
    std::vector<T> out;
    if (text::trim(value).empty()) return out;
    for (auto item : text::split(value)) {
        if constexpr (std::is_same_v<T, std::string>) {
            out.emplace_back(item);
        } else {
            const auto v = text::to_double(item);
            if (!v) throw ConfigError("'" + key + "': bad number '" + std::string(item) + "'");
            if constexpr (std::is_integral_v<T>) {
                if (*v < 0 || *v != std::floor(*v)) throw ConfigError("'" + key + "': expected a non-negative integer, got '" + std::string(item) + "'");
                out.push_back(static_cast<T>(*v));
            } else {
                out.push_back(*v);
            }
        }
    }
    return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "yes" || v == "1" || v == "on") return true;
    if (v == "false" || v == "no" || v == "0" || v == "off") return false;
    throw ConfigError("'" + key + "': expected true or false, got '" + v + "'");
}

class IniReader {
public:
    explicit IniReader(const boost::property_tree::ptree& tree) : tree_(tree) {}

    std::optional<std::string> get(const std::string& key) const {
        const auto v = tree_.get_optional<std::string>(key);
        if (!v) return std::nullopt;
        return std::string(text::trim(*v));
    }

    template <typename T>
    void read(const std::string& key, T& out) const {
        const auto v = get(key);
        if (!v) return;
        if constexpr (std::is_same_v<T, bool>) {
            out = parse_bool(key, *v);
        } else if constexpr (std::is_same_v<T, std::string>) {
            out = *v;
        } else if constexpr (std::is_same_v<T, Date>) {
            try {
                out = Date::parse(*v);
            } catch (const ParseError& e) {
                throw ConfigError("'" + key + "': " + e.what());
            }
        } else if constexpr (std::is_arithmetic_v<T>) {
            const auto list = parse_list<T>(key, *v);
            if (list.size() != 1) throw ConfigError("'" + key + "': expected a single value");
            out = list.front();
        } else {
            out = parse_list<typename T::value_type>(key, *v);
        }
    }

private:
    const boost::property_tree::ptree& tree_;
};

}  // namespace detail

// Relative data paths resolve against `base_dir`.
inline PipelineConfig parse_config(const std::string& ini_text, const std::filesystem::path& base_dir = ".") {
    boost::property_tree::ptree tree;
    try {
        std::istringstream in(ini_text);
        boost::property_tree::ini_parser::read_ini(in, tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw ConfigError("config line " + std::to_string(e.line()) + ": " + e.message());
    }
    static const std::vector<std::string> sections{"data", "graphs", "tda", "pca", "detectors", "ocgin", "glocalkd", "eval", "run"};
    for (const auto& [name, _] : tree)
        if (std::find(sections.begin(), sections.end(), name) == sections.end()) throw ConfigError("unknown config section [" + name + "]");

    const detail::IniReader r(tree);
    PipelineConfig c;
    r.read("data.prices", c.prices_path);
    r.read("data.events", c.events_path);
    r.read("data.start", c.start);
    r.read("data.end", c.end);
    r.read("data.min_coverage", c.min_coverage);

    r.read("graphs.window", c.graphs.window);
    if (const auto kind = r.get("graphs.corr")) c.graphs.kind = corr_kind_from_string(*kind);
    r.read("graphs.ccm_e", c.graphs.ccm.embedding_dim);
    r.read("graphs.ccm_tau", c.graphs.ccm.lag);

    r.read("tda.enabled", c.tda);
    r.read("tda.norms", c.tda_norms);
    if (const auto p = r.get("tda.essential")) c.essential = essential_policy_from_string(*p);
    r.read("pca.dims", c.pca_dims);

    r.read("detectors.mahalanobis", c.mahalanobis);
    r.read("detectors.lof_k", c.lof_k);

    r.read("ocgin.enabled", c.ocgin);
    r.read("ocgin.lr", c.ocgin_lr);
    r.read("ocgin.weight_decay", c.ocgin_weight_decay);
    r.read("ocgin.batch", c.ocgin_batch);
    r.read("ocgin.layers", c.ocgin_layers);
    r.read("ocgin.hidden", c.ocgin_hidden);
    r.read("ocgin.epochs", c.ocgin_epochs);

    r.read("glocalkd.enabled", c.glocalkd);
    r.read("glocalkd.lr", c.glocalkd_lr);
    r.read("glocalkd.batch", c.glocalkd_batch);
    r.read("glocalkd.layers", c.glocalkd_layers);
    r.read("glocalkd.lambda", c.glocalkd_lambda);
    r.read("glocalkd.hidden", c.glocalkd_hidden);
    r.read("glocalkd.epochs", c.glocalkd_epochs);

    r.read("eval.percentile", c.percentile);
    r.read("eval.lookback", c.lookback);
    r.read("run.output", c.output_dir);
    r.read("run.seed", c.seed);

    const auto resolve = [&](std::string& p) {
        if (!p.empty() && std::filesystem::path(p).is_relative()) p = (base_dir / p).lexically_normal().string();
    };
    resolve(c.prices_path);
    resolve(c.events_path);
    resolve(c.output_dir);
    return c;
}

inline void validate_config(const PipelineConfig& c) {
    if (c.prices_path.empty()) throw ConfigError("[data] prices is required");
    if (c.events_path.empty()) throw ConfigError("[data] events is required");
    for (const auto* p : {&c.prices_path, &c.events_path})
        if (!std::filesystem::is_regular_file(*p)) throw ConfigError("file not found: " + *p);
    if (!(c.start < c.end)) throw ConfigError("[data] start must precede end");
    if (!(c.min_coverage > 0.0 && c.min_coverage <= 1.0)) throw ConfigError("[data] min_coverage must lie in (0, 1]");
    if (c.graphs.window < 3) throw ConfigError("[graphs] window must be at least 3");
    if (c.graphs.kind == CorrKind::ccm) check_ccm(WindowSpec{0, c.graphs.window}, c.graphs.ccm);
    for (const auto& n : c.tda_norms) tda_norm_columns(n);
    for (auto k : c.lof_k)
        if (k < 1) throw ConfigError("[detectors] lof_k entries must be positive");
    const bool feature_branch = (c.tda && !c.tda_norms.empty()) || !c.pca_dims.empty();
    if (!(feature_branch && c.any_detector()) && !c.ocgin && !c.glocalkd)
        throw ConfigError("config selects no analysis: enable a feature branch with a detector, or a GNN model");
    if (!(c.percentile > 0.0 && c.percentile < 100.0)) throw ConfigError("[eval] percentile must lie in (0, 100)");
    for (const auto& run : c.gnn_runs()) {
        if (run.batch < 1 || run.layers < 1 || run.hidden < 1) throw ConfigError("GNN batch, layers and hidden must be positive");
        if (!(run.lr > 0.0)) throw ConfigError("GNN learning rates must be positive");
    }
}

inline PipelineConfig load_config(const std::string& path) {
    std::string ini;
    try {
        ini = text::read_file(path);
    } catch (const DataError& e) {
        throw ConfigError(e.what());
    }
    auto c = parse_config(ini, std::filesystem::path(path).parent_path());
    validate_config(c);
    return c;
}

inline nlohmann::json config_json(const PipelineConfig& c) {
    return {
        {"data", {{"prices", c.prices_path}, {"events", c.events_path}, {"start", c.start.str()}, {"end", c.end.str()}, {"min_coverage", c.min_coverage}}},
        {"graphs", {{"window", c.graphs.window}, {"corr", to_string(c.graphs.kind)}, {"ccm_e", c.graphs.ccm.embedding_dim}, {"ccm_tau", c.graphs.ccm.lag}}},
        {"tda", {{"enabled", c.tda}, {"norms", c.tda_norms}, {"essential", c.essential == EssentialPolicy::drop ? "drop" : "cap"}}},
        {"pca", {{"dims", c.pca_dims}}},
        {"detectors", {{"mahalanobis", c.mahalanobis}, {"lof_k", c.lof_k}}},
        {"ocgin",
         {{"enabled", c.ocgin}, {"lr", c.ocgin_lr}, {"weight_decay", c.ocgin_weight_decay}, {"batch", c.ocgin_batch}, {"layers", c.ocgin_layers},
          {"hidden", c.ocgin_hidden}, {"epochs", c.ocgin_epochs}}},
        {"glocalkd",
         {{"enabled", c.glocalkd}, {"lr", c.glocalkd_lr}, {"batch", c.glocalkd_batch}, {"layers", c.glocalkd_layers}, {"lambda", c.glocalkd_lambda},
          {"hidden", c.glocalkd_hidden}, {"epochs", c.glocalkd_epochs}}},
        {"eval", {{"percentile", c.percentile}, {"lookback", c.lookback}}},
        {"run", {{"seed", c.seed}}},
    };
}

// ---- plots ----------------------------------------------------------------

// Bar chart of flags per calendar month over [first, last], with numbered
// vertical markers at the event months.
inline std::string monthly_svg(const std::string& title, const std::vector<Date>& flags, Date first, Date last, const EventList& events) {
    const auto month_index = [&](Date d) { return (d.year() - first.year()) * 12 + static_cast<int>(d.month()) - static_cast<int>(first.month()); };
    const int months = std::max(1, month_index(last) + 1);
    std::vector<int> counts(static_cast<std::size_t>(months), 0);
    for (const auto& f : flags) {
        const int m = month_index(f);
        if (m >= 0 && m < months) ++counts[static_cast<std::size_t>(m)];
    }
    const int peak = std::max(1, *std::max_element(counts.begin(), counts.end()));
    const double bar = 6.0, left = 50.0, top = 40.0, height = 200.0;
    const double width = left + bar * months + 20.0;
    std::ostringstream s;
    s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << top + height + 50 << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    s << "<text x=\"" << left << "\" y=\"20\" font-size=\"13\">" << title << ": anomalous graphs per month</text>\n";
    s << "<line x1=\"" << left << "\" y1=\"" << top + height << "\" x2=\"" << left + bar * months << "\" y2=\"" << top + height << "\" stroke=\"black\"/>\n";
    s << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + height << "\" stroke=\"black\"/>\n";
    s << "<text x=\"" << left - 6 << "\" y=\"" << top + 4 << "\" text-anchor=\"end\">" << peak << "</text>\n";
    s << "<text x=\"" << left - 6 << "\" y=\"" << top + height << "\" text-anchor=\"end\">0</text>\n";
    for (int m = 0; m < months; ++m) {
        if (counts[static_cast<std::size_t>(m)] == 0) continue;
        const double h = height * counts[static_cast<std::size_t>(m)] / peak;
        s << "<rect x=\"" << left + bar * m << "\" y=\"" << top + height - h << "\" width=\"" << bar - 1 << "\" height=\"" << h
          << "\" fill=\"steelblue\"/>\n";
    }
    for (int y = first.year(); y <= last.year(); ++y) {
        const int m = month_index(Date(y, 1, 1));
        if (m < 0 || m >= months) continue;
        s << "<text x=\"" << left + bar * m << "\" y=\"" << top + height + 15 << "\">" << y << "</text>\n";
    }
    for (std::size_t e = 0; e < events.events.size(); ++e) {
        const int m = month_index(events.events[e].date);
        if (m < 0 || m >= months) continue;
        const double x = left + bar * m + bar / 2;
        s << "<line x1=\"" << x << "\" y1=\"" << top << "\" x2=\"" << x << "\" y2=\"" << top + height << "\" stroke=\"firebrick\" stroke-dasharray=\"3,2\"/>\n";
        s << "<text x=\"" << x << "\" y=\"" << top - 4 << "\" text-anchor=\"middle\" fill=\"firebrick\">" << e + 1 << "</text>\n";
    }
    s << "</svg>\n";
    return s.str();
}

// ---- run ------------------------------------------------------------------

struct ResultRow {
    std::string method;
    std::string family;
    std::string features;
    std::string detector;
    std::string params;
    DetectionReport report;
};

struct RunOutput {
    std::filesystem::path dir;
    std::vector<ResultRow> results;
};

inline std::string results_csv(const std::vector<ResultRow>& rows) {
    std::string out = "method,family,features,detector,params,precision,recall,f_score,n_flags\n";
    for (const auto& r : rows)
        out += r.method + "," + r.family + "," + r.features + "," + r.detector + "," + r.params + "," + text::exact(r.report.precision) + "," +
               text::exact(r.report.recall) + "," + text::exact(r.report.f_score) + "," + std::to_string(r.report.anomalous_dates.size()) + "\n";
    return out;
}

// Highest f-score per family; the first row wins ties.
inline std::string best_csv(const std::vector<ResultRow>& rows) {
    std::vector<const ResultRow*> best;
    for (const auto& r : rows) {
        auto it = std::find_if(best.begin(), best.end(), [&](const ResultRow* b) { return b->family == r.family; });
        if (it == best.end())
            best.push_back(&r);
        else if (r.report.f_score > (*it)->report.f_score)
            *it = &r;
    }
    std::string out = "family,method,precision,recall,f_score\n";
    for (const auto* r : best)
        out += r->family + "," + r->method + "," + text::exact(r->report.precision) + "," + text::exact(r->report.recall) + "," +
               text::exact(r->report.f_score) + "\n";
    return out;
}

namespace detail {

template <typename Fn>
auto run_stage(const std::string& name, std::ostream* log, Fn&& fn) {
    if (log) *log << "[" << name << "]" << std::endl;
    try {
        return fn();
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError(name, e.what());
    }
}

inline std::filesystem::path fresh_run_dir(const std::filesystem::path& root, const std::string& hash) {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y%m%d-%H%M%S", &tm);
    const std::string base = std::string(stamp) + "-" + hash.substr(0, 8);
    std::filesystem::create_directories(root);
    for (int k = 1;; ++k) {
        const auto dir = root / (k == 1 ? base : base + "-" + std::to_string(k));
        if (std::filesystem::create_directory(dir)) return dir;
    }
}

}  // namespace detail

// Executes every selected branch and writes the run directory:
//   returns.csv, graphs.bin(.json), features/*.csv,
//   methods/<method>/{scores.csv, report.json, monthly.svg},
//   results.csv, best.csv, config.json, manifest.json
// On failure a FAILED file names the stage and the cause; partial outputs stay.
inline RunOutput run_pipeline(const PipelineConfig& cfg, unsigned jobs = 1, std::ostream* log = nullptr) {
    validate_config(cfg);
    const auto cfg_json = config_json(cfg);
    const auto cfg_hash = text::hex64(text::fnv1a(cfg_json.dump()));
    RunOutput out;
    out.dir = detail::fresh_run_dir(cfg.output_dir, cfg_hash);
    const auto& dir = out.dir;
    if (log) *log << "run directory " << dir.string() << std::endl;
    text::write_file((dir / "config.json").string(), cfg_json.dump(2) + "\n");
    std::vector<std::string> written;
    const auto put = [&](const std::string& rel, const std::string& content) {
        std::filesystem::create_directories((dir / rel).parent_path());
        text::write_file((dir / rel).string(), content);
        written.push_back(rel);
    };

    try {
        const auto events = detail::run_stage("events", log, [&] { return parse_events_csv(text::read_file(cfg.events_path)); });

        // Each stage writes its artifact and continues from the re-read file,
        // so the standalone commands reproduce the run exactly.
        const auto returns = detail::run_stage("ingest", log, [&] {
            const auto table = align_and_filter(parse_price_csv(text::read_file(cfg.prices_path)), cfg.start, cfg.end, cfg.min_coverage);
            put("returns.csv", serialize_returns_csv(log_returns(table)));
            return parse_returns_csv(text::read_file((dir / "returns.csv").string()));
        });

        const auto archive = detail::run_stage("graphs", log, [&] {
            GraphArchive a{cfg.graphs.kind, cfg.graphs.window, cfg.graphs.ccm, returns.tickers, build_graph_sequence(returns, cfg.graphs, jobs)};
            if (a.graphs.size() < 2) throw DataError("fewer than two windows; the date range is too short for the window width");
            write_graph_archive((dir / "graphs.bin").string(), a);
            written.push_back("graphs.bin");
            return read_graph_archive((dir / "graphs.bin").string());
        });

        std::vector<std::pair<std::string, FeatureTable>> branches;
        if (cfg.tda && !cfg.tda_norms.empty()) {
            const auto tda = detail::run_stage("tda", log, [&] {
                put("features/tda.csv", serialize_feature_csv(tda_table(tda_features(archive.graphs, cfg.essential, jobs))));
                return parse_feature_csv(text::read_file((dir / "features/tda.csv").string()));
            });
            for (const auto& norm : cfg.tda_norms) branches.emplace_back("tda-" + norm, select_columns(tda, tda_norm_columns(norm)));
        }
        for (const auto& dim : cfg.pca_dims) {
            branches.emplace_back("pca-" + dim, detail::run_stage("pca", log, [&] {
                                      const auto rel = "features/pca-" + dim + ".csv";
                                      put(rel, serialize_feature_csv(pca_features(archive.graphs, archive.kind, dim)));
                                      return parse_feature_csv(text::read_file((dir / rel).string()));
                                  }));
        }

        struct Task {
            std::string features, detector, family, params;
            const FeatureTable* table = nullptr;
            std::size_t k = 0;
            std::optional<GnnRun> gnn;
        };
        std::vector<Task> tasks;
        for (const auto& [name, table] : branches) {
            const std::string family = name.substr(0, 3);
            if (cfg.mahalanobis) tasks.push_back({name, "mahalanobis", family + "+mahalanobis", "", &table, 0, std::nullopt});
            for (auto k : cfg.lof_k) tasks.push_back({name, "lof", family + "+lof", "k=" + std::to_string(k), &table, k, std::nullopt});
        }
        const std::size_t n_detector_tasks = tasks.size();
        for (const auto& run : cfg.gnn_runs()) {
            std::string params = "lr=" + text::format(run.lr, 6) + ";batch=" + std::to_string(run.batch) + ";layers=" + std::to_string(run.layers) +
                                 ";hidden=" + std::to_string(run.hidden);
            params += run.model == "ocgin" ? ";weight_decay=" + text::format(run.weight_decay, 6) : ";lambda=" + text::format(run.lambda, 6);
            tasks.push_back({"graphs", run.model, run.model, params, nullptr, 0, run});
        }

        std::vector<AnomalySeries> series(tasks.size());
        detail::run_stage("detectors", log, [&] {
            parallel_for(n_detector_tasks, jobs, [&](std::size_t i) {
                const auto& t = tasks[i];
                series[i] = score_features(*t.table, t.detector, t.k);
                series[i].method = t.features + "_" + (t.detector == "lof" ? "lof-k" + std::to_string(t.k) : t.detector);
            });
            return 0;
        });
        if (tasks.size() > n_detector_tasks)
            detail::run_stage("gnn", log, [&] {
                parallel_for(tasks.size() - n_detector_tasks, jobs, [&](std::size_t j) {
                    const auto i = n_detector_tasks + j;
                    series[i] = gnn_scores(archive.graphs, *tasks[i].gnn);
                    if (log) *log << "  trained " << series[i].method + "\n" << std::flush;
                });
                return 0;
            });

        out.results = detail::run_stage("evaluate", log, [&] {
            const EvaluationSettings settings{cfg.percentile, cfg.lookback};
            std::vector<ResultRow> rows;
            const auto first = archive.graphs.front().as_of, last = archive.graphs.back().as_of;
            for (std::size_t i = 0; i < tasks.size(); ++i) {
                const auto& s = series[i];
                const auto report = evaluate(s, events, settings);
                const auto base = "methods/" + s.method + "/";
                put(base + "scores.csv", serialize_scores_csv(s));
                put(base + "report.json", report_json(report, events, settings).dump(2) + "\n");
                put(base + "monthly.svg", monthly_svg(s.method, report.anomalous_dates, first, last, events));
                rows.push_back({s.method, tasks[i].family, tasks[i].features, tasks[i].detector, tasks[i].params, report});
            }
            put("results.csv", results_csv(rows));
            put("best.csv", best_csv(rows));
            return rows;
        });
    } catch (const StageError& e) {
        text::write_file((dir / "FAILED").string(), "stage: " + e.stage() + "\n" + e.what() + "\n");
        throw;
    }

    // Fingerprints of every text output; the combined hash is what two
    // identical runs must agree on.
    nlohmann::json files = nlohmann::json::object();
    std::uint64_t combined = 0xcbf29ce484222325ull;
    std::sort(written.begin(), written.end());
    for (const auto& rel : written) {
        const auto content = text::read_file((dir / rel).string());
        files[rel] = text::hex64(text::fnv1a(content));
        if (rel.ends_with(".csv")) combined = text::fnv1a(rel + "\n" + content, combined);
    }
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char stamp[32];
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", &tm);
    const nlohmann::json manifest = {{"version", kVersion},      {"config_hash", cfg_hash}, {"seed", cfg.seed},    {"jobs", jobs},
                                     {"created_utc", stamp},      {"outputs_hash", text::hex64(combined)}, {"files", files},
                                     {"methods", out.results.size()}};
    text::write_file((dir / "manifest.json").string(), manifest.dump(2) + "\n");
    return out;
}

}  // namespace flagcrash
