// Command-line front end: one subcommand per pipeline stage plus `run` for the
// whole analysis and `synth` for test panels.

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "flagcrash/pipeline.hpp"
#include "flagcrash/synth.hpp"

namespace fc = flagcrash;

namespace {

enum Exit { ok = 0, config_error = 2, data_error = 3, stage_error = 4 };

std::vector<fc::StressEpisode> parse_episodes(const std::string& spec) {
    std::vector<fc::StressEpisode> out;
    if (spec.empty()) return out;
    for (auto item : fc::text::split(spec)) {
        const auto parts = fc::text::split(item, ':');
        if (parts.size() != 3) throw fc::ConfigError("episode '" + std::string(item) + "' must be start:length:coupling");
        const auto start = fc::text::to_double(parts[0]), length = fc::text::to_double(parts[1]), coupling = fc::text::to_double(parts[2]);
        if (!start || !length || !coupling || *start < 0 || *length < 0)
            throw fc::ConfigError("episode '" + std::string(item) + "' must be start:length:coupling");
        out.push_back({static_cast<std::size_t>(*start), static_cast<std::size_t>(*length), *coupling});
    }
    return out;
}

fc::Date parse_date_option(const std::string& name, const std::string& text) {
    try {
        return fc::Date::parse(text);
    } catch (const fc::ParseError& e) {
        throw fc::ConfigError(name + ": " + e.what());
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Anomaly detection on stock correlation networks"};
    app.require_subcommand(1);
    app.fallthrough();  // --jobs may follow the subcommand
    unsigned jobs = 1;
    app.add_option("--jobs", jobs, "worker threads")->check(CLI::PositiveNumber);
    app.set_version_flag("--version", fc::kVersion);

    std::string prices, start = "2005-01-01", end = "2021-12-31", out;
    double min_coverage = 1.0;
    auto* ingest = app.add_subcommand("ingest", "prices CSV -> log returns CSV");
    ingest->add_option("--prices", prices, "price CSV")->required();
    ingest->add_option("--start", start, "first date (YYYY-MM-DD)");
    ingest->add_option("--end", end, "last date (YYYY-MM-DD)");
    ingest->add_option("--min-coverage", min_coverage, "minimum fraction of days a ticker must be present");
    ingest->add_option("--out", out, "returns CSV")->required();

    std::string returns_path, corr = "ccm";
    std::size_t window = 25, ccm_e = 2, ccm_tau = 1;
    auto* graphs = app.add_subcommand("graphs", "returns CSV -> graph archive");
    graphs->add_option("--returns", returns_path, "returns CSV")->required();
    graphs->add_option("--window", window, "window width in trading days");
    graphs->add_option("--corr", corr, "ccm or pearson")->check(CLI::IsMember({"ccm", "pearson"}));
    graphs->add_option("--ccm-e", ccm_e, "CCM embedding dimension");
    graphs->add_option("--ccm-tau", ccm_tau, "CCM lag");
    graphs->add_option("--out", out, "graph archive")->required();

    std::string graphs_path, essential = "drop";
    auto* tda = app.add_subcommand("tda", "graph archive -> persistence norms CSV");
    tda->add_option("--graphs", graphs_path, "graph archive")->required();
    tda->add_option("--essential", essential, "drop or cap essential bars")->check(CLI::IsMember({"drop", "cap"}));
    tda->add_option("--out", out, "feature CSV")->required();

    std::string dim = "raw";
    auto* pca = app.add_subcommand("pca", "graph archive -> flattened or PCA-reduced features CSV");
    pca->add_option("--graphs", graphs_path, "graph archive")->required();
    pca->add_option("--dim", dim, "raw or target dimension");
    pca->add_option("--out", out, "feature CSV")->required();

    fc::GnnRun gnn_run;
    std::string checkpoint_path;
    auto* gnn = app.add_subcommand("gnn", "graph archive -> GNN anomaly scores CSV");
    gnn->add_option("--graphs", graphs_path, "graph archive")->required();
    gnn->add_option("--model", gnn_run.model, "ocgin or glocalkd")->check(CLI::IsMember({"ocgin", "glocalkd"}));
    gnn->add_option("--lr", gnn_run.lr, "learning rate");
    gnn->add_option("--weight-decay", gnn_run.weight_decay, "decoupled weight decay (ocgin only)");
    gnn->add_option("--lambda", gnn_run.lambda, "node-loss weight (glocalkd only)");
    gnn->add_option("--layers", gnn_run.layers, "GINE layers");
    gnn->add_option("--hidden", gnn_run.hidden, "hidden width");
    gnn->add_option("--batch", gnn_run.batch, "mini-batch size");
    gnn->add_option("--epochs", gnn_run.epochs, "maximum epochs");
    gnn->add_option("--seed", gnn_run.seed, "random seed");
    gnn->add_option("--checkpoint", checkpoint_path, "also write the trained model here");
    gnn->add_option("--out", out, "scores CSV")->required();

    std::string features_path, method = "mahalanobis", columns;
    std::size_t lof_k = 20;
    auto* score = app.add_subcommand("score", "features CSV -> anomaly scores CSV");
    score->add_option("--features", features_path, "feature CSV")->required();
    score->add_option("--method", method, "mahalanobis or lof")->check(CLI::IsMember({"mahalanobis", "lof"}));
    score->add_option("--lof-k", lof_k, "LOF neighbour count");
    score->add_option("--columns", columns, "comma-separated subset of feature columns");
    score->add_option("--out", out, "scores CSV")->required();

    std::string scores_path, events_path, method_name;
    double percentile = fc::kDefaultPercentile;
    std::size_t lookback = fc::kDefaultLookback;
    auto* evaluate = app.add_subcommand("evaluate", "scores CSV + events CSV -> report JSON");
    evaluate->add_option("--scores", scores_path, "scores CSV")->required();
    evaluate->add_option("--events", events_path, "events CSV")->required();
    evaluate->add_option("--percentile", percentile, "flag threshold percentile");
    evaluate->add_option("--lookback", lookback, "trading days before an event that count as a signal");
    evaluate->add_option("--method", method_name, "method name recorded in the report");
    evaluate->add_option("--out", out, "report JSON")->required();

    std::string config_path;
    auto* run = app.add_subcommand("run", "full pipeline from a config file");
    run->add_option("--config", config_path, "INI config")->required();

    fc::SyntheticConfig synth_cfg;
    std::string episodes;
    std::uint64_t seed = 7;
    std::size_t n_episodes = 0, episode_length = 20;
    double coupling = 0.8;
    auto* synth = app.add_subcommand("synth", "write a synthetic price panel and its events");
    synth->add_option("--n-stocks", synth_cfg.n_stocks, "number of stocks");
    synth->add_option("--n-days", synth_cfg.n_days, "number of trading days");
    synth->add_option("--episodes", episodes, "explicit episodes start:length:coupling,...");
    synth->add_option("--n-episodes", n_episodes, "evenly spaced episodes (ignored when --episodes is given)");
    synth->add_option("--episode-length", episode_length, "days per evenly spaced episode");
    synth->add_option("--coupling", coupling, "coupling of evenly spaced episodes");
    synth->add_option("--seed", seed, "random seed");
    synth->add_option("--out-dir", out, "directory for prices.csv and events.csv")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? ok : config_error;
    }

    try {
        if (*ingest) {
            const auto table = fc::align_and_filter(fc::parse_price_csv(fc::text::read_file(prices)), parse_date_option("--start", start),
                                                    parse_date_option("--end", end), min_coverage);
            fc::text::write_file(out, fc::serialize_returns_csv(fc::log_returns(table)));
        } else if (*graphs) {
            const auto returns = fc::parse_returns_csv(fc::text::read_file(returns_path));
            const fc::GraphSequenceParams p{window, fc::corr_kind_from_string(corr), {ccm_e, ccm_tau}};
            fc::write_graph_archive(out, {p.kind, p.window, p.ccm, returns.tickers, fc::build_graph_sequence(returns, p, jobs)});
        } else if (*tda) {
            const auto archive = fc::read_graph_archive(graphs_path);
            const auto features = fc::tda_features(archive.graphs, fc::essential_policy_from_string(essential), jobs);
            fc::text::write_file(out, fc::serialize_feature_csv(fc::tda_table(features)));
        } else if (*pca) {
            const auto archive = fc::read_graph_archive(graphs_path);
            fc::text::write_file(out, fc::serialize_feature_csv(fc::pca_features(archive.graphs, archive.kind, dim)));
        } else if (*gnn) {
            const auto archive = fc::read_graph_archive(graphs_path);
            fc::gnn::Checkpoint ckpt;
            const auto series = fc::gnn_scores(archive.graphs, gnn_run, checkpoint_path.empty() ? nullptr : &ckpt);
            fc::text::write_file(out, fc::serialize_scores_csv(series));
            if (!checkpoint_path.empty()) fc::text::write_file(checkpoint_path, fc::gnn::encode_checkpoint(ckpt));
        } else if (*score) {
            auto features = fc::parse_feature_csv(fc::text::read_file(features_path));
            if (!columns.empty()) {
                std::vector<std::string> names;
                for (auto c : fc::text::split(columns)) names.emplace_back(c);
                features = fc::select_columns(features, names);
            }
            fc::text::write_file(out, fc::serialize_scores_csv(fc::score_features(features, method, lof_k, jobs)));
        } else if (*evaluate) {
            auto series = fc::parse_scores_csv(fc::text::read_file(scores_path),
                                               method_name.empty() ? std::filesystem::path(scores_path).stem().string() : method_name);
            const auto events = fc::parse_events_csv(fc::text::read_file(events_path));
            const fc::EvaluationSettings settings{percentile, lookback};
            const auto report = fc::evaluate(series, events, settings);
            fc::text::write_file(out, fc::report_json(report, events, settings).dump(2) + "\n");
            std::cout << "precision " << report.precision << "  recall " << report.recall << "  f-score " << report.f_score << "\n";
        } else if (*run) {
            const auto cfg = fc::load_config(config_path);
            const auto result = fc::run_pipeline(cfg, jobs, &std::cerr);
            std::cout << result.dir.string() << "\n";
        } else if (*synth) {
            synth_cfg.episodes = !episodes.empty() ? parse_episodes(episodes)
                                                   : fc::spread_episodes(synth_cfg.n_days, n_episodes, episode_length, coupling);
            const auto data = fc::make_synthetic(synth_cfg, seed);
            std::filesystem::create_directories(out);
            fc::text::write_file((std::filesystem::path(out) / "prices.csv").string(), fc::serialize_price_csv(data.prices));
            fc::text::write_file((std::filesystem::path(out) / "events.csv").string(), fc::serialize_events_csv(data.events));
        }
    } catch (const fc::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return config_error;
    } catch (const fc::StageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return stage_error;
    } catch (const fc::ParseError& e) {
        std::cerr << "parse error: " << e.what() << "\n";
        return data_error;
    } catch (const fc::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return data_error;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return stage_error;
    }
    return ok;
}
