#pragma once

// GINE message passing and the two graph-level anomaly models built on it:
// a one-class model (distance of the graph embedding to a fixed centre) and
// knowledge distillation against a frozen, randomly initialised teacher.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "flagcrash/autodiff.hpp"
#include "flagcrash/binary_io.hpp"
#include "flagcrash/corrnet.hpp"
#include "flagcrash/error.hpp"
#include "flagcrash/text.hpp"

namespace flagcrash::gnn {

using ad::Tensor;

struct AttributedGraph {
    std::size_t n = 0;
    std::size_t node_dim = 0;
    std::size_t edge_dim = 0;
    std::vector<double> x;  // n x node_dim, row-major
    std::vector<std::pair<std::size_t, std::size_t>> edges;
    std::vector<double> y;  // |edges| x edge_dim, row-major
    Date as_of;
};

inline void validate(const AttributedGraph& g) {
    if (g.node_dim < 1 || g.edge_dim < 1) throw ShapeError("attributed graph needs node_dim >= 1 and edge_dim >= 1");
    if (g.x.size() != g.n * g.node_dim) throw ShapeError("node feature matrix has wrong size");
    if (g.y.size() != g.edges.size() * g.edge_dim) throw ShapeError("edge feature matrix has wrong size");
    for (const auto& [s, t] : g.edges)
        if (s >= g.n || t >= g.n) throw ShapeError("edge endpoint out of range");
}

// Node features (1, weighted degree), edge feature (weight).
inline AttributedGraph attribute_graph(const WeightedDigraph& g) {
    AttributedGraph a;
    a.n = g.n_vertices;
    a.node_dim = 2;
    a.edge_dim = 1;
    a.as_of = g.as_of;
    std::vector<double> degree(g.n_vertices, 0.0);
    for (const auto& e : g.edges) {
        degree[e.source] += e.weight;
        degree[e.target] += e.weight;
        a.edges.emplace_back(e.source, e.target);
        a.y.push_back(e.weight);
    }
    for (std::size_t v = 0; v < a.n; ++v) {
        a.x.push_back(1.0);
        a.x.push_back(degree[v]);
    }
    return a;
}

inline std::vector<AttributedGraph> attribute_graphs(const std::vector<WeightedDigraph>& graphs) {
    std::vector<AttributedGraph> out;
    out.reserve(graphs.size());
    for (const auto& g : graphs) out.push_back(attribute_graph(g));
    return out;
}

// Disjoint union of several graphs. Every directed edge delivers a message
// in both directions with the same edge feature.
struct Batch {
    std::size_t graphs = 0;
    std::size_t nodes = 0;
    Tensor x;
    Tensor y;  // per message
    std::vector<std::size_t> src, dst, segment;
};

inline Batch make_batch(const std::vector<AttributedGraph>& all, std::span<const std::size_t> members) {
    if (members.empty()) throw ShapeError("empty batch");
    const std::size_t m = all[members[0]].node_dim, k = all[members[0]].edge_dim;
    Batch b;
    b.graphs = members.size();
    std::vector<double> x, y;
    for (std::size_t gi = 0; gi < members.size(); ++gi) {
        const auto& g = all[members[gi]];
        if (g.node_dim != m || g.edge_dim != k) throw ShapeError("graphs in a batch must share feature dimensions");
        if (g.n == 0) throw ShapeError("graph with no vertices");
        const std::size_t base = b.nodes;
        x.insert(x.end(), g.x.begin(), g.x.end());
        for (std::size_t e = 0; e < g.edges.size(); ++e) {
            const auto [s, t] = g.edges[e];
            for (int dir = 0; dir < 2; ++dir) {
                b.src.push_back(base + (dir == 0 ? s : t));
                b.dst.push_back(base + (dir == 0 ? t : s));
                y.insert(y.end(), g.y.begin() + static_cast<std::ptrdiff_t>(e * k), g.y.begin() + static_cast<std::ptrdiff_t>((e + 1) * k));
            }
        }
        for (std::size_t v = 0; v < g.n; ++v) b.segment.push_back(gi);
        b.nodes += g.n;
    }
    b.x = Tensor(b.nodes, m, std::move(x));
    b.y = Tensor(b.src.size(), k, std::move(y));
    return b;
}

struct GineShape {
    std::size_t node_dim = 2;
    std::size_t edge_dim = 1;
    std::size_t hidden = 10;
    std::size_t layers = 3;
};

// One GINE layer, all maps bias-free:
//   h'_v = W2 relu(W1 ((1 + eps) h_v + sum_u relu(h_u + We y_uv)))
struct GineLayer {
    Tensor eps;        // 1 x 1
    Tensor edge_proj;  // edge_dim x in
    Tensor w1;         // in x hidden
    Tensor w2;         // hidden x hidden
};

struct GineModel {
    GineShape shape;
    std::vector<GineLayer> layers;

    std::size_t embedding_dim() const { return shape.layers * shape.hidden; }

    std::vector<Tensor> parameters() const {
        std::vector<Tensor> out;
        for (const auto& l : layers) {
            out.push_back(l.eps);
            out.push_back(l.edge_proj);
            out.push_back(l.w1);
            out.push_back(l.w2);
        }
        return out;
    }

    void set_trainable(bool on) {
        for (auto& p : parameters()) p.set_requires_grad(on);
    }

    // Deep copy of the parameter values.
    GineModel clone() const {
        GineModel c{shape, {}};
        for (const auto& l : layers) c.layers.push_back({l.eps.detach(), l.edge_proj.detach(), l.w1.detach(), l.w2.detach()});
        c.set_trainable(layers.empty() ? false : layers.front().w1.requires_grad());
        return c;
    }

    std::uint64_t checksum() const {
        std::uint64_t h = 0xcbf29ce484222325ull;
        for (const auto& p : parameters()) {
            const auto d = p.data();
            h = text::fnv1a(std::string_view(reinterpret_cast<const char*>(d.data()), d.size() * sizeof(double)), h);
        }
        return h;
    }
};

// Weights uniform in +-1/sqrt(fan_in); eps starts at 0.
inline GineModel init_gine(const GineShape& shape, std::mt19937_64& rng, bool trainable = true) {
    if (shape.layers < 1 || shape.hidden < 1 || shape.node_dim < 1 || shape.edge_dim < 1) throw ConfigError("invalid GINE shape");
    const auto uniform = [&rng](std::size_t rows, std::size_t cols, std::size_t fan_in) {
        std::uniform_real_distribution<double> dist(-1.0 / std::sqrt(static_cast<double>(fan_in)), 1.0 / std::sqrt(static_cast<double>(fan_in)));
        std::vector<double> v(rows * cols);
        for (auto& x : v) x = dist(rng);
        return Tensor(rows, cols, std::move(v));
    };
    GineModel model{shape, {}};
    for (std::size_t l = 0; l < shape.layers; ++l) {
        const std::size_t in = l == 0 ? shape.node_dim : shape.hidden;
        model.layers.push_back({Tensor::scalar(0.0), uniform(shape.edge_dim, in, shape.edge_dim), uniform(in, shape.hidden, in),
                                uniform(shape.hidden, shape.hidden, shape.hidden)});
    }
    model.set_trainable(trainable);
    return model;
}

struct GineOutput {
    std::vector<Tensor> node_embeddings;  // per layer, nodes x hidden
    Tensor graph_embedding;               // graphs x (layers * hidden)
};

inline Tensor gine_layer(const GineLayer& layer, const Tensor& h, const Batch& b) {
    const auto msg = ad::relu(ad::add(ad::gather_rows(h, b.src), ad::matmul(b.y, layer.edge_proj)));
    const auto agg = ad::scatter_add_rows(msg, b.dst, b.nodes);
    const auto combined = ad::add(ad::add(h, ad::scale(h, layer.eps)), agg);
    return ad::matmul(ad::relu(ad::matmul(combined, layer.w1)), layer.w2);
}

inline GineOutput gine_forward(const GineModel& model, const Batch& b) {
    if (b.x.cols() != model.shape.node_dim || b.y.cols() != model.shape.edge_dim)
        throw ShapeError("batch features " + b.x.shape_str() + "/" + b.y.shape_str() + " do not match the model's input dimensions");
    GineOutput out;
    Tensor h = b.x;
    std::vector<Tensor> pooled;
    for (const auto& layer : model.layers) {
        h = gine_layer(layer, h, b);
        out.node_embeddings.push_back(h);
        pooled.push_back(ad::segment_mean_rows(h, b.segment, b.graphs));
    }
    out.graph_embedding = ad::concat_cols(pooled);
    return out;
}

inline GineOutput gine_forward(const GineModel& model, const AttributedGraph& g) {
    validate(g);
    const std::vector<AttributedGraph> one{g};
    const std::size_t idx = 0;
    return gine_forward(model, make_batch(one, std::span<const std::size_t>(&idx, 1)));
}

struct TrainSchedule {
    double lr = 0.001;
    std::size_t batch_size = 50;
    std::size_t epochs = 150;
    std::size_t patience = 20;
    double min_delta = 1e-7;
    std::uint64_t seed = 7;
};

namespace detail {

// Mini-batch loop shared by both models; `batch_loss` returns the mean loss
// over the batch. Stops early after `patience` epochs without an improvement
// of at least `min_delta` in the epoch loss.
template <typename LossFn>
std::vector<double> train_loop(const std::vector<AttributedGraph>& graphs, std::vector<Tensor> params, const TrainSchedule& s,
                               double weight_decay, std::mt19937_64& rng, LossFn&& batch_loss) {
    if (s.batch_size < 1) throw ConfigError("batch size must be positive");
    std::vector<std::size_t> order(graphs.size());
    std::iota(order.begin(), order.end(), 0);
    ad::AdamState adam;
    std::vector<double> history;
    double best = std::numeric_limits<double>::infinity();
    std::size_t stale = 0;
    for (std::size_t epoch = 0; epoch < s.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double total = 0.0;
        for (std::size_t start = 0; start < order.size(); start += s.batch_size) {
            const auto count = std::min(s.batch_size, order.size() - start);
            const auto batch = make_batch(graphs, std::span<const std::size_t>(order.data() + start, count));
            for (auto& p : params) p.zero_grad();
            const auto loss = batch_loss(batch);
            ad::backward(loss);
            ad::adam_step(params, s.lr, weight_decay, adam);
            total += loss.item() * static_cast<double>(count);
        }
        const double epoch_loss = total / static_cast<double>(graphs.size());
        history.push_back(epoch_loss);
        if (epoch_loss < best - s.min_delta) {
            best = epoch_loss;
            stale = 0;
        } else if (++stale >= s.patience) {
            break;
        }
    }
    return history;
}

template <typename ScoreFn>
std::vector<double> batched_scores(const std::vector<AttributedGraph>& graphs, std::size_t batch_size, ScoreFn&& fn) {
    ad::NoGradGuard no_grad;
    std::vector<double> out;
    out.reserve(graphs.size());
    std::vector<std::size_t> idx(graphs.size());
    std::iota(idx.begin(), idx.end(), 0);
    batch_size = std::max<std::size_t>(batch_size, 1);
    for (std::size_t start = 0; start < graphs.size(); start += batch_size) {
        const auto count = std::min(batch_size, graphs.size() - start);
        const auto per_graph = fn(make_batch(graphs, std::span<const std::size_t>(idx.data() + start, count)));
        out.insert(out.end(), per_graph.data().begin(), per_graph.data().end());
    }
    return out;
}

inline Tensor repeat_row(std::span<const double> row, std::size_t times) {
    std::vector<double> v;
    v.reserve(row.size() * times);
    for (std::size_t i = 0; i < times; ++i) v.insert(v.end(), row.begin(), row.end());
    return Tensor(times, row.size(), std::move(v));
}

}  // namespace detail

// ---- one-class model ------------------------------------------------------

struct OcginConfig {
    TrainSchedule schedule;
    double weight_decay = 1e-4;
    std::size_t layers = 3;
    std::size_t hidden = 10;
};

struct OcginState {
    GineModel model;
    std::vector<double> center;  // layers * hidden, fixed after initialisation
    std::vector<double> loss_history;
    OcginConfig config;
};

// Per-graph squared distance to the centre, graphs x 1.
inline Tensor ocgin_distances(const GineModel& model, std::span<const double> center, const Batch& b) {
    const auto emb = gine_forward(model, b).graph_embedding;
    const auto diff = ad::sub(emb, detail::repeat_row(center, b.graphs));
    return ad::row_sum(ad::hadamard(diff, diff));
}

// Mean over the batch of |NN(G) - c|^2 (no regulariser).
inline Tensor ocgin_loss(const GineModel& model, std::span<const double> center, const Batch& b) {
    return ad::scalar_mul(ad::sum(ocgin_distances(model, center, b)), 1.0 / static_cast<double>(b.graphs));
}

inline std::vector<double> mean_embedding(const GineModel& model, const std::vector<AttributedGraph>& graphs, std::size_t batch_size) {
    ad::NoGradGuard no_grad;
    std::vector<double> c(model.embedding_dim(), 0.0);
    std::vector<std::size_t> idx(graphs.size());
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t start = 0; start < graphs.size(); start += batch_size) {
        const auto count = std::min(batch_size, graphs.size() - start);
        const auto emb = gine_forward(model, make_batch(graphs, std::span<const std::size_t>(idx.data() + start, count))).graph_embedding;
        for (std::size_t r = 0; r < emb.rows(); ++r)
            for (std::size_t j = 0; j < emb.cols(); ++j) c[j] += emb(r, j);
    }
    for (auto& v : c) v /= static_cast<double>(graphs.size());
    return c;
}

inline OcginState ocgin_init(const std::vector<AttributedGraph>& graphs, const OcginConfig& config, std::mt19937_64& rng) {
    if (graphs.empty()) throw DataError("ocgin_train needs at least one graph");
    for (const auto& g : graphs) validate(g);
    OcginState state;
    state.config = config;
    state.model = init_gine({graphs.front().node_dim, graphs.front().edge_dim, config.hidden, config.layers}, rng);
    state.center = mean_embedding(state.model, graphs, std::max<std::size_t>(config.schedule.batch_size, 1));
    return state;
}

inline OcginState ocgin_train(const std::vector<AttributedGraph>& graphs, const OcginConfig& config) {
    std::mt19937_64 rng(config.schedule.seed);
    auto state = ocgin_init(graphs, config, rng);
    state.loss_history = detail::train_loop(graphs, state.model.parameters(), config.schedule, config.weight_decay, rng,
                                            [&](const Batch& b) { return ocgin_loss(state.model, state.center, b); });
    return state;
}

inline std::vector<double> ocgin_scores(const OcginState& state, const std::vector<AttributedGraph>& graphs) {
    return detail::batched_scores(graphs, state.config.schedule.batch_size,
                                  [&](const Batch& b) { return ocgin_distances(state.model, state.center, b); });
}

inline double ocgin_score(const OcginState& state, const AttributedGraph& g) { return ocgin_scores(state, {g}).front(); }

// ---- knowledge distillation -----------------------------------------------

struct GlocalConfig {
    TrainSchedule schedule;
    std::size_t layers = 3;
    std::size_t hidden = 10;
    double lambda = 0.1;
};

struct GlocalState {
    GineModel teacher;  // frozen
    GineModel student;
    double lambda = 0.1;
    std::vector<double> loss_history;
    GlocalConfig config;
};

// Per-graph lambda * L_node + L_graph, graphs x 1. L_node averages the squared
// final-layer node embedding error over the graph's vertices; L_graph is the
// squared error of the graph embeddings.
inline Tensor glocal_losses(const GineModel& teacher, const GineModel& student, double lambda, const Batch& b) {
    GineOutput t;
    {
        ad::NoGradGuard no_grad;
        t = gine_forward(teacher, b);
    }
    const auto s = gine_forward(student, b);
    const auto node_diff = ad::sub(s.node_embeddings.back(), t.node_embeddings.back());
    const auto l_node = ad::segment_mean_rows(ad::row_sum(ad::hadamard(node_diff, node_diff)), b.segment, b.graphs);
    const auto graph_diff = ad::sub(s.graph_embedding, t.graph_embedding);
    const auto l_graph = ad::row_sum(ad::hadamard(graph_diff, graph_diff));
    return ad::add(ad::scalar_mul(l_node, lambda), l_graph);
}

inline Tensor glocal_loss(const GineModel& teacher, const GineModel& student, double lambda, const Batch& b) {
    return ad::scalar_mul(ad::sum(glocal_losses(teacher, student, lambda, b)), 1.0 / static_cast<double>(b.graphs));
}

inline GlocalState glocal_init(const std::vector<AttributedGraph>& graphs, const GlocalConfig& config, std::mt19937_64& rng) {
    if (graphs.empty()) throw DataError("glocalkd_train needs at least one graph");
    if (!(config.lambda >= 0.0)) throw ConfigError("lambda must be non-negative");
    for (const auto& g : graphs) validate(g);
    const GineShape shape{graphs.front().node_dim, graphs.front().edge_dim, config.hidden, config.layers};
    GlocalState state;
    state.config = config;
    state.lambda = config.lambda;
    state.teacher = init_gine(shape, rng, false);
    state.student = init_gine(shape, rng, true);
    return state;
}

inline void glocal_fit(GlocalState& state, const std::vector<AttributedGraph>& graphs, std::mt19937_64& rng) {
    state.loss_history = detail::train_loop(graphs, state.student.parameters(), state.config.schedule, 0.0, rng,
                                            [&](const Batch& b) { return glocal_loss(state.teacher, state.student, state.lambda, b); });
}

inline GlocalState glocalkd_train(const std::vector<AttributedGraph>& graphs, const GlocalConfig& config) {
    std::mt19937_64 rng(config.schedule.seed);
    auto state = glocal_init(graphs, config, rng);
    glocal_fit(state, graphs, rng);
    return state;
}

inline std::vector<double> glocalkd_scores(const GlocalState& state, const std::vector<AttributedGraph>& graphs) {
    return detail::batched_scores(graphs, state.config.schedule.batch_size,
                                  [&](const Batch& b) { return glocal_losses(state.teacher, state.student, state.lambda, b); });
}

inline double glocalkd_score(const GlocalState& state, const AttributedGraph& g) { return glocalkd_scores(state, {g}).front(); }

// ---- checkpoints ----------------------------------------------------------
//
// Little-endian layout:
//   magic "FCGM" | version u32 = 1 | json length u64 | config JSON bytes
//   tensor count u64 | per tensor: rows u64 | cols u64 | rows*cols f64
//
// Tensor order: for each model in the checkpoint, per layer
// (eps, edge_proj, w1, w2); a one-class checkpoint appends the centre as a
// 1 x (layers*hidden) tensor.

struct Checkpoint {
    nlohmann::json config;
    std::vector<Tensor> tensors;
};

inline std::string encode_checkpoint(const Checkpoint& c) {
    binary::Writer w;
    w.bytes("FCGM");
    w.u32(1);
    const auto js = c.config.dump();
    w.u64(js.size());
    w.bytes(js);
    w.u64(c.tensors.size());
    for (const auto& t : c.tensors) {
        w.u64(t.rows());
        w.u64(t.cols());
        for (double v : t.data()) w.f64(v);
    }
    return w.data();
}

inline Checkpoint decode_checkpoint(std::string_view bytes) {
    binary::Reader r(bytes);
    if (r.bytes(4) != "FCGM") throw ParseError("not a model checkpoint (bad magic)");
    if (r.u32() != 1) throw ParseError("unsupported checkpoint version");
    Checkpoint c;
    const auto jlen = r.u64();
    try {
        c.config = nlohmann::json::parse(r.bytes(jlen));
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("bad checkpoint config: ") + e.what());
    }
    const auto count = r.u64();
    for (std::uint64_t i = 0; i < count; ++i) {
        const auto rows = r.u64(), cols = r.u64();
        std::vector<double> v(rows * cols);
        for (auto& x : v) x = r.f64();
        c.tensors.emplace_back(rows, cols, std::move(v));
    }
    if (!r.done()) throw ParseError("trailing bytes after checkpoint");
    return c;
}

inline nlohmann::json shape_json(const GineShape& s) {
    return {{"node_dim", s.node_dim}, {"edge_dim", s.edge_dim}, {"hidden", s.hidden}, {"layers", s.layers}};
}

inline nlohmann::json schedule_json(const TrainSchedule& s) {
    return {{"lr", s.lr}, {"batch_size", s.batch_size}, {"epochs", s.epochs}, {"patience", s.patience}, {"min_delta", s.min_delta}, {"seed", s.seed}};
}

inline Checkpoint to_checkpoint(const OcginState& s) {
    Checkpoint c;
    c.config = {{"model", "ocgin"}, {"shape", shape_json(s.model.shape)}, {"schedule", schedule_json(s.config.schedule)},
                {"weight_decay", s.config.weight_decay}, {"epochs_run", s.loss_history.size()}};
    c.tensors = s.model.clone().parameters();
    c.tensors.push_back(Tensor::row(s.center));
    return c;
}

inline Checkpoint to_checkpoint(const GlocalState& s) {
    Checkpoint c;
    c.config = {{"model", "glocalkd"}, {"shape", shape_json(s.student.shape)}, {"schedule", schedule_json(s.config.schedule)},
                {"lambda", s.lambda}, {"epochs_run", s.loss_history.size()}};
    c.tensors = s.teacher.clone().parameters();
    for (auto& t : s.student.clone().parameters()) c.tensors.push_back(t);
    return c;
}

namespace detail {

inline GineShape shape_from_json(const nlohmann::json& j) {
    return {j.at("node_dim").get<std::size_t>(), j.at("edge_dim").get<std::size_t>(), j.at("hidden").get<std::size_t>(),
            j.at("layers").get<std::size_t>()};
}

inline GineModel model_from_tensors(const GineShape& shape, const std::vector<Tensor>& t, std::size_t offset) {
    if (t.size() < offset + 4 * shape.layers) throw ParseError("checkpoint has too few tensors");
    GineModel m{shape, {}};
    for (std::size_t l = 0; l < shape.layers; ++l) {
        const std::size_t in = l == 0 ? shape.node_dim : shape.hidden;
        GineLayer layer{t[offset + 4 * l], t[offset + 4 * l + 1], t[offset + 4 * l + 2], t[offset + 4 * l + 3]};
        if (layer.eps.size() != 1 || layer.edge_proj.rows() != shape.edge_dim || layer.edge_proj.cols() != in || layer.w1.rows() != in ||
            layer.w1.cols() != shape.hidden || layer.w2.rows() != shape.hidden || layer.w2.cols() != shape.hidden)
            throw ParseError("checkpoint tensor shapes do not match the recorded model shape");
        m.layers.push_back(layer);
    }
    return m;
}

}  // namespace detail

inline OcginState ocgin_from_checkpoint(const Checkpoint& c) {
    if (c.config.value("model", "") != "ocgin") throw ParseError("checkpoint is not a one-class model");
    OcginState s;
    const auto shape = detail::shape_from_json(c.config.at("shape"));
    s.model = detail::model_from_tensors(shape, c.tensors, 0);
    if (c.tensors.size() != 4 * shape.layers + 1) throw ParseError("one-class checkpoint must end with the centre");
    const auto& centre = c.tensors.back();
    s.center.assign(centre.data().begin(), centre.data().end());
    s.config.layers = shape.layers;
    s.config.hidden = shape.hidden;
    s.config.weight_decay = c.config.value("weight_decay", 0.0);
    s.config.schedule.batch_size = c.config.at("schedule").value("batch_size", std::size_t{50});
    return s;
}

inline GlocalState glocal_from_checkpoint(const Checkpoint& c) {
    if (c.config.value("model", "") != "glocalkd") throw ParseError("checkpoint is not a distillation model");
    GlocalState s;
    const auto shape = detail::shape_from_json(c.config.at("shape"));
    if (c.tensors.size() != 8 * shape.layers) throw ParseError("distillation checkpoint has the wrong tensor count");
    s.teacher = detail::model_from_tensors(shape, c.tensors, 0);
    s.student = detail::model_from_tensors(shape, c.tensors, 4 * shape.layers);
    s.lambda = c.config.at("lambda").get<double>();
    s.config.lambda = s.lambda;
    s.config.layers = shape.layers;
    s.config.hidden = shape.hidden;
    s.config.schedule.batch_size = c.config.at("schedule").value("batch_size", std::size_t{50});
    return s;
}

}  // namespace flagcrash::gnn
