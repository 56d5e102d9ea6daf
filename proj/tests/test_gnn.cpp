#include <algorithm>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "flagcrash/gnn.hpp"
#include "grad_check.hpp"

using namespace flagcrash;
using namespace flagcrash::gnn;

namespace {

WeightedDigraph random_digraph(std::mt19937_64& rng, std::size_t n, double density) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    WeightedDigraph g{n, {}, Date(2020, 1, 1)};
    for (std::size_t a = 0; a < n; ++a)
        for (std::size_t b = 0; b < n; ++b)
            if (a != b && u(rng) < density) g.edges.push_back({a, b, 0.05 + 0.95 * u(rng)});
    return g;
}

// Directed ring with weights jittered around 0.5.
WeightedDigraph ring(std::mt19937_64& rng, std::size_t n, double jitter) {
    std::uniform_real_distribution<double> u(-jitter, jitter);
    WeightedDigraph g{n, {}, Date(2020, 1, 1)};
    for (std::size_t v = 0; v < n; ++v) g.edges.push_back({v, (v + 1) % n, 0.5 + u(rng)});
    return g;
}

WeightedDigraph complete(std::size_t n, double w) {
    WeightedDigraph g{n, {}, Date(2020, 1, 1)};
    for (std::size_t a = 0; a < n; ++a)
        for (std::size_t b = 0; b < n; ++b)
            if (a != b) g.edges.push_back({a, b, w});
    return g;
}

AttributedGraph permuted(const AttributedGraph& g, const std::vector<std::size_t>& perm) {
    AttributedGraph p = g;
    for (std::size_t v = 0; v < g.n; ++v)
        for (std::size_t c = 0; c < g.node_dim; ++c) p.x[perm[v] * g.node_dim + c] = g.x[v * g.node_dim + c];
    for (auto& [s, t] : p.edges) {
        s = perm[s];
        t = perm[t];
    }
    return p;
}

TrainSchedule quick(std::size_t epochs, std::uint64_t seed = 7) {
    TrainSchedule s;
    s.lr = 0.001;
    s.batch_size = 10;
    s.epochs = epochs;
    s.seed = seed;
    return s;
}

std::size_t argmax(const std::vector<double>& v) { return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin()); }

}  // namespace

TEST(AttributeGraphs, Examples) {
    const auto edgeless = attribute_graph(WeightedDigraph{3, {}, Date(2020, 1, 1)});
    EXPECT_EQ(edgeless.x, (std::vector<double>{1, 0, 1, 0, 1, 0}));
    EXPECT_TRUE(edgeless.y.empty());

    const auto one = attribute_graph(WeightedDigraph{2, {{0, 1, 0.5}}, Date(2020, 1, 1)});
    EXPECT_EQ(one.x, (std::vector<double>{1, 0.5, 1, 0.5}));
    EXPECT_EQ(one.y, std::vector<double>{0.5});
    EXPECT_EQ(one.node_dim, 2u);
    EXPECT_EQ(one.edge_dim, 1u);

    const auto star = attribute_graph(WeightedDigraph{4, {{0, 1, 1.0}, {2, 0, 1.0}, {0, 3, 1.0}}, Date(2020, 1, 1)});
    EXPECT_EQ(star.x, (std::vector<double>{1, 3, 1, 1, 1, 1, 1, 1}));
}

TEST(Batch, DisjointUnionWithBidirectionalEdges) {
    const std::vector<AttributedGraph> gs{attribute_graph(WeightedDigraph{2, {{0, 1, 0.5}}, Date(2020, 1, 1)}),
                                          attribute_graph(WeightedDigraph{3, {{2, 1, 0.25}}, Date(2020, 1, 2)})};
    const std::vector<std::size_t> members{0, 1};
    const auto b = make_batch(gs, members);
    EXPECT_EQ(b.nodes, 5u);
    EXPECT_EQ(b.src, (std::vector<std::size_t>{0, 1, 4, 3}));
    EXPECT_EQ(b.dst, (std::vector<std::size_t>{1, 0, 3, 4}));
    EXPECT_EQ(b.segment, (std::vector<std::size_t>{0, 0, 1, 1, 1}));
    EXPECT_EQ(b.y.rows(), 4u);
    EXPECT_EQ(b.y(3, 0), 0.25);
}

TEST(GineForward, NoEdgesIsPureTransform) {
    std::mt19937_64 rng(1);
    const auto model = init_gine({2, 1, 4, 1}, rng, false);
    const auto g = attribute_graph(WeightedDigraph{3, {}, Date(2020, 1, 1)});
    const auto out = gine_forward(model, g);
    const auto& l = model.layers[0];
    const auto expected = ad::matmul(ad::relu(ad::matmul(ad::Tensor(3, 2, g.x), l.w1)), l.w2);
    const auto got = out.node_embeddings[0];
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_DOUBLE_EQ(got.data()[i], expected.data()[i]);
    EXPECT_EQ(out.graph_embedding.cols(), 4u);
}

TEST(GineForward, VertexTransitiveGraphHasEqualEmbeddings) {
    std::mt19937_64 rng(2);
    const auto model = init_gine({2, 1, 10, 3}, rng, false);
    const auto g = attribute_graph(WeightedDigraph{6, {{0, 1, .4}, {1, 2, .4}, {2, 3, .4}, {3, 4, .4}, {4, 5, .4}, {5, 0, .4}}, Date(2020, 1, 1)});
    const auto out = gine_forward(model, g);
    for (const auto& h : out.node_embeddings)
        for (std::size_t v = 1; v < 6; ++v)
            for (std::size_t c = 0; c < h.cols(); ++c) EXPECT_NEAR(h(v, c), h(0, c), 1e-12);
}

TEST(GineForward, PermutationEquivariant) {
    std::mt19937_64 rng(3);
    for (int rep = 0; rep < 30; ++rep) {
        const auto model = init_gine({2, 1, 10, static_cast<std::size_t>(1 + rep % 3)}, rng, false);
        const auto g = attribute_graph(random_digraph(rng, 3 + rng() % 12, 0.4));
        std::vector<std::size_t> perm(g.n);
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        const auto a = gine_forward(model, g), b = gine_forward(model, permuted(g, perm));
        for (std::size_t l = 0; l < a.node_embeddings.size(); ++l)
            for (std::size_t v = 0; v < g.n; ++v)
                for (std::size_t c = 0; c < a.node_embeddings[l].cols(); ++c)
                    EXPECT_NEAR(b.node_embeddings[l](perm[v], c), a.node_embeddings[l](v, c), 1e-12);
        for (std::size_t c = 0; c < a.graph_embedding.cols(); ++c) EXPECT_NEAR(a.graph_embedding(0, c), b.graph_embedding(0, c), 1e-12);
    }
}

TEST(GineForward, ShapeMismatch) {
    std::mt19937_64 rng(4);
    const auto model = init_gine({3, 1, 4, 2}, rng);
    EXPECT_THROW(gine_forward(model, attribute_graph(WeightedDigraph{2, {}, Date(2020, 1, 1)})), ShapeError);
    AttributedGraph bad = attribute_graph(WeightedDigraph{2, {{0, 1, .3}}, Date(2020, 1, 1)});
    bad.edges[0].second = 5;
    EXPECT_THROW(validate(bad), ShapeError);
}

TEST(GradCheck, GineLayerAndBothLosses) {
    for (int seed = 0; seed < 20; ++seed) {
        std::mt19937_64 rng(static_cast<unsigned>(100 + seed));
        std::vector<AttributedGraph> gs;
        for (int i = 0; i < 3; ++i) gs.push_back(attribute_graph(random_digraph(rng, 4 + rng() % 5, 0.5)));
        std::vector<std::size_t> members(gs.size());
        std::iota(members.begin(), members.end(), 0);
        const auto batch = make_batch(gs, members);

        auto model = init_gine({2, 1, 5, 2}, rng);
        // Nonzero eps so its gradient path is exercised away from the initial point.
        model.layers[0].eps.mutable_data()[0] = 0.3;
        const auto layer = grad_check::compare({model.layers[0].eps, model.layers[0].edge_proj, model.layers[0].w1, model.layers[0].w2},
                                               [&] { return ad::squared_norm(gine_layer(model.layers[0], batch.x, batch)); });
        EXPECT_LT(layer.relative(), 1e-4) << "seed " << seed;

        std::vector<double> center(model.embedding_dim());
        for (auto& c : center) c = std::uniform_real_distribution<double>(-1, 1)(rng);
        const auto oc = grad_check::compare(model.parameters(), [&] { return ocgin_loss(model, center, batch); });
        EXPECT_LT(oc.relative(), 1e-4) << "seed " << seed;

        const auto teacher = init_gine({2, 1, 5, 2}, rng, false);
        const auto kd = grad_check::compare(model.parameters(), [&] { return glocal_loss(teacher, model, 0.5, batch); });
        EXPECT_LT(kd.relative(), 1e-4) << "seed " << seed;
    }
}

TEST(Ocgin, IdenticalGraphsReachZeroLoss) {
    std::mt19937_64 rng(5);
    const auto g = attribute_graph(random_digraph(rng, 8, 0.4));
    const std::vector<AttributedGraph> gs(10, g);
    OcginConfig cfg;
    cfg.schedule = quick(200);
    // Training starts exactly at the optimum (every embedding equals c), so
    // the first epoch is an unbeatable best and the plateau stop would end
    // the run while Adam is still settling after its first sign-like steps.
    cfg.schedule.patience = 200;
    const auto st = ocgin_train(gs, cfg);
    ASSERT_FALSE(st.loss_history.empty());
    EXPECT_LE(st.loss_history.size(), 200u);
    EXPECT_LT(st.loss_history.back(), 1e-6);
    for (double s : ocgin_scores(st, gs)) EXPECT_LT(s, 1e-6);
}

TEST(Ocgin, ZeroOutputMapsGiveCentreNorm) {
    std::mt19937_64 rng(6);
    std::vector<AttributedGraph> gs;
    for (int i = 0; i < 8; ++i) gs.push_back(attribute_graph(random_digraph(rng, 6, 0.5)));
    OcginConfig cfg;
    cfg.weight_decay = 0.0;
    auto st = ocgin_init(gs, cfg, rng);
    for (auto& l : st.model.layers)
        for (auto& v : l.w2.mutable_data()) v = 0.0;
    double c2 = 0.0;
    for (double c : st.center) c2 += c * c;
    std::vector<std::size_t> members(gs.size());
    std::iota(members.begin(), members.end(), 0);
    EXPECT_DOUBLE_EQ(ocgin_loss(st.model, st.center, make_batch(gs, members)).item(), c2);
}

TEST(Ocgin, ScoresNonNegativeAndZeroAtCentre) {
    std::mt19937_64 rng(7);
    std::vector<AttributedGraph> gs{attribute_graph(random_digraph(rng, 7, 0.5))};
    OcginConfig cfg;
    const auto st = ocgin_init(gs, cfg, rng);  // centre = the single graph's embedding
    EXPECT_EQ(ocgin_score(st, gs[0]), 0.0);
    for (int i = 0; i < 20; ++i) EXPECT_GE(ocgin_score(st, attribute_graph(random_digraph(rng, 7, 0.5))), 0.0);
    EXPECT_THROW(ocgin_train({}, cfg), DataError);
}

TEST(Ocgin, DeterministicAndSeedDependent) {
    std::mt19937_64 rng(8);
    std::vector<AttributedGraph> gs;
    for (int i = 0; i < 30; ++i) gs.push_back(attribute_graph(random_digraph(rng, 5 + rng() % 6, 0.4)));
    OcginConfig cfg;
    cfg.schedule = quick(60);
    const auto a = ocgin_train(gs, cfg), b = ocgin_train(gs, cfg);
    EXPECT_EQ(a.model.checksum(), b.model.checksum());
    EXPECT_EQ(a.loss_history, b.loss_history);
    cfg.schedule.seed = 8;
    const auto c = ocgin_train(gs, cfg);
    EXPECT_NE(a.model.checksum(), c.model.checksum());
    for (const auto* st : {&a, &c}) {
        // Ten-epoch moving average of the loss does not rise.
        const auto& h = st->loss_history;
        ASSERT_GE(h.size(), 20u);
        const auto avg = [&](std::size_t end) { return std::accumulate(h.begin() + static_cast<std::ptrdiff_t>(end - 10), h.begin() + static_cast<std::ptrdiff_t>(end), 0.0) / 10.0; };
        for (std::size_t e = 11; e <= h.size(); ++e) EXPECT_LE(avg(e), avg(e - 1) * (1.0 + 1e-9));
    }
}

TEST(Ocgin, NoCollapseOnHeterogeneousData) {
    std::mt19937_64 rng(9);
    std::vector<AttributedGraph> gs;
    for (int i = 0; i < 40; ++i) gs.push_back(attribute_graph(random_digraph(rng, 4 + rng() % 10, 0.1 + 0.02 * i)));
    OcginConfig cfg;
    cfg.schedule = quick(150);
    const auto scores = ocgin_scores(ocgin_train(gs, cfg), gs);
    const double mean = std::accumulate(scores.begin(), scores.end(), 0.0) / static_cast<double>(scores.size());
    double var = 0.0;
    for (double s : scores) var += (s - mean) * (s - mean) / static_cast<double>(scores.size());
    EXPECT_GT(var, 1e-8);
}

TEST(Ocgin, PlantedOutlierScoresHighest) {
    std::mt19937_64 rng(10);
    std::vector<AttributedGraph> gs;
    for (int i = 0; i < 40; ++i) gs.push_back(attribute_graph(ring(rng, 10, 0.02)));
    gs.push_back(attribute_graph(complete(10, 0.9)));
    OcginConfig cfg;
    cfg.schedule = quick(100);
    EXPECT_EQ(argmax(ocgin_scores(ocgin_train(gs, cfg), gs)), gs.size() - 1);
}

TEST(Glocal, StudentEqualToTeacherGivesZero) {
    std::mt19937_64 rng(11);
    std::vector<AttributedGraph> gs;
    for (int i = 0; i < 5; ++i) gs.push_back(attribute_graph(random_digraph(rng, 6, 0.5)));
    GlocalConfig cfg;
    auto st = glocal_init(gs, cfg, rng);
    st.student = st.teacher.clone();
    st.student.set_trainable(true);
    for (double s : glocalkd_scores(st, gs)) EXPECT_EQ(s, 0.0);
    std::vector<std::size_t> members(gs.size());
    std::iota(members.begin(), members.end(), 0);
    const auto loss = glocal_loss(st.teacher, st.student, st.lambda, make_batch(gs, members));
    EXPECT_EQ(loss.item(), 0.0);
    ad::backward(loss);
    for (const auto& p : st.student.parameters())
        for (double g : p.grad()) EXPECT_EQ(g, 0.0);
}

TEST(Glocal, LambdaZeroIsGraphTermOnly) {
    std::mt19937_64 rng(12);
    const auto g = attribute_graph(random_digraph(rng, 7, 0.5));
    GlocalConfig cfg;
    cfg.lambda = 0.0;
    const auto st = glocal_init({g}, cfg, rng);
    const auto t = gine_forward(st.teacher, g).graph_embedding, s = gine_forward(st.student, g).graph_embedding;
    double expected = 0.0;
    for (std::size_t c = 0; c < t.size(); ++c) expected += (s.data()[c] - t.data()[c]) * (s.data()[c] - t.data()[c]);
    EXPECT_NEAR(glocalkd_score(st, g), expected, 1e-14 * std::max(1.0, expected));

    // With lambda > 0 the node term is added on top.
    cfg.lambda = 0.5;
    auto st2 = st;
    st2.lambda = 0.5;
    const auto tn = gine_forward(st.teacher, g).node_embeddings.back(), sn = gine_forward(st.student, g).node_embeddings.back();
    double node = 0.0;
    for (std::size_t i = 0; i < tn.size(); ++i) node += (sn.data()[i] - tn.data()[i]) * (sn.data()[i] - tn.data()[i]);
    node /= static_cast<double>(g.n);
    EXPECT_NEAR(glocalkd_score(st2, g), expected + 0.5 * node, 1e-12);
}

TEST(Glocal, TrainingReducesLossAndFreezesTeacher) {
    std::mt19937_64 rng(13);
    std::vector<AttributedGraph> gs;
    for (int i = 0; i < 50; ++i) gs.push_back(attribute_graph(random_digraph(rng, 4 + rng() % 10, 0.3)));
    GlocalConfig cfg;
    cfg.schedule = quick(80);
    std::mt19937_64 init_rng(cfg.schedule.seed);
    auto st = glocal_init(gs, cfg, init_rng);
    const auto before = glocalkd_scores(st, gs);
    const auto teacher_sum = st.teacher.checksum();
    glocal_fit(st, gs, init_rng);
    const auto after = glocalkd_scores(st, gs);
    EXPECT_EQ(st.teacher.checksum(), teacher_sum);
    const auto mean = [](const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); };
    EXPECT_LT(mean(after), mean(before));
    for (double s : after) EXPECT_GE(s, 0.0);

    // glocalkd_train is the same as init + fit from the seed.
    EXPECT_EQ(glocalkd_train(gs, cfg).student.checksum(), st.student.checksum());
    EXPECT_THROW(glocalkd_train({}, cfg), DataError);
    cfg.lambda = -1.0;
    EXPECT_THROW(glocalkd_train(gs, cfg), ConfigError);
}

TEST(Glocal, PlantedOutlierInTopThree) {
    std::mt19937_64 rng(14);
    std::vector<AttributedGraph> gs;
    for (int i = 0; i < 40; ++i) gs.push_back(attribute_graph(ring(rng, 10, 0.02)));
    gs.push_back(attribute_graph(complete(10, 0.9)));
    GlocalConfig cfg;
    cfg.schedule = quick(100);
    const auto scores = glocalkd_scores(glocalkd_train(gs, cfg), gs);
    std::size_t above = 0;
    for (double s : scores) above += s > scores.back();
    EXPECT_LT(above, 3u);
}

TEST(Checkpoint, RoundTripsBothModels) {
    std::mt19937_64 rng(15);
    std::vector<AttributedGraph> gs;
    for (int i = 0; i < 12; ++i) gs.push_back(attribute_graph(random_digraph(rng, 6, 0.4)));
    OcginConfig oc;
    oc.schedule = quick(5);
    const auto a = ocgin_train(gs, oc);
    const auto a2 = ocgin_from_checkpoint(decode_checkpoint(encode_checkpoint(to_checkpoint(a))));
    EXPECT_EQ(a2.model.checksum(), a.model.checksum());
    EXPECT_EQ(a2.center, a.center);
    EXPECT_EQ(ocgin_scores(a2, gs), ocgin_scores(a, gs));

    GlocalConfig kd;
    kd.schedule = quick(5);
    kd.lambda = 0.9;
    const auto b = glocalkd_train(gs, kd);
    const auto bytes = encode_checkpoint(to_checkpoint(b));
    const auto b2 = glocal_from_checkpoint(decode_checkpoint(bytes));
    EXPECT_EQ(b2.lambda, 0.9);
    EXPECT_EQ(glocalkd_scores(b2, gs), glocalkd_scores(b, gs));

    EXPECT_THROW(ocgin_from_checkpoint(decode_checkpoint(bytes)), ParseError);
    EXPECT_THROW(decode_checkpoint("XXXX" + bytes.substr(4)), ParseError);
    EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() - 3)), ParseError);
    EXPECT_THROW(decode_checkpoint(bytes + "x"), ParseError);
}
