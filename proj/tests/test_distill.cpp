#include "doctest.h"

#include <cmath>

#include "symdistill/distill.hpp"

using namespace symdistill;
using namespace symdistill::distill;

namespace {

nbody::Dataset tiny(nbody::Law law, int sims, int bodies = 4, std::uint64_t seed = 3) {
    auto cfg = nbody::SimConfig::paper_defaults(law, bodies, 2, seed);
    cfg.n_steps = 100;
    return nbody::generate_dataset(cfg, sims);
}

gn::GnModel small_model(gn::Variant v, std::uint64_t seed = 1) {
    gn::GnConfig c;
    c.variant = v;
    c.hidden = 16;
    c.message_dim = v == gn::Variant::Bottleneck ? 0 : 8;
    return gn::GnModel(c, seed);
}

sr::GpConfig quick_gp(std::uint64_t seed = 0) {
    sr::GpConfig c;
    c.population = 200;
    c.generations = 20;
    c.hof_every = 10;
    c.seed = seed;
    return c;
}

sr::Expression parse_edge(const std::string& s) {
    const auto names = edge_feature_names(2);
    return sr::parse(s, names);
}

sr::Expression parse_node(const std::string& s) {
    const auto names = node_feature_names(2, 2);
    return sr::parse(s, names);
}

}  // namespace

TEST_CASE("feature names") {
    CHECK(edge_feature_names(2) == std::vector<std::string>{"m1", "m2", "q1", "q2", "dx", "dy", "r"});
    CHECK(edge_feature_names(3).size() == 8);
    CHECK(node_feature_names(2, 2) == std::vector<std::string>{"x", "y", "vx", "vy", "m", "q", "e0", "e1"});
}

TEST_CASE("edge sample table") {
    const auto data = tiny(nbody::Law::Spring, 10);
    const auto model = small_model(gn::Variant::L1);
    const auto t = record_edge_samples(model, data, 500, 7);
    REQUIRE(t.features.rows() == 500);
    REQUIRE(t.messages.rows() == 500);
    CHECK(t.messages.cols() == 2);
    CHECK(t.components.size() == 2);
    for (int i = 0; i < 500; ++i) {
        const double r = std::sqrt(t.features(i, 4) * t.features(i, 4) + t.features(i, 5) * t.features(i, 5));
        CHECK(t.features(i, 6) == doctest::Approx(r).epsilon(1e-14));
        CHECK(t.features(i, 0) > 0.0);
    }
    const auto again = record_edge_samples(model, data, 500, 7);
    CHECK(again.features == t.features);
    CHECK(again.messages == t.messages);
    CHECK(record_edge_samples(model, data, 500, 8).features != t.features);

    // messages match a direct forward pass on the same snapshot
    const auto bn = small_model(gn::Variant::Bottleneck);
    const auto tb = record_edge_samples(bn, data, 50, 1);
    CHECK(tb.messages.cols() == 2);
    const auto sd = [&](int c) {
        const auto& m = t.messages.col(c);
        return std::sqrt((m.array() - m.mean()).square().mean());
    };
    CHECK(sd(0) >= sd(1));
    CHECK(t.data(0).y == t.messages.col(0));
    CHECK_THROWS_AS(t.data(2), InvalidArgument);
}

TEST_CASE("symbolic composite") {
    const auto data = tiny(nbody::Law::Spring, 10);
    const auto graphs = gn::dataset_graphs(data, false, 10);
    const std::vector<sr::Expression> edge = {parse_edge("2*((r+0.01)-1)*dx/r"), parse_edge("2*((r+0.01)-1)*dy/r")};
    const std::vector<sr::Expression> node = {parse_node("e0/m"), parse_node("e1/m")};
    SymbolicModel exact;
    exact.edge = edge;
    exact.node = node;
    CHECK(exact.mae(graphs) < 1e-9);

    SUBCASE("refit never worse and improves a perturbed composite") {
        std::vector<sr::Expression> bad = {parse_edge("2.3*((r+0.01)-0.8)*dx/r"), parse_edge("2*((r+0.01)-1)*dy/r")};
        SymbolicModel before;
        before.edge = bad;
        before.node = node;
        const double b = before.mae(graphs);
        RefitOptions o;
        o.snapshots = 40;
        o.max_evals = 800;
        const auto m = compose_and_refit(bad, node, data, 10, o);
        CHECK(m.train_mae <= b);
        CHECK(m.train_mae < 0.2 * b);
        CHECK(std::isfinite(m.test_mae));
        const auto j = m.to_json();
        CHECK(j["edge"].size() == 2);
        CHECK(j.contains("test_mae"));
    }
    SUBCASE("non-finite composite") {
        const std::vector<sr::Expression> logy = {parse_edge("log(dx)"), parse_edge("dy")};
        CHECK_THROWS_AS(compose_and_refit(logy, node, data, 10, RefitOptions{10, 50, 0}), NonFiniteComposite);
    }
    SUBCASE("wrong arity") {
        CHECK_THROWS_AS(compose_and_refit(edge, {node[0]}, data, 10), InvalidArgument);
    }
}

TEST_CASE("if threshold") {
    const auto names = edge_feature_names(2);
    CHECK(if_threshold(parse_edge("IF(r > 2.05, dx, 0)"), 6).value() == doctest::Approx(2.05));
    CHECK(if_threshold(parse_edge("dx + IF(1.9 < r, dx*r, 0)"), 6).value() == doctest::Approx(1.9));
    CHECK_FALSE(if_threshold(parse_edge("IF(dx > 2, r, 0)"), 6).has_value());
    CHECK_FALSE(if_threshold(parse_edge("dx*r"), 6).has_value());
}

TEST_CASE("distill edge and node") {
    const auto data = tiny(nbody::Law::Spring, 10);
    SUBCASE("edge law from a synthetic table") {
        EdgeSampleTable t;
        t.names = edge_feature_names(2);
        const auto model = small_model(gn::Variant::Bottleneck);
        t = record_edge_samples(model, data, 1000, 2);
        // replace the messages by the spring form a*dx*(r-1)+b
        for (int i = 0; i < 1000; ++i) t.messages(i, 0) = 0.7 * t.features(i, 4) * (t.features(i, 6) - 1.0) + 0.1;
        auto gp = quick_gp(4);
        gp.generations = 60;
        const auto d = distill_edge(t, gp);
        const auto y = t.messages.col(0);
        const double sd = std::sqrt((y.array() - y.mean()).square().mean());
        CHECK(d.train_mae < 0.05 * sd);
        CHECK(d.target == "phi_e1");
        CHECK(d.to_json(t.names)["front"].size() == d.front.size());
    }
    SUBCASE("constant node model") {
        auto model = small_model(gn::Variant::Bottleneck);
        for (int l = 0; l < model.phi_v.n_layers(); ++l) model.phi_v.weight(l).setZero();
        model.phi_v.bias(2).setConstant(0.25);
        const std::vector<int> comps = {0, 1};
        const auto out = distill_node(model, data, quick_gp(), comps, 300, 1);
        REQUIRE(out.size() == 2);
        for (const auto& d : out) {
            CHECK(d.expr.complexity() == 1);
            CHECK(d.train_mae < 1e-9);
        }
        const auto again = distill_node(model, data, quick_gp(), comps, 300, 1);
        CHECK(again[0].expr.to_string(node_feature_names(2, 2)) == out[0].expr.to_string(node_feature_names(2, 2)));
    }
}

TEST_CASE("pair energy table") {
    const auto data = tiny(nbody::Law::Charge, 6);
    hgn::HgnConfig c;
    c.hidden = 16;
    const hgn::FlatHgn model(c, 3);
    const auto t = record_pair_energy_samples(model, data, 100, 5);
    CHECK(t.names.size() == 11);
    CHECK(t.messages.cols() == 1);
    CHECK(t.features.rows() == 100);
    CHECK(t.messages.allFinite());
}

TEST_CASE("toy factorization") {
    ToyOptions o;
    o.samples = 40;
    o.series = 10;
    o.hidden = 8;
    o.epochs = 2;
    o.gp = quick_gp();
    o.gp.generations = 5;
    const auto a = toy_factorization_demo(1, o);
    const auto b = toy_factorization_demo(1, o);
    CHECK(a.g_rel_mae == b.g_rel_mae);
    CHECK(a.to_json().dump() == b.to_json().dump());
    CHECK(a.g_rel_mae >= 0.0);
    o.features = 2;
    CHECK_THROWS_AS(toy_factorization_demo(1, o), InvalidArgument);
}

TEST_CASE("pure SR baseline") {
    auto cfg = nbody::SimConfig::paper_defaults(nbody::Law::InvR2, 6, 2, 2);
    cfg.n_steps = 50;
    const auto data = nbody::generate_dataset(cfg, 5);
    auto gp = quick_gp(9);
    gp.generations = 5;
    const auto a = pure_sr_baseline(data, gp, 0, 0, 300, 4);
    const auto b = pure_sr_baseline(data, gp, 0, 0, 300, 4);
    CHECK(a.names.size() == 36);
    CHECK(a.rows.x.cols() == 36);
    CHECK(a.to_json().dump() == b.to_json().dump());
    CHECK(a.to_json()["front"].size() == a.front.size());
    CHECK(a.best_mae == a.front.best()->mae);
    CHECK_THROWS_AS(pure_sr_baseline(data, gp, 6, 0, 10), InvalidArgument);
    // the rows hold each body's raw features
    const auto g = gn::particle_graph(data.sims[a.refs[0].sim], a.refs[0].step);
    CHECK(a.rows.x(0, 6) == g.nodes(1, 0));
    CHECK(a.rows.y(0) == g.targets(0, 0));

    SymbolicModel exact;
    exact.edge = {sr::parse("m1*m2*dx/(r*pow(r+0.01,2))", edge_feature_names(2)),
                  sr::parse("m1*m2*dy/(r*pow(r+0.01,2))", edge_feature_names(2))};
    exact.node = {parse_node("e0/m"), parse_node("e1/m")};
    CHECK(target_mae(exact, data, a) < 1e-9);
}
