#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>

#include "symdistill/graphnet.hpp"

using namespace symdistill;
using namespace symdistill::gn;

namespace {

Graph random_graph(int n, int width, int out, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Graph g;
    g.nodes.resize(n, width);
    g.targets.resize(n, out);
    for (Eigen::Index i = 0; i < g.nodes.size(); ++i) g.nodes.data()[i] = normal(rng);
    for (Eigen::Index i = 0; i < g.targets.size(); ++i) g.targets.data()[i] = normal(rng);
    fully_connected_edges(n, g.receivers, g.senders);
    return g;
}

GnModel small_model(Variant v, std::uint64_t seed = 1, int node_dim = 6, int out_dim = 2) {
    GnConfig c;
    c.variant = v;
    c.node_dim = node_dim;
    c.out_dim = out_dim;
    c.hidden = 16;
    c.message_dim = v == Variant::Bottleneck ? 0 : 8;
    return GnModel(c, seed);
}

nbody::Dataset tiny_spring(int sims, std::uint64_t seed) {
    auto cfg = nbody::SimConfig::paper_defaults(nbody::Law::Spring, 4, 2, seed);
    cfg.n_steps = 100;
    return nbody::generate_dataset(cfg, sims);
}

}  // namespace

TEST_CASE("message aggregation") {
    SUBCASE("zero edge network gives zero messages") {
        auto m = small_model(Variant::L1);
        m.phi_e = nn::MlpParams::zeros(m.phi_e.layer_sizes());
        const auto r = gn_forward(m, random_graph(4, 6, 2, 3));
        CHECK(r.messages.cwiseAbs().maxCoeff() == 0.0);
        CHECK(r.summed.cwiseAbs().maxCoeff() == 0.0);
        CHECK(r.messages.rows() == 12);
    }
    SUBCASE("hand-computed sums on three nodes") {
        // phi_e passes the sender's (positive) feature 0 into message slot 0.
        GnConfig c;
        c.variant = Variant::Standard;
        c.node_dim = 2;
        c.out_dim = 1;
        c.hidden = 2;
        c.message_dim = 2;
        GnModel m(c, 0);
        m.phi_e = nn::MlpParams::zeros({4, 2, 2, 2});
        m.phi_e.weight(0)(2, 0) = 1.0;
        m.phi_e.weight(1)(0, 0) = 1.0;
        m.phi_e.weight(2)(0, 0) = 1.0;
        Graph g;
        g.nodes.resize(3, 2);
        g.nodes << 2.0, 0.0, 5.0, 0.0, 7.0, 0.0;
        g.receivers = {0, 0, 1};
        g.senders = {1, 2, 2};
        const auto r = gn_forward(m, g);
        CHECK(r.summed(0, 0) == 12.0);  // 5 + 7
        CHECK(r.summed(1, 0) == 7.0);
        CHECK(r.summed(2, 0) == 0.0);  // no incoming edges
        CHECK(r.summed.col(1).cwiseAbs().maxCoeff() == 0.0);
    }
    SUBCASE("edge count on fully connected graphs") {
        std::vector<int> rr, ss;
        for (int n : {2, 4, 8}) {
            fully_connected_edges(n, rr, ss);
            CHECK(static_cast<int>(rr.size()) == n * (n - 1));
            for (std::size_t k = 0; k < rr.size(); ++k) CHECK(rr[k] != ss[k]);
        }
    }
    SUBCASE("bad indices") {
        auto g = random_graph(3, 6, 2, 1);
        g.senders[0] = 5;
        CHECK_THROWS_AS(gn_forward(small_model(Variant::L1), g), ShapeMismatch);
        CHECK_THROWS_AS(gn_forward(small_model(Variant::L1), random_graph(3, 5, 2, 1)), ShapeMismatch);
    }
}

TEST_CASE("variant message widths") {
    GnConfig c;
    c.node_dim = 6;
    c.out_dim = 2;
    c.hidden = 8;
    c.variant = Variant::Bottleneck;
    CHECK(GnModel(c, 0).message_dim() == 2);
    c.variant = Variant::L1;
    CHECK(GnModel(c, 0).message_dim() == 100);
    c.variant = Variant::KL;
    const GnModel kl(c, 0);
    CHECK(kl.message_dim() == 100);
    CHECK(kl.phi_e.output_size() == 200);
    CHECK(TrainConfig::for_variant(Variant::L1).alpha1 == 1e-2);
    CHECK(TrainConfig::for_variant(Variant::KL).alpha1 == 1.0);
    CHECK(TrainConfig::for_variant(Variant::Standard).alpha1 == 0.0);
    CHECK(TrainConfig::for_variant(Variant::Bottleneck).alpha2 == 1e-8);
}

TEST_CASE("loss components") {
    TrainConfig tc = TrainConfig::for_variant(Variant::L1);
    SUBCASE("zero messages under L1") {
        auto m = small_model(Variant::L1);
        m.phi_e = nn::MlpParams::zeros(m.phi_e.layer_sizes());
        CHECK(loss(m, random_graph(4, 6, 2, 2), tc).l_e == 0.0);
    }
    SUBCASE("KL at the prior") {
        auto m = small_model(Variant::KL);
        m.phi_e = nn::MlpParams::zeros(m.phi_e.layer_sizes());
        CHECK(loss(m, random_graph(4, 6, 2, 2), TrainConfig::for_variant(Variant::KL)).l_e ==
              doctest::Approx(0.0).epsilon(1e-14));
    }
    SUBCASE("KL with one shifted mean on a single edge") {
        auto m = small_model(Variant::KL);
        m.phi_e = nn::MlpParams::zeros(m.phi_e.layer_sizes());
        m.phi_e.bias(2)(0, 0) = 1.0;
        Graph g = random_graph(2, 6, 2, 4);
        g.receivers = {0};
        g.senders = {1};
        CHECK(loss(m, g, TrainConfig::for_variant(Variant::KL)).l_e == doctest::Approx(0.5).epsilon(1e-14));
    }
    SUBCASE("weight penalty and total") {
        auto m = small_model(Variant::L1);
        const auto g = random_graph(4, 6, 2, 5);
        const auto l = loss(m, g, tc);
        double w2 = 0.0;
        for (double x : m.phi_e.flat()) w2 += x * x;
        for (double x : m.phi_v.flat()) w2 += x * x;
        CHECK(l.l_n == doctest::Approx(w2).epsilon(1e-12));
        CHECK(l.total == doctest::Approx(l.l_v + 1e-2 * l.l_e + 1e-8 * l.l_n).epsilon(1e-12));
        const auto r = gn_forward(m, g);
        CHECK(l.l_v == doctest::Approx((r.predictions - g.targets).cwiseAbs().sum() / 4.0).epsilon(1e-12));
        CHECK(l.l_e == doctest::Approx(r.messages.cwiseAbs().sum() / 12.0).epsilon(1e-12));
    }
}

TEST_CASE("permutation equivariance") {
    for (Variant v : {Variant::Standard, Variant::L1, Variant::Bottleneck}) {
        const auto m = small_model(v, 3);
        const auto g = random_graph(5, 6, 2, 9);
        std::vector<int> perm = {3, 0, 4, 1, 2};  // new index of old node i
        Graph p = g;
        for (int i = 0; i < 5; ++i) p.nodes.row(perm[i]) = g.nodes.row(i);
        std::vector<int> rr, ss;
        for (int k = 0; k < g.n_edges(); ++k) {
            rr.push_back(perm[g.receivers[k]]);
            ss.push_back(perm[g.senders[k]]);
        }
        p.receivers = rr;
        p.senders = ss;
        const auto a = gn_forward(m, g).predictions;
        const auto b = gn_forward(m, p).predictions;
        for (int i = 0; i < 5; ++i)
            for (int d = 0; d < 2; ++d)
                CHECK(std::abs(a(i, d) - b(perm[i], d)) <= 1e-9 * std::max(1.0, std::abs(a(i, d))));
    }
}

TEST_CASE("KL sampling with zero variance equals the mean path") {
    const auto m = small_model(Variant::KL, 2);
    const auto g = random_graph(4, 6, 2, 6);
    ForwardOptions sampled;
    sampled.logvar_override = -std::numeric_limits<double>::infinity();
    ForwardOptions means;
    means.sample = false;
    CHECK((gn_forward(m, g, sampled).predictions - gn_forward(m, g, means).predictions).cwiseAbs().maxCoeff() == 0.0);
    ForwardOptions noisy;
    CHECK((gn_forward(m, g, noisy).predictions - gn_forward(m, g, means).predictions).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("particle graphs") {
    const auto data = tiny_spring(3, 1);
    const auto g = particle_graph(data.sims[0], 10);
    CHECK(g.nodes.cols() == 6);
    CHECK(g.n_edges() == 12);
    CHECK(g.nodes(2, 4) == data.sims[0].masses[2]);
    CHECK(g.nodes(1, 5) == data.sims[0].charges[1]);
    CHECK(g.targets(3, 1) == data.sims[0].acceleration(10, 3)[1]);
    CHECK(snapshot_steps(1000, 50).size() == 50);
    CHECK(snapshot_steps(1000, 50)[1] == 20);
    const auto batch = batch_graphs(dataset_graphs(data, false, 4));
    CHECK(batch.n_nodes() == 2 * 4 * 4);
    CHECK(batch.receivers.back() == batch.n_nodes() - 1);
}

TEST_CASE("training contracts") {
    const auto data = tiny_spring(10, 2);
    auto tc = TrainConfig::for_variant(Variant::L1);
    tc.epochs = 3;
    tc.hidden = 32;
    tc.snapshots_per_sim = 20;
    tc.seed = 5;
    const auto a = train(data, Variant::L1, tc);
    const auto b = train(data, Variant::L1, tc);
    CHECK(a.model == b.model);
    CHECK(a.train_lv.size() == 3);

    const auto train_set = dataset_graphs(data, false, 20);
    CHECK(evaluate(a.model, train_set) == a.train_lv.back());

    GnConfig gc;
    gc.variant = Variant::L1;
    gc.hidden = 32;
    const GnModel untrained(gc, 5);
    const auto test_set = dataset_graphs(data, true, 20);
    CHECK(evaluate(untrained, test_set) > evaluate(a.model, test_set));

    SUBCASE("zero predictor equals mean acceleration norm") {
        GnModel zero = untrained;
        zero.phi_v = nn::MlpParams::zeros(zero.phi_v.layer_sizes());
        double s = 0.0;
        long n = 0;
        for (const auto& g : test_set) {
            s += g.targets.cwiseAbs().sum();
            n += g.n_nodes();
        }
        CHECK(evaluate(zero, test_set) == doctest::Approx(s / n).epsilon(1e-12));
    }
    SUBCASE("checkpoint round trip") {
        const auto path = std::filesystem::temp_directory_path() / "symdistill_gn.ckpt";
        nn::save_checkpoint(a.model.to_checkpoint(), path);
        CHECK(GnModel::from_checkpoint(nn::load_checkpoint(path)) == a.model);
    }
    SUBCASE("non-finite targets diverge") {
        auto bad = train_set;
        bad[0].targets(0, 0) = std::nan("");
        auto t1 = tc;
        t1.epochs = 1;
        CHECK_THROWS_AS(train_graphs(untrained, bad, {}, t1), DivergedLoss);
    }
}

TEST_CASE("target subsets") {
    const auto m = small_model(Variant::L1, 4, 6, 1);
    Graph g = random_graph(4, 6, 1, 8);
    const auto full = gn_forward(m, g).predictions;
    Graph sub = g;
    sub.target_nodes = {2};
    sub.targets = g.targets.middleRows(2, 1);
    const auto part = gn_forward(m, sub).predictions;
    CHECK(part.rows() == 1);
    CHECK(part(0, 0) == doctest::Approx(full(2, 0)).epsilon(1e-14));
    const Graph both[] = {sub, g};
    const auto batch = batch_graphs(both);
    CHECK(batch.target_nodes == std::vector<int>{2, 4, 5, 6, 7});
    CHECK(batch.targets.rows() == 5);
}
