#include "doctest.h"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include "symdistill/cosmo.hpp"

using namespace symdistill;
using namespace symdistill::halo;

namespace {

Halo at(double x, double mass = 1.0, double vx = 0.0) {
    Halo h;
    h.mass = mass;
    h.r = {x, 0.0, 0.0};
    h.v = {vx, 0.0, 0.0};
    return h;
}

HaloCatalog random_catalog(int n, double box, std::uint64_t seed) {
    SyntheticOptions o;
    o.n_halos = n;
    o.box = box;
    o.formula = Formula::Constant;
    return synthetic_catalog(o, seed);
}

std::filesystem::path temp_file(const std::string& name) {
    return std::filesystem::temp_directory_path() / ("symdistill_cosmo_" + name);
}

void write(const std::filesystem::path& p, const std::string& text) {
    std::ofstream(p) << text;
}

}  // namespace

TEST_CASE("catalog io") {
    const auto p = temp_file("three.csv");
    write(p, "mass,rx,ry,rz,vx,vy,vz,delta\n1,0,0,0,0,0,0,0.5\n2.5,1,2,3,-1,0.5,0,-0.25\n0.1,9,9,9,1,1,1,3\n");
    const auto c = load_catalog(p);
    REQUIRE(c.size() == 3);
    CHECK(c.halos[1].mass == 2.5);
    CHECK(c.halos[1].r[2] == 3.0);
    CHECK(c.halos[1].v[0] == -1.0);
    CHECK(c.halos[2].delta == 3.0);

    write(p, "mass,rx,ry,rz,vx,vy,vz,delta\n1,0,0,0,0,0,0,0.5\n0,1,2,3,-1,0.5,0,-0.25\n");
    try {
        load_catalog(p);
        FAIL("expected NonPositiveMass");
    } catch (const NonPositiveMass& e) {
        CHECK(std::string(e.what()).find("line 3") != std::string::npos);
    }
    write(p, "mass,rx,ry,rz,vx,vy,vz,delta\n1,0,0,0,0,0,0\n");
    CHECK_THROWS_AS(load_catalog(p), MalformedRow);
    write(p, "mass,rx,ry,rz,vx,vy,vz,delta\n1,0,0,0,0,x,0,0\n");
    CHECK_THROWS_AS(load_catalog(p), MalformedRow);
    write(p, "mass,rx,ry,rz,vx,vy,vz,delta\n1,0,0,0,0,0,0,-1\n");
    CHECK_THROWS_AS(load_catalog(p), MalformedRow);
    write(p, "m,x,y,z\n1,2,3,4\n");
    CHECK_THROWS_AS(load_catalog(p), SchemaError);
    CHECK_THROWS_AS(load_catalog(temp_file("missing.csv")), IoError);

    SyntheticOptions o;
    o.n_halos = 10000;
    o.radius = 5.0;
    const auto big = synthetic_catalog(o, 4);
    save_catalog(big, p);
    const auto back = load_catalog(p);
    CHECK(format_catalog(back) == format_catalog(big));
    CHECK(back.halos[1234].r[1] == big.halos[1234].r[1]);
    std::filesystem::remove(p);
}

TEST_CASE("halo graph") {
    HaloCatalog two;
    two.halos = {at(0.0), at(49.0)};
    auto g = build_halo_graph(two, 50.0);
    CHECK(g.n_edges() == 2);
    CHECK(g.neighbors == std::vector<int>{1, 0});
    two.halos[1] = at(51.0);
    CHECK(build_halo_graph(two, 50.0).n_edges() == 0);
    // negative coordinates and cells far apart
    two.halos = {at(-0.5), at(0.4)};
    CHECK(build_halo_graph(two, 1.0).n_edges() == 2);
    CHECK_THROWS_AS(build_halo_graph(two, 0.0), InvalidArgument);

    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const auto c = random_catalog(500, 250.0, seed);
        for (double radius : {10.0, 50.0, 120.0}) {
            const auto grid = build_halo_graph(c, radius);
            const auto brute = brute_force_graph(c, radius);
            CHECK(grid.offsets == brute.offsets);
            CHECK(grid.neighbors == brute.neighbors);
        }
    }
}

TEST_CASE("formula predictions") {
    HaloCatalog c;
    c.halos = {at(0.0), at(0.05, 2.0)};
    const auto g = build_halo_graph(c, 50.0);
    const auto best = paper_constants(Formula::BestWithMass);
    auto p = formula_predict(Formula::BestWithMass, best, c, g);
    CHECK(p(0) == doctest::Approx(-0.06709043055623976).epsilon(1e-9));
    CHECK(p(1) == doctest::Approx(-0.10462952321598379).epsilon(1e-9));
    CHECK(std::abs(p(0) - -0.06709043055623976) < 1e-9);

    c.halos = {at(0.0), at(0.05)};
    p = formula_predict(Formula::BestWithMass, best, c, build_halo_graph(c, 50.0));
    CHECK(std::abs(p(0) - -0.10355867068903724) < 1e-9);
    c.halos = {at(0.0), at(10.0)};
    p = formula_predict(Formula::BestWithMass, best, c, build_halo_graph(c, 50.0));
    CHECK(std::abs(p(0) - -0.156) < 1e-9);

    HaloCatalog one;
    one.halos = {at(3.0, 5.0)};
    CHECK(formula_predict(Formula::BestWithMass, best, one, build_halo_graph(one, 50.0))(0) == -0.156);

    c.halos = {at(0.0, 1.0, 1.0), at(0.1)};
    p = formula_predict(Formula::BestNoMass, paper_constants(Formula::BestNoMass), c, build_halo_graph(c, 50.0));
    CHECK(std::abs(p(0) - -0.19858440245836545) < 1e-9);
    CHECK(std::abs(p(1) - -0.19858439779483755) < 1e-9);

    // Simple sums masses within 20 even on a 50-unit graph
    c.halos = {at(0.0, 1.5), at(19.0, 2.0), at(-21.0, 4.0)};
    const auto g3 = build_halo_graph(c, 50.0);
    CHECK(g3.n_edges() == 6);
    p = formula_predict(Formula::Simple, paper_constants(Formula::Simple), c, g3);
    CHECK(std::abs(p(0) - 0.07098100000000002) < 1e-9);

    p = formula_predict(Formula::Constant, paper_constants(Formula::Constant), c, g3);
    CHECK((p.array() == 0.415).all());
    CHECK_THROWS_AS(formula_predict(Formula::Simple, std::vector<double>{1.0}, c, g3), InvalidArgument);

    std::vector<double> zero = best;
    zero[1] = 0.0;
    zero[2] = 0.0;
    CHECK_THROWS_AS(formula_predict(Formula::BestWithMass, zero, c, g3), DivisionDegenerate);
    CHECK(parse_formula("best_with_mass") == Formula::BestWithMass);
    CHECK_THROWS_AS(parse_formula("best"), InvalidArgument);
}

TEST_CASE("formula invariances") {
    SyntheticOptions o;
    o.n_halos = 300;
    o.box = 1.0;
    o.radius = 0.3;
    auto c = synthetic_catalog(o, 2);
    const auto best = paper_constants(Formula::BestWithMass);
    const auto p = formula_predict(Formula::BestWithMass, best, c, build_halo_graph(c, 0.3));

    auto shifted = c;
    for (auto& h : shifted.halos)
        for (int d = 0; d < 3; ++d) h.r[d] += 123.25 - 7.0 * d;
    const auto ps = formula_predict(Formula::BestWithMass, best, shifted, build_halo_graph(shifted, 0.3));
    CHECK((p - ps).cwiseAbs().maxCoeff() < 1e-9);

    std::vector<int> perm(static_cast<std::size_t>(c.size()));
    std::iota(perm.begin(), perm.end(), 0);
    std::mt19937_64 rng(3);
    std::shuffle(perm.begin(), perm.end(), rng);
    const auto permuted = c.subset(perm);
    const auto pp = formula_predict(Formula::BestWithMass, best, permuted, build_halo_graph(permuted, 0.3));
    for (int i = 0; i < c.size(); ++i) CHECK(pp(i) == doctest::Approx(p(perm[i])).epsilon(1e-12));
}

TEST_CASE("refit") {
    SyntheticOptions o;
    o.n_halos = 400;
    o.box = 0.6;
    o.radius = 0.15;
    const auto c = synthetic_catalog(o, 5);
    const auto in = formula_inputs(c, build_halo_graph(c, 0.15));
    const Eigen::VectorXd y = c.deltas();

    HaloRefitOptions ro;
    ro.restarts = 2;
    ro.max_evals = 500;
    const auto r = refit_formula(Formula::Constant, in, y, {}, ro);
    std::vector<double> sorted(y.data(), y.data() + y.size());
    std::sort(sorted.begin(), sorted.end());
    const double lo = sorted[sorted.size() / 2 - 1], hi = sorted[sorted.size() / 2];
    CHECK(r.constants[0] >= lo - 1e-6);
    CHECK(r.constants[0] <= hi + 1e-6);
    CHECK(r.mae <= r.initial_mae);

    const auto b = refit_formula(Formula::BestWithMass, in, y, {}, ro);
    CHECK(b.mae <= b.initial_mae);
    CHECK(b.constants[4] == paper_constants(Formula::BestWithMass)[4]);
    CHECK(b.to_json()["constants"].size() == 7);

    // restricted to a subset of rows
    const std::vector<int> rows = {0, 1, 2, 3};
    const auto s = refit_formula(Formula::Constant, in, y, rows, ro);
    CHECK(s.mae == doctest::Approx(formula_mae(Formula::Constant, s.constants, in, y, rows)));
}

TEST_CASE("ood split") {
    HaloCatalog c;
    c.halos = {at(0.0), at(1.0), at(2.0)};
    c.halos[0].delta = 0.5;
    c.halos[1].delta = 1.0;
    c.halos[2].delta = -0.5;
    auto s = ood_split(c);
    CHECK(s.held_out.empty());
    CHECK(s.train_fraction == 1.0);
    c.halos[1].delta = 2.0;
    s = ood_split(c);
    CHECK(s.held_out == std::vector<int>{1});
    CHECK(s.train == std::vector<int>{0, 2});
    CHECK(s.held_out_fraction == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("generalization report and GN path") {
    SyntheticOptions o;
    o.n_halos = 120;
    o.box = 0.5;
    o.radius = 0.15;
    o.noise = 0.5;
    const auto c = synthetic_catalog(o, 6);
    const auto g = build_halo_graph(c, 0.15);
    HaloRefitOptions ro;
    ro.restarts = 1;
    ro.max_evals = 200;
    GnHaloOptions gno;
    gno.epochs = 2;
    gno.hidden = 16;
    const auto rep = generalization_report(c, g, Formula::BestWithMass, ro, gno);
    CHECK(rep.split.train.size() + rep.split.held_out.size() == 120);
    REQUIRE(!rep.split.held_out.empty());
    CHECK(rep.gn_train_mae.has_value());
    CHECK(rep.gn_held_out_mae.has_value());
    CHECK(rep.symbolic_train_mae == doctest::Approx(rep.symbolic.mae));
    CHECK(rep.to_json().contains("symbolic_held_out_mae"));

    const auto graph = halo_gn_graph(c, g, rep.split.held_out);
    CHECK(graph.nodes.cols() == 7);
    CHECK(graph.n_targets() == static_cast<int>(rep.split.held_out.size()));
    CHECK(graph.n_edges() == g.n_edges());
    gn::GnConfig cfg;
    cfg.node_dim = 7;
    cfg.out_dim = 1;
    cfg.hidden = 16;
    cfg.message_dim = 6;
    auto model = gn::GnModel(cfg, 1);
    CHECK(informative_components(model, graph).size() == 6);
    // zeroed last layer: every message is constant
    model.phi_e.weight(2).setZero();
    CHECK(informative_components(model, graph).empty());
}
