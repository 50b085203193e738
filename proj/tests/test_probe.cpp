#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "symdistill/probe.hpp"

using namespace symdistill;
using namespace symdistill::probe;

namespace {

Matrix normal_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed, double sd = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, sd);
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
    return m;
}

}  // namespace

TEST_CASE("ranking") {
    Matrix m = normal_matrix(2000, 10, 1, 0.01);
    m.col(7) = normal_matrix(2000, 1, 2, 10.0);
    CHECK(rank_by_std(m).front() == 7);

    Matrix tie = Matrix::Zero(10, 3);
    tie.col(1).setLinSpaced(10, 0.0, 1.0);
    tie.col(2).setLinSpaced(10, 0.0, 1.0);
    CHECK(rank_by_std(tie) == std::vector<int>{1, 2, 0});

    Matrix mu = Matrix::Zero(1000, 4), lv = Matrix::Zero(1000, 4);
    mu.col(2).setConstant(3.0);
    lv.col(0).setConstant(-4.0);  // sigma^2 - log sigma^2 grows as sigma shrinks
    const auto r = rank_by_kl(mu, lv);
    CHECK(r[0] == 2);
    CHECK(r[1] == 0);
}

TEST_CASE("linear force fit") {
    const Matrix forces = normal_matrix(3000, 2, 3);
    SUBCASE("identity") {
        const auto rep = linear_force_fit(forces, forces);
        for (double r2 : rep.per_component_r2) CHECK(r2 == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(rep.coefficients[0][0] == doctest::Approx(1.0).epsilon(1e-10));
        CHECK(std::abs(rep.coefficients[0][2]) < 1e-10);
    }
    SUBCASE("rotation plus constant") {
        const double t = 0.7;
        Eigen::Matrix2d rot;
        rot << std::cos(t), -std::sin(t), std::sin(t), std::cos(t);
        Matrix msg = forces * rot.transpose();
        msg.col(0).array() += 4.0;
        msg.col(1).array() -= 2.5;
        const auto rep = linear_force_fit(msg, forces);
        CHECK(rep.mean_r2 == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(rep.coefficients[0][2] == doctest::Approx(4.0).epsilon(1e-10));
    }
    SUBCASE("noise") {
        const auto rep = linear_force_fit(normal_matrix(5000, 2, 4), normal_matrix(5000, 2, 5));
        CHECK(rep.mean_r2 < 0.01);
    }
    SUBCASE("affine reparameterization of the force basis") {
        Matrix msg = forces.col(0).array().square().matrix();
        msg.conservativeResize(Eigen::NoChange, 2);
        msg.col(1) = forces.col(1) + normal_matrix(3000, 1, 6);
        Eigen::Matrix2d a;
        a << 2.0, 0.3, -1.1, 0.5;
        Matrix basis = forces * a.transpose();
        basis.col(0).array() += 7.0;
        const auto r1 = linear_force_fit(msg, forces);
        const auto r2 = linear_force_fit(msg, basis);
        for (int c = 0; c < 2; ++c) CHECK(std::abs(r1.per_component_r2[c] - r2.per_component_r2[c]) < 1e-9);
    }
    SUBCASE("degenerate design") {
        Matrix f = forces;
        f.col(1) = 2.0 * f.col(0);
        CHECK(linear_force_fit(forces, f).degenerate);
        CHECK_FALSE(linear_force_fit(forces, forces).degenerate);
    }
    SUBCASE("constant message column has zero R2") {
        Matrix msg = Matrix::Constant(3000, 1, 2.0);
        CHECK(linear_force_fit(msg, forces).per_component_r2[0] == 0.0);
    }
}

TEST_CASE("probing a model") {
    auto cfg = nbody::SimConfig::paper_defaults(nbody::Law::Spring, 4, 2, 3);
    cfg.n_steps = 100;
    const auto data = nbody::generate_dataset(cfg, 10);
    gn::GnConfig gc;
    gc.variant = gn::Variant::Bottleneck;
    gc.hidden = 16;
    gn::GnModel model(gc, 1);
    const auto before = model;
    const auto rep = probe_model(model, data, 50);
    CHECK(model == before);
    CHECK(rep.ranked.size() == 2);
    std::vector<int> sorted = rep.ranked;
    std::sort(sorted.begin(), sorted.end());
    CHECK(sorted == std::vector<int>{0, 1});
    CHECK(rep.per_component_r2.size() == 2);

    const auto samples = collect_messages(model, data, true, 50);
    CHECK(samples.messages.rows() == 2 * 50 * 12);
    // edge 0 of the first held-out snapshot: receiver 0, sender 1
    const auto refs = gn::snapshot_refs(data, true, 50);
    const auto st = data.sims[refs[0].sim].states(refs[0].step);
    const auto f = nbody::pair_force(cfg.law, st[0], st[1], 4, 2);
    CHECK(samples.forces(0, 0) == f[0]);
    CHECK(samples.forces(0, 1) == f[1]);

    const auto path = std::filesystem::temp_directory_path() / "symdistill_probe.csv";
    write_probe_csv({{"Spring-2", "bottleneck", rep}}, path);
    std::ifstream in(path);
    std::string header, row;
    std::getline(in, header);
    std::getline(in, row);
    CHECK(header == "sim,variant,mean_r2,r2_0,r2_1");
    CHECK(row.rfind("Spring-2,bottleneck,", 0) == 0);
}
