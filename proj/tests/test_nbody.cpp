#include "doctest.h"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <random>

#include "symdistill/nbody.hpp"

using namespace symdistill;
using namespace symdistill::nbody;

namespace {

ParticleState particle(double x, double y, double m = 1.0, double q = 1.0) {
    ParticleState p;
    p.position = {x, y, 0.0};
    p.mass = m;
    p.charge = q;
    return p;
}

// Central finite differences of the pair potential w.r.t. the receiver position.
Vec3 fd_force(Law law, ParticleState a, const ParticleState& b, int n, int dim, double eps) {
    Vec3 f{};
    for (int d = 0; d < dim; ++d) {
        const double x0 = a.position[d];
        a.position[d] = x0 + eps;
        const double up = pair_potential(law, a, b, n, dim);
        a.position[d] = x0 - eps;
        const double dn = pair_potential(law, a, b, n, dim);
        a.position[d] = x0;
        f[d] = -(up - dn) / (2.0 * eps);
    }
    return f;
}

double norm(const Vec3& v) { return std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]); }

// Conservative spring Hamiltonian, pairs counted once.
double spring_energy(const std::vector<ParticleState>& s, int dim) {
    double h = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        double v2 = 0.0;
        for (int d = 0; d < dim; ++d) v2 += s[i].velocity[d] * s[i].velocity[d];
        h += 0.5 * s[i].mass * v2;
        for (std::size_t j = i + 1; j < s.size(); ++j) {
            double r2 = 0.0;
            for (int d = 0; d < dim; ++d) {
                const double dx = s[i].position[d] - s[j].position[d];
                r2 += dx * dx;
            }
            const double rs = std::sqrt(r2) + kSoftening;
            h += (rs - 1.0) * (rs - 1.0);
        }
    }
    return h;
}

std::vector<ParticleState> two_body_spring() {
    auto a = particle(-0.8, 0.1, 1.3);
    auto b = particle(0.9, -0.2, 0.7);
    a.velocity = {0.1, 0.4, 0.0};
    b.velocity = {-0.3, -0.2, 0.0};
    return {a, b};
}

}  // namespace

TEST_CASE("pair potential hand values") {
    CHECK(pair_potential(Law::Spring, particle(0, 0), particle(0.99, 0), 2, 2) ==
          doctest::Approx(0.0).epsilon(1e-12));
    CHECK(pair_potential(Law::Charge, particle(0, 0, 1, 1), particle(0.99, 0, 1, 1), 2, 2) ==
          doctest::Approx(1.0).epsilon(1e-12));
    CHECK(pair_potential(Law::InvR2, particle(0, 0, 2), particle(0.99, 0, 3), 2, 2) ==
          doctest::Approx(-6.0).epsilon(1e-12));
}

TEST_CASE("law names round trip") {
    for (Law law : kAllLaws) CHECK(parse_law(law_name(law)) == law);
    CHECK_THROWS_AS(parse_law("gravity"), InvalidArgument);
    CHECK(default_step_size(Law::InvR) == 0.005);
    CHECK(default_step_size(Law::InvR2) == 0.001);
    CHECK(default_step_size(Law::Spring) == 0.01);
    CHECK(default_step_size(Law::Damped) == 0.02);
    CHECK(default_step_size(Law::Charge) == 0.001);
    CHECK(default_step_size(Law::Discontinuous) == 0.01);
}

TEST_CASE("accelerations edge cases") {
    SUBCASE("equal masses give opposite accelerations") {
        for (Law law : {Law::InvR, Law::InvR2, Law::Spring, Law::Charge}) {
            std::vector<ParticleState> s = {particle(0.3, -0.1), particle(-0.4, 0.6)};
            const auto a = accelerations(law, s, 2);
            CHECK(a[0][0] == doctest::Approx(-a[1][0]));
            CHECK(a[0][1] == doctest::Approx(-a[1][1]));
        }
    }
    SUBCASE("spring at rest length") {
        std::vector<ParticleState> s = {particle(0, 0), particle(0.99, 0)};
        const auto a = accelerations(Law::Spring, s, 2);
        CHECK(norm(a[0]) < 1e-12);
        CHECK(norm(a[1]) < 1e-12);
    }
    SUBCASE("inverse square unit case") {
        std::vector<ParticleState> s = {particle(0, 0), particle(0.99, 0)};
        const auto a = accelerations(Law::InvR2, s, 2);
        CHECK(norm(a[0]) == doctest::Approx(1.0).epsilon(1e-12));
        const auto fd = fd_force(Law::InvR2, s[0], s[1], 2, 2, 1e-6);
        CHECK(std::abs(fd[0] - a[0][0]) < 1e-6);
        CHECK(a[0][0] > 0.0);  // attraction toward +x
    }
}

TEST_CASE("analytic pair forces match finite differences on 1000 configurations") {
    std::mt19937_64 rng(42);
    std::normal_distribution<double> normal(0.0, 1.0);
    int checked = 0;
    for (Law law : kAllLaws) {
        for (int trial = 0; trial < 1000; ++trial) {
            const int dim = trial % 2 == 0 ? 2 : 3;
            const auto st = sample_initial_conditions(rng(), 2, dim);
            const double rs = std::sqrt([&] {
                double s = 0;
                for (int d = 0; d < dim; ++d)
                    s += std::pow(st[0].position[d] - st[1].position[d], 2);
                return s;
            }()) + kSoftening;
            if (law == Law::Discontinuous && std::abs(rs - 2.0) < 1e-3) continue;
            const auto an = pair_force(law, st[0], st[1], 4, dim);
            const auto fd = fd_force(law, st[0], st[1], 4, dim, 1e-6);
            Vec3 diff{};
            for (int d = 0; d < 3; ++d) diff[d] = an[d] - fd[d];
            CHECK(norm(diff) / std::max(norm(an), 1e-3) < 1e-6);
            ++checked;
        }
    }
    CHECK(checked > 5900);
}

TEST_CASE("discontinuous law has zero force inside r' < 2") {
    std::mt19937_64 rng(7);
    int inside = 0;
    for (int trial = 0; trial < 2000; ++trial) {
        const auto st = sample_initial_conditions(rng(), 2, 2);
        const double dx = st[0].position[0] - st[1].position[0];
        const double dy = st[0].position[1] - st[1].position[1];
        if (std::sqrt(dx * dx + dy * dy) + kSoftening < 2.0) {
            ++inside;
            const auto f = pair_force(Law::Discontinuous, st[0], st[1], 2, 2);
            CHECK(f[0] == 0.0);
            CHECK(f[1] == 0.0);
        }
    }
    CHECK(inside > 100);
}

TEST_CASE("integrator") {
    SUBCASE("isolated particle at rest stays put") {
        auto cfg = SimConfig::paper_defaults(Law::InvR2, 1, 2);
        cfg.n_steps = 50;
        std::vector<ParticleState> init = {particle(0.25, -1.5)};
        const auto t = integrate(cfg, init);
        for (int s = 0; s < cfg.n_steps; ++s) {
            CHECK(t.positions[t.offset(s, 0)] == 0.25);
            CHECK(t.positions[t.offset(s, 0) + 1] == -1.5);
        }
    }

    SUBCASE("fixed-step RK4 is fourth order") {
        auto cfg = SimConfig::paper_defaults(Law::Spring, 2, 2);
        cfg.step_size = 0.1;
        cfg.n_steps = 51;  // t_end = 5
        const auto init = two_body_spring();
        auto final_pos = [&](int substeps) {
            IntegratorOptions opt;
            opt.adaptive = false;
            opt.substeps = substeps;
            const auto t = integrate(cfg, init, opt);
            return t.state(cfg.n_steps - 1, 0).position;
        };
        const auto ref = final_pos(32);
        const auto coarse = final_pos(2);
        const auto fine = final_pos(4);
        const double e1 = std::hypot(coarse[0] - ref[0], coarse[1] - ref[1]);
        const double e2 = std::hypot(fine[0] - ref[0], fine[1] - ref[1]);
        CHECK(e1 / e2 >= 12.0);
    }

    SUBCASE("adaptive spring run conserves energy and momentum") {
        auto cfg = SimConfig::paper_defaults(Law::Spring, 2, 2);
        const auto init = two_body_spring();
        const auto t = integrate(cfg, init);
        const double h0 = spring_energy(t.states(0), 2);
        const double h1 = spring_energy(t.states(cfg.n_steps - 1), 2);
        CHECK(std::abs(h1 - h0) / std::abs(h0) < 1e-4);
        for (int d = 0; d < 2; ++d) {
            double p0 = 0, p1 = 0, scale = 0;
            for (int b = 0; b < 2; ++b) {
                p0 += t.masses[b] * t.velocities[t.offset(0, b) + d];
                p1 += t.masses[b] * t.velocities[t.offset(cfg.n_steps - 1, b) + d];
                scale += std::abs(t.masses[b] * t.velocities[t.offset(0, b) + d]);
            }
            CHECK(std::abs(p1 - p0) / scale < 1e-5);
        }
    }

    SUBCASE("stored accelerations are re-derivable") {
        auto cfg = SimConfig::paper_defaults(Law::Charge, 4, 3);
        cfg.n_steps = 20;
        const auto t = integrate(cfg, sample_initial_conditions(3, 4, 3));
        for (int s : {0, 7, 19}) {
            const auto a = accelerations(Law::Charge, t.states(s), 3);
            for (int b = 0; b < 4; ++b)
                for (int d = 0; d < 3; ++d) CHECK(t.acceleration(s, b)[d] == a[b][d]);
        }
    }

    SUBCASE("impossible tolerance underflows") {
        auto cfg = SimConfig::paper_defaults(Law::Spring, 2, 2);
        cfg.n_steps = 3;
        IntegratorOptions opt;
        opt.rel_tol = 1e-300;
        CHECK_THROWS_AS(integrate(cfg, two_body_spring(), opt), AdaptiveStepUnderflow);
    }
}

TEST_CASE("initial conditions") {
    CHECK(sample_initial_conditions(5, 4, 3)[2].position == sample_initial_conditions(5, 4, 3)[2].position);
    const auto big = sample_initial_conditions(11, 100000, 2);
    double mean_log = 0.0, plus = 0.0;
    for (const auto& p : big) {
        CHECK(p.mass > 0.0);
        mean_log += std::log(p.mass);
        plus += p.charge > 0 ? 1.0 : 0.0;
        CHECK(std::abs(p.charge) == 1.0);
    }
    mean_log /= big.size();
    plus /= big.size();
    CHECK(std::abs(mean_log) < 0.02);
    CHECK(std::abs(plus - 0.5) < 0.01);
}

TEST_CASE("dataset file") {
    const auto dir = std::filesystem::temp_directory_path() / "symdistill_test_nbody";
    std::filesystem::create_directories(dir);
    auto cfg = SimConfig::paper_defaults(Law::Spring, 4, 2, 9);
    cfg.n_steps = 30;
    const auto data = generate_dataset(cfg, 2);
    const auto path = dir / "spring.sdd";
    save_dataset(data, path);

    const auto back = load_dataset(path, Law::Spring);
    REQUIRE(back.sims.size() == 2);
    CHECK(back.is_test == data.is_test);
    CHECK(back.config.seed == 9);
    for (int i = 0; i < 2; ++i) {
        CHECK(back.sims[i].positions == data.sims[i].positions);
        CHECK(back.sims[i].accelerations == data.sims[i].accelerations);
        CHECK(back.sims[i].masses == data.sims[i].masses);
    }
    CHECK_THROWS_AS(load_dataset(path, Law::Charge), SchemaError);
    CHECK_THROWS_AS(load_dataset(dir / "missing.sdd"), IoError);

    const auto again = generate_dataset(cfg, 2);
    CHECK(again.sims[1].velocities == data.sims[1].velocities);
    CHECK(data.is_test == std::vector<bool>{false, true});
}

TEST_CASE("desk-scale spring set generates within a minute") {
    const auto start = std::chrono::steady_clock::now();
    const auto data = generate_dataset(SimConfig::paper_defaults(Law::Spring, 4, 2, 0), 200);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    MESSAGE("200 Spring-2 simulations: " << secs << " s");
    CHECK(secs < 60.0);
    CHECK(data.split_indices(true).size() == 40);
}
