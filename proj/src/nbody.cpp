#include "symdistill/nbody.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include <nlohmann/json.hpp>

#include "symdistill/parallel.hpp"

namespace symdistill::nbody {

namespace {

struct LawInfo {
    Law law;
    std::string_view name;
    double step;
};

constexpr std::array<LawInfo, 6> kLawTable = {{
    {Law::InvR, "r1", 0.005},
    {Law::InvR2, "r2", 0.001},
    {Law::Spring, "spring", 0.01},
    {Law::Damped, "damped", 0.02},
    {Law::Charge, "charge", 0.001},
    {Law::Discontinuous, "discontinuous", 0.01},
}};

const LawInfo& info(Law law) {
    for (const auto& e : kLawTable)
        if (e.law == law) return e;
    throw InvalidArgument("unknown law");
}

double separation(const ParticleState& a, const ParticleState& b, int dim) {
    double s = 0.0;
    for (int d = 0; d < dim; ++d) {
        const double diff = a.position[d] - b.position[d];
        s += diff * diff;
    }
    return std::sqrt(s);
}

// dU/dr' for the positional part of each law.
double potential_slope(Law law, double rs, double m1, double m2, double q1, double q2) {
    switch (law) {
        case Law::InvR2: return m1 * m2 / (rs * rs);
        case Law::InvR: return m1 * m2 / rs;
        case Law::Spring:
        case Law::Damped: return 2.0 * (rs - 1.0);
        case Law::Charge: return -q1 * q2 / (rs * rs);
        case Law::Discontinuous: return rs < 2.0 ? 0.0 : 2.0 * (rs - 1.0);
    }
    return 0.0;
}

}  // namespace

std::string_view law_name(Law law) { return info(law).name; }

Law parse_law(std::string_view name) {
    for (const auto& e : kLawTable)
        if (e.name == name) return e.law;
    if (name == "inv_r" || name == "1/r") return Law::InvR;
    if (name == "inv_r2" || name == "1/r2") return Law::InvR2;
    throw InvalidArgument("unknown law '" + std::string(name) + "'");
}

double default_step_size(Law law) { return info(law).step; }

SimConfig SimConfig::paper_defaults(Law law, int n_bodies, int dim, std::uint64_t seed) {
    SimConfig c;
    c.law = law;
    c.n_bodies = n_bodies;
    c.dim = dim;
    c.n_steps = 1000;
    c.step_size = default_step_size(law);
    c.seed = seed;
    return c;
}

void SimConfig::validate() const {
    if (dim != 2 && dim != 3) throw InvalidArgument("dim must be 2 or 3");
    if (n_bodies < 1) throw InvalidArgument("n_bodies must be positive");
    if (n_steps < 1) throw InvalidArgument("n_steps must be positive");
    if (!(step_size > 0.0)) throw InvalidArgument("step_size must be positive");
}

ParticleState Trajectory::state(int step, int body) const {
    ParticleState s;
    const std::size_t o = offset(step, body);
    for (int d = 0; d < dim; ++d) {
        s.position[d] = positions[o + d];
        s.velocity[d] = velocities[o + d];
    }
    s.mass = masses[body];
    s.charge = charges[body];
    return s;
}

std::vector<ParticleState> Trajectory::states(int step) const {
    std::vector<ParticleState> out;
    out.reserve(n_bodies);
    for (int b = 0; b < n_bodies; ++b) out.push_back(state(step, b));
    return out;
}

Vec3 Trajectory::acceleration(int step, int body) const {
    Vec3 a{};
    const std::size_t o = offset(step, body);
    for (int d = 0; d < dim; ++d) a[d] = accelerations[o + d];
    return a;
}

double pair_potential(Law law, const ParticleState& receiver, const ParticleState& sender,
                      int n_bodies, int dim) {
    const double rs = separation(receiver, sender, dim) + kSoftening;
    const double m1 = receiver.mass, m2 = sender.mass;
    switch (law) {
        case Law::InvR2: return -m1 * m2 / rs;
        case Law::InvR: return m1 * m2 * std::log(rs);
        case Law::Spring: return (rs - 1.0) * (rs - 1.0);
        case Law::Damped: {
            double rv = 0.0;
            for (int d = 0; d < dim; ++d) rv += receiver.position[d] * receiver.velocity[d];
            return (rs - 1.0) * (rs - 1.0) + rv / n_bodies;
        }
        case Law::Charge: return receiver.charge * sender.charge / rs;
        case Law::Discontinuous: return rs < 2.0 ? 0.0 : (rs - 1.0) * (rs - 1.0);
    }
    return 0.0;
}

Vec3 pair_force(Law law, const ParticleState& receiver, const ParticleState& sender, int n_bodies,
                int dim) {
    Vec3 f{};
    const double dist = separation(receiver, sender, dim);
    const double slope = potential_slope(law, dist + kSoftening, receiver.mass, sender.mass,
                                         receiver.charge, sender.charge);
    if (dist > 0.0 && slope != 0.0) {
        for (int d = 0; d < dim; ++d)
            f[d] = -slope * (receiver.position[d] - sender.position[d]) / dist;
    }
    if (law == Law::Damped) {
        for (int d = 0; d < dim; ++d) f[d] -= receiver.velocity[d] / n_bodies;
    }
    return f;
}

std::vector<Vec3> accelerations(Law law, std::span<const ParticleState> states, int dim) {
    const int n = static_cast<int>(states.size());
    std::vector<Vec3> acc(n, Vec3{});
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            if (i == j) continue;
            const Vec3 f = pair_force(law, states[i], states[j], n, dim);
            for (int d = 0; d < dim; ++d) acc[i][d] += f[d];
        }
        for (int d = 0; d < dim; ++d) acc[i][d] /= states[i].mass;
    }
    return acc;
}

std::vector<ParticleState> sample_initial_conditions(std::uint64_t seed, int n_bodies, int dim) {
    std::mt19937_64 rng(seed);
    std::lognormal_distribution<double> mass_dist(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::bernoulli_distribution coin(0.5);
    std::vector<ParticleState> out(n_bodies);
    for (auto& p : out) {
        p.mass = mass_dist(rng);
        for (int d = 0; d < dim; ++d) p.position[d] = normal(rng);
        for (int d = 0; d < dim; ++d) p.velocity[d] = normal(rng);
        p.charge = coin(rng) ? 1.0 : -1.0;
    }
    return out;
}

namespace {

// Phase-space state: [positions (n*dim), velocities (n*dim)].
class Rk4System {
public:
    Rk4System(Law law, std::span<const double> masses, std::span<const double> charges, int dim)
        : law_(law), dim_(dim), scratch_(masses.size()) {
        for (std::size_t i = 0; i < masses.size(); ++i) {
            scratch_[i].mass = masses[i];
            scratch_[i].charge = charges[i];
        }
    }

    std::vector<double> derivative(const std::vector<double>& y) {
        const std::size_t n = scratch_.size();
        const std::size_t half = n * dim_;
        load(y);
        const auto acc = accelerations(law_, scratch_, dim_);
        std::vector<double> dy(y.size());
        std::copy(y.begin() + half, y.end(), dy.begin());
        for (std::size_t i = 0; i < n; ++i)
            for (int d = 0; d < dim_; ++d) dy[half + i * dim_ + d] = acc[i][d];
        return dy;
    }

    std::vector<double> step(const std::vector<double>& y, double h) {
        const auto k1 = derivative(y);
        const auto k2 = derivative(axpy(y, 0.5 * h, k1));
        const auto k3 = derivative(axpy(y, 0.5 * h, k2));
        const auto k4 = derivative(axpy(y, h, k3));
        std::vector<double> out(y.size());
        for (std::size_t i = 0; i < y.size(); ++i)
            out[i] = y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        return out;
    }

    std::vector<Vec3> accel(const std::vector<double>& y) {
        load(y);
        return accelerations(law_, scratch_, dim_);
    }

private:
    static std::vector<double> axpy(const std::vector<double>& y, double a,
                                    const std::vector<double>& x) {
        std::vector<double> out(y.size());
        for (std::size_t i = 0; i < y.size(); ++i) out[i] = y[i] + a * x[i];
        return out;
    }

    void load(const std::vector<double>& y) {
        const std::size_t n = scratch_.size();
        const std::size_t half = n * dim_;
        for (std::size_t i = 0; i < n; ++i)
            for (int d = 0; d < dim_; ++d) {
                scratch_[i].position[d] = y[i * dim_ + d];
                scratch_[i].velocity[d] = y[half + i * dim_ + d];
            }
    }

    Law law_;
    int dim_;
    std::vector<ParticleState> scratch_;
};

}  // namespace

Trajectory integrate(const SimConfig& config, std::span<const ParticleState> init,
                     const IntegratorOptions& options) {
    config.validate();
    if (static_cast<int>(init.size()) != config.n_bodies)
        throw ShapeMismatch("initial state count does not match n_bodies");
    const int n = config.n_bodies, dim = config.dim;

    Trajectory traj;
    traj.n_steps = config.n_steps;
    traj.n_bodies = n;
    traj.dim = dim;
    for (const auto& p : init) {
        traj.masses.push_back(p.mass);
        traj.charges.push_back(p.charge);
    }
    const std::size_t per_step = static_cast<std::size_t>(n) * dim;
    traj.positions.resize(per_step * config.n_steps);
    traj.velocities.resize(per_step * config.n_steps);
    traj.accelerations.resize(per_step * config.n_steps);

    std::vector<double> y(2 * per_step);
    for (int i = 0; i < n; ++i)
        for (int d = 0; d < dim; ++d) {
            y[i * dim + d] = init[i].position[d];
            y[per_step + i * dim + d] = init[i].velocity[d];
        }

    Rk4System system(config.law, traj.masses, traj.charges, dim);
    const double interval = config.step_size;
    double h = interval;

    auto store = [&](int step) {
        const auto acc = system.accel(y);
        for (int i = 0; i < n; ++i)
            for (int d = 0; d < dim; ++d) {
                const std::size_t o = traj.offset(step, i) + d;
                traj.positions[o] = y[i * dim + d];
                traj.velocities[o] = y[per_step + i * dim + d];
                traj.accelerations[o] = acc[i][d];
            }
    };

    store(0);
    for (int step = 1; step < config.n_steps; ++step) {
        if (!options.adaptive) {
            const double hs = interval / options.substeps;
            for (int s = 0; s < options.substeps; ++s) y = system.step(y, hs);
            store(step);
            continue;
        }
        // Step doubling: compare one step of h with two of h/2.
        double t = 0.0;
        while (t < interval) {
            const bool last = t + h >= interval;
            const double hh = last ? interval - t : h;
            const auto full = system.step(y, hh);
            const auto half = system.step(system.step(y, 0.5 * hh), 0.5 * hh);
            double err = 0.0;
            for (std::size_t i = 0; i < y.size(); ++i) {
                const double scale = options.rel_tol * std::max(1.0, std::abs(half[i]));
                err = std::max(err, std::abs(half[i] - full[i]) / scale);
            }
            if (!std::isfinite(err)) err = 1e10;
            const double factor = err > 0.0 ? 0.9 * std::pow(err, -0.2) : 4.0;
            if (err <= 1.0) {
                y = half;
                t = last ? interval : t + hh;
                if (!last) h = hh * std::min(4.0, factor);
            } else {
                h = hh * std::max(0.1, factor);
                if (h < 1e-12 * interval)
                    throw AdaptiveStepUnderflow("adaptive step fell below 1e-12 of the output step");
            }
        }
        store(step);
    }
    return traj;
}

std::vector<int> Dataset::split_indices(bool test) const {
    std::vector<int> out;
    for (std::size_t i = 0; i < sims.size(); ++i)
        if (is_test[i] == test) out.push_back(static_cast<int>(i));
    return out;
}

Dataset generate_dataset(const SimConfig& config, int n_sims) {
    config.validate();
    if (n_sims < 1) throw InvalidArgument("n_sims must be positive");
    Dataset data;
    data.config = config;
    data.sims.resize(n_sims);
    data.is_test.resize(n_sims);
    const int n_test = n_sims >= 2 ? std::max(1, static_cast<int>(std::lround(0.2 * n_sims))) : 0;
    const int n_train = n_sims - n_test;
    for (int i = 0; i < n_sims; ++i) data.is_test[i] = i >= n_train;
    parallel_for(static_cast<std::size_t>(n_sims), [&](std::size_t i) {
        const bool test = data.is_test[i];
        const std::uint64_t local = test ? i - n_train : i;
        const auto seed = mix_seed(config.seed, test ? 1 : 0, local);
        const auto init = sample_initial_conditions(seed, config.n_bodies, config.dim);
        data.sims[i] = integrate(config, init);
    });
    return data;
}

namespace {

constexpr char kMagic[8] = {'S', 'Y', 'M', 'D', 'S', 'E', 'T', '1'};

void write_u64(std::ostream& out, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t read_u64(std::istream& in) {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    if (!in) throw SchemaError("truncated dataset file");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

void write_f64(std::ostream& out, std::span<const double> xs) {
    for (double x : xs) write_u64(out, std::bit_cast<std::uint64_t>(x));
}

void read_f64(std::istream& in, std::span<double> xs) {
    for (double& x : xs) x = std::bit_cast<double>(read_u64(in));
}

}  // namespace

void save_dataset(const Dataset& data, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    const auto& c = data.config;
    nlohmann::json header = {
        {"schema_version", kDatasetSchemaVersion},
        {"law", law_name(c.law)},
        {"dim", c.dim},
        {"n_bodies", c.n_bodies},
        {"n_steps", c.n_steps},
        {"step_size", c.step_size},
        {"seed", c.seed},
        {"n_sims", data.sims.size()},
    };
    std::vector<int> split;
    for (bool t : data.is_test) split.push_back(t ? 1 : 0);
    header["test_split"] = split;
    const std::string text = header.dump();
    out.write(kMagic, 8);
    write_u64(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& t : data.sims) {
        write_f64(out, t.masses);
        write_f64(out, t.charges);
        write_f64(out, t.positions);
        write_f64(out, t.velocities);
        write_f64(out, t.accelerations);
    }
    if (!out) throw IoError("write failed for '" + path.string() + "'");
}

Dataset load_dataset(const std::filesystem::path& path, std::optional<Law> expected_law) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kMagic, 8) != 0) throw SchemaError("not a dataset file");
    const auto len = read_u64(in);
    if (len > (1u << 30)) throw SchemaError("implausible header length");
    std::string text(len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));
    if (!in) throw SchemaError("truncated header");

    Dataset data;
    try {
        const auto header = nlohmann::json::parse(text);
        if (header.at("schema_version").get<int>() != kDatasetSchemaVersion)
            throw SchemaError("unsupported schema version");
        auto& c = data.config;
        c.law = parse_law(header.at("law").get<std::string>());
        c.dim = header.at("dim").get<int>();
        c.n_bodies = header.at("n_bodies").get<int>();
        c.n_steps = header.at("n_steps").get<int>();
        c.step_size = header.at("step_size").get<double>();
        c.seed = header.at("seed").get<std::uint64_t>();
        const auto n_sims = header.at("n_sims").get<std::size_t>();
        const auto split = header.at("test_split").get<std::vector<int>>();
        if (split.size() != n_sims) throw SchemaError("split column length mismatch");
        for (int s : split) data.is_test.push_back(s != 0);
        data.sims.resize(n_sims);
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("bad dataset header: ") + e.what());
    } catch (const InvalidArgument& e) {
        throw SchemaError(e.what());
    }
    if (expected_law && *expected_law != data.config.law)
        throw SchemaError("dataset law '" + std::string(law_name(data.config.law)) +
                          "' does not match expected '" + std::string(law_name(*expected_law)) +
                          "'");
    data.config.validate();
    const auto& c = data.config;
    for (auto& t : data.sims) {
        t.n_steps = c.n_steps;
        t.n_bodies = c.n_bodies;
        t.dim = c.dim;
        const std::size_t per = static_cast<std::size_t>(c.n_steps) * c.n_bodies * c.dim;
        t.masses.resize(c.n_bodies);
        t.charges.resize(c.n_bodies);
        t.positions.resize(per);
        t.velocities.resize(per);
        t.accelerations.resize(per);
        read_f64(in, t.masses);
        read_f64(in, t.charges);
        read_f64(in, t.positions);
        read_f64(in, t.velocities);
        read_f64(in, t.accelerations);
    }
    return data;
}

}  // namespace symdistill::nbody
