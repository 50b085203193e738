#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "symdistill/common.hpp"

namespace symdistill::nbody {

SYMDISTILL_ERROR(AdaptiveStepUnderflow);

enum class Law { InvR, InvR2, Spring, Damped, Charge, Discontinuous };

inline constexpr std::array<Law, 6> kAllLaws = {Law::InvR,   Law::InvR2,  Law::Spring,
                                                Law::Damped, Law::Charge, Law::Discontinuous};

/// Distance softening added to every pair separation.
inline constexpr double kSoftening = 0.01;

std::string_view law_name(Law law);
Law parse_law(std::string_view name);
/// Output snapshot spacing used for each law's datasets.
double default_step_size(Law law);

using Vec3 = std::array<double, 3>;

struct ParticleState {
    Vec3 position{};
    Vec3 velocity{};
    double mass = 1.0;
    double charge = 1.0;
};

struct SimConfig {
    Law law = Law::Spring;
    int n_bodies = 4;
    int dim = 2;
    int n_steps = 1000;
    double step_size = 0.01;
    std::uint64_t seed = 0;

    static SimConfig paper_defaults(Law law, int n_bodies, int dim, std::uint64_t seed = 0);
    void validate() const;
};

/// Time-indexed states of one simulation. Arrays are row-major
/// [step][body][component] with `dim` components.
struct Trajectory {
    int n_steps = 0;
    int n_bodies = 0;
    int dim = 0;
    std::vector<double> masses;
    std::vector<double> charges;
    std::vector<double> positions;
    std::vector<double> velocities;
    std::vector<double> accelerations;

    std::size_t offset(int step, int body) const {
        return (static_cast<std::size_t>(step) * n_bodies + body) * dim;
    }
    ParticleState state(int step, int body) const;
    std::vector<ParticleState> states(int step) const;
    Vec3 acceleration(int step, int body) const;
};

/// U_12 for receiver 1 and sender 2. `dim` selects how many components count
/// toward the separation.
double pair_potential(Law law, const ParticleState& receiver, const ParticleState& sender,
                      int n_bodies, int dim);

/// Force on the receiver from one edge: -grad_{r_1} U_12. For the damped law
/// this includes the non-conservative term -v_1/n.
Vec3 pair_force(Law law, const ParticleState& receiver, const ParticleState& sender, int n_bodies,
                int dim);

/// a_i = -(1/m_i) sum_j grad_{r_i} U_ij.
std::vector<Vec3> accelerations(Law law, std::span<const ParticleState> states, int dim);

std::vector<ParticleState> sample_initial_conditions(std::uint64_t seed, int n_bodies, int dim);

struct IntegratorOptions {
    bool adaptive = true;
    double rel_tol = 1e-6;
    /// Fixed-step mode only: RK4 steps per output snapshot.
    int substeps = 1;
};

Trajectory integrate(const SimConfig& config, std::span<const ParticleState> init,
                     const IntegratorOptions& options = {});

struct Dataset {
    SimConfig config;
    std::vector<Trajectory> sims;
    std::vector<bool> is_test;

    std::vector<int> split_indices(bool test) const;
};

/// Simulations [0, n_train) use the training seed stream, the rest (20%) the
/// test stream.
Dataset generate_dataset(const SimConfig& config, int n_sims);

inline constexpr int kDatasetSchemaVersion = 1;

void save_dataset(const Dataset& data, const std::filesystem::path& path);
/// Throws SchemaError when the file's law differs from `expected_law`.
Dataset load_dataset(const std::filesystem::path& path, std::optional<Law> expected_law = {});

}  // namespace symdistill::nbody
