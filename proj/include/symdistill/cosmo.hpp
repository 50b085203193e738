#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "symdistill/graphnet.hpp"

namespace symdistill::halo {

SYMDISTILL_ERROR(NonPositiveMass);
SYMDISTILL_ERROR(MalformedRow);
SYMDISTILL_ERROR(DivisionDegenerate);

struct Halo {
    double mass = 1.0;
    std::array<double, 3> r{};
    std::array<double, 3> v{};
    double delta = 0.0;
};

struct HaloCatalog {
    std::vector<Halo> halos;

    int size() const { return static_cast<int>(halos.size()); }
    Eigen::VectorXd deltas() const;
    HaloCatalog subset(std::span<const int> index) const;
};

/// CSV with header `mass,rx,ry,rz,vx,vy,vz,delta`.
HaloCatalog load_catalog(const std::filesystem::path& path);
HaloCatalog parse_catalog(std::string_view text);
/// Shortest round-trip decimal text, so load/save is bit-identical.
std::string format_catalog(const HaloCatalog& catalog);
void save_catalog(const HaloCatalog& catalog, const std::filesystem::path& path);

/// Directed neighbor lists in CSR form: the senders of receiver i are
/// neighbors[offsets[i] .. offsets[i+1]), in increasing index order.
struct HaloGraph {
    double radius = 50.0;
    std::vector<int> offsets;
    std::vector<int> neighbors;

    int n_halos() const { return static_cast<int>(offsets.size()) - 1; }
    long n_edges() const { return static_cast<long>(neighbors.size()); }
    double mean_degree() const;
};

/// Uniform grid with cell size = radius.
HaloGraph build_halo_graph(const HaloCatalog& catalog, double radius = 50.0);
HaloGraph brute_force_graph(const HaloCatalog& catalog, double radius);

enum class Formula { Constant, Simple, BestNoMass, BestWithMass };

std::string_view formula_name(Formula f);
Formula parse_formula(std::string_view name);
int formula_arity(Formula f);
/// Appendix best-fit constants; Constant takes the one-constant row and
/// Simple the three-constant "Traditional" row.
std::vector<double> paper_constants(Formula f);

inline constexpr double kSimpleRadius = 20.0;

/// Per-edge and per-halo quantities the formulas need, computed once.
struct FormulaInputs {
    Eigen::VectorXd mass;
    Eigen::VectorXd speed;      // |v_i|
    std::vector<int> offsets;
    Eigen::VectorXd dist;       // |r_i - r_j| per edge
    Eigen::VectorXd dv;         // |v_i - v_j| per edge
    Eigen::VectorXd sender_mass;
    Eigen::VectorXd mass_within_20;  // Simple-formula e_i
};

FormulaInputs formula_inputs(const HaloCatalog& catalog, const HaloGraph& graph);

Eigen::VectorXd formula_predict(Formula f, std::span<const double> c, const FormulaInputs& in);
Eigen::VectorXd formula_predict(Formula f, std::span<const double> c, const HaloCatalog& catalog,
                                const HaloGraph& graph);

/// Mean |delta - prediction| over `rows` (all halos when empty).
double formula_mae(Formula f, std::span<const double> c, const FormulaInputs& in, const Eigen::VectorXd& target,
                   std::span<const int> rows = {});

struct HaloRefitOptions {
    int restarts = 5;
    int max_evals = 3000;
    double perturb = 0.1;  // relative sd of the restart perturbations
    std::uint64_t seed = 0;
};

struct RefitResult {
    Formula formula = Formula::BestWithMass;
    std::vector<double> constants;
    double mae = 0.0;
    double initial_mae = 0.0;
    nlohmann::json to_json() const;
};

/// Nelder-Mead from `initial` (paper constants when empty) and from
/// perturbed copies; never worse than the start. For the Best formulas C5 is
/// held at its starting value: (C2, C3, C5, C6^C7) can be rescaled together
/// without changing any prediction.
RefitResult refit_formula(Formula f, const FormulaInputs& in, const Eigen::VectorXd& target,
                          std::span<const int> rows = {}, const HaloRefitOptions& options = {},
                          std::vector<double> initial = {});

struct OodSplit {
    std::vector<int> train;
    std::vector<int> held_out;
    double train_fraction = 0.0;
    double held_out_fraction = 0.0;
};

/// Held out: every halo with delta > threshold.
OodSplit ood_split(const HaloCatalog& catalog, double threshold = 1.0);

struct SyntheticOptions {
    int n_halos = 10000;
    double box = 250.0;
    double noise = 0.01;
    /// Linking radius of the graph the generating formula is evaluated on.
    double radius = 50.0;
    Formula formula = Formula::BestWithMass;
    std::vector<double> constants;  // paper constants when empty
};

/// Uniform positions in [0, box)^3, LogNormal(0, 1) masses, Normal(0, 1)
/// velocities, delta from the formula plus Normal(0, noise).
HaloCatalog synthetic_catalog(const SyntheticOptions& options, std::uint64_t seed);

/// GN path: one graph over the whole catalog, node features
/// (M, rx, ry, rz, vx, vy, vz), scalar target delta on `target_rows`.
gn::Graph halo_gn_graph(const HaloCatalog& catalog, const HaloGraph& graph, std::span<const int> target_rows = {});

/// Message components whose standard deviation exceeds `threshold`.
std::vector<int> informative_components(const gn::GnModel& model, const gn::Graph& graph, double threshold = 1e-4);

struct GeneralizationReport {
    OodSplit split;
    RefitResult symbolic;
    double symbolic_train_mae = 0.0;
    double symbolic_held_out_mae = 0.0;
    std::optional<double> gn_train_mae;
    std::optional<double> gn_held_out_mae;
    nlohmann::json to_json() const;
};

struct GnHaloOptions {
    int epochs = 0;  // 0 skips the GN
    int hidden = 500;
    double alpha1 = 1e-2;
    std::uint64_t seed = 0;
};

/// Refits the formula on the train split only and scores both splits; the
/// GN (when requested) is trained on the same split.
GeneralizationReport generalization_report(const HaloCatalog& catalog, const HaloGraph& graph, Formula f,
                                           const HaloRefitOptions& refit = {}, const GnHaloOptions& gn = {});

}  // namespace symdistill::halo
