#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "symdistill/graphnet.hpp"

namespace symdistill::hgn {

SYMDISTILL_ERROR(NonFiniteGradient);

using ad::Matrix;
using ad::Var;
using gn::Graph;

struct HgnConfig {
    int dim = 2;
    int hidden = 300;
    /// Hamilton's equations use dH/dx only; with ReLU that field is piecewise
    /// constant and the kink positions get no gradient, so softplus is the default.
    nn::Activation activation = nn::Activation::Softplus;
};

/// Flattened Hamiltonian graph network:
///   H = sum_i H_self(v_i) + sum_k H_pair(v_{r_k}, v_{s_k})
/// over node features (q, p, mass, charge).
class FlatHgn {
public:
    FlatHgn() = default;
    FlatHgn(const HgnConfig& config, std::uint64_t seed);

    int dim() const { return (h_self.input_size() - 2) / 2; }
    int node_dim() const { return h_self.input_size(); }

    nn::MlpParams h_self;
    nn::MlpParams h_pair;

    nn::Checkpoint to_checkpoint() const;
    static FlatHgn from_checkpoint(const nn::Checkpoint& ckpt);
    bool operator==(const FlatHgn&) const = default;
};

/// Nodes (q, p = m*v, m, charge); targets (dq/dt, dp/dt) = (v, m*a).
Graph canonical_graph(const nbody::Trajectory& traj, int step);
std::vector<Graph> canonical_graphs(const nbody::Dataset& data, bool test, int per_sim);

/// Taped total energy of a graph whose node matrix is `nodes`.
using EnergyFn = std::function<Var(const Var& nodes, const Graph& g)>;

EnergyFn model_energy(const FlatHgn& model);
/// Oracle: sum p^2/2m - 1/2 sum_edges m_r m_s / |q_r - q_s| (unsoftened gravity).
EnergyFn gravity_energy(int dim);

double total_energy(const FlatHgn& model, const Graph& g);
Matrix self_energies(const FlatHgn& model, const Graph& g);  // nodes x 1
Matrix pair_energies(const FlatHgn& model, const Graph& g);  // edges x 1

/// (dq/dt, dp/dt) = (dH/dp, -dH/dq), one row per node.
Matrix hamiltonian_dynamics(const EnergyFn& energy, const Graph& g, int dim);
Matrix hamiltonian_dynamics(const FlatHgn& model, const Graph& g);

/// Fixed-step RK4 on the node (q, p) columns under the model's dynamics.
Graph rollout(const FlatHgn& model, Graph g, double dt, int steps);

struct HgnTrainConfig {
    int epochs = 30;
    int batch_size = 8;
    std::uint64_t seed = 0;
    int hidden = 300;
    nn::Activation activation = nn::Activation::Softplus;
    /// Weight of mean |H_pair| in the loss.
    double pair_reg = 1e-2;
    bool augment = true;
    double augment_sigma = 3.0;
    int snapshots_per_sim = 50;
    double lr_initial = 1e-3;
    double lr_final = 1e-5;
};

struct HgnLoss {
    double total = 0.0;
    double l_dyn = 0.0;
    double l_pair = 0.0;
};

HgnLoss loss(const FlatHgn& model, const Graph& g, const HgnTrainConfig& config);
/// d total / d params, h_self's flat layout followed by h_pair's.
std::vector<double> loss_gradient(const FlatHgn& model, const Graph& g, const HgnTrainConfig& config);
/// Mean over nodes of the L1 norm of the canonical-derivative error.
double evaluate(const FlatHgn& model, std::span<const Graph> graphs);

struct HgnTrainResult {
    FlatHgn model;
    std::vector<double> train_loss;
    std::vector<double> test_loss;
};

HgnTrainResult train_graphs(FlatHgn model, std::span<const Graph> train, std::span<const Graph> test,
                            const HgnTrainConfig& config);
HgnTrainResult train(const nbody::Dataset& data, const HgnTrainConfig& config);

/// Learned pair energy against q1 q2 / r' on held-out unordered pairs.
/// Both directions of a pair are summed (only that sum enters H), and the
/// value with the pair moved to separation r_ref is subtracted, which removes
/// offsets that depend only on mass and charge.
struct PairEnergyProbe {
    std::vector<double> learned;
    std::vector<double> expected;
    double pearson = 0.0;
};

PairEnergyProbe probe_pair_energy(const FlatHgn& model, const nbody::Dataset& data, bool test,
                                  int per_sim, double r_ref = 2.0);

double pearson(std::span<const double> a, std::span<const double> b);

}  // namespace symdistill::hgn
