#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "symdistill/flathgn.hpp"
#include "symdistill/graphnet.hpp"
#include "symdistill/symreg.hpp"

namespace symdistill::distill {

SYMDISTILL_ERROR(NonFiniteComposite);

using ad::Matrix;

/// Engineered edge inputs: m1, m2, q1, q2, dx, dy, [dz], r with
/// d* = sender - receiver and r the unsoftened distance.
std::vector<std::string> edge_feature_names(int dim);
/// Node inputs for the node model: x, y, [z], vx, vy, [vz], m, q, e0..e{D-1}.
std::vector<std::string> node_feature_names(int dim, int n_messages);

struct EdgeSampleTable {
    std::vector<std::string> names;
    Eigen::MatrixXd features;  // K x names
    Eigen::MatrixXd messages;  // K x retained components, most significant first
    std::vector<int> components;

    sr::Data data(int column) const;
};

/// Uniformly random (snapshot, edge) pairs from the training split. The
/// retained messages are the D most significant unless `components` is given.
EdgeSampleTable record_edge_samples(const gn::GnModel& model, const nbody::Dataset& data, int k = 5000,
                                    std::uint64_t seed = 0, std::span<const int> components = {});
/// Same table for a FlatHGN's pair energy (one column); features also carry
/// both momenta.
EdgeSampleTable record_pair_energy_samples(const hgn::FlatHgn& model, const nbody::Dataset& data, int k = 5000,
                                           std::uint64_t seed = 0);

struct Distilled {
    std::string target;
    sr::Expression expr;
    sr::ParetoFront front;
    double train_mae = 0.0;
    nlohmann::json to_json(std::span<const std::string> names) const;
};

Distilled distill_edge(const EdgeSampleTable& table, const sr::GpConfig& config, int column = 0);

/// One symbolic expression per output of phi_v, fit on node features plus
/// summed significant messages.
std::vector<Distilled> distill_node(const gn::GnModel& model, const nbody::Dataset& data, const sr::GpConfig& config,
                                    std::span<const int> components, int k = 5000, std::uint64_t seed = 0);

/// Graph network with both internal functions replaced by expressions.
struct SymbolicModel {
    int dim = 2;
    std::vector<sr::Expression> edge;  // one per retained message
    std::vector<sr::Expression> node;  // one per output component
    double train_mae = 0.0;
    double test_mae = 0.0;

    Matrix predict(const gn::Graph& g) const;
    /// Mean over nodes of the L1 norm of the prediction error.
    double mae(std::span<const gn::Graph> graphs) const;
    nlohmann::json to_json() const;
};

struct RefitOptions {
    int snapshots = 400;
    int max_evals = 4000;
    std::uint64_t seed = 0;
};

SymbolicModel compose_and_refit(std::vector<sr::Expression> edge, std::vector<sr::Expression> node,
                                const nbody::Dataset& data, int per_sim = 50, const RefitOptions& options = {});

/// Threshold c of the first IF whose condition compares `var` with a constant.
std::optional<double> if_threshold(const sr::Expression& e, int var);

struct ToyReport {
    double g_rel_mae = 0.0;  // distilled g vs exp(x3) + cos(2 x1) after affine alignment
    double f_rel_mae = 0.0;  // distilled f against z
    double nn_rel_mae = 0.0;
    sr::Expression g;
    sr::Expression f;
    nlohmann::json to_json() const;
};

struct ToyOptions {
    int samples = 2000;
    int series = 100;
    int features = 5;
    int hidden = 64;
    int epochs = 40;
    int batch = 16;
    sr::GpConfig gp;
};

/// z = (sum_j exp(x_j3) + cos(2 x_j1))^2 fitted as f(sum_j g(x_j)).
ToyReport toy_factorization_demo(std::uint64_t seed, const ToyOptions& options = {});

/// Direct symbolic regression of one body's acceleration component on the
/// raw features of every body.
struct BaselineReport {
    sr::ParetoFront front;
    sr::Expression selected;
    double best_mae = 0.0;
    std::vector<std::string> names;
    sr::Data rows;
    std::vector<gn::SnapshotRef> refs;  // snapshot of each row
    nlohmann::json to_json() const;
};

BaselineReport pure_sr_baseline(const nbody::Dataset& data, const sr::GpConfig& config, int body = 0,
                                int component = 0, int k = 5000, std::uint64_t seed = 0);

/// MAE of a symbolic model on the rows of a baseline report's target.
double target_mae(const SymbolicModel& model, const nbody::Dataset& data, const BaselineReport& report, int body = 0,
                  int component = 0);

}  // namespace symdistill::distill
