#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "symdistill/nbody.hpp"
#include "symdistill/nn.hpp"

namespace symdistill::gn {

SYMDISTILL_ERROR(DivergedLoss);

using ad::Matrix;
using ad::Var;

enum class Variant { Standard, Bottleneck, L1, KL };

std::string_view variant_name(Variant v);
Variant parse_variant(std::string_view name);

/// Directed graph with per-node features. When `target_nodes` is empty every
/// node carries a target row; otherwise only the listed nodes do, and
/// `targets` has one row per listed node.
struct Graph {
    Matrix nodes;
    std::vector<int> receivers;
    std::vector<int> senders;
    Matrix targets;
    std::vector<int> target_nodes;

    int n_nodes() const { return static_cast<int>(nodes.rows()); }
    int n_edges() const { return static_cast<int>(receivers.size()); }
    int n_targets() const { return target_nodes.empty() ? n_nodes() : static_cast<int>(target_nodes.size()); }
    void validate() const;
};

/// Disjoint union; indices are offset per graph.
Graph batch_graphs(std::span<const Graph> graphs);
Graph batch_graphs(std::span<const Graph* const> graphs);

/// Receiver-major ordering of all N(N-1) ordered pairs: edge k = r*(N-1) + s',
/// where s' skips r.
void fully_connected_edges(int n, std::vector<int>& receivers, std::vector<int>& senders);

/// Node features (position, velocity, mass, charge); targets are accelerations.
Graph particle_graph(const nbody::Trajectory& traj, int step);

/// Evenly spaced snapshot steps used for training and evaluation.
std::vector<int> snapshot_steps(int n_steps, int per_sim);

struct SnapshotRef {
    int sim;
    int step;
};

std::vector<SnapshotRef> snapshot_refs(const nbody::Dataset& data, bool test, int per_sim);

struct GnConfig {
    Variant variant = Variant::L1;
    int node_dim = 6;
    int out_dim = 2;
    int hidden = 300;
    /// Message components before KL doubling; 0 selects the variant default
    /// (100, or out_dim for the bottleneck).
    int message_dim = 0;
};

class GnModel {
public:
    GnModel() = default;
    GnModel(const GnConfig& config, std::uint64_t seed);

    Variant variant() const { return variant_; }
    /// L^{e'}: number of message components (means only for KL).
    int message_dim() const { return message_dim_; }
    int node_dim() const { return phi_v.input_size() - message_dim_; }
    int out_dim() const { return phi_v.output_size(); }

    nn::MlpParams phi_e;
    nn::MlpParams phi_v;

    nn::Checkpoint to_checkpoint() const;
    static GnModel from_checkpoint(const nn::Checkpoint& ckpt);

    bool operator==(const GnModel&) const = default;

private:
    Variant variant_ = Variant::L1;
    int message_dim_ = 0;
};

struct ForwardOptions {
    /// KL only: draw e' ~ N(mu, sigma^2). When false the means are used.
    bool sample = true;
    std::uint64_t seed = 0;
    /// KL only, test hook: replaces every log-variance (e.g. -inf gives sigma = 0).
    std::optional<double> logvar_override;
};

struct ForwardResult {
    Matrix predictions;  // one row per target node
    Matrix messages;     // edges x message_dim (sampled for KL)
    Matrix mu;           // KL only
    Matrix logvar;       // KL only
    Matrix summed;       // nodes x message_dim
};

ForwardResult gn_forward(const GnModel& model, const Graph& graph, const ForwardOptions& options = {});

struct LossParts {
    double total = 0.0;
    double l_v = 0.0;
    double l_e = 0.0;
    double l_n = 0.0;
};

struct TrainConfig {
    double alpha1 = 1e-2;
    double alpha2 = 1e-8;
    int epochs = 30;
    int batch_size = 8;
    std::uint64_t seed = 0;
    bool augment = true;
    double augment_sigma = 3.0;
    /// Feature columns that hold positions and receive the shared shift.
    int augment_offset = 0;
    int augment_dims = 2;
    int snapshots_per_sim = 50;
    double lr_initial = 1e-3;
    double lr_final = 1e-5;
    int hidden = 300;

    static TrainConfig for_variant(Variant v);
};

/// alpha1 per variant: 1e-2 for L1, 1 for KL, 0 otherwise.
double default_alpha1(Variant v);

/// Loss of one (batched) graph at the current parameters, no augmentation.
LossParts loss(const GnModel& model, const Graph& graph, const TrainConfig& config,
               std::uint64_t sample_seed = 0);

/// Mean over target nodes of the L1 norm of the prediction error.
double evaluate(const GnModel& model, std::span<const Graph> graphs, std::uint64_t sample_seed = 0);

struct TrainResult {
    GnModel model;
    std::vector<double> train_lv;
    std::vector<double> test_lv;
};

/// Raises glibc's mmap threshold so per-step activation buffers are reused.
void keep_heap_mapped();

TrainResult train_graphs(GnModel model, std::span<const Graph> train, std::span<const Graph> test,
                         const TrainConfig& config);

/// Builds the model for the dataset's law/dim and trains on its snapshots.
TrainResult train(const nbody::Dataset& data, Variant variant, const TrainConfig& config);

std::vector<Graph> dataset_graphs(const nbody::Dataset& data, bool test, int per_sim);

}  // namespace symdistill::gn
