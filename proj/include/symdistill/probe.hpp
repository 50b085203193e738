#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "symdistill/graphnet.hpp"

namespace symdistill::probe {

using ad::Matrix;

/// Messages recorded on held-out snapshots, paired with the true per-edge
/// force from the simulator.
struct MessageSamples {
    Matrix messages;  // edges x message_dim (KL: means)
    Matrix mu;        // KL only
    Matrix logvar;    // KL only
    Matrix forces;    // edges x dim
};

MessageSamples collect_messages(const gn::GnModel& model, const nbody::Dataset& data, bool test,
                                int snapshots_per_sim);

/// Indices sorted by decreasing standard deviation; ties keep the lower index first.
std::vector<int> rank_by_std(const Matrix& messages);
/// Indices sorted by decreasing mean of mu^2 + sigma^2 - log sigma^2.
std::vector<int> rank_by_kl(const Matrix& mu, const Matrix& logvar);
std::vector<double> component_std(const Matrix& messages);

/// Full ranking by the variant's significance statistic.
std::vector<int> significant_components(const MessageSamples& samples, gn::Variant variant);
std::vector<int> significant_components(const gn::GnModel& model, const nbody::Dataset& data);

struct ProbeReport {
    std::vector<int> ranked;
    std::vector<double> spread;                     // statistic per ranked component
    std::vector<std::vector<double>> coefficients;  // per component: D slopes then intercept
    std::vector<double> per_component_r2;
    double mean_r2 = 0.0;
    bool degenerate = false;
};

/// OLS with intercept of each message column on the force components.
ProbeReport linear_force_fit(const Matrix& message_samples, const Matrix& forces);

/// Ranks components, keeps the top D (D = force dimension) and fits them.
ProbeReport probe_model(const gn::GnModel& model, const nbody::Dataset& data, int snapshots_per_sim = 50);

struct ProbeRow {
    std::string sim;
    std::string variant;
    ProbeReport report;
};

void write_probe_csv(const std::vector<ProbeRow>& rows, const std::filesystem::path& path);

}  // namespace symdistill::probe
