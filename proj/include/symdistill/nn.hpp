#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "symdistill/autodiff.hpp"

namespace symdistill::nn {

using ad::Matrix;
using ad::Var;

/// Hidden-layer nonlinearity. Softplus is for networks trained through their
/// input gradient (FlatHGN), where a ReLU net's gradient is piecewise constant.
enum class Activation { Relu, Softplus };

std::string_view activation_name(Activation a);
Activation parse_activation(std::string_view name);

/// Two-hidden-layer perceptron: affine -> act -> affine -> act -> affine.
/// Parameters live in one flat array, layer by layer, each layer stored as
/// a row-major (fan_in x fan_out) weight block followed by its bias.
class MlpParams {
public:
    MlpParams() = default;
    /// `layer_sizes` = {input, hidden, hidden, output}. Weights start uniform
    /// in +-sqrt(6 / (fan_in + fan_out)), biases at zero.
    MlpParams(std::vector<int> layer_sizes, std::uint64_t seed, Activation activation = Activation::Relu);
    static MlpParams zeros(std::vector<int> layer_sizes, Activation activation = Activation::Relu);

    Activation activation() const { return activation_; }

    const std::vector<int>& layer_sizes() const { return sizes_; }
    int input_size() const { return sizes_.front(); }
    int output_size() const { return sizes_.back(); }
    int n_layers() const { return static_cast<int>(sizes_.size()) - 1; }

    std::span<double> flat() { return data_; }
    std::span<const double> flat() const { return data_; }
    std::size_t size() const { return data_.size(); }

    Eigen::Map<Matrix> weight(int layer);
    Eigen::Map<const Matrix> weight(int layer) const;
    Eigen::Map<Matrix> bias(int layer);
    Eigen::Map<const Matrix> bias(int layer) const;

    bool operator==(const MlpParams&) const = default;

private:
    std::size_t weight_offset(int layer) const;
    std::vector<int> sizes_;
    std::vector<double> data_;
    Activation activation_ = Activation::Relu;
};

/// Taped leaves for one network; `gradient()` maps tape gradients back into
/// the flat layout.
struct MlpVars {
    std::vector<Var> weights;
    std::vector<Var> biases;
    Activation activation = Activation::Relu;

    std::vector<Var> all() const;
};

MlpVars bind(const MlpParams& params);
/// Same values as constants: differentiable w.r.t. inputs only.
MlpVars bind_constant(const MlpParams& params);
Var mlp_apply(const MlpVars& net, const Var& x);
/// Batched forward without taping (rows are samples).
Matrix mlp_forward_batch(const MlpParams& params, const Matrix& x);
std::vector<double> mlp_forward(const MlpParams& params, std::span<const double> x);

/// Flat gradient in MlpParams layout from tape gradients for `vars.all()`.
std::vector<double> flatten_gradient(const MlpParams& params, std::span<const Var> grads);

/// d loss / d params for a scalar loss built from taped operations.
std::vector<double> param_gradient(const MlpParams& params,
                                   const std::function<Var(const MlpVars&)>& loss);

/// d output / d x for a scalar-output network.
std::vector<double> input_gradient(const MlpParams& params, std::span<const double> x);

/// d outer_loss / d params where outer_loss depends on the per-row input
/// gradients of the network's summed output over `x_batch`.
std::vector<double> double_backprop_gradient(const MlpParams& params, const Matrix& x_batch,
                                             const std::function<Var(const Var&)>& outer_loss);

/// Exponential decay from `initial` to `final` over `total_steps` steps.
struct LrSchedule {
    double initial = 1e-3;
    double final = 1e-5;
    long total_steps = 1;

    double at(long step) const;
};

struct AdamState {
    std::vector<double> m;
    std::vector<double> v;
    long step = 0;
    LrSchedule schedule;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    AdamState() = default;
    AdamState(std::size_t n, LrSchedule s) : m(n, 0.0), v(n, 0.0), schedule(s) {}
};

void adam_step(AdamState& state, std::span<double> params, std::span<const double> grads);

/// Named networks plus free-form metadata, stored as a JSON header followed
/// by little-endian float64 arrays.
struct Checkpoint {
    nlohmann::json meta = nlohmann::json::object();
    std::vector<std::pair<std::string, MlpParams>> networks;

    const MlpParams& network(const std::string& name) const;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace symdistill::nn
