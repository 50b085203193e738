#include "symdistill/nn.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace symdistill::nn {

namespace {

std::size_t count_params(const std::vector<int>& sizes) {
    std::size_t n = 0;
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l)
        n += static_cast<std::size_t>(sizes[l]) * sizes[l + 1] + sizes[l + 1];
    return n;
}

void check_sizes(const std::vector<int>& sizes) {
    if (sizes.size() != 4) throw InvalidArgument("an MLP has exactly two hidden layers");
    for (int s : sizes)
        if (s < 1) throw InvalidArgument("layer sizes must be positive");
}

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

}  // namespace

std::string_view activation_name(Activation a) { return a == Activation::Softplus ? "softplus" : "relu"; }

Activation parse_activation(std::string_view name) {
    if (name == "relu") return Activation::Relu;
    if (name == "softplus") return Activation::Softplus;
    throw InvalidArgument("unknown activation '" + std::string(name) + "'");
}

MlpParams::MlpParams(std::vector<int> layer_sizes, std::uint64_t seed, Activation activation)
    : sizes_(std::move(layer_sizes)), activation_(activation) {
    check_sizes(sizes_);
    data_.assign(count_params(sizes_), 0.0);
    std::mt19937_64 rng(seed);
    for (int l = 0; l < n_layers(); ++l) {
        const double limit = std::sqrt(6.0 / (sizes_[l] + sizes_[l + 1]));
        std::uniform_real_distribution<double> dist(-limit, limit);
        auto w = weight(l);
        for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = dist(rng);
    }
}

MlpParams MlpParams::zeros(std::vector<int> layer_sizes, Activation activation) {
    check_sizes(layer_sizes);
    MlpParams p;
    p.sizes_ = std::move(layer_sizes);
    p.activation_ = activation;
    p.data_.assign(count_params(p.sizes_), 0.0);
    return p;
}

std::size_t MlpParams::weight_offset(int layer) const {
    std::size_t off = 0;
    for (int l = 0; l < layer; ++l)
        off += static_cast<std::size_t>(sizes_[l]) * sizes_[l + 1] + sizes_[l + 1];
    return off;
}

Eigen::Map<Matrix> MlpParams::weight(int layer) {
    return {data_.data() + weight_offset(layer), sizes_[layer], sizes_[layer + 1]};
}
Eigen::Map<const Matrix> MlpParams::weight(int layer) const {
    return {data_.data() + weight_offset(layer), sizes_[layer], sizes_[layer + 1]};
}
Eigen::Map<Matrix> MlpParams::bias(int layer) {
    return {data_.data() + weight_offset(layer) + static_cast<std::size_t>(sizes_[layer]) * sizes_[layer + 1],
            1, sizes_[layer + 1]};
}
Eigen::Map<const Matrix> MlpParams::bias(int layer) const {
    return {data_.data() + weight_offset(layer) + static_cast<std::size_t>(sizes_[layer]) * sizes_[layer + 1],
            1, sizes_[layer + 1]};
}

std::vector<Var> MlpVars::all() const {
    std::vector<Var> out;
    for (std::size_t l = 0; l < weights.size(); ++l) {
        out.push_back(weights[l]);
        out.push_back(biases[l]);
    }
    return out;
}

MlpVars bind(const MlpParams& params) {
    MlpVars v;
    v.activation = params.activation();
    for (int l = 0; l < params.n_layers(); ++l) {
        v.weights.push_back(ad::parameter(params.weight(l)));
        v.biases.push_back(ad::parameter(params.bias(l)));
    }
    return v;
}

MlpVars bind_constant(const MlpParams& params) {
    MlpVars v;
    v.activation = params.activation();
    for (int l = 0; l < params.n_layers(); ++l) {
        v.weights.push_back(ad::constant(params.weight(l)));
        v.biases.push_back(ad::constant(params.bias(l)));
    }
    return v;
}

Var mlp_apply(const MlpVars& net, const Var& x) {
    if (x.cols() != net.weights.front().rows())
        throw ShapeMismatch("MLP input has " + std::to_string(x.cols()) + " columns, expected " +
                            std::to_string(net.weights.front().rows()));
    Var h = x;
    const std::size_t n = net.weights.size();
    for (std::size_t l = 0; l < n; ++l) {
        h = ad::add_row(ad::matmul(h, net.weights[l]), net.biases[l]);
        if (l + 1 < n) h = net.activation == Activation::Softplus ? ad::softplus(h) : ad::relu(h);
    }
    return h;
}

Matrix mlp_forward_batch(const MlpParams& params, const Matrix& x) {
    if (x.cols() != params.input_size()) throw ShapeMismatch("MLP input width mismatch");
    Matrix h = x;
    for (int l = 0; l < params.n_layers(); ++l) {
        Matrix next = h * params.weight(l);
        next.rowwise() += params.bias(l).row(0);
        if (l + 1 < params.n_layers()) {
            if (params.activation() == Activation::Softplus)
                next = next.unaryExpr([](double x) { return softplus(x); }).eval();
            else
                next = next.cwiseMax(0.0);
        }
        h = std::move(next);
    }
    return h;
}

std::vector<double> mlp_forward(const MlpParams& params, std::span<const double> x) {
    if (static_cast<int>(x.size()) != params.input_size()) throw ShapeMismatch("MLP input width mismatch");
    Matrix row = Eigen::Map<const Matrix>(x.data(), 1, static_cast<Eigen::Index>(x.size()));
    const Matrix out = mlp_forward_batch(params, row);
    return {out.data(), out.data() + out.size()};
}

std::vector<double> flatten_gradient(const MlpParams& params, std::span<const Var> grads) {
    std::vector<double> out(params.size(), 0.0);
    MlpParams view = MlpParams::zeros(params.layer_sizes());
    for (int l = 0; l < params.n_layers(); ++l) {
        view.weight(l) = grads[2 * l].value();
        view.bias(l) = grads[2 * l + 1].value();
    }
    std::copy(view.flat().begin(), view.flat().end(), out.begin());
    return out;
}

std::vector<double> param_gradient(const MlpParams& params,
                                   const std::function<Var(const MlpVars&)>& loss) {
    const MlpVars vars = bind(params);
    const Var l = loss(vars);
    ad::GradTape tape;
    const auto leaves = vars.all();
    return flatten_gradient(params, tape.gradient(l, leaves));
}

std::vector<double> input_gradient(const MlpParams& params, std::span<const double> x) {
    if (params.output_size() != 1) throw ad::NonScalarOutput("input_gradient needs a scalar network");
    const MlpVars vars = bind_constant(params);
    const Var xv = ad::parameter(Eigen::Map<const Matrix>(x.data(), 1, static_cast<Eigen::Index>(x.size())));
    const Var out = mlp_apply(vars, xv);
    ad::GradTape tape;
    const std::vector<Var> wrt = {xv};
    const auto g = tape.gradient(out, wrt);
    return {g[0].value().data(), g[0].value().data() + g[0].value().size()};
}

std::vector<double> double_backprop_gradient(const MlpParams& params, const Matrix& x_batch,
                                             const std::function<Var(const Var&)>& outer_loss) {
    if (params.output_size() != 1) throw ad::NonScalarOutput("double backprop needs a scalar network");
    const MlpVars vars = bind(params);
    const Var x = ad::parameter(x_batch);
    const Var total = ad::sum(mlp_apply(vars, x));
    ad::GradTape tape;
    const std::vector<Var> wrt_x = {x};
    const Var gx = tape.gradient(total, wrt_x, /*create_graph=*/true)[0];
    const Var loss = outer_loss(gx);
    const auto leaves = vars.all();
    return flatten_gradient(params, tape.gradient(loss, leaves));
}

double LrSchedule::at(long step) const {
    if (total_steps <= 1) return initial;
    const double frac = std::min(1.0, static_cast<double>(step) / static_cast<double>(total_steps - 1));
    return initial * std::pow(final / initial, frac);
}

void adam_step(AdamState& s, std::span<double> params, std::span<const double> grads) {
    if (params.size() != grads.size() || s.m.size() != params.size())
        throw ShapeMismatch("adam_step: parameter, gradient and moment sizes differ");
    const double lr = s.schedule.at(s.step);
    ++s.step;
    const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
    const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        s.m[i] = s.beta1 * s.m[i] + (1.0 - s.beta1) * grads[i];
        s.v[i] = s.beta2 * s.v[i] + (1.0 - s.beta2) * grads[i] * grads[i];
        const double mh = s.m[i] / c1;
        const double vh = s.v[i] / c2;
        params[i] -= lr * mh / (std::sqrt(vh) + s.eps);
    }
}

const MlpParams& Checkpoint::network(const std::string& name) const {
    for (const auto& [n, p] : networks)
        if (n == name) return p;
    throw SchemaError("checkpoint has no network '" + name + "'");
}

namespace {
constexpr char kCkptMagic[8] = {'S', 'Y', 'M', 'D', 'C', 'K', 'P', '1'};

void put_u64(std::ostream& out, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t get_u64(std::istream& in) {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    if (!in) throw SchemaError("truncated checkpoint");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}
}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    nlohmann::json header = {{"schema_version", 1}, {"meta", ckpt.meta}};
    header["networks"] = nlohmann::json::array();
    for (const auto& [name, p] : ckpt.networks)
        header["networks"].push_back({{"name", name},
                                       {"layer_sizes", p.layer_sizes()},
                                       {"activation", activation_name(p.activation())},
                                       {"count", p.size()}});
    const std::string text = header.dump();
    out.write(kCkptMagic, 8);
    put_u64(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, p] : ckpt.networks)
        for (double x : p.flat()) put_u64(out, std::bit_cast<std::uint64_t>(x));
    if (!out) throw IoError("write failed for '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kCkptMagic, 8) != 0) throw SchemaError("not a checkpoint file");
    const auto len = get_u64(in);
    if (len > (1u << 30)) throw SchemaError("implausible header length");
    std::string text(len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));
    Checkpoint ckpt;
    try {
        const auto header = nlohmann::json::parse(text);
        if (header.at("schema_version").get<int>() != 1) throw SchemaError("unsupported checkpoint version");
        ckpt.meta = header.at("meta");
        for (const auto& net : header.at("networks")) {
            auto p = MlpParams::zeros(net.at("layer_sizes").get<std::vector<int>>(),
                                      parse_activation(net.value("activation", std::string("relu"))));
            if (p.size() != net.at("count").get<std::size_t>()) throw SchemaError("parameter count mismatch");
            ckpt.networks.emplace_back(net.at("name").get<std::string>(), std::move(p));
        }
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("bad checkpoint header: ") + e.what());
    }
    for (auto& [name, p] : ckpt.networks)
        for (double& x : p.flat()) x = std::bit_cast<double>(get_u64(in));
    return ckpt;
}

}  // namespace symdistill::nn
