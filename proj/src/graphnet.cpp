#include "symdistill/graphnet.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <malloc.h>

namespace symdistill::gn {

namespace {

constexpr std::array<std::pair<Variant, std::string_view>, 4> kVariantNames = {{
    {Variant::Standard, "standard"},
    {Variant::Bottleneck, "bottleneck"},
    {Variant::L1, "l1"},
    {Variant::KL, "kl"},
}};

struct Taped {
    Var predictions;
    Var messages;
    Var mu;
    Var logvar;
    Var summed;
};

Matrix standard_normal(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
    return m;
}

Taped taped_forward(const GnModel& model, const nn::MlpVars& phi_e, const nn::MlpVars& phi_v,
                    const Matrix& nodes, const Graph& g, const ForwardOptions& opt) {
    const auto recv = ad::make_index(g.receivers);
    const auto send = ad::make_index(g.senders);
    const Var x = ad::constant(nodes);
    const Var edge_in = ad::concat_cols(ad::gather_rows(x, recv), ad::gather_rows(x, send));
    const Var raw = nn::mlp_apply(phi_e, edge_in);

    Taped t;
    const int md = model.message_dim();
    if (model.variant() == Variant::KL) {
        t.mu = ad::slice_cols(raw, 0, md);
        t.logvar = ad::slice_cols(raw, md, md);
        if (opt.logvar_override) {
            t.logvar = ad::constant(Matrix::Constant(raw.rows(), md, *opt.logvar_override));
        }
        if (opt.sample) {
            const Var eps = ad::constant(standard_normal(raw.rows(), md, opt.seed));
            const Var sigma = ad::exp(ad::scale(t.logvar, 0.5));
            t.messages = ad::add(t.mu, ad::mul(sigma, eps));
        } else {
            t.messages = t.mu;
        }
    } else {
        t.messages = raw;
    }
    t.summed = ad::scatter_add_rows(t.messages, recv, nodes.rows());
    Var node_in = ad::concat_cols(x, t.summed);
    if (!g.target_nodes.empty()) node_in = ad::gather_rows(node_in, ad::make_index(g.target_nodes));
    t.predictions = nn::mlp_apply(phi_v, node_in);
    return t;
}

struct TapedLoss {
    Var total;
    Var l_v;
    Var l_e;
    Var l_n;
};

TapedLoss taped_loss(const GnModel& model, const nn::MlpVars& phi_e, const nn::MlpVars& phi_v,
                     const Matrix& nodes, const Graph& g, double alpha1, double alpha2,
                     std::uint64_t sample_seed) {
    ForwardOptions opt;
    opt.seed = sample_seed;
    const Taped t = taped_forward(model, phi_e, phi_v, nodes, g, opt);
    TapedLoss l;
    l.l_v = ad::scale(ad::sum(ad::abs(ad::sub(t.predictions, ad::constant(g.targets)))),
                      1.0 / g.n_targets());
    const double inv_edges = g.n_edges() > 0 ? 1.0 / g.n_edges() : 0.0;
    switch (model.variant()) {
        case Variant::L1: l.l_e = ad::scale(ad::sum(ad::abs(t.messages)), inv_edges); break;
        case Variant::KL: {
            const Var kl = ad::sub(ad::add(ad::square(t.mu), ad::exp(t.logvar)), t.logvar);
            const double offset = 0.5 * static_cast<double>(t.mu.value().size());
            l.l_e = ad::scale(ad::sub(ad::scale(ad::sum(kl), 0.5), ad::scalar(offset)), inv_edges);
            break;
        }
        default: l.l_e = ad::scalar(0.0); break;
    }
    Var reg = ad::scalar(0.0);
    for (const auto* net : {&phi_e, &phi_v})
        for (const auto& p : net->all()) reg = ad::add(reg, ad::sum(ad::square(p)));
    l.l_n = reg;
    l.total = ad::add(ad::add(l.l_v, ad::scale(l.l_e, alpha1)), ad::scale(l.l_n, alpha2));
    return l;
}

}  // namespace

std::string_view variant_name(Variant v) {
    for (const auto& [k, n] : kVariantNames)
        if (k == v) return n;
    return "unknown";
}

Variant parse_variant(std::string_view name) {
    for (const auto& [k, n] : kVariantNames)
        if (n == name) return k;
    throw InvalidArgument("unknown variant '" + std::string(name) + "'");
}

void Graph::validate() const {
    if (receivers.size() != senders.size()) throw ShapeMismatch("receiver/sender lists differ in length");
    for (std::size_t k = 0; k < receivers.size(); ++k)
        if (receivers[k] < 0 || receivers[k] >= n_nodes() || senders[k] < 0 || senders[k] >= n_nodes())
            throw ShapeMismatch("edge index out of range");
    for (int t : target_nodes)
        if (t < 0 || t >= n_nodes()) throw ShapeMismatch("target node out of range");
    if (targets.rows() != 0 && targets.rows() != n_targets())
        throw ShapeMismatch("target row count does not match target nodes");
}

Graph batch_graphs(std::span<const Graph* const> graphs) {
    Graph out;
    if (graphs.empty()) return out;
    Eigen::Index n_nodes = 0, n_targets = 0;
    const Eigen::Index width = graphs.front()->nodes.cols();
    const Eigen::Index out_width = graphs.front()->targets.cols();
    bool any_subset = false;
    for (const Graph* g : graphs) {
        if (g->nodes.cols() != width || g->targets.cols() != out_width)
            throw ShapeMismatch("cannot batch graphs with different feature widths");
        n_nodes += g->n_nodes();
        n_targets += g->targets.rows();
        any_subset = any_subset || !g->target_nodes.empty();
    }
    out.nodes.resize(n_nodes, width);
    out.targets.resize(n_targets, out_width);
    int node_off = 0;
    Eigen::Index target_off = 0;
    for (const Graph* g : graphs) {
        out.nodes.middleRows(node_off, g->n_nodes()) = g->nodes;
        if (g->targets.rows() > 0) out.targets.middleRows(target_off, g->targets.rows()) = g->targets;
        target_off += g->targets.rows();
        for (int k = 0; k < g->n_edges(); ++k) {
            out.receivers.push_back(g->receivers[k] + node_off);
            out.senders.push_back(g->senders[k] + node_off);
        }
        if (any_subset) {
            if (g->target_nodes.empty()) {
                for (int i = 0; i < g->n_nodes(); ++i) out.target_nodes.push_back(i + node_off);
            } else {
                for (int t : g->target_nodes) out.target_nodes.push_back(t + node_off);
            }
        }
        node_off += g->n_nodes();
    }
    return out;
}

Graph batch_graphs(std::span<const Graph> graphs) {
    std::vector<const Graph*> ptrs;
    for (const auto& g : graphs) ptrs.push_back(&g);
    return batch_graphs(std::span<const Graph* const>(ptrs));
}

void fully_connected_edges(int n, std::vector<int>& receivers, std::vector<int>& senders) {
    receivers.clear();
    senders.clear();
    for (int r = 0; r < n; ++r)
        for (int s = 0; s < n; ++s)
            if (r != s) {
                receivers.push_back(r);
                senders.push_back(s);
            }
}

Graph particle_graph(const nbody::Trajectory& traj, int step) {
    const int n = traj.n_bodies, dim = traj.dim;
    Graph g;
    g.nodes.resize(n, 2 * dim + 2);
    g.targets.resize(n, dim);
    for (int b = 0; b < n; ++b) {
        const std::size_t o = traj.offset(step, b);
        for (int d = 0; d < dim; ++d) {
            g.nodes(b, d) = traj.positions[o + d];
            g.nodes(b, dim + d) = traj.velocities[o + d];
            g.targets(b, d) = traj.accelerations[o + d];
        }
        g.nodes(b, 2 * dim) = traj.masses[b];
        g.nodes(b, 2 * dim + 1) = traj.charges[b];
    }
    fully_connected_edges(n, g.receivers, g.senders);
    return g;
}

std::vector<int> snapshot_steps(int n_steps, int per_sim) {
    std::vector<int> out;
    per_sim = std::min(per_sim, n_steps);
    for (int k = 0; k < per_sim; ++k)
        out.push_back(static_cast<int>(static_cast<long>(k) * n_steps / per_sim));
    return out;
}

std::vector<SnapshotRef> snapshot_refs(const nbody::Dataset& data, bool test, int per_sim) {
    std::vector<SnapshotRef> refs;
    for (int sim : data.split_indices(test))
        for (int step : snapshot_steps(data.config.n_steps, per_sim)) refs.push_back({sim, step});
    return refs;
}

std::vector<Graph> dataset_graphs(const nbody::Dataset& data, bool test, int per_sim) {
    std::vector<Graph> out;
    for (const auto& ref : snapshot_refs(data, test, per_sim))
        out.push_back(particle_graph(data.sims[ref.sim], ref.step));
    return out;
}

GnModel::GnModel(const GnConfig& c, std::uint64_t seed) : variant_(c.variant) {
    message_dim_ = c.message_dim > 0 ? c.message_dim : (c.variant == Variant::Bottleneck ? c.out_dim : 100);
    const int e_out = c.variant == Variant::KL ? 2 * message_dim_ : message_dim_;
    phi_e = nn::MlpParams({2 * c.node_dim, c.hidden, c.hidden, e_out}, mix_seed(seed, 11));
    phi_v = nn::MlpParams({c.node_dim + message_dim_, c.hidden, c.hidden, c.out_dim}, mix_seed(seed, 12));
}

nn::Checkpoint GnModel::to_checkpoint() const {
    nn::Checkpoint c;
    c.meta = {{"model", "gn"}, {"variant", variant_name(variant_)}, {"message_dim", message_dim_}};
    c.networks.emplace_back("phi_e", phi_e);
    c.networks.emplace_back("phi_v", phi_v);
    return c;
}

GnModel GnModel::from_checkpoint(const nn::Checkpoint& ckpt) {
    if (ckpt.meta.value("model", "") != "gn") throw SchemaError("checkpoint is not a graph network");
    GnModel m;
    m.variant_ = parse_variant(ckpt.meta.at("variant").get<std::string>());
    m.message_dim_ = ckpt.meta.at("message_dim").get<int>();
    m.phi_e = ckpt.network("phi_e");
    m.phi_v = ckpt.network("phi_v");
    const int expect_e = m.variant_ == Variant::KL ? 2 * m.message_dim_ : m.message_dim_;
    if (m.phi_e.output_size() != expect_e || m.phi_v.input_size() <= m.message_dim_ ||
        m.phi_e.input_size() != 2 * (m.phi_v.input_size() - m.message_dim_))
        throw SchemaError("checkpoint network shapes are inconsistent");
    return m;
}

ForwardResult gn_forward(const GnModel& model, const Graph& graph, const ForwardOptions& options) {
    graph.validate();
    if (graph.nodes.cols() != model.node_dim())
        throw ShapeMismatch("graph node width " + std::to_string(graph.nodes.cols()) +
                            " does not match model input " + std::to_string(model.node_dim()));
    ad::NoGradGuard guard;
    const auto e = nn::bind_constant(model.phi_e);
    const auto v = nn::bind_constant(model.phi_v);
    const Taped t = taped_forward(model, e, v, graph.nodes, graph, options);
    ForwardResult r;
    r.predictions = t.predictions.value();
    r.messages = t.messages.value();
    r.summed = t.summed.value();
    if (model.variant() == Variant::KL) {
        r.mu = t.mu.value();
        r.logvar = t.logvar.value();
    }
    return r;
}

double default_alpha1(Variant v) {
    switch (v) {
        case Variant::L1: return 1e-2;
        case Variant::KL: return 1.0;
        default: return 0.0;
    }
}

TrainConfig TrainConfig::for_variant(Variant v) {
    TrainConfig c;
    c.alpha1 = default_alpha1(v);
    return c;
}

LossParts loss(const GnModel& model, const Graph& graph, const TrainConfig& config,
               std::uint64_t sample_seed) {
    graph.validate();
    ad::NoGradGuard guard;
    const auto e = nn::bind_constant(model.phi_e);
    const auto v = nn::bind_constant(model.phi_v);
    const auto l = taped_loss(model, e, v, graph.nodes, graph, config.alpha1, config.alpha2, sample_seed);
    return {l.total.item(), l.l_v.item(), l.l_e.item(), l.l_n.item()};
}

double evaluate(const GnModel& model, std::span<const Graph> graphs, std::uint64_t sample_seed) {
    if (graphs.empty()) return 0.0;
    constexpr std::size_t kChunk = 128;
    double err = 0.0;
    long count = 0;
    for (std::size_t start = 0, chunk = 0; start < graphs.size(); start += kChunk, ++chunk) {
        const auto n = std::min(kChunk, graphs.size() - start);
        const Graph batch = batch_graphs(graphs.subspan(start, n));
        ForwardOptions opt;
        opt.seed = mix_seed(sample_seed, chunk);
        const auto r = gn_forward(model, batch, opt);
        err += (r.predictions - batch.targets).cwiseAbs().sum();
        count += batch.n_targets();
    }
    return err / static_cast<double>(count);
}

void keep_heap_mapped() {
    // Training allocates and frees the same large activation blocks every
    // step; keeping them on the heap avoids an mmap/munmap pair per block.
    static const bool once = [] {
        mallopt(M_MMAP_THRESHOLD, 256 << 20);
        mallopt(M_TRIM_THRESHOLD, 512 << 20);
        return true;
    }();
    (void)once;
}

TrainResult train_graphs(GnModel model, std::span<const Graph> train, std::span<const Graph> test,
                         const TrainConfig& config) {
    keep_heap_mapped();
    if (train.empty()) throw InvalidArgument("training set is empty");
    if (config.batch_size < 1 || config.epochs < 0) throw InvalidArgument("bad batch size or epoch count");
    const std::size_t n = train.size();
    const std::size_t bs = static_cast<std::size_t>(config.batch_size);
    const long steps_per_epoch = static_cast<long>((n + bs - 1) / bs);
    const nn::LrSchedule sched{config.lr_initial, config.lr_final,
                               std::max<long>(1, steps_per_epoch * config.epochs)};
    nn::AdamState adam_e(model.phi_e.size(), sched);
    nn::AdamState adam_v(model.phi_v.size(), sched);

    TrainResult result;
    std::vector<std::size_t> order(n);
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        std::mt19937_64 rng(mix_seed(config.seed, 1, static_cast<std::uint64_t>(epoch)));
        std::shuffle(order.begin(), order.end(), rng);
        std::normal_distribution<double> shift(0.0, config.augment_sigma);
        for (long b = 0; b < steps_per_epoch; ++b) {
            std::vector<const Graph*> ptrs;
            for (std::size_t k = b * bs; k < std::min(n, (b + 1) * bs); ++k) ptrs.push_back(&train[order[k]]);
            const Graph batch = batch_graphs(std::span<const Graph* const>(ptrs));
            Matrix nodes = batch.nodes;
            if (config.augment) {
                for (int d = 0; d < config.augment_dims; ++d)
                    nodes.col(config.augment_offset + d).array() += shift(rng);
            }
            const auto e = nn::bind(model.phi_e);
            const auto v = nn::bind(model.phi_v);
            const auto l = taped_loss(model, e, v, nodes, batch, config.alpha1, config.alpha2, rng());
            if (!std::isfinite(l.l_v.item()))
                throw DivergedLoss("prediction loss became non-finite at epoch " + std::to_string(epoch));
            auto leaves = e.all();
            const auto ve = v.all();
            leaves.insert(leaves.end(), ve.begin(), ve.end());
            ad::GradTape tape;
            const auto grads = tape.gradient(l.total, leaves);
            const std::size_t ne = e.all().size();
            const auto ge = nn::flatten_gradient(model.phi_e, std::span<const Var>(grads).subspan(0, ne));
            const auto gv = nn::flatten_gradient(model.phi_v, std::span<const Var>(grads).subspan(ne));
            nn::adam_step(adam_e, model.phi_e.flat(), ge);
            nn::adam_step(adam_v, model.phi_v.flat(), gv);
        }
        result.train_lv.push_back(evaluate(model, train));
        result.test_lv.push_back(test.empty() ? 0.0 : evaluate(model, test));
        if (!std::isfinite(result.train_lv.back()))
            throw DivergedLoss("prediction loss became non-finite at epoch " + std::to_string(epoch));
    }
    result.model = std::move(model);
    return result;
}

TrainResult train(const nbody::Dataset& data, Variant variant, const TrainConfig& config) {
    const int dim = data.config.dim;
    GnConfig gc;
    gc.variant = variant;
    gc.node_dim = 2 * dim + 2;
    gc.out_dim = dim;
    gc.hidden = config.hidden;
    GnModel model(gc, config.seed);
    const auto train_set = dataset_graphs(data, false, config.snapshots_per_sim);
    const auto test_set = dataset_graphs(data, true, config.snapshots_per_sim);
    TrainConfig c = config;
    c.augment_offset = 0;
    c.augment_dims = dim;
    return train_graphs(std::move(model), train_set, test_set, c);
}

}  // namespace symdistill::gn
