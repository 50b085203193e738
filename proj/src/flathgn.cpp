#include "symdistill/flathgn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace symdistill::hgn {

namespace {

struct Edges {
    ad::IndexList recv;
    ad::IndexList send;
};

Edges edges_of(const Graph& g) { return {ad::make_index(g.receivers), ad::make_index(g.senders)}; }

Var edge_inputs(const Var& nodes, const Edges& e) {
    return ad::concat_cols(ad::gather_rows(nodes, e.recv), ad::gather_rows(nodes, e.send));
}

struct TapedEnergy {
    Var total;
    Var pair;
};

TapedEnergy taped_energy(const nn::MlpVars& self, const nn::MlpVars& pair, const Var& nodes, const Graph& g) {
    TapedEnergy t;
    t.pair = nn::mlp_apply(pair, edge_inputs(nodes, edges_of(g)));
    t.total = ad::add(ad::sum(nn::mlp_apply(self, nodes)), ad::sum(t.pair));
    return t;
}

// (dH/dp, -dH/dq) from a node-feature gradient.
Var canonical_rates(const Var& grad, int dim) {
    return ad::concat_cols(ad::slice_cols(grad, dim, dim), ad::scale(ad::slice_cols(grad, 0, dim), -1.0));
}

struct TapedLoss {
    Var total;
    Var l_dyn;
    Var l_pair;
};

TapedLoss taped_loss(const nn::MlpVars& self, const nn::MlpVars& pair, const Matrix& nodes, const Graph& g,
                     int dim, double pair_reg) {
    const Var x = ad::parameter(nodes);
    const auto e = taped_energy(self, pair, x, g);
    ad::GradTape tape;
    const Var x_list[] = {x};
    const Var gx = tape.gradient(e.total, x_list, true)[0];
    const Var err = ad::sub(canonical_rates(gx, dim), ad::constant(g.targets));
    TapedLoss l;
    l.l_dyn = ad::scale(ad::sum(ad::abs(err)), 1.0 / static_cast<double>(g.n_nodes()));
    l.l_pair = g.n_edges() > 0 ? ad::mean(ad::abs(e.pair)) : ad::scalar(0.0);
    l.total = ad::add(l.l_dyn, ad::scale(l.l_pair, pair_reg));
    return l;
}

struct StepGradient {
    double l_dyn;
    std::vector<double> self;
    std::vector<double> pair;
};

StepGradient step_gradient(const FlatHgn& model, const Matrix& nodes, const Graph& g, double pair_reg) {
    const auto s = nn::bind(model.h_self);
    const auto p = nn::bind(model.h_pair);
    const auto l = taped_loss(s, p, nodes, g, model.dim(), pair_reg);
    auto leaves = s.all();
    const std::size_t ns = leaves.size();
    const auto pv = p.all();
    leaves.insert(leaves.end(), pv.begin(), pv.end());
    ad::GradTape tape;
    const auto grads = tape.gradient(l.total, leaves);
    return {l.l_dyn.item(), nn::flatten_gradient(model.h_self, std::span<const Var>(grads).subspan(0, ns)),
            nn::flatten_gradient(model.h_pair, std::span<const Var>(grads).subspan(ns))};
}

void check_graph(const FlatHgn& model, const Graph& g) {
    g.validate();
    if (g.nodes.cols() != model.node_dim())
        throw ShapeMismatch("graph node width " + std::to_string(g.nodes.cols()) + " does not match model input " +
                            std::to_string(model.node_dim()));
}

}  // namespace

FlatHgn::FlatHgn(const HgnConfig& c, std::uint64_t seed) {
    const int lv = 2 * c.dim + 2;
    h_self = nn::MlpParams({lv, c.hidden, c.hidden, 1}, mix_seed(seed, 21), c.activation);
    h_pair = nn::MlpParams({2 * lv, c.hidden, c.hidden, 1}, mix_seed(seed, 22), c.activation);
}

nn::Checkpoint FlatHgn::to_checkpoint() const {
    nn::Checkpoint c;
    c.meta = {{"model", "flathgn"}, {"dim", dim()}};
    c.networks.emplace_back("h_self", h_self);
    c.networks.emplace_back("h_pair", h_pair);
    return c;
}

FlatHgn FlatHgn::from_checkpoint(const nn::Checkpoint& ckpt) {
    if (ckpt.meta.value("model", "") != "flathgn") throw SchemaError("checkpoint is not a FlatHGN");
    FlatHgn m;
    m.h_self = ckpt.network("h_self");
    m.h_pair = ckpt.network("h_pair");
    if (m.h_self.output_size() != 1 || m.h_pair.output_size() != 1 ||
        m.h_pair.input_size() != 2 * m.h_self.input_size() || m.h_self.input_size() % 2 != 0)
        throw SchemaError("checkpoint network shapes are inconsistent");
    return m;
}

Graph canonical_graph(const nbody::Trajectory& traj, int step) {
    Graph g = gn::particle_graph(traj, step);
    const int dim = traj.dim;
    Matrix targets(g.n_nodes(), 2 * dim);
    for (int b = 0; b < g.n_nodes(); ++b) {
        const double m = g.nodes(b, 2 * dim);
        for (int d = 0; d < dim; ++d) {
            targets(b, d) = g.nodes(b, dim + d);
            targets(b, dim + d) = m * g.targets(b, d);
            g.nodes(b, dim + d) *= m;
        }
    }
    g.targets = std::move(targets);
    return g;
}

std::vector<Graph> canonical_graphs(const nbody::Dataset& data, bool test, int per_sim) {
    std::vector<Graph> out;
    for (const auto& ref : gn::snapshot_refs(data, test, per_sim))
        out.push_back(canonical_graph(data.sims[ref.sim], ref.step));
    return out;
}

EnergyFn model_energy(const FlatHgn& model) {
    return [&model](const Var& nodes, const Graph& g) {
        return taped_energy(nn::bind_constant(model.h_self), nn::bind_constant(model.h_pair), nodes, g).total;
    };
}

EnergyFn gravity_energy(int dim) {
    return [dim](const Var& nodes, const Graph& g) {
        const Var q = ad::slice_cols(nodes, 0, dim);
        const Var p = ad::slice_cols(nodes, dim, dim);
        const Var m = ad::slice_cols(nodes, 2 * dim, 1);
        const Var kinetic = ad::sum(ad::mul(ad::sum_cols(ad::square(p)), ad::scale(ad::pow(m, -1.0), 0.5)));
        if (g.n_edges() == 0) return kinetic;
        const auto e = edges_of(g);
        const Var dq = ad::sub(ad::gather_rows(q, e.recv), ad::gather_rows(q, e.send));
        const Var inv_r = ad::pow(ad::sum_cols(ad::square(dq)), -0.5);
        const Var mm = ad::mul(ad::gather_rows(m, e.recv), ad::gather_rows(m, e.send));
        return ad::sub(kinetic, ad::scale(ad::sum(ad::mul(mm, inv_r)), 0.5));
    };
}

Matrix self_energies(const FlatHgn& model, const Graph& g) {
    check_graph(model, g);
    return nn::mlp_forward_batch(model.h_self, g.nodes);
}

Matrix pair_energies(const FlatHgn& model, const Graph& g) {
    check_graph(model, g);
    const int lv = model.node_dim();
    Matrix in(g.n_edges(), 2 * lv);
    for (int k = 0; k < g.n_edges(); ++k) {
        in.row(k).head(lv) = g.nodes.row(g.receivers[k]);
        in.row(k).tail(lv) = g.nodes.row(g.senders[k]);
    }
    return g.n_edges() ? nn::mlp_forward_batch(model.h_pair, in) : Matrix(0, 1);
}

double total_energy(const FlatHgn& model, const Graph& g) {
    return self_energies(model, g).sum() + pair_energies(model, g).sum();
}

Matrix hamiltonian_dynamics(const EnergyFn& energy, const Graph& g, int dim) {
    const Var x = ad::parameter(g.nodes);
    const Var h = energy(x, g);
    ad::GradTape tape;
    const Var x_list[] = {x};
    const Matrix rates = canonical_rates(tape.gradient(h, x_list)[0], dim).value();
    if (!rates.allFinite()) throw NonFiniteGradient("energy gradient is not finite");
    return rates;
}

Matrix hamiltonian_dynamics(const FlatHgn& model, const Graph& g) {
    check_graph(model, g);
    return hamiltonian_dynamics(model_energy(model), g, model.dim());
}

Graph rollout(const FlatHgn& model, Graph g, double dt, int steps) {
    const int w = 2 * model.dim();
    auto rates = [&](const Matrix& nodes) {
        Graph h = g;
        h.nodes = nodes;
        return hamiltonian_dynamics(model, h);
    };
    for (int s = 0; s < steps; ++s) {
        const Matrix y = g.nodes;
        auto shifted = [&](const Matrix& k, double h) {
            Matrix n = y;
            n.leftCols(w) += h * k;
            return n;
        };
        const Matrix k1 = rates(y);
        const Matrix k2 = rates(shifted(k1, dt / 2));
        const Matrix k3 = rates(shifted(k2, dt / 2));
        const Matrix k4 = rates(shifted(k3, dt));
        g.nodes.leftCols(w) += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    return g;
}

HgnLoss loss(const FlatHgn& model, const Graph& g, const HgnTrainConfig& config) {
    check_graph(model, g);
    const auto l = taped_loss(nn::bind_constant(model.h_self), nn::bind_constant(model.h_pair), g.nodes, g,
                              model.dim(), config.pair_reg);
    return {l.total.item(), l.l_dyn.item(), l.l_pair.item()};
}

std::vector<double> loss_gradient(const FlatHgn& model, const Graph& g, const HgnTrainConfig& config) {
    check_graph(model, g);
    auto r = step_gradient(model, g.nodes, g, config.pair_reg);
    r.self.insert(r.self.end(), r.pair.begin(), r.pair.end());
    return r.self;
}

double evaluate(const FlatHgn& model, std::span<const Graph> graphs) {
    constexpr std::size_t kChunk = 128;
    double err = 0.0;
    long count = 0;
    for (std::size_t start = 0; start < graphs.size(); start += kChunk) {
        const Graph batch = gn::batch_graphs(graphs.subspan(start, std::min(kChunk, graphs.size() - start)));
        err += (hamiltonian_dynamics(model, batch) - batch.targets).cwiseAbs().sum();
        count += batch.n_nodes();
    }
    return count ? err / static_cast<double>(count) : 0.0;
}

HgnTrainResult train_graphs(FlatHgn model, std::span<const Graph> train, std::span<const Graph> test,
                            const HgnTrainConfig& config) {
    gn::keep_heap_mapped();
    if (train.empty()) throw InvalidArgument("training set is empty");
    if (config.batch_size < 1 || config.epochs < 0) throw InvalidArgument("bad batch size or epoch count");
    const int dim = model.dim();
    const std::size_t n = train.size();
    const std::size_t bs = static_cast<std::size_t>(config.batch_size);
    const long steps_per_epoch = static_cast<long>((n + bs - 1) / bs);
    const nn::LrSchedule sched{config.lr_initial, config.lr_final, std::max<long>(1, steps_per_epoch * config.epochs)};
    nn::AdamState adam_s(model.h_self.size(), sched);
    nn::AdamState adam_p(model.h_pair.size(), sched);

    HgnTrainResult result;
    std::vector<std::size_t> order(n);
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        std::mt19937_64 rng(mix_seed(config.seed, 2, static_cast<std::uint64_t>(epoch)));
        std::shuffle(order.begin(), order.end(), rng);
        std::normal_distribution<double> shift(0.0, config.augment_sigma);
        for (long b = 0; b < steps_per_epoch; ++b) {
            std::vector<const Graph*> ptrs;
            for (std::size_t k = b * bs; k < std::min(n, (b + 1) * bs); ++k) ptrs.push_back(&train[order[k]]);
            const Graph batch = gn::batch_graphs(std::span<const Graph* const>(ptrs));
            Matrix nodes = batch.nodes;
            if (config.augment)
                for (int d = 0; d < dim; ++d) nodes.col(d).array() += shift(rng);
            const auto [l_dyn, gs, gp] = step_gradient(model, nodes, batch, config.pair_reg);
            if (!std::isfinite(l_dyn))
                throw gn::DivergedLoss("dynamics loss became non-finite at epoch " + std::to_string(epoch));
            nn::adam_step(adam_s, model.h_self.flat(), gs);
            nn::adam_step(adam_p, model.h_pair.flat(), gp);
        }
        result.train_loss.push_back(evaluate(model, train));
        result.test_loss.push_back(test.empty() ? 0.0 : evaluate(model, test));
        if (!std::isfinite(result.train_loss.back()))
            throw gn::DivergedLoss("dynamics loss became non-finite at epoch " + std::to_string(epoch));
    }
    result.model = std::move(model);
    return result;
}

HgnTrainResult train(const nbody::Dataset& data, const HgnTrainConfig& config) {
    FlatHgn model({data.config.dim, config.hidden, config.activation}, config.seed);
    const auto train_set = canonical_graphs(data, false, config.snapshots_per_sim);
    const auto test_set = canonical_graphs(data, true, config.snapshots_per_sim);
    return train_graphs(std::move(model), train_set, test_set, config);
}

double pearson(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw ShapeMismatch("pearson: length mismatch");
    const double n = static_cast<double>(a.size());
    if (a.size() < 2) return 0.0;
    const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
    const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    return saa > 0.0 && sbb > 0.0 ? sab / std::sqrt(saa * sbb) : 0.0;
}

PairEnergyProbe probe_pair_energy(const FlatHgn& model, const nbody::Dataset& data, bool test, int per_sim,
                                  double r_ref) {
    const int dim = model.dim(), lv = model.node_dim();
    std::vector<Eigen::RowVectorXd> rows;  // (i,j), (j,i), then the same at r_ref
    PairEnergyProbe out;
    for (const auto& g : canonical_graphs(data, test, per_sim)) {
        for (int i = 0; i < g.n_nodes(); ++i) {
            for (int j = i + 1; j < g.n_nodes(); ++j) {
                const Eigen::RowVectorXd vi = g.nodes.row(i), vj = g.nodes.row(j);
                const Eigen::RowVectorXd dq = vj.head(dim) - vi.head(dim);
                const double r = dq.norm();
                if (r == 0.0) continue;
                const Eigen::RowVectorXd far = [&] {
                    Eigen::RowVectorXd f = vj;
                    f.head(dim) = vi.head(dim) + dq * (r_ref / r);
                    return f;
                }();
                for (const auto* other : {&vj, &far}) {
                    Eigen::RowVectorXd a(2 * lv), b(2 * lv);
                    a << vi, *other;
                    b << *other, vi;
                    rows.push_back(a);
                    rows.push_back(b);
                }
                const double qq = vi(2 * dim + 1) * vj(2 * dim + 1);
                out.expected.push_back(qq * (1.0 / (r + nbody::kSoftening) - 1.0 / (r_ref + nbody::kSoftening)));
            }
        }
    }
    Matrix in(static_cast<Eigen::Index>(rows.size()), 2 * lv);
    for (std::size_t k = 0; k < rows.size(); ++k) in.row(static_cast<Eigen::Index>(k)) = rows[k];
    const Matrix h = nn::mlp_forward_batch(model.h_pair, in);
    for (std::size_t k = 0; k < out.expected.size(); ++k) {
        const Eigen::Index o = static_cast<Eigen::Index>(4 * k);
        out.learned.push_back(h(o, 0) + h(o + 1, 0) - h(o + 2, 0) - h(o + 3, 0));
    }
    out.pearson = pearson(out.learned, out.expected);
    return out;
}

}  // namespace symdistill::hgn
