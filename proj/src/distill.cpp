#include "symdistill/distill.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "symdistill/optimize.hpp"
#include "symdistill/probe.hpp"

namespace symdistill::distill {

namespace {

const char* kAxes[] = {"x", "y", "z"};

// One row of engineered features for the edge receiver -> sender.
template <class Row>
void edge_row(const Matrix& nodes, int recv, int send, int dim, Row&& out) {
    const int m = 2 * dim, q = 2 * dim + 1;
    out(0) = nodes(recv, m);
    out(1) = nodes(send, m);
    out(2) = nodes(recv, q);
    out(3) = nodes(send, q);
    double r2 = 0.0;
    for (int d = 0; d < dim; ++d) {
        const double delta = nodes(send, d) - nodes(recv, d);
        out(4 + d) = delta;
        r2 += delta * delta;
    }
    out(4 + dim) = std::sqrt(r2);
}

Eigen::MatrixXd edge_features(const gn::Graph& g, int dim) {
    Eigen::MatrixXd f(g.n_edges(), 5 + dim);
    for (int k = 0; k < g.n_edges(); ++k) edge_row(g.nodes, g.receivers[k], g.senders[k], dim, f.row(k));
    return f;
}

struct Sample {
    int sim;
    int step;
    int item;  // edge or node index
};

std::vector<Sample> draw_samples(const nbody::Dataset& data, int k, int items, std::uint64_t seed) {
    const auto train = data.split_indices(false);
    if (train.empty()) throw InvalidArgument("dataset has no training simulations");
    std::mt19937_64 rng(seed);
    std::vector<Sample> out;
    out.reserve(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) {
        const int sim = train[rng() % train.size()];
        const int step = static_cast<int>(rng() % static_cast<std::uint64_t>(data.sims[sim].n_steps));
        const int item = static_cast<int>(rng() % static_cast<std::uint64_t>(items));
        out.push_back({sim, step, item});
    }
    return out;
}

sr::Data make_data(std::vector<std::string> names, Eigen::MatrixXd x, Eigen::VectorXd y) {
    sr::Data d;
    d.names = std::move(names);
    d.x = std::move(x);
    d.y = std::move(y);
    return d;
}

double l1_mae(const Matrix& pred, const Matrix& target, bool strict) {
    long bad = 0;
    double err = 0.0;
    for (Eigen::Index i = 0; i < pred.rows(); ++i) {
        if (!pred.row(i).allFinite()) {
            ++bad;
            continue;
        }
        err += (pred.row(i) - target.row(i)).cwiseAbs().sum();
    }
    if (bad > 0 && (strict || bad > pred.rows() / 100))
        throw NonFiniteComposite(std::to_string(bad) + " of " + std::to_string(pred.rows()) +
                                 " composite predictions are not finite");
    return pred.rows() > bad ? err / static_cast<double>(pred.rows() - bad) : 0.0;
}

}  // namespace

std::vector<std::string> edge_feature_names(int dim) {
    std::vector<std::string> n = {"m1", "m2", "q1", "q2"};
    for (int d = 0; d < dim; ++d) n.push_back(std::string("d") + kAxes[d]);
    n.push_back("r");
    return n;
}

std::vector<std::string> node_feature_names(int dim, int n_messages) {
    std::vector<std::string> n;
    for (int d = 0; d < dim; ++d) n.push_back(kAxes[d]);
    for (int d = 0; d < dim; ++d) n.push_back(std::string("v") + kAxes[d]);
    n.push_back("m");
    n.push_back("q");
    for (int c = 0; c < n_messages; ++c) n.push_back("e" + std::to_string(c));
    return n;
}

sr::Data EdgeSampleTable::data(int column) const {
    if (column < 0 || column >= messages.cols()) throw InvalidArgument("message column out of range");
    return make_data(names, features, messages.col(column));
}

EdgeSampleTable record_edge_samples(const gn::GnModel& model, const nbody::Dataset& data, int k, std::uint64_t seed,
                                    std::span<const int> components) {
    const int n = data.config.n_bodies, dim = data.config.dim;
    const auto samples = draw_samples(data, k, n * (n - 1), seed);
    EdgeSampleTable t;
    t.names = edge_feature_names(dim);
    t.features.resize(k, static_cast<Eigen::Index>(t.names.size()));
    Matrix msg(k, model.message_dim()), mu, logvar;
    const bool kl = model.variant() == gn::Variant::KL;
    if (kl) {
        mu.resize(k, model.message_dim());
        logvar.resize(k, model.message_dim());
    }
    constexpr int kChunk = 256;
    for (int start = 0; start < k; start += kChunk) {
        const int cnt = std::min(kChunk, k - start);
        std::vector<gn::Graph> graphs;
        for (int i = start; i < start + cnt; ++i)
            graphs.push_back(gn::particle_graph(data.sims[samples[i].sim], samples[i].step));
        const auto batch = gn::batch_graphs(graphs);
        gn::ForwardOptions opt;
        opt.sample = false;
        const auto r = gn::gn_forward(model, batch, opt);
        const int per = n * (n - 1);
        for (int i = start; i < start + cnt; ++i) {
            const int e = (i - start) * per + samples[i].item;
            msg.row(i) = r.messages.row(e);
            if (kl) {
                mu.row(i) = r.mu.row(e);
                logvar.row(i) = r.logvar.row(e);
            }
            edge_row(batch.nodes, batch.receivers[e], batch.senders[e], dim, t.features.row(i));
        }
    }
    if (components.empty()) {
        const auto ranked = kl ? probe::rank_by_kl(mu, logvar) : probe::rank_by_std(msg);
        t.components.assign(ranked.begin(), ranked.begin() + std::min<int>(dim, model.message_dim()));
    } else {
        for (int c : components)
            if (c < 0 || c >= model.message_dim()) throw InvalidArgument("message component out of range");
        t.components.assign(components.begin(), components.end());
    }
    const int keep = static_cast<int>(t.components.size());
    t.messages.resize(k, keep);
    for (int c = 0; c < keep; ++c) t.messages.col(c) = msg.col(t.components[c]);
    return t;
}

EdgeSampleTable record_pair_energy_samples(const hgn::FlatHgn& model, const nbody::Dataset& data, int k,
                                           std::uint64_t seed) {
    const int n = data.config.n_bodies, dim = data.config.dim, lv = model.node_dim();
    const auto samples = draw_samples(data, k, n * (n - 1), seed);
    EdgeSampleTable t;
    t.names = edge_feature_names(dim);
    for (int side = 1; side <= 2; ++side)
        for (int d = 0; d < dim; ++d) t.names.push_back(std::string("p") + kAxes[d] + std::to_string(side));
    t.features.resize(k, static_cast<Eigen::Index>(t.names.size()));
    Matrix in(2 * k, 2 * lv);
    std::vector<int> recv(1), send(1);
    for (int i = 0; i < k; ++i) {
        const auto g = hgn::canonical_graph(data.sims[samples[i].sim], samples[i].step);
        const int a = g.receivers[samples[i].item], b = g.senders[samples[i].item];
        edge_row(g.nodes, a, b, dim, t.features.row(i).head(5 + dim));
        t.features.row(i).segment(5 + dim, dim) = g.nodes.row(a).segment(dim, dim);
        t.features.row(i).tail(dim) = g.nodes.row(b).segment(dim, dim);
        in.row(2 * i) << g.nodes.row(a), g.nodes.row(b);
        in.row(2 * i + 1) << g.nodes.row(b), g.nodes.row(a);
    }
    // only H_pair(a,b) + H_pair(b,a) enters the Hamiltonian
    const Matrix h = nn::mlp_forward_batch(model.h_pair, in);
    t.messages.resize(k, 1);
    for (int i = 0; i < k; ++i) t.messages(i, 0) = 0.5 * (h(2 * i, 0) + h(2 * i + 1, 0));
    t.components = {0};
    return t;
}

nlohmann::json Distilled::to_json(std::span<const std::string> names) const {
    return {{"target", target},
            {"selected_expr", expr.to_string(names)},
            {"complexity", expr.complexity()},
            {"train_mae", train_mae},
            {"front", sr::front_to_json(front, names)}};
}

Distilled distill_edge(const EdgeSampleTable& table, const sr::GpConfig& config, int column) {
    const auto d = table.data(column);
    Distilled out;
    out.target = "phi_e" + std::to_string(column + 1);
    out.front = sr::evolve(d, config);
    const auto sel = out.front.size() >= 2 ? sr::select_model(out.front) : out.front.entries().front();
    out.expr = sel.expr;
    out.train_mae = sel.mae;
    return out;
}

std::vector<Distilled> distill_node(const gn::GnModel& model, const nbody::Dataset& data, const sr::GpConfig& config,
                                    std::span<const int> components, int k, std::uint64_t seed) {
    const int n = data.config.n_bodies, dim = data.config.dim;
    const auto samples = draw_samples(data, k, n, seed);
    const auto names = node_feature_names(dim, static_cast<int>(components.size()));
    Eigen::MatrixXd x(k, static_cast<Eigen::Index>(names.size()));
    Eigen::MatrixXd y(k, model.out_dim());
    constexpr int kChunk = 256;
    for (int start = 0; start < k; start += kChunk) {
        const int cnt = std::min(kChunk, k - start);
        std::vector<gn::Graph> graphs;
        for (int i = start; i < start + cnt; ++i)
            graphs.push_back(gn::particle_graph(data.sims[samples[i].sim], samples[i].step));
        const auto batch = gn::batch_graphs(graphs);
        gn::ForwardOptions opt;
        opt.sample = false;
        const auto r = gn::gn_forward(model, batch, opt);
        for (int i = start; i < start + cnt; ++i) {
            const int v = (i - start) * n + samples[i].item;
            x.row(i).head(2 * dim + 2) = batch.nodes.row(v);
            for (std::size_t c = 0; c < components.size(); ++c)
                x(i, 2 * dim + 2 + static_cast<Eigen::Index>(c)) = r.summed(v, components[c]);
            y.row(i) = r.predictions.row(v);
        }
    }
    std::vector<Distilled> out;
    for (int d = 0; d < model.out_dim(); ++d) {
        const auto data_d = make_data(names, x, y.col(d));
        Distilled r;
        r.target = "phi_v" + std::to_string(d + 1);
        sr::GpConfig c = config;
        c.seed = mix_seed(config.seed, 40, static_cast<std::uint64_t>(d));
        r.front = sr::evolve(data_d, c);
        const auto sel = r.front.size() >= 2 ? sr::select_model(r.front) : r.front.entries().front();
        r.expr = sel.expr;
        r.train_mae = sel.mae;
        out.push_back(std::move(r));
    }
    return out;
}

Matrix SymbolicModel::predict(const gn::Graph& g) const {
    const Eigen::MatrixXd ef = edge_features(g, dim);
    const int base = 2 * dim + 2;
    Eigen::MatrixXd nf(g.n_nodes(), base + static_cast<Eigen::Index>(edge.size()));
    nf.leftCols(base) = g.nodes;
    for (std::size_t c = 0; c < edge.size(); ++c) {
        const Eigen::ArrayXd m = g.n_edges() ? sr::evaluate(edge[c], ef) : Eigen::ArrayXd();
        auto col = nf.col(base + static_cast<Eigen::Index>(c));
        col.setZero();
        for (int k = 0; k < g.n_edges(); ++k) col(g.receivers[k]) += m(k);
    }
    Matrix out(g.n_nodes(), static_cast<Eigen::Index>(node.size()));
    for (std::size_t d = 0; d < node.size(); ++d) out.col(static_cast<Eigen::Index>(d)) = sr::evaluate(node[d], nf).matrix();
    return out;
}

double SymbolicModel::mae(std::span<const gn::Graph> graphs) const {
    if (graphs.empty()) return 0.0;
    const auto batch = gn::batch_graphs(graphs);
    return l1_mae(predict(batch), batch.targets, false);
}

nlohmann::json SymbolicModel::to_json() const {
    const auto en = edge_feature_names(dim);
    const auto nn_ = node_feature_names(dim, static_cast<int>(edge.size()));
    auto e = nlohmann::json::array(), v = nlohmann::json::array();
    for (const auto& x : edge) e.push_back(x.to_string(en));
    for (const auto& x : node) v.push_back(x.to_string(nn_));
    return {{"edge", e}, {"node", v}, {"train_mae", train_mae}, {"test_mae", test_mae}};
}

SymbolicModel compose_and_refit(std::vector<sr::Expression> edge, std::vector<sr::Expression> node,
                                const nbody::Dataset& data, int per_sim, const RefitOptions& options) {
    SymbolicModel m;
    m.dim = data.config.dim;
    m.edge = std::move(edge);
    m.node = std::move(node);
    if (static_cast<int>(m.node.size()) != m.dim) throw InvalidArgument("need one node expression per dimension");

    const auto train = gn::dataset_graphs(data, false, per_sim);
    const auto test = gn::dataset_graphs(data, true, per_sim);
    std::vector<int> pick(train.size());
    std::iota(pick.begin(), pick.end(), 0);
    std::mt19937_64 rng(options.seed);
    std::shuffle(pick.begin(), pick.end(), rng);
    pick.resize(std::min<std::size_t>(pick.size(), static_cast<std::size_t>(options.snapshots)));
    std::sort(pick.begin(), pick.end());
    std::vector<const gn::Graph*> sub;
    for (int i : pick) sub.push_back(&train[i]);
    const auto fit_batch = gn::batch_graphs(std::span<const gn::Graph* const>(sub));

    auto all = [&]() {
        std::vector<sr::Expression*> v;
        for (auto& e : m.edge) v.push_back(&e);
        for (auto& e : m.node) v.push_back(&e);
        return v;
    };
    auto get = [&] {
        std::vector<double> c;
        for (auto* e : all())
            for (double x : e->constants()) c.push_back(x);
        return c;
    };
    auto set = [&](std::span<const double> c) {
        std::size_t k = 0;
        for (auto* e : all()) {
            const std::size_t nc = e->constants().size();
            e->set_constants(c.subspan(k, nc));
            k += nc;
        }
    };

    const double before = m.mae(train);
    const auto c0 = get();
    if (!c0.empty()) {
        const Objective f = [&](std::span<const double> c) {
            set(c);
            const Matrix p = m.predict(fit_batch);
            if (!p.allFinite()) return std::numeric_limits<double>::infinity();
            return (p - fit_batch.targets).cwiseAbs().sum() / static_cast<double>(p.rows());
        };
        NelderMeadOptions nm;
        nm.max_evals = options.max_evals;
        auto res = nelder_mead(f, c0, nm);
        res = nelder_mead(f, res.x, nm);
        set(res.x);
        double after = std::numeric_limits<double>::infinity();
        try {
            after = m.mae(train);
        } catch (const NonFiniteComposite&) {
        }
        if (!(after <= before)) set(c0);
    }
    m.train_mae = m.mae(train);
    m.test_mae = m.mae(test);
    return m;
}

std::optional<double> if_threshold(const sr::Expression& e, int var) {
    const auto& n = e.nodes();
    for (int i = 0; i < e.size(); ++i) {
        if (n[i].op != sr::Op::If) continue;
        const int c = i + 1;
        if (n[c].op != sr::Op::Gt && n[c].op != sr::Op::Lt) continue;
        const int a = c + 1, b = e.subtree_end(a);
        if (e.subtree_end(a) != a + 1 || e.subtree_end(b) != b + 1) continue;
        if (n[a].op == sr::Op::Var && n[a].var == var && n[b].op == sr::Op::Const) return n[b].value;
        if (n[b].op == sr::Op::Var && n[b].var == var && n[a].op == sr::Op::Const) return n[a].value;
    }
    return std::nullopt;
}

// ------------------------------------------------------------------ toy demo

nlohmann::json ToyReport::to_json() const {
    const std::vector<std::string> gx = {"x1", "x2", "x3", "x4", "x5"};
    const std::vector<std::string> fx = {"s"};
    return {{"g", g.to_string(gx)},
            {"f", f.to_string(fx)},
            {"g_rel_mae", g_rel_mae},
            {"f_rel_mae", f_rel_mae},
            {"nn_rel_mae", nn_rel_mae}};
}

ToyReport toy_factorization_demo(std::uint64_t seed, const ToyOptions& o) {
    gn::keep_heap_mapped();
    if (o.features < 3) throw InvalidArgument("toy demo needs at least 3 features per element");
    std::mt19937_64 rng(mix_seed(seed, 60));
    std::normal_distribution<double> normal(0.0, 1.0);
    const int n = o.samples, s = o.series;
    auto true_g = [](double x1, double x3) { return std::exp(x3) + std::cos(2.0 * x1); };
    Matrix x(static_cast<Eigen::Index>(n) * s, o.features);
    Eigen::VectorXd z(n);
    for (int i = 0; i < n; ++i) {
        double y = 0.0;
        for (int j = 0; j < s; ++j) {
            const Eigen::Index r = static_cast<Eigen::Index>(i) * s + j;
            for (int c = 0; c < o.features; ++c) x(r, c) = normal(rng);
            y += true_g(x(r, 0), x(r, 2));
        }
        z(i) = y * y;
    }
    const double z_mean = z.mean();
    const double z_sd = std::sqrt((z.array() - z_mean).square().mean());
    const Eigen::VectorXd zn = (z.array() - z_mean) / z_sd;

    nn::MlpParams g({o.features, o.hidden, o.hidden, 1}, mix_seed(seed, 61));
    nn::MlpParams f({1, o.hidden, o.hidden, 1}, mix_seed(seed, 62));
    const int n_train = n * 4 / 5;
    const long steps_per_epoch = (n_train + o.batch - 1) / o.batch;
    const nn::LrSchedule sched{1e-3, 1e-5, std::max<long>(1, steps_per_epoch * o.epochs)};
    nn::AdamState ag(g.size(), sched), af(f.size(), sched);

    auto forward = [&](const nn::MlpVars& gv, const nn::MlpVars& fv, std::span<const int> idx) {
        Matrix xb(static_cast<Eigen::Index>(idx.size()) * s, o.features);
        std::vector<int> owner(static_cast<std::size_t>(xb.rows()));
        for (std::size_t b = 0; b < idx.size(); ++b) {
            xb.middleRows(static_cast<Eigen::Index>(b) * s, s) = x.middleRows(static_cast<Eigen::Index>(idx[b]) * s, s);
            std::fill_n(owner.begin() + static_cast<std::ptrdiff_t>(b) * s, s, static_cast<int>(b));
        }
        const ad::Var latent = ad::scatter_add_rows(nn::mlp_apply(gv, ad::constant(xb)), ad::make_index(owner),
                                                static_cast<Eigen::Index>(idx.size()));
        // the sum over 100 elements is rescaled so f sees O(1) inputs
        return std::make_pair(latent, nn::mlp_apply(fv, ad::scale(latent, 1.0 / s)));
    };

    std::vector<int> order(static_cast<std::size_t>(n_train));
    for (int epoch = 0; epoch < o.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        std::mt19937_64 shuf(mix_seed(seed, 63, static_cast<std::uint64_t>(epoch)));
        std::shuffle(order.begin(), order.end(), shuf);
        for (long b = 0; b < steps_per_epoch; ++b) {
            const auto lo = static_cast<std::size_t>(b * o.batch);
            const auto hi = std::min<std::size_t>(order.size(), lo + static_cast<std::size_t>(o.batch));
            std::span<const int> idx(order.data() + lo, hi - lo);
            const auto gv = nn::bind(g), fv = nn::bind(f);
            Matrix target(static_cast<Eigen::Index>(idx.size()), 1);
            for (std::size_t k = 0; k < idx.size(); ++k) target(static_cast<Eigen::Index>(k), 0) = zn(idx[k]);
            const auto [latent, out] = forward(gv, fv, idx);
            const ad::Var loss = ad::mean(ad::abs(ad::sub(out, ad::constant(target))));
            auto leaves = gv.all();
            const std::size_t ng = leaves.size();
            const auto fl = fv.all();
            leaves.insert(leaves.end(), fl.begin(), fl.end());
            ad::GradTape tape;
            const auto grads = tape.gradient(loss, leaves);
            const auto gg = nn::flatten_gradient(g, std::span<const ad::Var>(grads).subspan(0, ng));
            const auto gf = nn::flatten_gradient(f, std::span<const ad::Var>(grads).subspan(ng));
            nn::adam_step(ag, g.flat(), gg);
            nn::adam_step(af, f.flat(), gf);
        }
    }

    ToyReport rep;
    // distill g on individual elements
    const int k = std::min<int>(5000, static_cast<int>(x.rows()));
    Eigen::MatrixXd gx = x.topRows(k);
    const Matrix g_out = nn::mlp_forward_batch(g, x.topRows(k));
    std::vector<std::string> gnames;
    for (int c = 0; c < o.features; ++c) gnames.push_back("x" + std::to_string(c + 1));
    sr::GpConfig gp = o.gp;
    gp.seed = mix_seed(seed, 64);
    rep.g = distill_edge(EdgeSampleTable{gnames, gx, g_out, {0}}, gp).expr;

    // affine alignment of the distilled g against the generator
    const Eigen::ArrayXd gs = sr::evaluate(rep.g, gx);
    Eigen::ArrayXd gt(k);
    for (int i = 0; i < k; ++i) gt(i) = true_g(gx(i, 0), gx(i, 2));
    Eigen::MatrixXd design(k, 2);
    design.col(0) = gs.matrix();
    design.col(1).setOnes();
    const Eigen::VectorXd coef = design.colPivHouseholderQr().solve(gt.matrix());
    rep.g_rel_mae = ((design * coef).array() - gt).abs().mean() / gt.abs().mean();

    // distill f on the latent sums of the neural g
    Eigen::MatrixXd latent(n, 1);
    for (int i = 0; i < n; ++i)
        latent(i, 0) = nn::mlp_forward_batch(g, x.middleRows(static_cast<Eigen::Index>(i) * s, s)).sum() / s;
    const Matrix f_out = nn::mlp_forward_batch(f, latent);
    sr::GpConfig fp = o.gp;
    fp.seed = mix_seed(seed, 65);
    rep.f = distill_edge(EdgeSampleTable{{"s"}, latent, f_out, {0}}, fp).expr;

    // held-out comparison: neural and fully symbolic f(sum g)
    double nn_err = 0.0, sym_err = 0.0, mag = 0.0;
    for (int i = n_train; i < n; ++i) {
        const Eigen::MatrixXd xi = x.middleRows(static_cast<Eigen::Index>(i) * s, s);
        Eigen::MatrixXd sl(1, 1), ss(1, 1);
        sl(0, 0) = latent(i, 0);
        ss(0, 0) = sr::evaluate(rep.g, xi).sum() / s;
        const double nn_z = nn::mlp_forward_batch(f, sl)(0, 0) * z_sd + z_mean;
        const double sym_z = sr::evaluate(rep.f, ss)(0) * z_sd + z_mean;
        nn_err += std::abs(nn_z - z(i));
        sym_err += std::abs(sym_z - z(i));
        mag += std::abs(z(i));
    }
    rep.nn_rel_mae = nn_err / mag;
    rep.f_rel_mae = std::isfinite(sym_err) ? sym_err / mag : std::numeric_limits<double>::infinity();
    return rep;
}

// --------------------------------------------------------- pure SR baseline

nlohmann::json BaselineReport::to_json() const {
    return {{"selected_expr", selected.to_string(names)},
            {"best_mae", best_mae},
            {"front", sr::front_to_json(front, names)}};
}

BaselineReport pure_sr_baseline(const nbody::Dataset& data, const sr::GpConfig& config, int body, int component,
                                int k, std::uint64_t seed) {
    const int n = data.config.n_bodies, dim = data.config.dim;
    if (body < 0 || body >= n || component < 0 || component >= dim) throw InvalidArgument("target out of range");
    const auto samples = draw_samples(data, k, 1, seed);
    BaselineReport rep;
    const auto per_body = node_feature_names(dim, 0);
    for (int b = 0; b < n; ++b)
        for (const auto& f : per_body) rep.names.push_back(f + std::to_string(b + 1));
    Eigen::MatrixXd x(k, static_cast<Eigen::Index>(rep.names.size()));
    Eigen::VectorXd y(k);
    for (int i = 0; i < k; ++i) {
        const auto g = gn::particle_graph(data.sims[samples[i].sim], samples[i].step);
        for (int b = 0; b < n; ++b) x.row(i).segment(static_cast<Eigen::Index>(b) * (2 * dim + 2), 2 * dim + 2) = g.nodes.row(b);
        y(i) = g.targets(body, component);
        rep.refs.push_back({samples[i].sim, samples[i].step});
    }
    rep.rows = make_data(rep.names, x, y);
    rep.front = sr::evolve(rep.rows, config);
    rep.best_mae = rep.front.best()->mae;
    rep.selected = rep.front.size() >= 2 ? sr::select_model(rep.front).expr : rep.front.best()->expr;
    return rep;
}

double target_mae(const SymbolicModel& model, const nbody::Dataset& data, const BaselineReport& report, int body,
                  int component) {
    std::vector<gn::Graph> graphs;
    for (const auto& r : report.refs) graphs.push_back(gn::particle_graph(data.sims[r.sim], r.step));
    const auto batch = gn::batch_graphs(graphs);
    const Matrix p = model.predict(batch);
    const int n = data.config.n_bodies;
    Matrix pc(static_cast<Eigen::Index>(graphs.size()), 1), tc(static_cast<Eigen::Index>(graphs.size()), 1);
    for (std::size_t i = 0; i < graphs.size(); ++i) {
        pc(static_cast<Eigen::Index>(i), 0) = p(static_cast<Eigen::Index>(i) * n + body, component);
        tc(static_cast<Eigen::Index>(i), 0) = batch.targets(static_cast<Eigen::Index>(i) * n + body, component);
    }
    return l1_mae(pc, tc, false);
}

}  // namespace symdistill::distill
