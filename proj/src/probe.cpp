#include "symdistill/probe.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace symdistill::probe {

namespace {

std::vector<int> order_desc(const std::vector<double>& stat) {
    std::vector<int> idx(stat.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return stat[a] > stat[b]; });
    return idx;
}

std::vector<double> kl_stat(const Matrix& mu, const Matrix& logvar) {
    std::vector<double> s(mu.cols(), 0.0);
    for (Eigen::Index c = 0; c < mu.cols(); ++c) {
        const auto m = mu.col(c).array();
        const auto lv = logvar.col(c).array();
        s[c] = (m.square() + lv.exp() - lv).mean();
    }
    return s;
}

}  // namespace

MessageSamples collect_messages(const gn::GnModel& model, const nbody::Dataset& data, bool test,
                                int snapshots_per_sim) {
    const auto refs = gn::snapshot_refs(data, test, snapshots_per_sim);
    const int n = data.config.n_bodies, dim = data.config.dim;
    const int per_graph = n * (n - 1);
    const Eigen::Index total = static_cast<Eigen::Index>(refs.size()) * per_graph;
    const bool kl = model.variant() == gn::Variant::KL;
    MessageSamples out;
    out.messages.resize(total, model.message_dim());
    out.forces.resize(total, dim);
    if (kl) {
        out.mu.resize(total, model.message_dim());
        out.logvar.resize(total, model.message_dim());
    }
    constexpr std::size_t kChunk = 128;
    for (std::size_t start = 0; start < refs.size(); start += kChunk) {
        const std::size_t cnt = std::min(kChunk, refs.size() - start);
        std::vector<gn::Graph> graphs;
        for (std::size_t i = start; i < start + cnt; ++i)
            graphs.push_back(gn::particle_graph(data.sims[refs[i].sim], refs[i].step));
        const auto batch = gn::batch_graphs(graphs);
        gn::ForwardOptions opt;
        opt.sample = false;
        const auto r = gn::gn_forward(model, batch, opt);
        const Eigen::Index row0 = static_cast<Eigen::Index>(start) * per_graph;
        out.messages.middleRows(row0, r.messages.rows()) = r.messages;
        if (kl) {
            out.mu.middleRows(row0, r.mu.rows()) = r.mu;
            out.logvar.middleRows(row0, r.logvar.rows()) = r.logvar;
        }
        for (std::size_t i = start; i < start + cnt; ++i) {
            const auto states = data.sims[refs[i].sim].states(refs[i].step);
            const auto& g = graphs[i - start];
            for (int k = 0; k < g.n_edges(); ++k) {
                const auto f = nbody::pair_force(data.config.law, states[g.receivers[k]], states[g.senders[k]], n, dim);
                for (int d = 0; d < dim; ++d)
                    out.forces(static_cast<Eigen::Index>(i) * per_graph + k, d) = f[d];
            }
        }
    }
    return out;
}

std::vector<double> component_std(const Matrix& messages) {
    std::vector<double> s(messages.cols(), 0.0);
    for (Eigen::Index c = 0; c < messages.cols(); ++c) {
        const auto col = messages.col(c).array();
        const double mean = col.mean();
        s[c] = std::sqrt((col - mean).square().mean());
    }
    return s;
}

std::vector<int> rank_by_std(const Matrix& messages) { return order_desc(component_std(messages)); }

std::vector<int> rank_by_kl(const Matrix& mu, const Matrix& logvar) {
    return order_desc(kl_stat(mu, logvar));
}

std::vector<int> significant_components(const MessageSamples& samples, gn::Variant variant) {
    if (variant == gn::Variant::KL) return rank_by_kl(samples.mu, samples.logvar);
    return rank_by_std(samples.messages);
}

std::vector<int> significant_components(const gn::GnModel& model, const nbody::Dataset& data) {
    return significant_components(collect_messages(model, data, true, 50), model.variant());
}

ProbeReport linear_force_fit(const Matrix& message_samples, const Matrix& forces) {
    if (message_samples.rows() != forces.rows()) throw ShapeMismatch("message and force sample counts differ");
    const Eigen::Index k = forces.rows(), d = forces.cols();
    ProbeReport rep;
    rep.ranked.resize(message_samples.cols());
    std::iota(rep.ranked.begin(), rep.ranked.end(), 0);
    rep.spread = component_std(message_samples);

    Eigen::MatrixXd design(k, d + 1);
    design.leftCols(d) = forces;
    design.col(d).setOnes();
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
    if (k <= d || qr.rank() < d + 1) {
        rep.degenerate = true;
        rep.per_component_r2.assign(message_samples.cols(), 0.0);
        rep.coefficients.assign(message_samples.cols(), std::vector<double>(d + 1, 0.0));
        rep.mean_r2 = 0.0;
        return rep;
    }
    double total = 0.0;
    for (Eigen::Index c = 0; c < message_samples.cols(); ++c) {
        const Eigen::VectorXd y = message_samples.col(c);
        const Eigen::VectorXd beta = qr.solve(y);
        const Eigen::VectorXd resid = y - design * beta;
        const double ss_res = resid.squaredNorm();
        const double ss_tot = (y.array() - y.mean()).square().sum();
        const double r2 = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 0.0;
        rep.per_component_r2.push_back(r2);
        rep.coefficients.emplace_back(beta.data(), beta.data() + beta.size());
        total += r2;
    }
    rep.mean_r2 = message_samples.cols() > 0 ? total / message_samples.cols() : 0.0;
    return rep;
}

ProbeReport probe_model(const gn::GnModel& model, const nbody::Dataset& data, int snapshots_per_sim) {
    const auto samples = collect_messages(model, data, true, snapshots_per_sim);
    const auto ranked = significant_components(samples, model.variant());
    const int dim = data.config.dim;
    const int keep = std::min<int>(dim, static_cast<int>(ranked.size()));
    Matrix top(samples.messages.rows(), keep);
    for (int j = 0; j < keep; ++j) top.col(j) = samples.messages.col(ranked[j]);
    auto rep = linear_force_fit(top, samples.forces);
    std::vector<double> stat = model.variant() == gn::Variant::KL ? kl_stat(samples.mu, samples.logvar)
                                                                  : component_std(samples.messages);
    rep.ranked = ranked;
    rep.spread.clear();
    for (int idx : ranked) rep.spread.push_back(stat[idx]);
    return rep;
}

void write_probe_csv(const std::vector<ProbeRow>& rows, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    std::size_t max_comp = 0;
    for (const auto& r : rows) max_comp = std::max(max_comp, r.report.per_component_r2.size());
    out << "sim,variant,mean_r2";
    for (std::size_t c = 0; c < max_comp; ++c) out << ",r2_" << c;
    out << "\n";
    out.precision(17);
    for (const auto& r : rows) {
        out << r.sim << "," << r.variant << "," << r.report.mean_r2;
        for (std::size_t c = 0; c < max_comp; ++c) {
            out << ",";
            if (c < r.report.per_component_r2.size()) out << r.report.per_component_r2[c];
        }
        out << "\n";
    }
}

}  // namespace symdistill::probe
