// Runs the twelve acceptance criteria and prints one PASS/FAIL line each.
// Trained models and datasets are cached under --cache-dir.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "cli.hpp"
#include "symdistill/cosmo.hpp"
#include "symdistill/distill.hpp"
#include "symdistill/flathgn.hpp"
#include "symdistill/probe.hpp"

using namespace symdistill;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ---------------------------------------------------------------- tolerances

constexpr double kOrderRatio = 12.0;
constexpr double kOrderSeconds = 10.0;
constexpr double kForceRelErr = 1e-6;
constexpr double kForceFdStep = 1e-6;
constexpr double kForceFloor = 1e-3;  // relative error denominator floor
constexpr double kDiscontinuityGap = 1e-3;
constexpr double kParamGradTol = 1e-4;
constexpr double kInputGradTol = 1e-4;
constexpr double kDoubleBackpropTol = 1e-3;
constexpr double kGradFdStep = 1e-5;
constexpr int kGradSeeds = 50;
constexpr double kProbeHigh = 0.9;
constexpr double kProbeLow = 0.3;
constexpr int kDeskSims = 200;
constexpr int kDeskEpochs = 30;
constexpr double kSparsityRatio = 10.0;
constexpr int kOccamInvR2 = 12;
constexpr int kOccamInvR = 16;
constexpr double kSrRelMae = 1e-3;
constexpr double kSrSeconds = 300.0;
constexpr double kCompositeFactor = 2.0;
constexpr double kIfLow = 1.8, kIfHigh = 2.2;
constexpr double kBaselineFactor = 5.0;
constexpr double kBaselineSeconds = 600.0;
constexpr double kHandTol = 1e-9;
constexpr double kRefitRel = 0.05;
constexpr int kGridHalos = 500;
constexpr double kPearson = 0.9;

// ------------------------------------------------------------------- report

struct Outcome {
    bool pass = false;
    std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double x, int precision = 4) {
    std::ostringstream ss;
    ss.precision(precision);
    ss << x;
    return ss.str();
}

// ------------------------------------------------------------- model cache

struct Cache {
    fs::path dir;
    std::uint64_t seed = 0;

    nbody::Dataset dataset(nbody::Law law, int dim, int bodies, int sims) const {
        const fs::path p = dir / ("data_" + std::string(nbody::law_name(law)) + "_" + std::to_string(dim) + "d_" +
                                  std::to_string(bodies) + "b_" + std::to_string(sims) + "s_" +
                                  std::to_string(seed) + ".bin");
        if (fs::exists(p)) return nbody::load_dataset(p, law);
        const auto d = nbody::generate_dataset(nbody::SimConfig::paper_defaults(law, bodies, dim, seed), sims);
        nbody::save_dataset(d, p);
        return d;
    }

    gn::GnModel gn_model(const nbody::Dataset& data, gn::Variant v, int epochs) const {
        const auto& c = data.config;
        const fs::path p = dir / ("gn_" + std::string(nbody::law_name(c.law)) + "_" + std::to_string(c.dim) + "d_" +
                                  std::to_string(c.n_bodies) + "b_" + std::to_string(data.sims.size()) + "s_" +
                                  std::string(gn::variant_name(v)) + "_" + std::to_string(epochs) + "e_" +
                                  std::to_string(seed) + ".ckpt");
        if (fs::exists(p)) return gn::GnModel::from_checkpoint(nn::load_checkpoint(p));
        auto tc = gn::TrainConfig::for_variant(v);
        tc.epochs = epochs;
        tc.seed = seed;
        const auto t0 = std::chrono::steady_clock::now();
        auto r = gn::train(data, v, tc);
        std::cerr << "  trained " << p.filename().string() << " in " << fmt(seconds_since(t0)) << " s, test L_v "
                  << fmt(r.test_lv.back()) << "\n";
        nn::save_checkpoint(r.model.to_checkpoint(), p);
        return r.model;
    }

    hgn::FlatHgn hgn_model(const nbody::Dataset& data, int epochs) const {
        const auto& c = data.config;
        const fs::path p = dir / ("hgn_" + std::string(nbody::law_name(c.law)) + "_" + std::to_string(c.dim) + "d_" +
                                  std::to_string(data.sims.size()) + "s_" + std::to_string(epochs) + "e_" +
                                  std::to_string(seed) + ".ckpt");
        if (fs::exists(p)) return hgn::FlatHgn::from_checkpoint(nn::load_checkpoint(p));
        hgn::HgnTrainConfig tc;
        tc.epochs = epochs;
        tc.seed = seed;
        const auto t0 = std::chrono::steady_clock::now();
        auto r = hgn::train(data, tc);
        std::cerr << "  trained " << p.filename().string() << " in " << fmt(seconds_since(t0)) << " s, test loss "
                  << fmt(r.test_loss.back()) << "\n";
        nn::save_checkpoint(r.model.to_checkpoint(), p);
        return r.model;
    }
};

// ---------------------------------------------------------------- criteria

Outcome integrator_order() {
    const auto t0 = std::chrono::steady_clock::now();
    auto cfg = nbody::SimConfig::paper_defaults(nbody::Law::Spring, 2, 2);
    cfg.step_size = 0.1;
    cfg.n_steps = 51;
    nbody::ParticleState a, b;
    a.position = {-0.8, 0.1, 0.0};
    a.velocity = {0.1, 0.4, 0.0};
    a.mass = 1.3;
    b.position = {0.9, -0.2, 0.0};
    b.velocity = {-0.3, -0.2, 0.0};
    b.mass = 0.7;
    const std::vector<nbody::ParticleState> init = {a, b};
    auto final_state = [&](int substeps) {
        nbody::IntegratorOptions opt;
        opt.adaptive = false;
        opt.substeps = substeps;
        const auto t = nbody::integrate(cfg, init, opt);
        std::vector<double> s;
        for (int body = 0; body < 2; ++body)
            for (int d = 0; d < 2; ++d) s.push_back(t.state(cfg.n_steps - 1, body).position[d]);
        return s;
    };
    const auto ref = final_state(16), coarse = final_state(1), fine = final_state(2);
    double e1 = 0.0, e2 = 0.0;
    for (std::size_t i = 0; i < ref.size(); ++i) {
        e1 += std::pow(coarse[i] - ref[i], 2);
        e2 += std::pow(fine[i] - ref[i], 2);
    }
    const double ratio = std::sqrt(e1 / e2), secs = seconds_since(t0);
    return {ratio >= kOrderRatio && secs < kOrderSeconds,
            "error ratio h vs h/2 = " + fmt(ratio) + " (>= " + fmt(kOrderRatio) + "), " + fmt(secs, 2) + " s"};
}

Outcome force_gradients() {
    std::mt19937_64 rng(42);
    double worst = 0.0;
    int checked = 0;
    for (nbody::Law law : nbody::kAllLaws) {
        for (int trial = 0; trial < 1000; ++trial) {
            const int dim = trial % 2 == 0 ? 2 : 3;
            auto st = nbody::sample_initial_conditions(rng(), 2, dim);
            double r2 = 0.0;
            for (int d = 0; d < dim; ++d) r2 += std::pow(st[0].position[d] - st[1].position[d], 2);
            if (law == nbody::Law::Discontinuous && std::abs(std::sqrt(r2) + nbody::kSoftening - 2.0) < kDiscontinuityGap)
                continue;
            const auto an = nbody::pair_force(law, st[0], st[1], 4, dim);
            double err = 0.0, mag = 0.0;
            for (int d = 0; d < dim; ++d) {
                const double x0 = st[0].position[d];
                st[0].position[d] = x0 + kForceFdStep;
                const double up = nbody::pair_potential(law, st[0], st[1], 4, dim);
                st[0].position[d] = x0 - kForceFdStep;
                const double dn = nbody::pair_potential(law, st[0], st[1], 4, dim);
                st[0].position[d] = x0;
                const double fd = -(up - dn) / (2.0 * kForceFdStep);
                err += std::pow(an[d] - fd, 2);
                mag += an[d] * an[d];
            }
            worst = std::max(worst, std::sqrt(err) / std::max(std::sqrt(mag), kForceFloor));
            ++checked;
        }
    }
    return {worst < kForceRelErr && checked > 5900,
            std::to_string(checked) + " configurations, max rel err " + fmt(worst, 3) + " (< " + fmt(kForceRelErr) + ")"};
}

// Scalar forward pass recording hidden pre-activation signs.
std::vector<bool> kink_signature(const nn::MlpParams& p, const ad::Matrix& x) {
    ad::Matrix h = x;
    std::vector<bool> sig;
    for (int l = 0; l < p.n_layers(); ++l) {
        ad::Matrix z = h * p.weight(l);
        z.rowwise() += p.bias(l).row(0);
        if (l + 1 == p.n_layers()) break;
        for (Eigen::Index i = 0; i < z.size(); ++i) sig.push_back(z.data()[i] > 0.0);
        h = z.cwiseMax(0.0);
    }
    return sig;
}

bool close_rel(double a, double b, double tol) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6}) < tol;
}

ad::Matrix normal_matrix(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c) {
    std::normal_distribution<double> normal(0.0, 1.0);
    ad::Matrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
    return m;
}

Outcome gradient_suite() {
    int bad[3] = {0, 0, 0}, checked[3] = {0, 0, 0};
    for (int seed = 0; seed < kGradSeeds; ++seed) {
        std::mt19937_64 rng(1000 + seed);
        // parameter gradient of an L1 loss
        {
            nn::MlpParams p({5, 8, 8, 3}, seed);
            std::normal_distribution<double> nb(0.0, 0.1);
            for (int l = 0; l < p.n_layers(); ++l)
                for (Eigen::Index i = 0; i < p.bias(l).size(); ++i) p.bias(l).data()[i] = nb(rng);
            const ad::Matrix X = normal_matrix(rng, 6, 5), Y = normal_matrix(rng, 6, 3);
            auto loss = [&](const nn::MlpParams& q) { return (nn::mlp_forward_batch(q, X) - Y).cwiseAbs().mean(); };
            const auto g = nn::param_gradient(p, [&](const nn::MlpVars& v) {
                return ad::mean(ad::abs(ad::sub(nn::mlp_apply(v, ad::constant(X)), ad::constant(Y))));
            });
            const auto sig = kink_signature(p, X);
            for (std::size_t i = 0; i < p.size(); ++i) {
                nn::MlpParams up = p, dn = p;
                up.flat()[i] += kGradFdStep;
                dn.flat()[i] -= kGradFdStep;
                if (kink_signature(up, X) != sig || kink_signature(dn, X) != sig) continue;
                ++checked[0];
                if (!close_rel(g[i], (loss(up) - loss(dn)) / (2 * kGradFdStep), kParamGradTol)) ++bad[0];
            }
        }
        // input gradient
        {
            nn::MlpParams p({7, 12, 12, 1}, 77 + seed);
            const ad::Matrix x = normal_matrix(rng, 1, 7);
            const std::vector<double> xv(x.data(), x.data() + 7);
            const auto g = nn::input_gradient(p, xv);
            const auto sig = kink_signature(p, x);
            for (int i = 0; i < 7; ++i) {
                ad::Matrix up = x, dn = x;
                up(0, i) += kGradFdStep;
                dn(0, i) -= kGradFdStep;
                if (kink_signature(p, up) != sig || kink_signature(p, dn) != sig) continue;
                const double fd = (nn::mlp_forward_batch(p, up)(0, 0) - nn::mlp_forward_batch(p, dn)(0, 0)) /
                                  (2 * kGradFdStep);
                ++checked[1];
                if (!close_rel(g[i], fd, kInputGradTol)) ++bad[1];
            }
        }
        // double backprop through the input gradient
        {
            nn::MlpParams p({12, 10, 10, 1}, seed);
            const ad::Matrix X = normal_matrix(rng, 8, 12), T = normal_matrix(rng, 8, 12);
            const auto g = nn::double_backprop_gradient(
                p, X, [&](const ad::Var& gx) { return ad::mean(ad::abs(ad::sub(gx, ad::constant(T)))); });
            auto value = [&](const nn::MlpParams& q) {
                ad::Matrix gx(X.rows(), X.cols());
                for (Eigen::Index r = 0; r < X.rows(); ++r) {
                    const std::vector<double> row(X.row(r).data(), X.row(r).data() + X.cols());
                    const auto gr = nn::input_gradient(q, row);
                    for (Eigen::Index c = 0; c < X.cols(); ++c) gx(r, c) = gr[c];
                }
                return (gx - T).cwiseAbs().mean();
            };
            const auto sig = kink_signature(p, X);
            std::uniform_int_distribution<std::size_t> pick(0, p.size() - 1);
            for (int trial = 0; trial < 40; ++trial) {
                const std::size_t i = pick(rng);
                nn::MlpParams up = p, dn = p;
                up.flat()[i] += kGradFdStep;
                dn.flat()[i] -= kGradFdStep;
                if (kink_signature(up, X) != sig || kink_signature(dn, X) != sig) continue;
                ++checked[2];
                if (!close_rel(g[i], (value(up) - value(dn)) / (2 * kGradFdStep), kDoubleBackpropTol)) ++bad[2];
            }
        }
    }
    const bool ok = bad[0] + bad[1] + bad[2] == 0 && checked[0] > 0 && checked[1] > 0 && checked[2] > 0;
    return {ok, std::to_string(kGradSeeds) + " seeds; mismatches param " + std::to_string(bad[0]) + "/" +
                    std::to_string(checked[0]) + ", input " + std::to_string(bad[1]) + "/" +
                    std::to_string(checked[1]) + ", double " + std::to_string(bad[2]) + "/" +
                    std::to_string(checked[2])};
}

struct Desk {
    Cache cache;
    nbody::Dataset spring, inv_r;
    bool loaded = false;

    void load() {
        if (loaded) return;
        spring = cache.dataset(nbody::Law::Spring, 2, 4, kDeskSims);
        inv_r = cache.dataset(nbody::Law::InvR, 2, 4, kDeskSims);
        loaded = true;
    }
};

Outcome probe_reproduction(Desk& desk) {
    desk.load();
    bool ok = true;
    std::string detail;
    for (const auto* data : {&desk.spring, &desk.inv_r}) {
        for (gn::Variant v : {gn::Variant::L1, gn::Variant::Bottleneck, gn::Variant::Standard}) {
            const auto model = desk.cache.gn_model(*data, v, kDeskEpochs);
            const double r2 = probe::probe_model(model, *data).mean_r2;
            const bool good = v == gn::Variant::Standard ? r2 <= kProbeLow : r2 >= kProbeHigh;
            ok = ok && good;
            detail += std::string(nbody::law_name(data->config.law)) + "-2 " + std::string(gn::variant_name(v)) + " " +
                      fmt(r2, 3) + (good ? "" : "(x)") + "; ";
        }
    }
    return {ok, detail + "targets L1/Bottleneck >= " + fmt(kProbeHigh) + ", Standard <= " + fmt(kProbeLow)};
}

Outcome sparsity(Desk& desk) {
    desk.load();
    const auto model = desk.cache.gn_model(desk.spring, gn::Variant::L1, kDeskEpochs);
    const auto samples = probe::collect_messages(model, desk.spring, true, 50);
    auto sd = probe::component_std(samples.messages);
    std::sort(sd.begin(), sd.end(), std::greater<>());
    const int d = desk.spring.config.dim;
    const double ratio = sd[d - 1] / std::max(sd[d], 1e-300);
    return {ratio > kSparsityRatio, "std rank " + std::to_string(d) + " / rank " + std::to_string(d + 1) + " = " +
                                        fmt(sd[d - 1]) + " / " + fmt(sd[d]) + " = " + fmt(ratio) + " (> " +
                                        fmt(kSparsityRatio) + ")"};
}

Outcome occam_golden() {
    const std::vector<std::pair<int, double>> inv_r2 = {{1, 1570.0905},  {3, 1558.9756}, {5, 1551.3437},
                                                        {6, 1520.9493},  {8, 913.83751}, {12, 160.31243},
                                                        {14, 131.42547}, {16, 69.447467}, {18, 42.323236},
                                                        {20, 18.400224}, {22, 17.954713}};
    const std::vector<std::pair<int, double>> inv_r = {{1, 103.29053}, {2, 96.708906}, {3, 93.052677},
                                                       {5, 85.743106}, {6, 68.345174}, {8, 31.17},
                                                       {10, 7.93},     {12, 6.96},     {14, 2.48},
                                                       {16, 0.46575519}, {18, 0.42},  {20, 0.38},
                                                       {22, 0.37839388}};
    const int a = inv_r2[sr::select_index(inv_r2)].first, b = inv_r[sr::select_index(inv_r)].first;
    return {a == kOccamInvR2 && b == kOccamInvR,
            "1/r^2 table -> " + std::to_string(a) + " (want " + std::to_string(kOccamInvR2) + "), 1/r table -> " +
                std::to_string(b) + " (want " + std::to_string(kOccamInvR) + ")"};
}

Outcome sr_recovery(std::uint64_t seed) {
    const auto t0 = std::chrono::steady_clock::now();
    // edge-feature table of random 2D configurations, spring message form
    const double a = 0.6, b = -0.0025;
    std::mt19937_64 rng(mix_seed(seed, 70));
    std::uniform_real_distribution<double> pos(-2.0, 2.0), mass(0.5, 2.0);
    sr::Data d;
    d.names = distill::edge_feature_names(2);
    const int n = 5000;
    d.x.resize(n, static_cast<Eigen::Index>(d.names.size()));
    d.y.resize(n);
    for (int i = 0; i < n; ++i) {
        const double dx = pos(rng), dy = pos(rng), r = std::sqrt(dx * dx + dy * dy);
        d.x.row(i) << mass(rng), mass(rng), mass(rng) - 1.25, mass(rng) - 1.25, dx, dy, r;
        d.y(i) = a * dx * (r - 1.0) + b;
    }
    sr::GpConfig cfg;
    cfg.seed = seed;
    const auto front = sr::evolve(d, cfg);
    const auto sel = sr::select_model(front);
    const double mae = sr::fitness(sel.expr, d);
    const double sd = std::sqrt((d.y.array() - d.y.mean()).square().mean());
    const double secs = seconds_since(t0);
    return {mae < kSrRelMae * sd && secs < kSrSeconds,
            "selected " + sel.expr.to_string(d.names) + ", MAE " + fmt(mae, 3) + " vs " + fmt(kSrRelMae) +
                "*std = " + fmt(kSrRelMae * sd, 3) + ", " + fmt(secs, 3) + " s"};
}

// Top-D edge messages and the node model distilled, then refit jointly.
distill::SymbolicModel distill_composite(const gn::GnModel& model, const nbody::Dataset& data, std::uint64_t seed) {
    const auto table = distill::record_edge_samples(model, data, 5000, mix_seed(seed, 71));
    std::vector<sr::Expression> edge;
    for (int c = 0; c < table.messages.cols(); ++c) {
        sr::GpConfig cfg;
        cfg.seed = mix_seed(seed, 72, static_cast<std::uint64_t>(c));
        edge.push_back(distill::distill_edge(table, cfg, c).expr);
    }
    sr::GpConfig node_cfg;
    node_cfg.seed = mix_seed(seed, 73);
    std::vector<sr::Expression> node;
    for (const auto& d : distill::distill_node(model, data, node_cfg, table.components, 5000, mix_seed(seed, 74)))
        node.push_back(d.expr);
    distill::RefitOptions ro;
    ro.seed = mix_seed(seed, 75);
    return distill::compose_and_refit(edge, node, data, 50, ro);
}

Outcome end_to_end(Desk& desk) {
    desk.load();
    const auto model = desk.cache.gn_model(desk.spring, gn::Variant::L1, kDeskEpochs);
    const auto test = gn::dataset_graphs(desk.spring, true, 50);
    const double gn_lv = gn::evaluate(model, test);
    const auto composite = distill_composite(model, desk.spring, desk.cache.seed);
    const bool spring_ok = composite.test_mae <= kCompositeFactor * gn_lv;

    const auto disc = desk.cache.dataset(nbody::Law::Discontinuous, 2, 4, kDeskSims);
    const auto dmodel = desk.cache.gn_model(disc, gn::Variant::L1, kDeskEpochs);
    const auto table = distill::record_edge_samples(dmodel, disc, 5000, mix_seed(desk.cache.seed, 76));
    sr::GpConfig cfg;
    cfg.seed = mix_seed(desk.cache.seed, 77);
    const auto d = distill::distill_edge(table, cfg);
    const int r_col = static_cast<int>(table.names.size()) - 1;
    const auto thr = distill::if_threshold(d.expr, r_col);
    const bool if_ok = thr && *thr >= kIfLow && *thr <= kIfHigh;
    return {spring_ok && if_ok,
            "Spring-2 composite test MAE " + fmt(composite.test_mae) + " vs " + fmt(kCompositeFactor) + "*GN L_v " +
                fmt(kCompositeFactor * gn_lv) + (spring_ok ? "" : "(x)") + "; Discontinuous-2 phi_e1 = " +
                d.expr.to_string(table.names) + ", IF threshold " + (thr ? fmt(*thr) : std::string("none")) +
                (if_ok ? "" : "(x)")};
}

Outcome pure_sr(Desk& desk) {
    const auto data = desk.cache.dataset(nbody::Law::InvR2, 2, 6, kDeskSims);
    sr::GpConfig cfg;
    cfg.seed = mix_seed(desk.cache.seed, 78);
    const auto t0 = std::chrono::steady_clock::now();
    const auto base = distill::pure_sr_baseline(data, cfg, 0, 0, 5000, mix_seed(desk.cache.seed, 79));
    const double secs = seconds_since(t0);
    const auto model = desk.cache.gn_model(data, gn::Variant::L1, kDeskEpochs);
    const auto composite = distill_composite(model, data, desk.cache.seed);
    const double pipeline = distill::target_mae(composite, data, base);
    const double ratio = base.best_mae / std::max(pipeline, 1e-300);
    return {ratio >= kBaselineFactor && secs < kBaselineSeconds,
            "baseline best MAE " + fmt(base.best_mae) + " / pipeline MAE " + fmt(pipeline) + " = " + fmt(ratio) +
                " (>= " + fmt(kBaselineFactor) + "), baseline " + fmt(secs, 3) + " s"};
}

Outcome cosmology(std::uint64_t seed) {
    using namespace halo;
    std::string detail;
    bool ok = true;
    // hand-evaluated two-halo systems with the paper constants
    auto two = [](double sep, double m2) {
        HaloCatalog c;
        c.halos.resize(2);
        c.halos[1].r = {sep, 0.0, 0.0};
        c.halos[1].mass = m2;
        return c;
    };
    const auto best = paper_constants(Formula::BestWithMass);
    double hand_err = 0.0;
    for (auto [sep, m2, want] : {std::tuple{0.05, 2.0, -0.06709043055623976}, std::tuple{0.05, 1.0, -0.10355867068903724},
                                 std::tuple{10.0, 1.0, -0.156}}) {
        const auto c = two(sep, m2);
        hand_err = std::max(hand_err, std::abs(formula_predict(Formula::BestWithMass, best, c, build_halo_graph(c))(0) - want));
    }
    ok = ok && hand_err < kHandTol;
    detail += "hand err " + fmt(hand_err, 2) + "; ";

    SyntheticOptions o;
    o.n_halos = 2000;
    o.box = 1.0;
    o.radius = 0.15;
    const auto cat = synthetic_catalog(o, seed);
    const auto in = formula_inputs(cat, build_halo_graph(cat, o.radius));
    const Eigen::VectorXd y = cat.deltas();
    HaloRefitOptions ro;
    ro.seed = seed;
    const auto fit = refit_formula(Formula::BestWithMass, in, y, {}, ro);
    double worst = 0.0;
    for (std::size_t k = 0; k < best.size(); ++k) worst = std::max(worst, std::abs(fit.constants[k] / best[k] - 1.0));
    ok = ok && worst < kRefitRel;
    detail += "refit max rel dev " + fmt(worst, 3) + "; ";

    const double m_const = refit_formula(Formula::Constant, in, y, {}, ro).mae;
    const double m_simple = refit_formula(Formula::Simple, in, y, {}, ro).mae;
    const bool order = m_const > m_simple && m_simple > fit.mae;
    ok = ok && order;
    detail += "MAE constant " + fmt(m_const, 6) + " > simple " + fmt(m_simple, 6) + " > best " + fmt(fit.mae, 6) +
              (order ? "" : "(x)") + "; ";

    int mismatched = 0;
    for (std::uint64_t s = 0; s < 5; ++s) {
        SyntheticOptions g;
        g.n_halos = kGridHalos;
        g.formula = Formula::Constant;
        const auto c = synthetic_catalog(g, mix_seed(seed, 90, s));
        const auto a = build_halo_graph(c, 50.0), b = brute_force_graph(c, 50.0);
        if (a.offsets != b.offsets || a.neighbors != b.neighbors) ++mismatched;
    }
    ok = ok && mismatched == 0;
    detail += "grid vs brute mismatches " + std::to_string(mismatched) + "/5";
    return {ok, detail};
}

Outcome flathgn_probe(Desk& desk) {
    const auto data = desk.cache.dataset(nbody::Law::Charge, 2, 4, kDeskSims);
    const auto model = desk.cache.hgn_model(data, kDeskEpochs);
    const auto p = hgn::probe_pair_energy(model, data, true, 50);
    return {std::abs(p.pearson) > kPearson, "|pearson(H_pair, q1 q2 / r')| = " + fmt(std::abs(p.pearson)) +
                                                 " over " + std::to_string(p.learned.size()) + " held-out pairs (> " +
                                                 fmt(kPearson) + ")"};
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Outcome determinism(const fs::path& dir) {
    std::vector<std::string> outputs[2];
    for (int run = 0; run < 2; ++run) {
        const fs::path out = dir / ("repro_" + std::to_string(run));
        fs::remove_all(out);
        const int code = cli::run({"symdistill", "repro", "--law", "spring", "--dim", "2", "--variant", "l1", "--seed",
                                   "0", "--sims", "20", "--epochs", "2", "--hidden", "64", "--snapshots", "20",
                                   "--samples", "1000", "--population", "200", "--generations", "20", "--out-dir",
                                   out.string()});
        if (code != 0) return {false, "repro exited with " + std::to_string(code)};
        for (const char* f : {"data.bin", "model.ckpt", "history.csv", "probe.csv", "distill.json", "summary.json"})
            outputs[run].push_back(read_file(out / f));
    }
    const bool same = outputs[0] == outputs[1];
    return {same, std::string("two repro runs (seed 0): ") + (same ? "all six outputs byte-identical" : "outputs differ")};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance criteria"};
    std::string cache_dir = "acceptance_cache";
    std::vector<int> only;
    std::uint64_t seed = 0;
    app.add_option("--cache-dir", cache_dir, "Datasets and trained models are kept here")->capture_default_str();
    app.add_option("--only", only, "Run only these criteria")->delimiter(',');
    app.add_option("--seed", seed)->capture_default_str();
    CLI11_PARSE(app, argc, argv);
    fs::create_directories(cache_dir);

    Desk desk;
    desk.cache = {cache_dir, seed};
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"Integrator order", integrator_order},
        {"Force-gradient oracle", force_gradients},
        {"Gradient suite", gradient_suite},
        {"Probe reproduction", [&] { return probe_reproduction(desk); }},
        {"Sparsity", [&] { return sparsity(desk); }},
        {"Occam selector golden tests", occam_golden},
        {"SR recovery", [&] { return sr_recovery(seed); }},
        {"End-to-end distillation", [&] { return end_to_end(desk); }},
        {"Pure-SR baseline", [&] { return pure_sr(desk); }},
        {"Cosmology formulas", [&] { return cosmology(seed); }},
        {"FlatHGN", [&] { return flathgn_probe(desk); }},
        {"Determinism", [&] { return determinism(cache_dir); }},
    };
    int failed = 0;
    json results = json::array();
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int id = static_cast<int>(i) + 1;
        if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        const double secs = seconds_since(t0);
        failed += o.pass ? 0 : 1;
        std::cout << (o.pass ? "PASS" : "FAIL") << " " << id << " " << criteria[i].first << ": " << o.detail << " ["
                  << fmt(secs, 3) << " s]" << std::endl;
        results.push_back({{"criterion", id}, {"name", criteria[i].first}, {"pass", o.pass}, {"detail", o.detail},
                           {"seconds", secs}});
    }
    std::ofstream(fs::path(cache_dir) / "acceptance.json") << results.dump(2) << "\n";
    return failed == 0 ? 0 : 1;
}
