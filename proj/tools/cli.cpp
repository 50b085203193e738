#include "cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "symdistill/cosmo.hpp"
#include "symdistill/distill.hpp"
#include "symdistill/flathgn.hpp"
#include "symdistill/probe.hpp"

namespace symdistill::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "0.1.0";

struct ArgumentError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ------------------------------------------------------------- config files

std::string scalar_text(const json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_array()) {
        std::string s;
        for (const auto& e : v) s += (s.empty() ? "" : ",") + scalar_text(e);
        return s;
    }
    return v.dump();
}

// A config file is a flat object of flag values; a manifest is accepted too
// and its "config" block reused.
std::vector<std::string> config_args(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ArgumentError("cannot open config file " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ArgumentError("config file " + path.string() + " is not valid JSON: " + e.what());
    }
    if (j.contains("config") && j["config"].is_object()) j = j["config"];
    if (!j.is_object()) throw ArgumentError("config file must hold a JSON object");
    std::vector<std::string> args;
    for (const auto& [key, value] : j.items()) {
        if (key == "action") continue;
        if (value.is_boolean()) {
            if (value.get<bool>()) args.push_back("--" + key);
            continue;
        }
        if (value.is_null()) continue;
        args.push_back("--" + key);
        args.push_back(scalar_text(value));
    }
    if (j.contains("action")) args.insert(args.begin(), j["action"].get<std::string>());
    return args;
}

// Splices config-file flags in right after the subcommand so that explicit
// flags, which come later, take precedence.
std::vector<std::string> expand_config(std::vector<std::string> args) {
    for (std::size_t i = 1; i < args.size(); ++i) {
        std::string path;
        std::size_t width = 0;
        if (args[i] == "--config") {
            if (i + 1 >= args.size()) throw ArgumentError("--config needs a file");
            path = args[i + 1];
            width = 2;
        } else if (args[i].rfind("--config=", 0) == 0) {
            path = args[i].substr(9);
            width = 1;
        } else {
            continue;
        }
        args.erase(args.begin() + static_cast<std::ptrdiff_t>(i), args.begin() + static_cast<std::ptrdiff_t>(i + width));
        const auto extra = config_args(path);
        const std::size_t at = args.size() > 1 && args[1].rfind("-", 0) != 0 ? 2 : 1;
        args.insert(args.begin() + static_cast<std::ptrdiff_t>(at), extra.begin(), extra.end());
        break;
    }
    return args;
}

// ---------------------------------------------------------------- manifests

std::string fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

json effective_config(const CLI::App& sub) {
    json c = json::object();
    for (const CLI::Option* opt : sub.get_options()) {
        const std::string name = opt->get_single_name();
        if (name.empty() || name == "help" || name == "config") continue;
        if (opt->get_expected_min() == 0) {
            c[name] = opt->count() > 0;
            continue;
        }
        c[name] = opt->count() > 0 ? opt->as<std::string>() : opt->get_default_str();
    }
    return c;
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

void write_manifest(const fs::path& path, const CLI::App& sub, const std::vector<fs::path>& outputs) {
    const json config = effective_config(sub);
    json files = json::array();
    for (const auto& o : outputs) files.push_back(o.string());
    std::uint64_t seed = 0;
    if (config.contains("seed")) seed = std::stoull(config["seed"].get<std::string>());
    write_json(path, {{"subcommand", sub.get_name()},
                      {"config", config},
                      {"config_hash", fnv1a(config.dump())},
                      {"seed", seed},
                      {"outputs", files},
                      {"versions",
                       {{"symdistill", kVersion},
                        {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) +
                                      "." + std::to_string(EIGEN_MINOR_VERSION)},
                        {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                              std::to_string(NLOHMANN_JSON_VERSION_MINOR)},
                        {"compiler", __VERSION__}}}});
}

fs::path manifest_for(const fs::path& out) { return fs::path(out.string() + ".manifest.json"); }

// ------------------------------------------------------------ shared pieces

struct GpFlags {
    int population = 1000;
    int generations = 200;
    int max_size = 30;
    std::string ops = "+,-,*,/,pow,exp,log,if,gt,lt";

    void add(CLI::App* app) {
        app->add_option("--population", population, "GP population size")->capture_default_str();
        app->add_option("--generations", generations, "GP generations")->capture_default_str();
        app->add_option("--max-size", max_size, "Maximum expression size")->capture_default_str();
        app->add_option("--ops", ops, "Operator set")->capture_default_str();
    }
    sr::GpConfig config(std::uint64_t seed) const {
        sr::GpConfig c;
        c.population = population;
        c.generations = generations;
        c.max_size = max_size;
        c.ops = sr::parse_ops(ops);
        c.seed = seed;
        c.validate();
        return c;
    }
};

// Same dataset with train and test swapped, for sampling the held-out split.
nbody::Dataset swap_split(nbody::Dataset d) {
    for (std::size_t i = 0; i < d.is_test.size(); ++i) d.is_test[i] = !d.is_test[i];
    return d;
}

std::string format_double(double x) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

std::string history_csv(const std::vector<double>& train, const std::vector<double>& test) {
    std::string s = "epoch,train_loss,test_loss\n";
    for (std::size_t e = 0; e < train.size(); ++e)
        s += std::to_string(e) + "," + format_double(train[e]) + "," +
             (e < test.size() ? format_double(test[e]) : std::string()) + "\n";
    return s;
}

struct Checkpointed {
    std::optional<gn::GnModel> gn;
    std::optional<hgn::FlatHgn> hgn;
};

Checkpointed load_model(const fs::path& path) {
    const auto ckpt = nn::load_checkpoint(path);
    Checkpointed m;
    if (ckpt.meta.value("model", "") == "flathgn")
        m.hgn = hgn::FlatHgn::from_checkpoint(ckpt);
    else
        m.gn = gn::GnModel::from_checkpoint(ckpt);
    return m;
}

// ----------------------------------------------------------------- commands

struct SimulateFlags {
    std::string law = "spring";
    int dim = 2, bodies = 4, sims = 200, steps = 1000;
    double step_size = 0.0;
    std::uint64_t seed = 0;
    std::string out;
};

nbody::Dataset simulate(const SimulateFlags& f) {
    auto cfg = nbody::SimConfig::paper_defaults(nbody::parse_law(f.law), f.bodies, f.dim, f.seed);
    cfg.n_steps = f.steps;
    if (f.step_size > 0.0) cfg.step_size = f.step_size;
    cfg.validate();
    if (f.sims < 1) throw InvalidArgument("--sims must be positive");
    return nbody::generate_dataset(cfg, f.sims);
}

struct TrainFlags {
    std::string variant = "l1";
    std::string activation = "softplus";
    std::string data, out;
    int epochs = 30, hidden = 300, batch = 8, snapshots = 50;
    double alpha1 = -1.0, lr_initial = 1e-3, lr_final = 1e-5;
    bool no_augment = false;
    std::uint64_t seed = 0;
};

struct Trained {
    Checkpointed model;
    std::vector<double> train_loss, test_loss;
};

Trained train(const TrainFlags& f, const nbody::Dataset& data) {
    Trained t;
    if (f.variant == "flathgn") {
        hgn::HgnTrainConfig c;
        c.epochs = f.epochs;
        c.hidden = f.hidden;
        c.batch_size = f.batch;
        c.snapshots_per_sim = f.snapshots;
        c.augment = !f.no_augment;
        c.lr_initial = f.lr_initial;
        c.lr_final = f.lr_final;
        c.seed = f.seed;
        c.activation = nn::parse_activation(f.activation);
        if (f.alpha1 >= 0.0) c.pair_reg = f.alpha1;
        auto r = hgn::train(data, c);
        t.model.hgn = std::move(r.model);
        t.train_loss = std::move(r.train_loss);
        t.test_loss = std::move(r.test_loss);
        return t;
    }
    const auto v = gn::parse_variant(f.variant);
    auto c = gn::TrainConfig::for_variant(v);
    c.epochs = f.epochs;
    c.hidden = f.hidden;
    c.batch_size = f.batch;
    c.snapshots_per_sim = f.snapshots;
    c.augment = !f.no_augment;
    c.lr_initial = f.lr_initial;
    c.lr_final = f.lr_final;
    c.seed = f.seed;
    if (f.alpha1 >= 0.0) c.alpha1 = f.alpha1;
    auto r = gn::train(data, v, c);
    t.model.gn = std::move(r.model);
    t.train_loss = std::move(r.train_lv);
    t.test_loss = std::move(r.test_lv);
    return t;
}

void save_model(const Checkpointed& m, const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    nn::save_checkpoint(m.gn ? m.gn->to_checkpoint() : m.hgn->to_checkpoint(), path);
}

std::string sim_label(const nbody::Dataset& d) {
    return std::string(nbody::law_name(d.config.law)) + "-" + std::to_string(d.config.dim);
}

// Writes the probe table to `out` and returns a summary.
json probe(const Checkpointed& m, const nbody::Dataset& data, int snapshots, const std::string& label,
           const fs::path& out) {
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    if (m.hgn) {
        const auto p = hgn::probe_pair_energy(*m.hgn, data, true, snapshots);
        write_text(out, "sim,variant,pearson,n_pairs\n" + label + ",flathgn," + format_double(p.pearson) + "," +
                            std::to_string(p.learned.size()) + "\n");
        return {{"pearson", p.pearson}, {"n_pairs", p.learned.size()}};
    }
    const auto rep = probe::probe_model(*m.gn, data, snapshots);
    probe::write_probe_csv({{label, std::string(gn::variant_name(m.gn->variant())), rep}}, out);
    return {{"mean_r2", rep.mean_r2},
            {"per_component_r2", rep.per_component_r2},
            {"components", std::vector<int>(rep.ranked.begin(), rep.ranked.begin() + data.config.dim)},
            {"spread", rep.spread},
            {"degenerate", rep.degenerate}};
}

struct DistillFlags {
    std::string ckpt, data, out = "distill.json";
    std::uint64_t seed = 0;
    int samples = 5000;
    bool all_components = false;
    bool compose = false;
    int refit_snapshots = 400;
    GpFlags gp;
};

json distill(const DistillFlags& f, const Checkpointed& m, const nbody::Dataset& data) {
    const auto held_out = swap_split(data);
    json report = json::object();
    distill::EdgeSampleTable table, test_table;
    if (m.hgn) {
        table = distill::record_pair_energy_samples(*m.hgn, data, f.samples, mix_seed(f.seed, 1));
        test_table = distill::record_pair_energy_samples(*m.hgn, held_out, f.samples, mix_seed(f.seed, 2));
    } else {
        table = distill::record_edge_samples(*m.gn, data, f.samples, mix_seed(f.seed, 1));
        // held-out rows use the components ranked on the training split
        test_table =
            distill::record_edge_samples(*m.gn, held_out, f.samples, mix_seed(f.seed, 2), table.components);
    }
    const int columns = (f.all_components || f.compose) ? static_cast<int>(table.messages.cols()) : 1;
    std::vector<sr::Expression> edge;
    json edges = json::array();
    for (int c = 0; c < columns; ++c) {
        const auto d = distill::distill_edge(table, f.gp.config(mix_seed(f.seed, 10, static_cast<std::uint64_t>(c))), c);
        json j = d.to_json(table.names);
        if (m.hgn) j["target"] = "H_pair";
        j["component"] = table.components[c];
        j["test_mae"] = sr::fitness(d.expr, test_table.data(c));
        edges.push_back(j);
        edge.push_back(d.expr);
    }
    report["edge"] = edges;
    if (f.compose && m.gn) {
        const auto node = distill::distill_node(*m.gn, data, f.gp.config(mix_seed(f.seed, 20)), table.components,
                                                f.samples, mix_seed(f.seed, 3));
        json nodes = json::array();
        std::vector<sr::Expression> node_exprs;
        const auto names = distill::node_feature_names(data.config.dim, columns);
        for (const auto& d : node) {
            nodes.push_back(d.to_json(names));
            node_exprs.push_back(d.expr);
        }
        report["node"] = nodes;
        distill::RefitOptions ro;
        ro.snapshots = f.refit_snapshots;
        ro.seed = mix_seed(f.seed, 4);
        const auto composite = distill::compose_and_refit(edge, node_exprs, data, 50, ro);
        report["composite"] = composite.to_json();
        const auto test = gn::dataset_graphs(data, true, 50);
        report["gn_test_lv"] = gn::evaluate(*m.gn, test);
    }
    return report;
}

// ------------------------------------------------------------------- driver

int dispatch(std::vector<std::string> args) {
    CLI::App app{"Symbolic distillation of graph networks: simulation, training, probing and symbolic regression",
                 "symdistill"};
    app.require_subcommand(1);
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    int workers = 0;
    std::string config_path;
    app.add_option("--workers", workers, "Worker threads (default: SYMDISTILL_WORKERS or all cores)");
    app.add_option("--config", config_path, "JSON file of flag values; explicit flags override it");

    // simulate
    SimulateFlags sim;
    auto* c_sim = app.add_subcommand("simulate", "Generate an n-body dataset");
    auto add_sim_flags = [&](CLI::App* c) {
        c->add_option("--law", sim.law, "r1, r2, spring, damped, charge or discontinuous")->capture_default_str();
        c->add_option("--dim", sim.dim, "Spatial dimension (2 or 3)")->capture_default_str();
        c->add_option("--bodies", sim.bodies, "Bodies per simulation")->capture_default_str();
        c->add_option("--sims", sim.sims, "Number of simulations")->capture_default_str();
        c->add_option("--steps", sim.steps, "Recorded steps per simulation")->capture_default_str();
        c->add_option("--step-size", sim.step_size, "Time step (0 = law default)")->capture_default_str();
    };
    add_sim_flags(c_sim);
    c_sim->add_option("--seed", sim.seed)->capture_default_str();
    c_sim->add_option("--out", sim.out, "Dataset file")->required();

    // train
    TrainFlags tr;
    auto* c_train = app.add_subcommand("train", "Train a graph network or FlatHGN");
    auto add_train_flags = [&](CLI::App* c) {
        c->add_option("--variant", tr.variant, "standard, bottleneck, l1, kl or flathgn")->capture_default_str();
        c->add_option("--epochs", tr.epochs)->capture_default_str();
        c->add_option("--hidden", tr.hidden, "Hidden width")->capture_default_str();
        c->add_option("--activation", tr.activation, "flathgn hidden activation: softplus or relu")
            ->capture_default_str();
        c->add_option("--batch", tr.batch, "Graphs per step")->capture_default_str();
        c->add_option("--snapshots", tr.snapshots, "Snapshots per simulation")->capture_default_str();
        c->add_option("--alpha1", tr.alpha1, "Message regularization weight (-1 = variant default)")
            ->capture_default_str();
        c->add_option("--lr-initial", tr.lr_initial)->capture_default_str();
        c->add_option("--lr-final", tr.lr_final)->capture_default_str();
        c->add_flag("--no-augment", tr.no_augment, "Disable the random position shift");
    };
    add_train_flags(c_train);
    c_train->add_option("--data", tr.data, "Dataset file")->required();
    c_train->add_option("--seed", tr.seed)->capture_default_str();
    c_train->add_option("--out", tr.out, "Checkpoint file")->required();

    // probe
    std::string p_ckpt, p_data, p_out = "probe.csv", p_sim;
    int p_snapshots = 50;
    auto* c_probe = app.add_subcommand("probe", "Fit significant messages to the true forces");
    c_probe->add_option("--ckpt", p_ckpt)->required();
    c_probe->add_option("--data", p_data)->required();
    c_probe->add_option("--out", p_out, "CSV table")->capture_default_str();
    c_probe->add_option("--snapshots", p_snapshots)->capture_default_str();
    c_probe->add_option("--sim", p_sim, "Row label (default <law>-<dim>)");

    // distill
    DistillFlags ds;
    auto* c_distill = app.add_subcommand("distill", "Symbolic regression on the learned internal functions");
    auto add_distill_flags = [&](CLI::App* c) {
        c->add_option("--samples", ds.samples, "Sampled edges or nodes")->capture_default_str();
        c->add_flag("--all-components", ds.all_components, "Distill every significant message, not only the first");
        c->add_flag("--compose", ds.compose, "Also distill the node model and refit the composite");
        c->add_option("--refit-snapshots", ds.refit_snapshots)->capture_default_str();
        ds.gp.add(c);
    };
    c_distill->add_option("--ckpt", ds.ckpt)->required();
    c_distill->add_option("--data", ds.data)->required();
    c_distill->add_option("--seed", ds.seed)->capture_default_str();
    c_distill->add_option("--out", ds.out, "JSON report")->capture_default_str();
    add_distill_flags(c_distill);

    // symreg
    std::string s_data, s_target, s_out = "front.json";
    std::uint64_t s_seed = 0;
    GpFlags s_gp;
    auto* c_sr = app.add_subcommand("symreg", "Symbolic regression on a CSV table");
    c_sr->add_option("--data", s_data, "CSV with a header row")->required();
    c_sr->add_option("--target", s_target, "Target column")->required();
    c_sr->add_option("--seed", s_seed)->capture_default_str();
    c_sr->add_option("--out", s_out, "Pareto front JSON")->capture_default_str();
    s_gp.add(c_sr);

    // cosmo
    std::string k_action, k_formula = "best_with_mass", k_catalog, k_out, k_constants;
    double k_radius = 50.0, k_box = 250.0, k_noise = 0.01;
    int k_restarts = 5, k_evals = 3000, k_halos = 10000, k_gn_epochs = 0, k_gn_hidden = 500;
    std::uint64_t k_seed = 0;
    auto* c_cosmo = app.add_subcommand("cosmo", "Dark matter overdensity formulas");
    c_cosmo->add_option("action", k_action, "predict, refit, ood or synth")
        ->required()
        ->check(CLI::IsMember({"predict", "refit", "ood", "synth"}));
    c_cosmo->add_option("--formula", k_formula, "constant, simple, best_no_mass or best_with_mass")
        ->capture_default_str();
    c_cosmo->add_option("--catalog", k_catalog, "Halo CSV (input, or output for synth)");
    c_cosmo->add_option("--radius", k_radius, "Linking radius")->capture_default_str();
    c_cosmo->add_option("--constants", k_constants, "Comma-separated constants (default: paper values)");
    c_cosmo->add_option("--out", k_out, "Output file");
    c_cosmo->add_option("--seed", k_seed)->capture_default_str();
    c_cosmo->add_option("--restarts", k_restarts)->capture_default_str();
    c_cosmo->add_option("--max-evals", k_evals)->capture_default_str();
    c_cosmo->add_option("--halos", k_halos, "synth: halo count")->capture_default_str();
    c_cosmo->add_option("--box", k_box, "synth: box size")->capture_default_str();
    c_cosmo->add_option("--noise", k_noise, "synth: target noise")->capture_default_str();
    c_cosmo->add_option("--gn-epochs", k_gn_epochs, "ood: also train a GN for this many epochs")->capture_default_str();
    c_cosmo->add_option("--gn-hidden", k_gn_hidden)->capture_default_str();

    // demo
    distill::ToyOptions toy;
    std::uint64_t d_seed = 0;
    std::string d_out = "demo.json";
    GpFlags d_gp;
    d_gp.ops = "+,-,*,/,pow,exp,log,if,gt,lt,cos";
    auto* c_demo = app.add_subcommand("demo", "Toy factorization z = f(sum g(x))");
    c_demo->add_option("--seed", d_seed)->capture_default_str();
    c_demo->add_option("--out", d_out)->capture_default_str();
    c_demo->add_option("--samples", toy.samples)->capture_default_str();
    c_demo->add_option("--series", toy.series)->capture_default_str();
    c_demo->add_option("--hidden", toy.hidden)->capture_default_str();
    c_demo->add_option("--epochs", toy.epochs)->capture_default_str();
    d_gp.add(c_demo);

    // repro
    std::string r_dir = "repro";
    auto* c_repro = app.add_subcommand("repro", "simulate, train, probe and distill in one run");
    add_sim_flags(c_repro);
    add_train_flags(c_repro);
    add_distill_flags(c_repro);
    std::uint64_t r_seed = 0;
    c_repro->add_option("--seed", r_seed)->capture_default_str();
    c_repro->add_option("--out-dir", r_dir, "Output directory")->capture_default_str();

    std::vector<std::string> rev(args.rbegin(), args.rend() - 1);
    try {
        app.parse(rev);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n\n" << app.help();
        return 2;
    }
    if (workers > 0) set_worker_count(workers);

    if (c_sim->parsed()) {
        const auto data = simulate(sim);
        nbody::save_dataset(data, sim.out);
        write_manifest(manifest_for(sim.out), *c_sim, {sim.out});
        std::cout << sim.out << ": " << data.sims.size() << " simulations\n";
    } else if (c_train->parsed()) {
        const auto data = nbody::load_dataset(tr.data);
        const auto t = train(tr, data);
        save_model(t.model, tr.out);
        const fs::path hist = tr.out + ".history.csv";
        write_text(hist, history_csv(t.train_loss, t.test_loss));
        write_manifest(manifest_for(tr.out), *c_train, {tr.out, hist});
        if (!t.test_loss.empty()) std::cout << "final test loss " << format_double(t.test_loss.back()) << "\n";
    } else if (c_probe->parsed()) {
        const auto data = nbody::load_dataset(p_data);
        const auto summary = probe(load_model(p_ckpt), data, p_snapshots, p_sim.empty() ? sim_label(data) : p_sim, p_out);
        write_manifest(manifest_for(p_out), *c_probe, {p_out});
        std::cout << summary.dump() << "\n";
    } else if (c_distill->parsed()) {
        const auto data = nbody::load_dataset(ds.data);
        const auto report = distill(ds, load_model(ds.ckpt), data);
        write_json(ds.out, report);
        write_manifest(manifest_for(ds.out), *c_distill, {ds.out});
        for (const auto& e : report["edge"]) std::cout << e["target"].get<std::string>() << " = " << e["selected_expr"].get<std::string>() << "\n";
    } else if (c_sr->parsed()) {
        const auto data = sr::read_csv(s_data, s_target);
        const auto front = sr::evolve(data, s_gp.config(s_seed));
        write_json(s_out, sr::front_to_json(front, data.names));
        write_manifest(manifest_for(s_out), *c_sr, {s_out});
        const auto sel = front.size() >= 2 ? sr::select_model(front) : front.entries().front();
        std::cout << sel.expr.to_string(data.names) << "\n";
    } else if (c_cosmo->parsed()) {
        if (k_action == "synth") {
            if (k_catalog.empty()) throw ArgumentError("synth needs --catalog for the output file");
            halo::SyntheticOptions o;
            o.n_halos = k_halos;
            o.box = k_box;
            o.noise = k_noise;
            o.radius = k_radius;
            o.formula = halo::parse_formula(k_formula);
            halo::save_catalog(halo::synthetic_catalog(o, k_seed), k_catalog);
            write_manifest(manifest_for(k_catalog), *c_cosmo, {k_catalog});
            return 0;
        }
        if (k_catalog.empty()) throw ArgumentError(k_action + " needs --catalog");
        const auto formula = halo::parse_formula(k_formula);
        std::vector<double> constants;
        if (!k_constants.empty()) {
            std::stringstream ss(k_constants);
            for (std::string item; std::getline(ss, item, ',');) {
                try {
                    constants.push_back(std::stod(item));
                } catch (const std::exception&) {
                    throw ArgumentError("bad constant '" + item + "'");
                }
            }
        }
        const auto catalog = halo::load_catalog(k_catalog);
        const auto graph = halo::build_halo_graph(catalog, k_radius);
        halo::HaloRefitOptions ro;
        ro.restarts = k_restarts;
        ro.max_evals = k_evals;
        ro.seed = k_seed;
        const std::string out = k_out.empty() ? k_action + (k_action == "predict" ? ".csv" : ".json") : k_out;
        if (k_action == "predict") {
            const auto c = constants.empty() ? halo::paper_constants(formula) : constants;
            const auto p = halo::formula_predict(formula, c, catalog, graph);
            std::string csv = "halo_index,delta_true,delta_pred\n";
            for (int i = 0; i < catalog.size(); ++i)
                csv += std::to_string(i) + "," + format_double(catalog.halos[i].delta) + "," + format_double(p(i)) + "\n";
            write_text(out, csv);
        } else if (k_action == "refit") {
            const auto r = halo::refit_formula(formula, halo::formula_inputs(catalog, graph), catalog.deltas(), {},
                                               ro, constants);
            write_json(out, r.to_json());
            std::cout << r.to_json().dump() << "\n";
        } else {
            halo::GnHaloOptions g;
            g.epochs = k_gn_epochs;
            g.hidden = k_gn_hidden;
            g.seed = k_seed;
            const auto rep = halo::generalization_report(catalog, graph, formula, ro, g);
            write_json(out, rep.to_json());
            std::cout << rep.to_json().dump() << "\n";
        }
        write_manifest(manifest_for(out), *c_cosmo, {out});
    } else if (c_demo->parsed()) {
        toy.gp = d_gp.config(d_seed);
        const auto rep = distill::toy_factorization_demo(d_seed, toy);
        write_json(d_out, rep.to_json());
        write_manifest(manifest_for(d_out), *c_demo, {d_out});
        std::cout << rep.to_json().dump() << "\n";
    } else if (c_repro->parsed()) {
        sim.seed = r_seed;
        tr.seed = r_seed;
        ds.seed = r_seed;
        const fs::path dir = r_dir;
        fs::create_directories(dir);
        const auto data = simulate(sim);
        nbody::save_dataset(data, dir / "data.bin");
        const auto t = train(tr, data);
        save_model(t.model, dir / "model.ckpt");
        write_text(dir / "history.csv", history_csv(t.train_loss, t.test_loss));
        const auto p = probe(t.model, data, tr.snapshots, sim_label(data), dir / "probe.csv");
        const auto d = distill(ds, t.model, data);
        write_json(dir / "distill.json", d);
        json summary = {{"law", sim.law},
                        {"dim", sim.dim},
                        {"variant", tr.variant},
                        {"seed", r_seed},
                        {"final_train_loss", t.train_loss.empty() ? 0.0 : t.train_loss.back()},
                        {"final_test_loss", t.test_loss.empty() ? 0.0 : t.test_loss.back()},
                        {"probe", p},
                        {"distill", d}};
        write_json(dir / "summary.json", summary);
        write_manifest(dir / "manifest.json", *c_repro,
                       {dir / "data.bin", dir / "model.ckpt", dir / "history.csv", dir / "probe.csv",
                        dir / "distill.json", dir / "summary.json"});
        std::cout << (dir / "summary.json").string() << "\n";
    }
    return 0;
}

}  // namespace

int run(std::vector<std::string> args) {
    try {
        return dispatch(expand_config(std::move(args)));
    } catch (const ArgumentError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const InvalidArgument& e) {
        std::cerr << e.name() << ": " << e.what() << "\n";
        return 2;
    } catch (const Error& e) {
        std::cerr << e.name() << ": " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "Error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace symdistill::cli
