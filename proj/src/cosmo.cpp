#include "symdistill/cosmo.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_map>

#include "symdistill/optimize.hpp"
#include "symdistill/parallel.hpp"
#include "symdistill/probe.hpp"

namespace symdistill::halo {

namespace {

constexpr const char* kHeader = "mass,rx,ry,rz,vx,vy,vz,delta";
constexpr double kDegenerate = 1e-12;

double distance(const std::array<double, 3>& a, const std::array<double, 3>& b) {
    const double x = a[0] - b[0], y = a[1] - b[1], z = a[2] - b[2];
    return std::sqrt(x * x + y * y + z * z);
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.remove_suffix(1);
    while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
    return s;
}

void append_double(std::string& out, double x) {
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof(buf), x);
    out.append(buf, r.ptr);
}

std::int64_t cell_key(std::int64_t x, std::int64_t y, std::int64_t z) {
    return (x * 73856093) ^ (y * 19349663) ^ (z * 83492791);
}

bool best(Formula f) { return f == Formula::BestNoMass || f == Formula::BestWithMass; }

}  // namespace

Eigen::VectorXd HaloCatalog::deltas() const {
    Eigen::VectorXd d(size());
    for (int i = 0; i < size(); ++i) d(i) = halos[i].delta;
    return d;
}

HaloCatalog HaloCatalog::subset(std::span<const int> index) const {
    HaloCatalog c;
    for (int i : index) c.halos.push_back(halos.at(static_cast<std::size_t>(i)));
    return c;
}

HaloCatalog parse_catalog(std::string_view text) {
    HaloCatalog c;
    int line_no = 0;
    bool header = true;
    while (!text.empty()) {
        const auto nl = text.find('\n');
        const std::string_view line = trim(text.substr(0, nl));
        text = nl == std::string_view::npos ? std::string_view() : text.substr(nl + 1);
        ++line_no;
        if (header) {
            if (line != kHeader) throw SchemaError("catalog header must be '" + std::string(kHeader) + "'");
            header = false;
            continue;
        }
        if (line.empty()) continue;
        double f[8];
        std::string_view rest = line;
        for (int k = 0; k < 8; ++k) {
            const auto comma = rest.find(',');
            if ((k < 7) == (comma == std::string_view::npos))
                throw MalformedRow("line " + std::to_string(line_no) + ": expected 8 fields");
            const std::string_view field = trim(rest.substr(0, comma));
            const auto r = std::from_chars(field.data(), field.data() + field.size(), f[k]);
            if (r.ec != std::errc() || r.ptr != field.data() + field.size() || !std::isfinite(f[k]))
                throw MalformedRow("line " + std::to_string(line_no) + ": bad number '" + std::string(field) + "'");
            rest = comma == std::string_view::npos ? std::string_view() : rest.substr(comma + 1);
        }
        if (!(f[0] > 0.0)) throw NonPositiveMass("line " + std::to_string(line_no) + ": mass must be positive");
        if (!(f[7] > -1.0)) throw MalformedRow("line " + std::to_string(line_no) + ": delta must exceed -1");
        c.halos.push_back({f[0], {f[1], f[2], f[3]}, {f[4], f[5], f[6]}, f[7]});
    }
    if (header) throw SchemaError("catalog is empty");
    return c;
}

HaloCatalog load_catalog(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_catalog(ss.str());
}

std::string format_catalog(const HaloCatalog& catalog) {
    std::string out = kHeader;
    out += '\n';
    for (const auto& h : catalog.halos) {
        const double f[8] = {h.mass, h.r[0], h.r[1], h.r[2], h.v[0], h.v[1], h.v[2], h.delta};
        for (int k = 0; k < 8; ++k) {
            if (k) out += ',';
            append_double(out, f[k]);
        }
        out += '\n';
    }
    return out;
}

void save_catalog(const HaloCatalog& catalog, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << format_catalog(catalog);
}

double HaloGraph::mean_degree() const { return n_halos() > 0 ? static_cast<double>(n_edges()) / n_halos() : 0.0; }

HaloGraph build_halo_graph(const HaloCatalog& catalog, double radius) {
    if (!(radius > 0.0)) throw InvalidArgument("radius must be positive");
    const int n = catalog.size();
    std::vector<std::array<std::int64_t, 3>> cell(static_cast<std::size_t>(n));
    std::unordered_map<std::int64_t, std::vector<int>> grid;
    for (int i = 0; i < n; ++i) {
        for (int d = 0; d < 3; ++d)
            cell[i][d] = static_cast<std::int64_t>(std::floor(catalog.halos[i].r[d] / radius));
        grid[cell_key(cell[i][0], cell[i][1], cell[i][2])].push_back(i);
    }
    std::vector<std::vector<int>> lists(static_cast<std::size_t>(n));
    parallel_for(static_cast<std::size_t>(n), [&](std::size_t i) {
        auto& out = lists[i];
        const auto& hi = catalog.halos[i];
        for (std::int64_t dx = -1; dx <= 1; ++dx)
            for (std::int64_t dy = -1; dy <= 1; ++dy)
                for (std::int64_t dz = -1; dz <= 1; ++dz) {
                    const std::array<std::int64_t, 3> c = {cell[i][0] + dx, cell[i][1] + dy, cell[i][2] + dz};
                    const auto it = grid.find(cell_key(c[0], c[1], c[2]));
                    if (it == grid.end()) continue;
                    for (int j : it->second) {
                        // distinct cells can share a hash bucket
                        if (cell[j] != c || j == static_cast<int>(i)) continue;
                        if (distance(hi.r, catalog.halos[j].r) < radius) out.push_back(j);
                    }
                }
        std::sort(out.begin(), out.end());
    });
    HaloGraph g;
    g.radius = radius;
    g.offsets.assign(1, 0);
    for (const auto& l : lists) {
        g.neighbors.insert(g.neighbors.end(), l.begin(), l.end());
        g.offsets.push_back(static_cast<int>(g.neighbors.size()));
    }
    return g;
}

HaloGraph brute_force_graph(const HaloCatalog& catalog, double radius) {
    HaloGraph g;
    g.radius = radius;
    g.offsets.assign(1, 0);
    for (int i = 0; i < catalog.size(); ++i) {
        for (int j = 0; j < catalog.size(); ++j)
            if (i != j && distance(catalog.halos[i].r, catalog.halos[j].r) < radius) g.neighbors.push_back(j);
        g.offsets.push_back(static_cast<int>(g.neighbors.size()));
    }
    return g;
}

std::string_view formula_name(Formula f) {
    switch (f) {
        case Formula::Constant: return "constant";
        case Formula::Simple: return "simple";
        case Formula::BestNoMass: return "best_no_mass";
        case Formula::BestWithMass: return "best_with_mass";
    }
    return "?";
}

Formula parse_formula(std::string_view name) {
    for (Formula f : {Formula::Constant, Formula::Simple, Formula::BestNoMass, Formula::BestWithMass})
        if (formula_name(f) == name) return f;
    throw InvalidArgument("unknown formula '" + std::string(name) + "'");
}

int formula_arity(Formula f) {
    switch (f) {
        case Formula::Constant: return 1;
        case Formula::Simple: return 3;
        default: return 7;
    }
}

std::vector<double> paper_constants(Formula f) {
    switch (f) {
        case Formula::Constant: return {0.415};
        case Formula::Simple: return {-0.0376, 0.0529, 0.000927};
        case Formula::BestNoMass: return {-0.199, 1.31, 0.027, 1.54, 50.165, 18.94, 13.21};
        case Formula::BestWithMass: return {-0.156, 3.80, 0.0809, 0.438, 7.06, 15.5, 20.3};
    }
    return {};
}

FormulaInputs formula_inputs(const HaloCatalog& catalog, const HaloGraph& graph) {
    const int n = catalog.size();
    if (graph.n_halos() != n) throw ShapeMismatch("graph and catalog sizes differ");
    FormulaInputs in;
    in.mass.resize(n);
    in.speed.resize(n);
    in.offsets = graph.offsets;
    in.dist.resize(graph.n_edges());
    in.dv.resize(graph.n_edges());
    in.sender_mass.resize(graph.n_edges());
    for (int i = 0; i < n; ++i) {
        const auto& h = catalog.halos[i];
        in.mass(i) = h.mass;
        in.speed(i) = std::sqrt(h.v[0] * h.v[0] + h.v[1] * h.v[1] + h.v[2] * h.v[2]);
        for (int k = graph.offsets[i]; k < graph.offsets[i + 1]; ++k) {
            const auto& s = catalog.halos[graph.neighbors[k]];
            in.dist(k) = distance(h.r, s.r);
            in.dv(k) = distance(h.v, s.v);
            in.sender_mass(k) = s.mass;
        }
    }
    // the Simple formula sums within 20 whatever the linking radius
    const HaloGraph near = graph.radius == kSimpleRadius ? graph : build_halo_graph(catalog, kSimpleRadius);
    in.mass_within_20.setZero(n);
    for (int i = 0; i < n; ++i)
        for (int k = near.offsets[i]; k < near.offsets[i + 1]; ++k)
            in.mass_within_20(i) += catalog.halos[near.neighbors[k]].mass;
    return in;
}

Eigen::VectorXd formula_predict(Formula f, std::span<const double> c, const FormulaInputs& in) {
    if (static_cast<int>(c.size()) != formula_arity(f))
        throw InvalidArgument("formula " + std::string(formula_name(f)) + " takes " +
                              std::to_string(formula_arity(f)) + " constants");
    const Eigen::Index n = in.mass.size();
    Eigen::VectorXd out(n);
    if (f == Formula::Constant) {
        out.setConstant(c[0]);
        return out;
    }
    if (f == Formula::Simple) {
        out = (c[0] + ((c[1] + in.mass.array() * c[2]) * in.mass_within_20.array())).matrix();
        return out;
    }
    for (Eigen::Index i = 0; i < n; ++i) {
        double e = 0.0;
        for (int k = in.offsets[i]; k < in.offsets[i + 1]; ++k) {
            const double num = c[3] + (f == Formula::BestWithMass ? in.sender_mass(k) : in.dv(k));
            const double den = c[4] + std::pow(c[5] * in.dist(k), c[6]);
            if (std::abs(den) < kDegenerate)
                throw DivisionDegenerate("halo " + std::to_string(i) + ": edge denominator vanishes");
            e += num / den;
        }
        const double den = f == Formula::BestWithMass ? c[1] + c[2] * in.mass(i) : c[1] + c[2] * e * in.speed(i);
        if (std::abs(den) < kDegenerate) throw DivisionDegenerate("halo " + std::to_string(i) + ": denominator vanishes");
        out(i) = c[0] + e / den;
    }
    return out;
}

Eigen::VectorXd formula_predict(Formula f, std::span<const double> c, const HaloCatalog& catalog,
                                const HaloGraph& graph) {
    return formula_predict(f, c, formula_inputs(catalog, graph));
}

double formula_mae(Formula f, std::span<const double> c, const FormulaInputs& in, const Eigen::VectorXd& target,
                   std::span<const int> rows) {
    const Eigen::VectorXd p = formula_predict(f, c, in);
    if (rows.empty()) return (p - target).cwiseAbs().mean();
    double s = 0.0;
    for (int i : rows) s += std::abs(p(i) - target(i));
    return s / static_cast<double>(rows.size());
}

nlohmann::json RefitResult::to_json() const {
    return {{"formula", formula_name(formula)}, {"constants", constants}, {"mae", mae}, {"initial_mae", initial_mae}};
}

RefitResult refit_formula(Formula f, const FormulaInputs& in, const Eigen::VectorXd& target,
                          std::span<const int> rows, const HaloRefitOptions& options, std::vector<double> initial) {
    if (initial.empty()) initial = paper_constants(f);
    if (static_cast<int>(initial.size()) != formula_arity(f)) throw InvalidArgument("wrong number of constants");
    // free[k] maps optimizer coordinates to formula constants
    std::vector<int> free;
    for (int k = 0; k < formula_arity(f); ++k)
        if (!(best(f) && k == 4)) free.push_back(k);
    auto expand = [&](std::span<const double> x) {
        std::vector<double> c = initial;
        for (std::size_t k = 0; k < free.size(); ++k) c[free[k]] = x[k];
        return c;
    };
    const Objective obj = [&](std::span<const double> x) {
        try {
            return formula_mae(f, expand(x), in, target, rows);
        } catch (const DivisionDegenerate&) {
            return std::numeric_limits<double>::infinity();
        }
    };
    std::vector<double> x0;
    for (int k : free) x0.push_back(initial[k]);

    RefitResult r;
    r.formula = f;
    r.initial_mae = obj(x0);
    r.constants = initial;
    r.mae = r.initial_mae;
    NelderMeadOptions nm;
    nm.max_evals = options.max_evals;
    std::mt19937_64 rng(mix_seed(options.seed, 80));
    std::normal_distribution<double> normal(0.0, options.perturb);
    for (int restart = 0; restart <= options.restarts; ++restart) {
        std::vector<double> start = x0;
        if (restart > 0)
            for (double& v : start) v *= 1.0 + normal(rng);
        auto res = nelder_mead(obj, start, nm);
        res = nelder_mead(obj, res.x, nm);
        if (res.value < r.mae) {
            r.mae = res.value;
            r.constants = expand(res.x);
        }
    }
    return r;
}

OodSplit ood_split(const HaloCatalog& catalog, double threshold) {
    OodSplit s;
    for (int i = 0; i < catalog.size(); ++i) (catalog.halos[i].delta > threshold ? s.held_out : s.train).push_back(i);
    const double n = std::max(1, catalog.size());
    s.train_fraction = static_cast<double>(s.train.size()) / n;
    s.held_out_fraction = static_cast<double>(s.held_out.size()) / n;
    return s;
}

HaloCatalog synthetic_catalog(const SyntheticOptions& o, std::uint64_t seed) {
    if (o.n_halos < 1 || !(o.box > 0.0)) throw InvalidArgument("need a positive halo count and box size");
    std::mt19937_64 rng(mix_seed(seed, 81));
    std::uniform_real_distribution<double> uniform(0.0, o.box);
    std::lognormal_distribution<double> lognormal(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);
    HaloCatalog c;
    c.halos.resize(static_cast<std::size_t>(o.n_halos));
    for (auto& h : c.halos) {
        h.mass = lognormal(rng);
        for (double& x : h.r) x = uniform(rng);
        for (double& x : h.v) x = normal(rng);
    }
    const auto constants = o.constants.empty() ? paper_constants(o.formula) : o.constants;
    const Eigen::VectorXd d = formula_predict(o.formula, constants, c, build_halo_graph(c, o.radius));
    for (int i = 0; i < c.size(); ++i) c.halos[i].delta = std::max(d(i) + o.noise * normal(rng), -1.0 + 1e-9);
    return c;
}

gn::Graph halo_gn_graph(const HaloCatalog& catalog, const HaloGraph& graph, std::span<const int> target_rows) {
    gn::Graph g;
    const int n = catalog.size();
    g.nodes.resize(n, 7);
    for (int i = 0; i < n; ++i) {
        const auto& h = catalog.halos[i];
        g.nodes.row(i) << h.mass, h.r[0], h.r[1], h.r[2], h.v[0], h.v[1], h.v[2];
        for (int k = graph.offsets[i]; k < graph.offsets[i + 1]; ++k) {
            g.receivers.push_back(i);
            g.senders.push_back(graph.neighbors[k]);
        }
    }
    if (target_rows.empty()) {
        g.targets.resize(n, 1);
        for (int i = 0; i < n; ++i) g.targets(i, 0) = catalog.halos[i].delta;
    } else {
        g.target_nodes.assign(target_rows.begin(), target_rows.end());
        g.targets.resize(static_cast<Eigen::Index>(target_rows.size()), 1);
        for (std::size_t k = 0; k < target_rows.size(); ++k)
            g.targets(static_cast<Eigen::Index>(k), 0) = catalog.halos[target_rows[k]].delta;
    }
    return g;
}

std::vector<int> informative_components(const gn::GnModel& model, const gn::Graph& graph, double threshold) {
    gn::ForwardOptions opt;
    opt.sample = false;
    const auto r = gn::gn_forward(model, graph, opt);
    std::vector<int> out;
    for (int c : probe::rank_by_std(r.messages)) {
        const auto col = r.messages.col(c).array();
        if (std::sqrt((col - col.mean()).square().mean()) > threshold) out.push_back(c);
    }
    return out;
}

nlohmann::json GeneralizationReport::to_json() const {
    nlohmann::json j = {{"train_fraction", split.train_fraction},
                        {"held_out_fraction", split.held_out_fraction},
                        {"symbolic", symbolic.to_json()},
                        {"symbolic_train_mae", symbolic_train_mae},
                        {"symbolic_held_out_mae", symbolic_held_out_mae}};
    if (gn_train_mae) j["gn_train_mae"] = *gn_train_mae;
    if (gn_held_out_mae) j["gn_held_out_mae"] = *gn_held_out_mae;
    return j;
}

GeneralizationReport generalization_report(const HaloCatalog& catalog, const HaloGraph& graph, Formula f,
                                           const HaloRefitOptions& refit, const GnHaloOptions& gno) {
    GeneralizationReport rep;
    rep.split = ood_split(catalog);
    if (rep.split.train.empty()) throw InvalidArgument("no training halos (every delta exceeds 1)");
    const auto in = formula_inputs(catalog, graph);
    const Eigen::VectorXd target = catalog.deltas();
    rep.symbolic = refit_formula(f, in, target, rep.split.train, refit);
    rep.symbolic_train_mae = formula_mae(f, rep.symbolic.constants, in, target, rep.split.train);
    rep.symbolic_held_out_mae =
        rep.split.held_out.empty() ? 0.0 : formula_mae(f, rep.symbolic.constants, in, target, rep.split.held_out);
    if (gno.epochs > 0) {
        gn::GnConfig cfg;
        cfg.variant = gn::Variant::L1;
        cfg.node_dim = 7;
        cfg.out_dim = 1;
        cfg.hidden = gno.hidden;
        auto tc = gn::TrainConfig::for_variant(gn::Variant::L1);
        tc.alpha1 = gno.alpha1;
        tc.epochs = gno.epochs;
        tc.batch_size = 1;
        tc.hidden = gno.hidden;
        tc.seed = gno.seed;
        tc.augment_offset = 1;
        tc.augment_dims = 3;
        const std::vector<gn::Graph> train = {halo_gn_graph(catalog, graph, rep.split.train)};
        std::vector<gn::Graph> test;
        if (!rep.split.held_out.empty()) test.push_back(halo_gn_graph(catalog, graph, rep.split.held_out));
        const auto res = gn::train_graphs(gn::GnModel(cfg, mix_seed(gno.seed, 82)), train, test, tc);
        rep.gn_train_mae = gn::evaluate(res.model, train);
        if (!test.empty()) rep.gn_held_out_mae = gn::evaluate(res.model, test);
    }
    return rep;
}

}  // namespace symdistill::halo
