#include "symdistill/symreg.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "symdistill/optimize.hpp"
#include "symdistill/parallel.hpp"

namespace symdistill::sr {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string format_number(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

}  // namespace

int arity(Op op) {
    switch (op) {
        case Op::Const:
        case Op::Var: return 0;
        case Op::Exp:
        case Op::Log:
        case Op::Cos: return 1;
        case Op::If: return 3;
        default: return 2;
    }
}

int op_complexity(Op op) {
    switch (op) {
        case Op::Pow:
        case Op::Exp:
        case Op::Log:
        case Op::Cos:
        case Op::If: return 3;
        default: return 1;
    }
}

std::string_view op_name(Op op) {
    switch (op) {
        case Op::Const: return "const";
        case Op::Var: return "var";
        case Op::Add: return "+";
        case Op::Sub: return "-";
        case Op::Mul: return "*";
        case Op::Div: return "/";
        case Op::Gt: return "gt";
        case Op::Lt: return "lt";
        case Op::Pow: return "pow";
        case Op::Exp: return "exp";
        case Op::Log: return "log";
        case Op::If: return "if";
        case Op::Cos: return "cos";
    }
    return "?";
}

std::vector<Op> parse_ops(std::string_view list) {
    std::vector<Op> out;
    std::size_t start = 0;
    while (start <= list.size()) {
        std::size_t end = list.find(',', start);
        if (end == std::string_view::npos) end = list.size();
        std::string tok(list.substr(start, end - start));
        tok.erase(std::remove_if(tok.begin(), tok.end(), [](unsigned char c) { return std::isspace(c); }), tok.end());
        std::transform(tok.begin(), tok.end(), tok.begin(), [](unsigned char c) { return std::tolower(c); });
        if (!tok.empty()) {
            bool found = false;
            for (Op op : {Op::Add, Op::Sub, Op::Mul, Op::Div, Op::Gt, Op::Lt, Op::Pow, Op::Exp, Op::Log, Op::If, Op::Cos}) {
                if (tok == op_name(op) || (op == Op::Gt && tok == ">") || (op == Op::Lt && tok == "<")) {
                    if (std::find(out.begin(), out.end(), op) == out.end()) out.push_back(op);
                    found = true;
                }
            }
            if (!found) throw InvalidArgument("unknown operator '" + tok + "'");
        }
        start = end + 1;
    }
    if (out.empty()) throw InvalidArgument("operator list is empty");
    return out;
}

std::vector<Op> default_ops() {
    return {Op::Add, Op::Sub, Op::Mul, Op::Div, Op::Gt, Op::Lt, Op::Pow, Op::Exp, Op::Log, Op::If};
}

// ---------------------------------------------------------------- Expression

Expression::Expression(std::vector<Node> nodes) : nodes_(std::move(nodes)) {
    int need = 1;
    for (const auto& n : nodes_) {
        if (need <= 0) throw InvalidArgument("expression has trailing nodes");
        need += arity(n.op) - 1;
    }
    if (need != 0) throw InvalidArgument("expression arity mismatch");
}

Expression Expression::constant(double v) { return Expression({Node{Op::Const, -1, v}}); }

Expression Expression::variable(int index) { return Expression({Node{Op::Var, index, 0.0}}); }

Expression Expression::unary(Op op, const Expression& a) {
    std::vector<Node> n{Node{op}};
    n.insert(n.end(), a.nodes_.begin(), a.nodes_.end());
    return Expression(std::move(n));
}

Expression Expression::binary(Op op, const Expression& a, const Expression& b) {
    std::vector<Node> n{Node{op}};
    n.insert(n.end(), a.nodes_.begin(), a.nodes_.end());
    n.insert(n.end(), b.nodes_.begin(), b.nodes_.end());
    return Expression(std::move(n));
}

Expression Expression::if_then_else(const Expression& c, const Expression& a, const Expression& b) {
    std::vector<Node> n{Node{Op::If}};
    for (const auto* e : {&c, &a, &b}) n.insert(n.end(), e->nodes_.begin(), e->nodes_.end());
    return Expression(std::move(n));
}

int Expression::subtree_end(int i) const {
    int need = 1;
    while (need > 0) need += arity(nodes_[i++].op) - 1;
    return i;
}

Expression Expression::subtree(int i) const {
    Expression e;
    e.nodes_.assign(nodes_.begin() + i, nodes_.begin() + subtree_end(i));
    return e;
}

Expression Expression::replaced(int i, const Expression& with) const {
    Expression e;
    e.nodes_.assign(nodes_.begin(), nodes_.begin() + i);
    e.nodes_.insert(e.nodes_.end(), with.nodes_.begin(), with.nodes_.end());
    e.nodes_.insert(e.nodes_.end(), nodes_.begin() + subtree_end(i), nodes_.end());
    return e;
}

int Expression::complexity() const {
    int c = 0;
    for (const auto& n : nodes_) c += op_complexity(n.op);
    return c;
}

std::vector<double> Expression::constants() const {
    std::vector<double> c;
    for (const auto& n : nodes_)
        if (n.op == Op::Const) c.push_back(n.value);
    return c;
}

void Expression::set_constants(std::span<const double> values) {
    std::size_t k = 0;
    for (auto& n : nodes_) {
        if (n.op != Op::Const) continue;
        if (k >= values.size()) throw ShapeMismatch("too few constants");
        n.value = values[k++];
    }
    if (k != values.size()) throw ShapeMismatch("too many constants");
}

bool Expression::uses_op(Op op) const {
    return std::any_of(nodes_.begin(), nodes_.end(), [op](const Node& n) { return n.op == op; });
}

std::string Expression::to_string(std::span<const std::string> names) const {
    int pos = 0;
    auto rec = [&](auto&& self) -> std::string {
        const Node& n = nodes_[pos++];
        switch (n.op) {
            case Op::Const: return format_number(n.value);
            case Op::Var:
                return n.var >= 0 && n.var < static_cast<int>(names.size()) ? names[n.var] : "x" + std::to_string(n.var);
            case Op::Exp:
            case Op::Log:
            case Op::Cos: return std::string(op_name(n.op)) + "(" + self(self) + ")";
            case Op::Pow: {
                const auto a = self(self);
                return "pow(" + a + ", " + self(self) + ")";
            }
            case Op::If: {
                const auto c = self(self);
                const auto a = self(self);
                return "IF(" + c + ", " + a + ", " + self(self) + ")";
            }
            default: {
                const char* sym = n.op == Op::Add   ? " + "
                                  : n.op == Op::Sub ? " - "
                                  : n.op == Op::Mul ? " * "
                                  : n.op == Op::Div ? " / "
                                  : n.op == Op::Gt  ? " > "
                                                    : " < ";
                const auto a = self(self);
                return "(" + a + sym + self(self) + ")";
            }
        }
    };
    return nodes_.empty() ? std::string() : rec(rec);
}

// -------------------------------------------------------------------- Parser

namespace {

class Parser {
public:
    Parser(std::string_view text, std::span<const std::string> names) : s_(text), names_(names) {}

    Expression parse() {
        auto e = comparison();
        skip();
        if (pos_ != s_.size()) fail("unexpected '" + std::string(1, s_[pos_]) + "'");
        return e;
    }

private:
    [[noreturn]] void fail(const std::string& what) const {
        throw ParseError(what + " at offset " + std::to_string(pos_));
    }
    void skip() {
        while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
    }
    bool eat(char c) {
        skip();
        if (pos_ < s_.size() && s_[pos_] == c) {
            ++pos_;
            return true;
        }
        return false;
    }
    void expect(char c) {
        if (!eat(c)) fail(std::string("expected '") + c + "'");
    }
    static bool ident_char(char c) {
        return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || static_cast<unsigned char>(c) >= 0x80;
    }

    Expression comparison() {
        auto a = additive();
        if (eat('>')) return Expression::binary(Op::Gt, a, additive());
        if (eat('<')) return Expression::binary(Op::Lt, a, additive());
        return a;
    }
    Expression additive() {
        auto a = multiplicative();
        for (;;) {
            if (eat('+')) a = Expression::binary(Op::Add, a, multiplicative());
            else if (eat('-')) a = Expression::binary(Op::Sub, a, multiplicative());
            else return a;
        }
    }
    Expression multiplicative() {
        auto a = unary();
        for (;;) {
            if (eat('*')) a = Expression::binary(Op::Mul, a, unary());
            else if (eat('/')) a = Expression::binary(Op::Div, a, unary());
            else return a;
        }
    }
    Expression unary() {
        if (eat('-')) {
            auto a = unary();
            if (a.size() == 1 && a.nodes()[0].op == Op::Const) return Expression::constant(-a.nodes()[0].value);
            return Expression::binary(Op::Mul, Expression::constant(-1.0), a);
        }
        auto a = primary();
        if (eat('^')) return Expression::binary(Op::Pow, a, unary());
        return a;
    }
    Expression primary() {
        skip();
        if (pos_ >= s_.size()) fail("unexpected end of input");
        if (eat('(')) {
            auto e = comparison();
            expect(')');
            return e;
        }
        const char c = s_[pos_];
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
            const std::string rest(s_.substr(pos_));
            char* end = nullptr;
            const double v = std::strtod(rest.c_str(), &end);
            if (end == rest.c_str()) fail("bad number");
            pos_ += static_cast<std::size_t>(end - rest.c_str());
            return Expression::constant(v);
        }
        if (!ident_char(c)) fail("unexpected '" + std::string(1, c) + "'");
        const std::size_t start = pos_;
        while (pos_ < s_.size() && ident_char(s_[pos_])) ++pos_;
        const std::string id(s_.substr(start, pos_ - start));
        std::string lower = id;
        std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char ch) { return std::tolower(ch); });
        skip();
        const bool call = pos_ < s_.size() && s_[pos_] == '(';
        if (call && (lower == "exp" || lower == "log" || lower == "cos")) {
            expect('(');
            auto a = comparison();
            expect(')');
            return Expression::unary(lower == "exp" ? Op::Exp : lower == "log" ? Op::Log : Op::Cos, a);
        }
        if (call && lower == "pow") {
            expect('(');
            auto a = comparison();
            expect(',');
            auto b = comparison();
            expect(')');
            return Expression::binary(Op::Pow, a, b);
        }
        if (call && lower == "if") {
            expect('(');
            auto cnd = comparison();
            expect(',');
            auto a = comparison();
            expect(',');
            auto b = comparison();
            expect(')');
            return Expression::if_then_else(cnd, a, b);
        }
        for (std::size_t k = 0; k < names_.size(); ++k)
            if (names_[k] == id) return Expression::variable(static_cast<int>(k));
        throw UnboundVariable("unknown variable '" + id + "'");
    }

    std::string_view s_;
    std::span<const std::string> names_;
    std::size_t pos_ = 0;
};

}  // namespace

Expression parse(std::string_view text, std::span<const std::string> names) { return Parser(text, names).parse(); }

// ---------------------------------------------------------------------- Data

Data Data::subset(std::span<const int> rows) const {
    Data d;
    d.names = names;
    d.x.resize(static_cast<Eigen::Index>(rows.size()), x.cols());
    d.y.resize(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t k = 0; k < rows.size(); ++k) {
        d.x.row(static_cast<Eigen::Index>(k)) = x.row(rows[k]);
        d.y(static_cast<Eigen::Index>(k)) = y(rows[k]);
    }
    return d;
}

int Data::index_of(std::string_view name) const {
    for (std::size_t k = 0; k < names.size(); ++k)
        if (names[k] == name) return static_cast<int>(k);
    return -1;
}

Data read_csv(const std::filesystem::path& path, std::string_view target) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw SchemaError(path.string() + ": missing header");
    std::vector<std::string> header;
    {
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
            header.push_back(cell);
        }
    }
    const auto tcol = std::find(header.begin(), header.end(), target);
    if (tcol == header.end()) throw SchemaError("target column '" + std::string(target) + "' not in header");
    const auto ti = static_cast<std::size_t>(tcol - header.begin());
    std::vector<std::vector<double>> rows;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        std::vector<double> row;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            char* end = nullptr;
            const double v = std::strtod(cell.c_str(), &end);
            if (end == cell.c_str()) throw SchemaError(path.string() + ":" + std::to_string(lineno) + ": bad number");
            row.push_back(v);
        }
        if (row.size() != header.size())
            throw SchemaError(path.string() + ":" + std::to_string(lineno) + ": wrong column count");
        rows.push_back(std::move(row));
    }
    Data d;
    for (std::size_t c = 0; c < header.size(); ++c)
        if (c != ti) d.names.push_back(header[c]);
    d.x.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(d.names.size()));
    d.y.resize(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
        Eigen::Index k = 0;
        for (std::size_t c = 0; c < header.size(); ++c) {
            if (c == ti) d.y(static_cast<Eigen::Index>(r)) = rows[r][c];
            else d.x(static_cast<Eigen::Index>(r), k++) = rows[r][c];
        }
    }
    return d;
}

// ---------------------------------------------------------------- Evaluation

Eigen::ArrayXd evaluate(const Expression& e, const Eigen::MatrixXd& x) {
    if (e.empty()) throw InvalidArgument("empty expression");
    const Eigen::Index n = x.rows();
    std::vector<Eigen::ArrayXd> st;
    st.reserve(static_cast<std::size_t>(e.size()));
    auto pop = [&] {
        Eigen::ArrayXd v = std::move(st.back());
        st.pop_back();
        return v;
    };
    const auto& nodes = e.nodes();
    for (int i = e.size() - 1; i >= 0; --i) {
        const Node& nd = nodes[i];
        switch (nd.op) {
            case Op::Const: st.push_back(Eigen::ArrayXd::Constant(n, nd.value)); break;
            case Op::Var:
                if (nd.var < 0 || nd.var >= x.cols())
                    throw UnboundVariable("variable index " + std::to_string(nd.var) + " is not bound");
                st.push_back(x.col(nd.var).array());
                break;
            case Op::Exp: st.back() = st.back().exp(); break;
            case Op::Log: st.back() = st.back().log(); break;
            case Op::Cos: st.back() = st.back().cos(); break;
            case Op::If: {
                Eigen::ArrayXd c = pop();
                Eigen::ArrayXd a = pop();
                Eigen::ArrayXd& b = st.back();
                for (Eigen::Index k = 0; k < n; ++k) b(k) = std::isnan(c(k)) ? kNaN : (c(k) != 0.0 ? a(k) : b(k));
                break;
            }
            default: {
                Eigen::ArrayXd a = pop();
                Eigen::ArrayXd& b = st.back();  // second operand; overwritten with the result
                switch (nd.op) {
                    case Op::Add: b = a + b; break;
                    case Op::Sub: b = a - b; break;
                    case Op::Mul: b = a * b; break;
                    case Op::Div: b = a / b; break;
                    case Op::Pow: b = a.pow(b); break;
                    case Op::Gt:
                    case Op::Lt:
                        for (Eigen::Index k = 0; k < n; ++k) {
                            if (std::isnan(a(k)) || std::isnan(b(k))) b(k) = kNaN;
                            else b(k) = (nd.op == Op::Gt ? a(k) > b(k) : a(k) < b(k)) ? 1.0 : 0.0;
                        }
                        break;
                    default: break;
                }
            }
        }
    }
    return std::move(st.back());
}

double eval_expr(const Expression& e, std::span<const double> row) {
    Eigen::MatrixXd x(1, static_cast<Eigen::Index>(row.size()));
    for (std::size_t k = 0; k < row.size(); ++k) x(0, static_cast<Eigen::Index>(k)) = row[k];
    return evaluate(e, x)(0);
}

double eval_expr(const Expression& e, std::span<const std::string> names, const std::map<std::string, double>& row) {
    std::vector<double> vals(names.size(), kNaN);
    for (const auto& nd : e.nodes()) {
        if (nd.op != Op::Var) continue;
        if (nd.var < 0 || nd.var >= static_cast<int>(names.size()))
            throw UnboundVariable("variable index " + std::to_string(nd.var) + " is not bound");
        const auto it = row.find(names[nd.var]);
        if (it == row.end()) throw UnboundVariable("variable '" + names[nd.var] + "' is not bound");
        vals[nd.var] = it->second;
    }
    return eval_expr(e, vals);
}

double fitness(const Expression& e, const Data& data) {
    if (data.rows() == 0) return 0.0;
    const Eigen::ArrayXd p = evaluate(e, data.x);
    if (!p.allFinite()) return kInf;
    return (p - data.y.array()).abs().mean();
}

Expression fit_constants(const Expression& e, const Data& data, const ConstantFitOptions& options) {
    const auto c0 = e.constants();
    if (c0.empty()) return e;
    Expression work = e;
    const Objective f = [&](std::span<const double> c) {
        work.set_constants(c);
        return fitness(work, data);
    };
    NelderMeadOptions nm;
    nm.max_evals = options.max_evals;
    const double start = fitness(e, data);
    auto best = nelder_mead(f, c0, nm);
    std::mt19937_64 rng(options.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int r = 0; r < options.restarts; ++r) {
        std::vector<double> x = c0;
        for (auto& v : x) v += normal(rng) * std::max(std::abs(v), 1.0);
        auto res = nelder_mead(f, x, nm);
        // polish the restart from where the first simplex ended
        res = nelder_mead(f, res.x, nm);
        if (res.value < best.value) best = std::move(res);
    }
    if (!(best.value < start)) return e;
    Expression out = e;
    out.set_constants(best.x);
    return out;
}

// --------------------------------------------------------------- Pareto front

bool ParetoFront::update(const FrontEntry& entry) {
    if (!std::isfinite(entry.mae)) return false;
    auto it = by_complexity_.find(entry.complexity);
    if (it != by_complexity_.end() && it->second.mae <= entry.mae) return false;
    for (const auto& [c, e] : by_complexity_)
        if (c < entry.complexity && e.mae <= entry.mae) return false;
    by_complexity_[entry.complexity] = entry;
    compact();
    return true;
}

void ParetoFront::compact() {
    double best = kInf;
    for (auto it = by_complexity_.begin(); it != by_complexity_.end();) {
        if (it->second.mae >= best) {
            it = by_complexity_.erase(it);
        } else {
            best = it->second.mae;
            ++it;
        }
    }
}

std::vector<FrontEntry> ParetoFront::entries() const {
    std::vector<FrontEntry> out;
    for (const auto& [c, e] : by_complexity_) out.push_back(e);
    return out;
}

const FrontEntry* ParetoFront::best() const {
    return by_complexity_.empty() ? nullptr : &by_complexity_.rbegin()->second;
}

std::size_t select_index(std::span<const std::pair<int, double>> front, double mae_floor) {
    if (front.size() < 2) throw InsufficientFront("selection needs at least two front entries");
    std::vector<std::size_t> order(front.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return front[a].first < front[b].first; });
    auto lg = [&](double m) { return std::log(std::max(m, mae_floor)); };
    std::size_t best = order[1];
    double best_score = -std::numeric_limits<double>::max();
    for (std::size_t k = 1; k < order.size(); ++k) {
        const auto& prev = front[order[k - 1]];
        const auto& cur = front[order[k]];
        const double score = (lg(prev.second) - lg(cur.second)) / (cur.first - prev.first);
        if (score > best_score + 1e-12 * std::abs(best_score)) {
            best_score = score;
            best = order[k];
        }
    }
    return best;
}

FrontEntry select_model(const ParetoFront& front) {
    const auto entries = front.entries();
    std::vector<std::pair<int, double>> pts;
    for (const auto& e : entries) pts.emplace_back(e.complexity, e.mae);
    return entries[select_index(pts, front.mae_floor)];
}

nlohmann::json front_to_json(const ParetoFront& front, std::span<const std::string> names) {
    auto out = nlohmann::json::array();
    for (const auto& e : front.entries())
        out.push_back({{"complexity", e.complexity}, {"mae", e.mae}, {"expr_infix", e.expr.to_string(names)}});
    return out;
}

// ------------------------------------------------------------------- Evolve

void GpConfig::validate() const {
    if (population < 2) throw InvalidArgument("population must be at least 2");
    if (generations <= 0) throw BudgetZero("generation budget is zero");
    if (max_size < 1 || tournament < 1) throw InvalidArgument("max_size and tournament must be positive");
    const double total = p_swap + p_insert + p_to_constant + p_perturb + p_crossover;
    if (total > 1.0 + 1e-12 || std::min({p_swap, p_insert, p_to_constant, p_perturb, p_crossover}) < 0.0)
        throw InvalidArgument("mutation probabilities must be non-negative and sum to at most 1");
    if (ops.empty()) throw InvalidArgument("operator set is empty");
}

namespace {

struct Individual {
    Expression expr;
    double mae = kInf;
    int complexity = 0;
};

class Evolver {
public:
    Evolver(const Data& full, const GpConfig& cfg) : full_(full), cfg_(cfg), rng_(cfg.seed) {
        for (Op op : cfg_.ops) (arity(op) == 1 ? unary_ : arity(op) == 2 ? binary_ : ternary_).push_back(op);
        const Eigen::Index n = full_.rows();
        if (cfg_.fit_rows > 0 && n > cfg_.fit_rows) {
            std::vector<int> idx(static_cast<std::size_t>(n));
            std::iota(idx.begin(), idx.end(), 0);
            std::mt19937_64 r(mix_seed(cfg_.seed, 7));
            std::shuffle(idx.begin(), idx.end(), r);
            idx.resize(static_cast<std::size_t>(cfg_.fit_rows));
            std::sort(idx.begin(), idx.end());
            sub_ = full_.subset(idx);
        } else {
            sub_ = full_;
        }
        std::vector<double> y(full_.y.data(), full_.y.data() + full_.y.size());
        std::nth_element(y.begin(), y.begin() + static_cast<std::ptrdiff_t>(y.size() / 2), y.end());
        median_ = y.empty() ? 0.0 : y[y.size() / 2];
    }

    ParetoFront run() {
        const Expression med = Expression::constant(median_);
        front_.update({1, fitness(med, sub_), med});

        pop_.resize(static_cast<std::size_t>(cfg_.population));
        for (auto& ind : pop_) ind.expr = random_tree(1 + static_cast<int>(rng_() % std::max(3, cfg_.max_size / 3)));
        score_all(pop_, 0);

        const int batch = std::max(1, cfg_.population / 10);
        std::size_t cursor = 0;
        for (int gen = 1; gen <= cfg_.generations; ++gen) {
            for (int done = 0; done < cfg_.population; done += batch) {
                const int cnt = std::min(batch, cfg_.population - done);
                std::vector<Individual> kids(static_cast<std::size_t>(cnt));
                for (auto& k : kids) k.expr = make_child();
                score_all(kids, static_cast<std::uint64_t>(gen) * 1000003u + static_cast<std::uint64_t>(done));
                for (auto& k : kids) {
                    pop_[cursor] = std::move(k);
                    cursor = (cursor + 1) % pop_.size();
                }
            }
            if (cfg_.hof_every > 0 && gen % cfg_.hof_every == 0) {
                auto hof = front_.entries();
                std::vector<Individual> polished(hof.size());
                parallel_for(hof.size(), [&](std::size_t i) {
                    ConstantFitOptions o;
                    o.restarts = 1;
                    o.max_evals = 300;
                    o.seed = mix_seed(cfg_.seed, 3, static_cast<std::uint64_t>(gen) * 1000u + i);
                    polished[i].expr = fit_constants(hof[i].expr, sub_, o);
                    polished[i].mae = fitness(polished[i].expr, sub_);
                    polished[i].complexity = polished[i].expr.complexity();
                });
                for (auto& p : polished) {
                    front_.update({p.complexity, p.mae, p.expr});
                    pop_[cursor] = std::move(p);
                    cursor = (cursor + 1) % pop_.size();
                }
            }
        }
        return finalize();
    }

private:
    ParetoFront finalize() {
        auto entries = front_.entries();
        std::vector<FrontEntry> refit(entries.size());
        parallel_for(entries.size(), [&](std::size_t i) {
            ConstantFitOptions o;
            o.seed = mix_seed(cfg_.seed, 5, i);
            o.max_evals = 2000;
            const Expression e = fit_constants(entries[i].expr, full_, o);
            refit[i] = {e.complexity(), fitness(e, full_), e};
        });
        ParetoFront out;
        double scale = 0.0;
        const Expression med = Expression::constant(median_);
        scale = fitness(med, full_);
        out.mae_floor = 1e-12 * std::max(scale, 1e-300);
        out.update({1, scale, med});
        for (const auto& r : refit) out.update(r);
        return out;
    }

    void score_all(std::vector<Individual>& inds, std::uint64_t salt) {
        parallel_for(inds.size(), [&](std::size_t i) {
            auto& ind = inds[i];
            std::mt19937_64 r(mix_seed(cfg_.seed, salt, i));
            if (cfg_.p_optimize > 0 && std::uniform_real_distribution<double>(0, 1)(r) < cfg_.p_optimize) {
                ConstantFitOptions o;
                o.restarts = 0;
                o.max_evals = 200;
                ind.expr = fit_constants(ind.expr, sub_, o);
            }
            ind.mae = fitness(ind.expr, sub_);
            ind.complexity = ind.expr.complexity();
        });
        for (const auto& ind : inds) front_.update({ind.complexity, ind.mae, ind.expr});
    }

    double adjusted(const Individual& ind) const { return ind.mae * (1.0 + 0.01 * ind.complexity); }

    const Individual& tournament() {
        const Individual* best = nullptr;
        for (int k = 0; k < cfg_.tournament; ++k) {
            const auto& c = pop_[rng_() % pop_.size()];
            if (!best || adjusted(c) < adjusted(*best)) best = &c;
        }
        return *best;
    }

    double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(rng_); }
    double normal(double sd) { return std::normal_distribution<double>(0.0, sd)(rng_); }

    Expression random_leaf() {
        if (full_.x.cols() > 0 && uniform() < 0.6)
            return Expression::variable(static_cast<int>(rng_() % static_cast<std::uint64_t>(full_.x.cols())));
        return Expression::constant(normal(2.0));
    }

    Op pick(const std::vector<Op>& v) { return v[rng_() % v.size()]; }

    Expression random_tree(int budget) {
        if (budget <= 1 || (unary_.empty() && binary_.empty() && ternary_.empty())) return random_leaf();
        const double u = uniform();
        if (!unary_.empty() && (u < 0.2 || (binary_.empty() && ternary_.empty())))
            return Expression::unary(pick(unary_), random_tree(budget - 1));
        if (!ternary_.empty() && budget >= 4 && u > 0.9) {
            const int rest = budget - 1;
            return Expression::if_then_else(random_tree(rest / 3), random_tree(rest / 3), random_tree(rest - 2 * (rest / 3)));
        }
        if (binary_.empty()) return random_leaf();
        const int left = 1 + static_cast<int>(rng_() % static_cast<std::uint64_t>(std::max(1, budget - 2)));
        return Expression::binary(pick(binary_), random_tree(left), random_tree(std::max(1, budget - 1 - left)));
    }

    Expression mutate_swap(const Expression& e) {
        const int i = static_cast<int>(rng_() % static_cast<std::uint64_t>(e.size()));
        Expression out = e;
        Node& n = out.nodes()[i];
        switch (arity(n.op)) {
            case 0: return out.replaced(i, random_leaf());
            case 1:
                if (!unary_.empty()) n.op = pick(unary_);
                return out;
            case 2:
                if (!binary_.empty()) n.op = pick(binary_);
                return out;
            default: {
                // swap the IF branches
                const int c_end = out.subtree_end(i + 1);
                const Expression a = out.subtree(c_end);
                const Expression b = out.subtree(out.subtree_end(c_end));
                return out.replaced(i, Expression::if_then_else(out.subtree(i + 1), b, a));
            }
        }
    }

    Expression mutate_insert(const Expression& e) {
        const int i = static_cast<int>(rng_() % static_cast<std::uint64_t>(e.size()));
        const Expression s = e.subtree(i);
        const int kind = static_cast<int>(rng_() % 3);
        if (kind == 0 && !unary_.empty()) return e.replaced(i, Expression::unary(pick(unary_), s));
        if (kind == 1 && !ternary_.empty()) {
            Op cmp = Op::Gt;
            for (Op op : binary_)
                if (op == Op::Gt || op == Op::Lt) cmp = op;
            const Expression cond = Expression::binary(cmp, random_leaf(), random_leaf());
            return uniform() < 0.5 ? e.replaced(i, Expression::if_then_else(cond, s, random_tree(2)))
                                   : e.replaced(i, Expression::if_then_else(cond, random_tree(2), s));
        }
        if (binary_.empty()) return e.replaced(i, random_tree(3));
        const Expression other = random_tree(1 + static_cast<int>(rng_() % 3));
        return uniform() < 0.5 ? e.replaced(i, Expression::binary(pick(binary_), s, other))
                               : e.replaced(i, Expression::binary(pick(binary_), other, s));
    }

    Expression mutate_to_constant(const Expression& e) {
        const int i = static_cast<int>(rng_() % static_cast<std::uint64_t>(e.size()));
        const Eigen::ArrayXd v = evaluate(e.subtree(i), sub_.x.topRows(std::min<Eigen::Index>(32, sub_.rows())));
        const double m = v.size() ? v.mean() : 1.0;
        return e.replaced(i, Expression::constant(std::isfinite(m) ? m : 1.0));
    }

    Expression mutate_perturb(const Expression& e) {
        std::vector<int> consts;
        for (int i = 0; i < e.size(); ++i)
            if (e.nodes()[i].op == Op::Const) consts.push_back(i);
        if (consts.empty()) return mutate_swap(e);
        Expression out = e;
        out.nodes()[consts[rng_() % consts.size()]].value *= std::exp(normal(0.5));
        return out;
    }

    Expression crossover(const Expression& e) {
        const Expression& other = tournament().expr;
        const int i = static_cast<int>(rng_() % static_cast<std::uint64_t>(e.size()));
        const int j = static_cast<int>(rng_() % static_cast<std::uint64_t>(other.size()));
        return e.replaced(i, other.subtree(j));
    }

    Expression make_child() {
        const Expression& parent = tournament().expr;
        for (int attempt = 0; attempt < 10; ++attempt) {
            double u = uniform();
            Expression child;
            if ((u -= cfg_.p_swap) < 0) child = mutate_swap(parent);
            else if ((u -= cfg_.p_insert) < 0) child = mutate_insert(parent);
            else if ((u -= cfg_.p_to_constant) < 0) child = mutate_to_constant(parent);
            else if ((u -= cfg_.p_perturb) < 0) child = mutate_perturb(parent);
            else if ((u -= cfg_.p_crossover) < 0) child = crossover(parent);
            else {
                const int i = static_cast<int>(rng_() % static_cast<std::uint64_t>(parent.size()));
                child = parent.replaced(i, random_tree(1 + static_cast<int>(rng_() % 5)));
            }
            if (child.size() <= cfg_.max_size) return child;
        }
        return parent;
    }

    const Data& full_;
    Data sub_;
    GpConfig cfg_;
    std::mt19937_64 rng_;
    std::vector<Op> unary_, binary_, ternary_;
    std::vector<Individual> pop_;
    ParetoFront front_;
    double median_ = 0.0;
};

}  // namespace

ParetoFront evolve(const Data& data, const GpConfig& config) {
    config.validate();
    if (data.rows() == 0) throw InvalidArgument("symbolic regression needs at least one row");
    return Evolver(data, config).run();
}

}  // namespace symdistill::sr
