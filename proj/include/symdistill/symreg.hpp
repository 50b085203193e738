#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "symdistill/common.hpp"

namespace symdistill::sr {

SYMDISTILL_ERROR(UnboundVariable);
SYMDISTILL_ERROR(BudgetZero);
SYMDISTILL_ERROR(InsufficientFront);
SYMDISTILL_ERROR(ParseError);

/// Cos is an opt-in extension used by the factorization demo; the default
/// operator set is the paper's.
enum class Op : std::uint8_t { Const, Var, Add, Sub, Mul, Div, Gt, Lt, Pow, Exp, Log, If, Cos };

int arity(Op op);
/// 1 for leaves and {+,-,*,/,>,<}; 3 for {pow, exp, log, IF, cos}.
int op_complexity(Op op);
std::string_view op_name(Op op);
/// Parses the CLI operator list ("+,-,*,/,pow,exp,log,if,gt,lt").
std::vector<Op> parse_ops(std::string_view list);
std::vector<Op> default_ops();

struct Node {
    Op op = Op::Const;
    int var = -1;
    double value = 0.0;
    bool operator==(const Node&) const = default;
};

/// Expression tree stored in prefix order.
class Expression {
public:
    Expression() = default;
    explicit Expression(std::vector<Node> nodes);

    static Expression constant(double v);
    static Expression variable(int index);
    static Expression unary(Op op, const Expression& a);
    static Expression binary(Op op, const Expression& a, const Expression& b);
    static Expression if_then_else(const Expression& c, const Expression& a, const Expression& b);

    const std::vector<Node>& nodes() const { return nodes_; }
    std::vector<Node>& nodes() { return nodes_; }
    int size() const { return static_cast<int>(nodes_.size()); }
    bool empty() const { return nodes_.empty(); }
    /// One past the last node of the subtree rooted at i.
    int subtree_end(int i) const;
    Expression subtree(int i) const;
    Expression replaced(int i, const Expression& with) const;

    int complexity() const;
    std::vector<double> constants() const;
    void set_constants(std::span<const double> values);
    bool uses_op(Op op) const;

    std::string to_string(std::span<const std::string> names) const;
    bool operator==(const Expression&) const = default;

private:
    std::vector<Node> nodes_;
};

/// Infix parser for the printed form (plus ^ for pow and unary minus).
Expression parse(std::string_view text, std::span<const std::string> names);

/// Column-major table of named inputs and one target.
struct Data {
    std::vector<std::string> names;
    Eigen::MatrixXd x;  // rows x variables
    Eigen::VectorXd y;

    Eigen::Index rows() const { return x.rows(); }
    Data subset(std::span<const int> rows) const;
    int index_of(std::string_view name) const;
};

/// Reads a numeric CSV with a header; `target` names the target column.
Data read_csv(const std::filesystem::path& path, std::string_view target);

double eval_expr(const Expression& e, std::span<const double> row);
double eval_expr(const Expression& e, std::span<const std::string> names, const std::map<std::string, double>& row);
Eigen::ArrayXd evaluate(const Expression& e, const Eigen::MatrixXd& x);

/// Mean |e(row) - y|; +inf if any prediction is non-finite.
double fitness(const Expression& e, const Data& data);

struct ConstantFitOptions {
    int restarts = 3;
    int max_evals = 1000;
    std::uint64_t seed = 0;
};

/// Nelder-Mead on MAE from the current constants plus random restarts;
/// never returns a worse expression.
Expression fit_constants(const Expression& e, const Data& data, const ConstantFitOptions& options = {});

struct GpConfig {
    int population = 1000;
    int max_size = 30;
    int tournament = 10;
    double p_swap = 0.3;
    double p_insert = 0.2;
    double p_to_constant = 0.1;
    double p_perturb = 0.3;
    double p_crossover = 0.1;
    int hof_every = 50;
    int generations = 200;
    std::uint64_t seed = 0;
    std::vector<Op> ops = default_ops();
    /// Rows used for fitness during evolution (0 = all).
    int fit_rows = 1000;
    /// Probability that a new individual gets a short constant fit.
    double p_optimize = 0.02;
    void validate() const;
};

struct FrontEntry {
    int complexity = 0;
    double mae = 0.0;
    Expression expr;
};

class ParetoFront {
public:
    /// Inserts if best at its complexity; then drops dominated entries.
    bool update(const FrontEntry& entry);
    std::vector<FrontEntry> entries() const;
    std::size_t size() const { return by_complexity_.size(); }
    bool empty() const { return by_complexity_.empty(); }
    const FrontEntry* best() const;
    /// Lower bound applied to MAE values before taking logs in selection.
    double mae_floor = 1e-12;

private:
    void compact();
    std::map<int, FrontEntry> by_complexity_;
};

ParetoFront evolve(const Data& data, const GpConfig& config);

/// Index of the entry maximizing -dlog(MAE)/dcomplexity against its
/// predecessor; ties go to the lower complexity.
std::size_t select_index(std::span<const std::pair<int, double>> front, double mae_floor = 0.0);
FrontEntry select_model(const ParetoFront& front);

nlohmann::json front_to_json(const ParetoFront& front, std::span<const std::string> names);

}  // namespace symdistill::sr
