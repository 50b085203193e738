#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "symdistill/common.hpp"

// Reverse-mode differentiation over dense row-major matrices.
//
// Values flow through `Var` handles that own a node in an implicit graph.
// Every backward rule is written with the same taped operations, so a
// gradient computed with `create_graph = true` is itself differentiable
// (reverse-over-reverse).
namespace symdistill::ad {

SYMDISTILL_ERROR(TapeExhausted);
SYMDISTILL_ERROR(NonScalarOutput);

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;
using IndexList = std::shared_ptr<const std::vector<int>>;

struct Node;

class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    const Matrix& value() const;
    Index rows() const { return value().rows(); }
    Index cols() const { return value().cols(); }
    bool requires_grad() const;
    bool defined() const { return static_cast<bool>(node_); }
    /// Value of a 1x1 result.
    double item() const;

    const std::shared_ptr<Node>& node() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

using BackwardFn = std::function<std::vector<Var>(const Var& self, const Var& grad)>;

struct Node {
    Matrix value;
    bool requires_grad = false;
    std::uint64_t id = 0;
    std::vector<Var> parents;
    BackwardFn backward;
};

/// Disables graph recording in its scope (thread-local).
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

bool grad_enabled();

Var constant(Matrix value);
Var parameter(Matrix value);
Var scalar(double value);

Var matmul(const Var& a, const Var& b);     // a b
Var matmul_nt(const Var& a, const Var& b);  // a b^T
Var matmul_tn(const Var& a, const Var& b);  // a^T b
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var mul_const(const Var& a, const Matrix& m);
Var add_row(const Var& a, const Var& row);  // broadcast a 1xC row over a
Var sum_rows(const Var& a);                 // column sums, 1xC
Var broadcast_rows(const Var& row, Index rows);
Var sum(const Var& a);                      // 1x1
Var broadcast(const Var& s, Index rows, Index cols);
Var relu(const Var& a);
Var sigmoid(const Var& a);
Var softplus(const Var& a);
Var abs(const Var& a);
Var exp(const Var& a);
Var square(const Var& a);
Var pow(const Var& a, double p);            // elementwise a^p
Var sum_cols(const Var& a);                 // row sums, Rx1
Var gather_rows(const Var& a, IndexList index);
Var scatter_add_rows(const Var& a, IndexList index, Index rows);
Var concat_cols(const Var& a, const Var& b);
Var slice_cols(const Var& a, Index start, Index count);
Var pad_cols(const Var& a, Index start, Index total);
Var mean(const Var& a);

IndexList make_index(std::vector<int> idx);

/// Tracks one backward pass. A first-order pass (create_graph = false)
/// consumes the tape; calling gradient again throws TapeExhausted.
/// A pass with create_graph = true keeps the graph alive so the returned
/// gradients can be differentiated again.
class GradTape {
public:
    std::vector<Var> gradient(const Var& output, std::span<const Var> wrt,
                              bool create_graph = false);
    bool exhausted() const { return exhausted_; }

private:
    bool exhausted_ = false;
};

}  // namespace symdistill::ad
