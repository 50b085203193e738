#include "symdistill/autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <unordered_map>

namespace symdistill::ad {

namespace {

thread_local bool t_grad_enabled = true;
std::atomic<std::uint64_t> g_next_id{1};

Var make_leaf(Matrix value, bool requires_grad) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    node->requires_grad = requires_grad;
    node->id = g_next_id.fetch_add(1);
    return Var(std::move(node));
}

Var make_op(Matrix value, std::vector<Var> parents, BackwardFn backward) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    node->id = g_next_id.fetch_add(1);
    if (t_grad_enabled) {
        for (const auto& p : parents)
            if (p.requires_grad()) node->requires_grad = true;
    }
    if (node->requires_grad) {
        node->parents = std::move(parents);
        node->backward = std::move(backward);
    }
    return Var(std::move(node));
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw ShapeMismatch(std::string(op) + ": operand shapes differ");
}

}  // namespace

const Matrix& Var::value() const { return node_->value; }
bool Var::requires_grad() const { return node_ && node_->requires_grad; }

double Var::item() const {
    if (rows() != 1 || cols() != 1) throw NonScalarOutput("item() on a non-scalar value");
    return value()(0, 0);
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }
bool grad_enabled() { return t_grad_enabled; }

Var constant(Matrix value) { return make_leaf(std::move(value), false); }
Var parameter(Matrix value) { return make_leaf(std::move(value), true); }
Var scalar(double value) { return constant(Matrix::Constant(1, 1, value)); }

IndexList make_index(std::vector<int> idx) {
    return std::make_shared<const std::vector<int>>(std::move(idx));
}

Var matmul(const Var& a, const Var& b) {
    if (a.cols() != b.rows()) throw ShapeMismatch("matmul: inner dimensions differ");
    Matrix v = a.value() * b.value();
    return make_op(std::move(v), {a, b}, [](const Var& self, const Var& g) {
        const auto& p = self.node()->parents;
        return std::vector<Var>{p[0].requires_grad() ? matmul_nt(g, p[1]) : Var(),
                                p[1].requires_grad() ? matmul_tn(p[0], g) : Var()};
    });
}

Var matmul_nt(const Var& a, const Var& b) {
    if (a.cols() != b.cols()) throw ShapeMismatch("matmul_nt: inner dimensions differ");
    Matrix v = a.value() * b.value().transpose();
    return make_op(std::move(v), {a, b}, [](const Var& self, const Var& g) {
        const auto& p = self.node()->parents;
        return std::vector<Var>{p[0].requires_grad() ? matmul(g, p[1]) : Var(),
                                p[1].requires_grad() ? matmul_tn(g, p[0]) : Var()};
    });
}

Var matmul_tn(const Var& a, const Var& b) {
    if (a.rows() != b.rows()) throw ShapeMismatch("matmul_tn: inner dimensions differ");
    Matrix v = a.value().transpose() * b.value();
    return make_op(std::move(v), {a, b}, [](const Var& self, const Var& g) {
        const auto& p = self.node()->parents;
        return std::vector<Var>{p[0].requires_grad() ? matmul_nt(p[1], g) : Var(),
                                p[1].requires_grad() ? matmul(p[0], g) : Var()};
    });
}

Var add(const Var& a, const Var& b) {
    require_same_shape(a, b, "add");
    return make_op(a.value() + b.value(), {a, b},
                   [](const Var&, const Var& g) { return std::vector<Var>{g, g}; });
}

Var sub(const Var& a, const Var& b) {
    require_same_shape(a, b, "sub");
    return make_op(a.value() - b.value(), {a, b}, [](const Var&, const Var& g) {
        return std::vector<Var>{g, scale(g, -1.0)};
    });
}

Var mul(const Var& a, const Var& b) {
    require_same_shape(a, b, "mul");
    Matrix v = a.value().cwiseProduct(b.value());
    return make_op(std::move(v), {a, b}, [](const Var& self, const Var& g) {
        const auto& p = self.node()->parents;
        return std::vector<Var>{p[0].requires_grad() ? mul(g, p[1]) : Var(),
                                p[1].requires_grad() ? mul(g, p[0]) : Var()};
    });
}

Var scale(const Var& a, double s) {
    return make_op(a.value() * s, {a}, [s](const Var&, const Var& g) {
        return std::vector<Var>{scale(g, s)};
    });
}

Var mul_const(const Var& a, const Matrix& m) {
    if (a.rows() != m.rows() || a.cols() != m.cols())
        throw ShapeMismatch("mul_const: operand shapes differ");
    auto shared = std::make_shared<const Matrix>(m);
    return make_op(a.value().cwiseProduct(m), {a}, [shared](const Var&, const Var& g) {
        return std::vector<Var>{mul_const(g, *shared)};
    });
}

Var add_row(const Var& a, const Var& row) {
    if (row.rows() != 1 || row.cols() != a.cols())
        throw ShapeMismatch("add_row: row must be 1 x cols");
    Matrix v = a.value().rowwise() + row.value().row(0);
    return make_op(std::move(v), {a, row}, [](const Var&, const Var& g) {
        return std::vector<Var>{g, sum_rows(g)};
    });
}

Var sum_rows(const Var& a) {
    Matrix v = a.value().colwise().sum();
    const Index rows = a.rows();
    return make_op(std::move(v), {a}, [rows](const Var&, const Var& g) {
        return std::vector<Var>{broadcast_rows(g, rows)};
    });
}

Var broadcast_rows(const Var& row, Index rows) {
    if (row.rows() != 1) throw ShapeMismatch("broadcast_rows: expects a single row");
    Matrix v = row.value().replicate(rows, 1);
    return make_op(std::move(v), {row},
                   [](const Var&, const Var& g) { return std::vector<Var>{sum_rows(g)}; });
}

Var sum(const Var& a) {
    const Index r = a.rows(), c = a.cols();
    return make_op(Matrix::Constant(1, 1, a.value().sum()), {a}, [r, c](const Var&, const Var& g) {
        return std::vector<Var>{broadcast(g, r, c)};
    });
}

Var broadcast(const Var& s, Index rows, Index cols) {
    const double x = s.item();
    return make_op(Matrix::Constant(rows, cols, x), {s},
                   [](const Var&, const Var& g) { return std::vector<Var>{sum(g)}; });
}

Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Var relu(const Var& a) {
    Matrix v = a.value().cwiseMax(0.0);
    return make_op(std::move(v), {a}, [](const Var& self, const Var& g) {
        const Matrix mask = (self.node()->parents[0].value().array() > 0.0).cast<double>().matrix();
        return std::vector<Var>{mul_const(g, mask)};
    });
}

Var sigmoid(const Var& a) {
    Matrix v = a.value().unaryExpr([](double x) {
        return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    });
    return make_op(std::move(v), {a}, [](const Var& self, const Var& g) {
        const Var one_minus = sub(constant(Matrix::Ones(self.rows(), self.cols())), self);
        return std::vector<Var>{mul(g, mul(self, one_minus))};
    });
}

Var softplus(const Var& a) {
    Matrix v = a.value().unaryExpr([](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); });
    return make_op(std::move(v), {a}, [](const Var& self, const Var& g) {
        return std::vector<Var>{mul(g, sigmoid(self.node()->parents[0]))};
    });
}

Var abs(const Var& a) {
    return make_op(a.value().cwiseAbs(), {a}, [](const Var& self, const Var& g) {
        const Matrix sign = self.node()->parents[0].value().array().sign().matrix();
        return std::vector<Var>{mul_const(g, sign)};
    });
}

Var exp(const Var& a) {
    Matrix v = a.value().array().exp().matrix();
    return make_op(std::move(v), {a},
                   [](const Var& self, const Var& g) { return std::vector<Var>{mul(g, self)}; });
}

Var square(const Var& a) { return mul(a, a); }

Var pow(const Var& a, double p) {
    Matrix v = a.value().array().pow(p).matrix();
    return make_op(std::move(v), {a}, [p](const Var& self, const Var& g) {
        const Var& x = self.node()->parents[0];
        return std::vector<Var>{mul(g, scale(pow(x, p - 1.0), p))};
    });
}

Var sum_cols(const Var& a) {
    return matmul(a, constant(Matrix::Ones(a.cols(), 1)));
}

Var gather_rows(const Var& a, IndexList index) {
    const auto& idx = *index;
    Matrix v(static_cast<Index>(idx.size()), a.cols());
    for (std::size_t k = 0; k < idx.size(); ++k) {
        if (idx[k] < 0 || idx[k] >= a.rows()) throw ShapeMismatch("gather_rows: index out of range");
        v.row(static_cast<Index>(k)) = a.value().row(idx[k]);
    }
    const Index rows = a.rows();
    return make_op(std::move(v), {a}, [index, rows](const Var&, const Var& g) {
        return std::vector<Var>{scatter_add_rows(g, index, rows)};
    });
}

Var scatter_add_rows(const Var& a, IndexList index, Index rows) {
    const auto& idx = *index;
    if (static_cast<Index>(idx.size()) != a.rows())
        throw ShapeMismatch("scatter_add_rows: index length differs from row count");
    Matrix v = Matrix::Zero(rows, a.cols());
    for (std::size_t k = 0; k < idx.size(); ++k) {
        if (idx[k] < 0 || idx[k] >= rows) throw ShapeMismatch("scatter_add_rows: index out of range");
        v.row(idx[k]) += a.value().row(static_cast<Index>(k));
    }
    return make_op(std::move(v), {a}, [index](const Var&, const Var& g) {
        return std::vector<Var>{gather_rows(g, index)};
    });
}

Var concat_cols(const Var& a, const Var& b) {
    if (a.rows() != b.rows()) throw ShapeMismatch("concat_cols: row counts differ");
    Matrix v(a.rows(), a.cols() + b.cols());
    v.leftCols(a.cols()) = a.value();
    v.rightCols(b.cols()) = b.value();
    const Index ca = a.cols(), cb = b.cols();
    return make_op(std::move(v), {a, b}, [ca, cb](const Var&, const Var& g) {
        return std::vector<Var>{slice_cols(g, 0, ca), slice_cols(g, ca, cb)};
    });
}

Var slice_cols(const Var& a, Index start, Index count) {
    if (start < 0 || count < 0 || start + count > a.cols())
        throw ShapeMismatch("slice_cols: range out of bounds");
    Matrix v = a.value().middleCols(start, count);
    const Index total = a.cols();
    return make_op(std::move(v), {a}, [start, total](const Var&, const Var& g) {
        return std::vector<Var>{pad_cols(g, start, total)};
    });
}

Var pad_cols(const Var& a, Index start, Index total) {
    if (start < 0 || start + a.cols() > total) throw ShapeMismatch("pad_cols: range out of bounds");
    Matrix v = Matrix::Zero(a.rows(), total);
    v.middleCols(start, a.cols()) = a.value();
    const Index count = a.cols();
    return make_op(std::move(v), {a}, [start, count](const Var&, const Var& g) {
        return std::vector<Var>{slice_cols(g, start, count)};
    });
}

std::vector<Var> GradTape::gradient(const Var& output, std::span<const Var> wrt,
                                    bool create_graph) {
    if (exhausted_) throw TapeExhausted("backward already ran on this tape");
    if (output.rows() != 1 || output.cols() != 1)
        throw NonScalarOutput("gradient requires a scalar output");
    if (!create_graph) exhausted_ = true;

    std::vector<Node*> order;
    std::unordered_map<Node*, Var> grads;
    if (output.requires_grad()) {
        std::vector<Node*> stack = {output.node().get()};
        std::unordered_map<Node*, bool> seen;
        seen[stack.back()] = true;
        while (!stack.empty()) {
            Node* n = stack.back();
            stack.pop_back();
            order.push_back(n);
            for (const auto& p : n->parents) {
                Node* pn = p.node().get();
                if (p.requires_grad() && !seen[pn]) {
                    seen[pn] = true;
                    stack.push_back(pn);
                }
            }
        }
        // Node ids increase with creation time, so descending id is a valid
        // reverse topological order.
        std::sort(order.begin(), order.end(), [](Node* a, Node* b) { return a->id > b->id; });
    }

    {
        std::unique_ptr<NoGradGuard> guard;
        if (!create_graph) guard = std::make_unique<NoGradGuard>();
        grads[output.node().get()] = scalar(1.0);
        for (Node* n : order) {
            auto it = grads.find(n);
            if (it == grads.end() || !n->backward) continue;
            const Var g = it->second;
            // Rebuild a handle to this node for rules that use their own output.
            Var self(std::shared_ptr<Node>(output.node(), n));
            const auto parent_grads = n->backward(self, g);
            for (std::size_t k = 0; k < n->parents.size(); ++k) {
                const Var& pg = parent_grads[k];
                if (!pg.defined() || !n->parents[k].requires_grad()) continue;
                Node* pn = n->parents[k].node().get();
                auto pit = grads.find(pn);
                if (pit == grads.end()) grads.emplace(pn, pg);
                else pit->second = add(pit->second, pg);
            }
        }
    }

    std::vector<Var> out;
    out.reserve(wrt.size());
    for (const auto& w : wrt) {
        auto it = grads.find(w.node().get());
        if (it == grads.end()) out.push_back(constant(Matrix::Zero(w.rows(), w.cols())));
        else out.push_back(it->second);
    }
    return out;
}

}  // namespace symdistill::ad
