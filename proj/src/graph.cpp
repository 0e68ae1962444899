#include "promptforge/graph.hpp"

#include <cmath>
#include <stdexcept>

namespace promptforge {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;
constexpr double kL2Floor = 1e-12;

// C (+)= A * B, A: m x k, B: k x n.
void mm_nn(const double* a, const double* b, double* c, int m, int k, int n, bool accum) {
    for (int i = 0; i < m; ++i) {
        double* crow = c + static_cast<size_t>(i) * n;
        if (!accum) std::fill(crow, crow + n, 0.0);
        const double* arow = a + static_cast<size_t>(i) * k;
        for (int p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            const double* brow = b + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C += A * B^T, A: m x k, B: n x k.
void mm_nt_accum(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* arow = a + static_cast<size_t>(i) * k;
        double* crow = c + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const double* brow = b + static_cast<size_t>(j) * k;
            double s = 0.0;
            for (int p = 0; p < k; ++p) s += arow[p] * brow[p];
            crow[j] += s;
        }
    }
}

// C += A^T * B, A: m x k, B: m x n, C: k x n.
void mm_tn_accum(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* arow = a + static_cast<size_t>(i) * k;
        const double* brow = b + static_cast<size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            double* crow = c + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

}  // namespace

const char* op_name(Op op) {
    switch (op) {
        case Op::kInput: return "input";
        case Op::kFrozen: return "frozen";
        case Op::kParam: return "param";
        case Op::kMatMul: return "matmul";
        case Op::kAdd: return "add";
        case Op::kMul: return "mul";
        case Op::kScale: return "scale";
        case Op::kConcat: return "concat";
        case Op::kSlice: return "slice";
        case Op::kTranspose: return "transpose";
        case Op::kRelu: return "relu";
        case Op::kGelu: return "gelu";
        case Op::kLayerNorm: return "layernorm";
        case Op::kSoftmax: return "softmax";
        case Op::kL2Normalize: return "l2_normalize";
        case Op::kExp: return "exp";
        case Op::kLog: return "log";
        case Op::kMean: return "mean";
        case Op::kSum: return "sum";
        case Op::kAbs: return "abs";
        case Op::kDetach: return "detach";
    }
    return "?";
}

Graph::Node& Graph::node(Value v) {
    if (!v.valid() || v.id >= static_cast<int>(nodes_.size())) {
        throw std::invalid_argument("Graph: invalid value handle");
    }
    return nodes_[v.id];
}

const Graph::Node& Graph::node(Value v) const {
    if (!v.valid() || v.id >= static_cast<int>(nodes_.size())) {
        throw std::invalid_argument("Graph: invalid value handle");
    }
    return nodes_[v.id];
}

const Tensor& Graph::value(Value v) const { return node_value(node(v)); }

Tensor Graph::grad_of(Value v) const {
    const Node& n = node(v);
    if (n.grad_live) return n.grad;
    return Tensor(node_value(n).shape());
}

Value Graph::push(Node n) {
    if (n.op != Op::kInput && n.op != Op::kFrozen && n.op != Op::kParam) compute(n);
    nodes_.push_back(std::move(n));
    return Value{static_cast<int>(nodes_.size()) - 1};
}

Value Graph::input(Tensor v) {
    if (v.rank() != 2) throw std::invalid_argument("Graph::input: rank-2 tensor required");
    Node n;
    n.op = Op::kInput;
    n.value = std::move(v);
    return push(std::move(n));
}

Value Graph::frozen(const Tensor& v) {
    auto it = leaf_cache_.find(&v);
    if (it != leaf_cache_.end()) return Value{it->second};
    if (v.rank() != 2) throw std::invalid_argument("Graph::frozen: rank-2 tensor required");
    Node n;
    n.op = Op::kFrozen;
    n.external = &v;
    Value out = push(std::move(n));
    leaf_cache_.emplace(&v, out.id);
    return out;
}

Value Graph::param(Param& p) {
    auto it = leaf_cache_.find(&p);
    if (it != leaf_cache_.end()) return Value{it->second};
    if (p.value.rank() != 2) throw std::invalid_argument("Graph::param: rank-2 tensor required");
    Node n;
    n.op = Op::kParam;
    n.external = &p.value;
    n.param = &p;
    n.requires_grad = p.trainable;
    Value out = push(std::move(n));
    leaf_cache_.emplace(&p, out.id);
    return out;
}

void Graph::check_same_shape(const char* op, const Tensor& a, const Tensor& b) const {
    if (!a.same_shape(b)) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape_string() +
                                    " vs " + b.shape_string());
    }
}

#define PF_UNARY(name, opkind)                        \
    Value Graph::name(Value a) {                      \
        Node n;                                       \
        n.op = opkind;                                \
        n.in[0] = a.id;                               \
        n.requires_grad = node(a).requires_grad;      \
        return push(std::move(n));                    \
    }

PF_UNARY(transpose, Op::kTranspose)
PF_UNARY(relu, Op::kRelu)
PF_UNARY(gelu, Op::kGelu)
PF_UNARY(softmax, Op::kSoftmax)
PF_UNARY(l2_normalize, Op::kL2Normalize)
PF_UNARY(exp, Op::kExp)
PF_UNARY(log, Op::kLog)
PF_UNARY(mean, Op::kMean)
PF_UNARY(sum, Op::kSum)
PF_UNARY(abs, Op::kAbs)

#undef PF_UNARY

Value Graph::layernorm(Value a, double eps) {
    Node n;
    n.op = Op::kLayerNorm;
    n.in[0] = a.id;
    n.scalar = eps;
    n.requires_grad = node(a).requires_grad;
    return push(std::move(n));
}

Value Graph::detach(Value a) {
    Node n;
    n.op = Op::kDetach;
    n.in[0] = a.id;
    n.requires_grad = false;
    return push(std::move(n));
}

Value Graph::matmul(Value a, Value b) {
    Node n;
    n.op = Op::kMatMul;
    n.in[0] = a.id;
    n.in[1] = b.id;
    n.requires_grad = node(a).requires_grad || node(b).requires_grad;
    return push(std::move(n));
}

Value Graph::add(Value a, Value b) {
    Node n;
    n.op = Op::kAdd;
    n.in[0] = a.id;
    n.in[1] = b.id;
    n.requires_grad = node(a).requires_grad || node(b).requires_grad;
    return push(std::move(n));
}

Value Graph::mul(Value a, Value b) {
    Node n;
    n.op = Op::kMul;
    n.in[0] = a.id;
    n.in[1] = b.id;
    n.requires_grad = node(a).requires_grad || node(b).requires_grad;
    return push(std::move(n));
}

Value Graph::scale(Value a, double s) {
    Node n;
    n.op = Op::kScale;
    n.in[0] = a.id;
    n.scalar = s;
    n.requires_grad = node(a).requires_grad;
    return push(std::move(n));
}

Value Graph::concat(std::span<const Value> parts, int axis) {
    if (parts.empty()) throw std::invalid_argument("concat: no operands");
    if (axis != 0 && axis != 1) throw std::invalid_argument("concat: axis must be 0 or 1");
    Node n;
    n.op = Op::kConcat;
    n.axis = axis;
    for (Value v : parts) {
        n.extra_in.push_back(v.id);
        if (node(v).requires_grad) n.requires_grad = true;
    }
    return push(std::move(n));
}

Value Graph::slice(Value a, int r0, int r1, int c0, int c1) {
    Node n;
    n.op = Op::kSlice;
    n.in[0] = a.id;
    n.span = {r0, r1, c0, c1};
    n.requires_grad = node(a).requires_grad;
    return push(std::move(n));
}

Value Graph::slice_rows(Value a, int r0, int r1) {
    return slice(a, r0, r1, 0, value(a).cols());
}

Value Graph::slice_cols(Value a, int c0, int c1) {
    return slice(a, 0, value(a).rows(), c0, c1);
}

Value Graph::add_scalar(Value a, double s) {
    return add(a, constant(Tensor::full(value(a).shape(), s)));
}

Value Graph::flatten_to_row(Value a) {
    const Tensor& t = value(a);
    if (t.rows() == 1) return a;
    std::vector<Value> parts;
    parts.reserve(t.rows());
    for (int r = 0; r < t.rows(); ++r) parts.push_back(slice_rows(a, r, r + 1));
    return cols(parts);
}

Value Graph::broadcast_row(Value row, int n) {
    const Tensor& t = value(row);
    if (t.rows() != 1) throw std::invalid_argument("broadcast_row: 1xd row required");
    if (n == 1) return row;
    return matmul(constant(Tensor::full({n, 1}, 1.0)), row);
}

Value Graph::add_rowvec(Value m, Value row) {
    return add(m, broadcast_row(row, value(m).rows()));
}

Value Graph::mul_rowvec(Value m, Value row) {
    return mul(m, broadcast_row(row, value(m).rows()));
}

Value Graph::affine(Value x, Value w, Value b) { return add_rowvec(matmul(x, w), b); }

Value Graph::dot(Value a, Value b) { return matmul(a, transpose(b)); }

Value Graph::cosine(Value a, Value b) { return dot(l2_normalize(a), l2_normalize(b)); }

void Graph::set_input(Value v, Tensor t) {
    Node& n = node(v);
    if (n.op != Op::kInput) throw std::invalid_argument("set_input: node is not an input leaf");
    check_same_shape("set_input", n.value, t);
    n.value = std::move(t);
}

void Graph::recompute() {
    for (Node& n : nodes_) {
        if (n.op == Op::kInput || n.op == Op::kFrozen || n.op == Op::kParam) continue;
        compute(n);
    }
}

void Graph::compute(Node& n) {
    auto in = [&](int slot) -> const Tensor& { return node_value(nodes_[n.in[slot]]); };
    switch (n.op) {
        case Op::kInput:
        case Op::kFrozen:
        case Op::kParam:
            return;
        case Op::kMatMul: {
            const Tensor& a = in(0);
            const Tensor& b = in(1);
            if (a.cols() != b.rows()) {
                throw std::invalid_argument(std::string("matmul: incompatible shapes ") +
                                            a.shape_string() + " x " + b.shape_string());
            }
            if (n.value.rank() != 2 || n.value.rows() != a.rows() || n.value.cols() != b.cols()) {
                n.value = Tensor({a.rows(), b.cols()});
            }
            mm_nn(a.ptr(), b.ptr(), n.value.ptr(), a.rows(), a.cols(), b.cols(), false);
            return;
        }
        case Op::kAdd: {
            const Tensor& a = in(0);
            const Tensor& b = in(1);
            check_same_shape("add", a, b);
            n.value = a;
            for (size_t i = 0; i < b.size(); ++i) n.value[i] += b[i];
            return;
        }
        case Op::kMul: {
            const Tensor& a = in(0);
            const Tensor& b = in(1);
            check_same_shape("mul", a, b);
            n.value = a;
            for (size_t i = 0; i < b.size(); ++i) n.value[i] *= b[i];
            return;
        }
        case Op::kScale: {
            n.value = in(0);
            for (double& v : n.value.data()) v *= n.scalar;
            return;
        }
        case Op::kConcat: {
            const Tensor& first = node_value(nodes_[n.extra_in[0]]);
            int rows = first.rows(), cols = first.cols();
            for (size_t i = 1; i < n.extra_in.size(); ++i) {
                const Tensor& t = node_value(nodes_[n.extra_in[i]]);
                if (n.axis == 0) {
                    if (t.cols() != cols) {
                        throw std::invalid_argument("concat: column mismatch " + t.shape_string());
                    }
                    rows += t.rows();
                } else {
                    if (t.rows() != rows) {
                        throw std::invalid_argument("concat: row mismatch " + t.shape_string());
                    }
                    cols += t.cols();
                }
            }
            n.value = Tensor({rows, cols});
            if (n.axis == 0) {
                int r = 0;
                for (int id : n.extra_in) {
                    const Tensor& t = node_value(nodes_[id]);
                    std::copy(t.ptr(), t.ptr() + t.size(), n.value.ptr() + static_cast<size_t>(r) * cols);
                    r += t.rows();
                }
            } else {
                int c = 0;
                for (int id : n.extra_in) {
                    const Tensor& t = node_value(nodes_[id]);
                    for (int r = 0; r < rows; ++r) {
                        std::copy(t.ptr() + static_cast<size_t>(r) * t.cols(),
                                  t.ptr() + static_cast<size_t>(r + 1) * t.cols(),
                                  n.value.ptr() + static_cast<size_t>(r) * cols + c);
                    }
                    c += t.cols();
                }
            }
            return;
        }
        case Op::kSlice: {
            const Tensor& a = in(0);
            auto [r0, r1, c0, c1] = n.span;
            if (r0 < 0 || c0 < 0 || r1 > a.rows() || c1 > a.cols() || r0 >= r1 || c0 >= c1) {
                throw std::invalid_argument("slice: range [" + std::to_string(r0) + "," +
                                            std::to_string(r1) + ")x[" + std::to_string(c0) + "," +
                                            std::to_string(c1) + ") out of " + a.shape_string());
            }
            n.value = Tensor({r1 - r0, c1 - c0});
            for (int r = r0; r < r1; ++r) {
                std::copy(a.ptr() + static_cast<size_t>(r) * a.cols() + c0,
                          a.ptr() + static_cast<size_t>(r) * a.cols() + c1,
                          n.value.ptr() + static_cast<size_t>(r - r0) * (c1 - c0));
            }
            return;
        }
        case Op::kTranspose: {
            const Tensor& a = in(0);
            n.value = Tensor({a.cols(), a.rows()});
            for (int r = 0; r < a.rows(); ++r) {
                for (int c = 0; c < a.cols(); ++c) n.value.at(c, r) = a.at(r, c);
            }
            return;
        }
        case Op::kRelu: {
            n.value = in(0);
            for (double& v : n.value.data()) v = v > 0.0 ? v : 0.0;
            return;
        }
        case Op::kGelu: {
            n.value = in(0);
            for (double& v : n.value.data()) v = v * 0.5 * (1.0 + std::erf(v * kInvSqrt2));
            return;
        }
        case Op::kLayerNorm: {
            const Tensor& a = in(0);
            n.value = Tensor(a.shape());
            const int rows = a.rows(), cols = a.cols();
            for (int r = 0; r < rows; ++r) {
                const double* x = a.ptr() + static_cast<size_t>(r) * cols;
                double* y = n.value.ptr() + static_cast<size_t>(r) * cols;
                double mu = 0.0;
                for (int c = 0; c < cols; ++c) mu += x[c];
                mu /= cols;
                double var = 0.0;
                for (int c = 0; c < cols; ++c) var += (x[c] - mu) * (x[c] - mu);
                var /= cols;
                const double inv = 1.0 / std::sqrt(var + n.scalar);
                for (int c = 0; c < cols; ++c) y[c] = (x[c] - mu) * inv;
            }
            return;
        }
        case Op::kSoftmax: {
            const Tensor& a = in(0);
            n.value = Tensor(a.shape());
            const int rows = a.rows(), cols = a.cols();
            for (int r = 0; r < rows; ++r) {
                const double* x = a.ptr() + static_cast<size_t>(r) * cols;
                double* y = n.value.ptr() + static_cast<size_t>(r) * cols;
                double mx = x[0];
                for (int c = 1; c < cols; ++c) mx = std::max(mx, x[c]);
                double z = 0.0;
                for (int c = 0; c < cols; ++c) {
                    y[c] = std::exp(x[c] - mx);
                    z += y[c];
                }
                for (int c = 0; c < cols; ++c) y[c] /= z;
            }
            return;
        }
        case Op::kL2Normalize: {
            const Tensor& a = in(0);
            n.value = Tensor(a.shape());
            const int rows = a.rows(), cols = a.cols();
            for (int r = 0; r < rows; ++r) {
                const double* x = a.ptr() + static_cast<size_t>(r) * cols;
                double* y = n.value.ptr() + static_cast<size_t>(r) * cols;
                double s = 0.0;
                for (int c = 0; c < cols; ++c) s += x[c] * x[c];
                const double norm = std::max(std::sqrt(s), kL2Floor);
                for (int c = 0; c < cols; ++c) y[c] = x[c] / norm;
            }
            return;
        }
        case Op::kExp: {
            n.value = in(0);
            for (double& v : n.value.data()) v = std::exp(v);
            return;
        }
        case Op::kLog: {
            n.value = in(0);
            for (double& v : n.value.data()) v = std::log(v);
            return;
        }
        case Op::kMean: {
            const Tensor& a = in(0);
            double s = 0.0;
            for (double v : a.data()) s += v;
            n.value = Tensor::scalar(s / static_cast<double>(a.size()));
            return;
        }
        case Op::kSum: {
            const Tensor& a = in(0);
            double s = 0.0;
            for (double v : a.data()) s += v;
            n.value = Tensor::scalar(s);
            return;
        }
        case Op::kAbs: {
            n.value = in(0);
            for (double& v : n.value.data()) v = std::fabs(v);
            return;
        }
        case Op::kDetach: {
            n.value = in(0);
            return;
        }
    }
}

Tensor& Graph::grad_buffer(int id) {
    Node& n = nodes_[id];
    if (!n.grad_live) {
        const Tensor& v = node_value(n);
        if (!n.grad.same_shape(v)) {
            n.grad = Tensor(v.shape());
        } else {
            n.grad.fill(0.0);
        }
        n.grad_live = true;
    }
    return n.grad;
}

void Graph::backward(Value loss) {
    const Node& ln = node(loss);
    if (node_value(ln).size() != 1) {
        throw std::invalid_argument("backward: loss must be scalar, got " +
                                    node_value(ln).shape_string());
    }
    for (Node& n : nodes_) n.grad_live = false;
    if (!ln.requires_grad) return;  // nothing trainable upstream
    grad_buffer(loss.id)[0] = 1.0;
    for (int id = loss.id; id >= 0; --id) {
        Node& n = nodes_[id];
        if (!n.grad_live || !n.requires_grad) continue;
        backprop(n);
    }
    for (Node& n : nodes_) {
        if (n.op == Op::kParam && n.grad_live && n.param->trainable) {
            for (size_t i = 0; i < n.grad.size(); ++i) n.param->grad[i] += n.grad[i];
        }
    }
}

void Graph::backprop(Node& n) {
    auto in_val = [&](int slot) -> const Tensor& { return node_value(nodes_[n.in[slot]]); };
    auto wants = [&](int id) { return nodes_[id].requires_grad; };
    const Tensor& g = n.grad;
    switch (n.op) {
        case Op::kInput:
        case Op::kFrozen:
        case Op::kParam:
        case Op::kDetach:
            return;
        case Op::kMatMul: {
            const Tensor& a = in_val(0);
            const Tensor& b = in_val(1);
            if (wants(n.in[0])) {
                mm_nt_accum(g.ptr(), b.ptr(), grad_buffer(n.in[0]).ptr(), a.rows(), b.cols(),
                            a.cols());
            }
            if (wants(n.in[1])) {
                mm_tn_accum(a.ptr(), g.ptr(), grad_buffer(n.in[1]).ptr(), a.rows(), a.cols(),
                            b.cols());
            }
            return;
        }
        case Op::kAdd: {
            for (int slot = 0; slot < 2; ++slot) {
                if (!wants(n.in[slot])) continue;
                Tensor& gi = grad_buffer(n.in[slot]);
                for (size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
            }
            return;
        }
        case Op::kMul: {
            if (wants(n.in[0])) {
                const Tensor& b = in_val(1);
                Tensor& gi = grad_buffer(n.in[0]);
                for (size_t i = 0; i < g.size(); ++i) gi[i] += g[i] * b[i];
            }
            if (wants(n.in[1])) {
                const Tensor& a = in_val(0);
                Tensor& gi = grad_buffer(n.in[1]);
                for (size_t i = 0; i < g.size(); ++i) gi[i] += g[i] * a[i];
            }
            return;
        }
        case Op::kScale: {
            if (!wants(n.in[0])) return;
            Tensor& gi = grad_buffer(n.in[0]);
            for (size_t i = 0; i < g.size(); ++i) gi[i] += g[i] * n.scalar;
            return;
        }
        case Op::kConcat: {
            int off = 0;
            const int cols = n.value.cols();
            for (int id : n.extra_in) {
                const Tensor& t = node_value(nodes_[id]);
                if (wants(id)) {
                    Tensor& gi = grad_buffer(id);
                    if (n.axis == 0) {
                        for (size_t i = 0; i < t.size(); ++i) {
                            gi[i] += g[static_cast<size_t>(off) * cols + i];
                        }
                    } else {
                        for (int r = 0; r < t.rows(); ++r) {
                            for (int c = 0; c < t.cols(); ++c) {
                                gi.at(r, c) += g.at(r, off + c);
                            }
                        }
                    }
                }
                off += (n.axis == 0) ? t.rows() : t.cols();
            }
            return;
        }
        case Op::kSlice: {
            if (!wants(n.in[0])) return;
            Tensor& gi = grad_buffer(n.in[0]);
            auto [r0, r1, c0, c1] = n.span;
            for (int r = r0; r < r1; ++r) {
                for (int c = c0; c < c1; ++c) gi.at(r, c) += g.at(r - r0, c - c0);
            }
            return;
        }
        case Op::kTranspose: {
            if (!wants(n.in[0])) return;
            Tensor& gi = grad_buffer(n.in[0]);
            for (int r = 0; r < g.rows(); ++r) {
                for (int c = 0; c < g.cols(); ++c) gi.at(c, r) += g.at(r, c);
            }
            return;
        }
        case Op::kRelu: {
            if (!wants(n.in[0])) return;
            const Tensor& x = in_val(0);
            Tensor& gi = grad_buffer(n.in[0]);
            for (size_t i = 0; i < g.size(); ++i) {
                if (x[i] > 0.0) gi[i] += g[i];
            }
            return;
        }
        case Op::kGelu: {
            if (!wants(n.in[0])) return;
            const Tensor& x = in_val(0);
            Tensor& gi = grad_buffer(n.in[0]);
            for (size_t i = 0; i < g.size(); ++i) {
                const double phi = 0.5 * (1.0 + std::erf(x[i] * kInvSqrt2));
                const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x[i] * x[i]);
                gi[i] += g[i] * (phi + x[i] * pdf);
            }
            return;
        }
        case Op::kLayerNorm: {
            if (!wants(n.in[0])) return;
            const Tensor& x = in_val(0);
            Tensor& gi = grad_buffer(n.in[0]);
            const int rows = x.rows(), cols = x.cols();
            for (int r = 0; r < rows; ++r) {
                const double* xr = x.ptr() + static_cast<size_t>(r) * cols;
                const double* yr = n.value.ptr() + static_cast<size_t>(r) * cols;
                const double* gr = g.ptr() + static_cast<size_t>(r) * cols;
                double* gir = gi.ptr() + static_cast<size_t>(r) * cols;
                double mu = 0.0;
                for (int c = 0; c < cols; ++c) mu += xr[c];
                mu /= cols;
                double var = 0.0;
                for (int c = 0; c < cols; ++c) var += (xr[c] - mu) * (xr[c] - mu);
                var /= cols;
                const double inv = 1.0 / std::sqrt(var + n.scalar);
                double gmean = 0.0, gymean = 0.0;
                for (int c = 0; c < cols; ++c) {
                    gmean += gr[c];
                    gymean += gr[c] * yr[c];
                }
                gmean /= cols;
                gymean /= cols;
                for (int c = 0; c < cols; ++c) {
                    gir[c] += inv * (gr[c] - gmean - yr[c] * gymean);
                }
            }
            return;
        }
        case Op::kSoftmax: {
            if (!wants(n.in[0])) return;
            Tensor& gi = grad_buffer(n.in[0]);
            const int rows = n.value.rows(), cols = n.value.cols();
            for (int r = 0; r < rows; ++r) {
                const double* yr = n.value.ptr() + static_cast<size_t>(r) * cols;
                const double* gr = g.ptr() + static_cast<size_t>(r) * cols;
                double* gir = gi.ptr() + static_cast<size_t>(r) * cols;
                double gy = 0.0;
                for (int c = 0; c < cols; ++c) gy += gr[c] * yr[c];
                for (int c = 0; c < cols; ++c) gir[c] += yr[c] * (gr[c] - gy);
            }
            return;
        }
        case Op::kL2Normalize: {
            if (!wants(n.in[0])) return;
            const Tensor& x = in_val(0);
            Tensor& gi = grad_buffer(n.in[0]);
            const int rows = x.rows(), cols = x.cols();
            for (int r = 0; r < rows; ++r) {
                const double* xr = x.ptr() + static_cast<size_t>(r) * cols;
                const double* yr = n.value.ptr() + static_cast<size_t>(r) * cols;
                const double* gr = g.ptr() + static_cast<size_t>(r) * cols;
                double* gir = gi.ptr() + static_cast<size_t>(r) * cols;
                double s = 0.0;
                for (int c = 0; c < cols; ++c) s += xr[c] * xr[c];
                const double norm = std::sqrt(s);
                if (norm > kL2Floor) {
                    double gy = 0.0;
                    for (int c = 0; c < cols; ++c) gy += gr[c] * yr[c];
                    for (int c = 0; c < cols; ++c) gir[c] += (gr[c] - yr[c] * gy) / norm;
                } else {
                    for (int c = 0; c < cols; ++c) gir[c] += gr[c] / kL2Floor;
                }
            }
            return;
        }
        case Op::kExp: {
            if (!wants(n.in[0])) return;
            Tensor& gi = grad_buffer(n.in[0]);
            for (size_t i = 0; i < g.size(); ++i) gi[i] += g[i] * n.value[i];
            return;
        }
        case Op::kLog: {
            if (!wants(n.in[0])) return;
            const Tensor& x = in_val(0);
            Tensor& gi = grad_buffer(n.in[0]);
            for (size_t i = 0; i < g.size(); ++i) gi[i] += g[i] / x[i];
            return;
        }
        case Op::kMean: {
            if (!wants(n.in[0])) return;
            Tensor& gi = grad_buffer(n.in[0]);
            const double gv = g[0] / static_cast<double>(gi.size());
            for (double& v : gi.data()) v += gv;
            return;
        }
        case Op::kSum: {
            if (!wants(n.in[0])) return;
            Tensor& gi = grad_buffer(n.in[0]);
            const double gv = g[0];
            for (double& v : gi.data()) v += gv;
            return;
        }
        case Op::kAbs: {
            if (!wants(n.in[0])) return;
            const Tensor& x = in_val(0);
            Tensor& gi = grad_buffer(n.in[0]);
            for (size_t i = 0; i < g.size(); ++i) {
                if (x[i] > 0.0) {
                    gi[i] += g[i];
                } else if (x[i] < 0.0) {
                    gi[i] -= g[i];
                }
            }
            return;
        }
    }
}

}  // namespace promptforge
