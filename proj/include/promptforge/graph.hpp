#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "promptforge/tensor.hpp"

namespace promptforge {

// A trainable (or frozen) parameter living outside any graph. Gradients
// accumulate into `grad` on backward; optimizers read and zero it.
struct Param {
    std::string name;
    Tensor value;
    Tensor grad;
    bool trainable = true;
};

inline Param make_param(std::string name, Tensor value, bool trainable = true) {
    Param p;
    p.name = std::move(name);
    p.grad = Tensor(value.shape());
    p.value = std::move(value);
    p.trainable = trainable;
    return p;
}

enum class Op : uint8_t {
    kInput,
    kFrozen,
    kParam,
    kMatMul,
    kAdd,
    kMul,
    kScale,
    kConcat,
    kSlice,
    kTranspose,
    kRelu,
    kGelu,
    kLayerNorm,
    kSoftmax,
    kL2Normalize,
    kExp,
    kLog,
    kMean,
    kSum,
    kAbs,
    kDetach,
};

const char* op_name(Op op);

struct Value {
    int id = -1;
    bool valid() const { return id >= 0; }
};

// Reverse-mode tape over eagerly evaluated rank-2 values. Nodes are appended
// in topological order; backward walks the tape in reverse and flushes leaf
// gradients into their Param stores. Single-threaded per instance.
class Graph {
public:
    // -- leaves ---------------------------------------------------------
    Value input(Tensor v);                 // owned data, no gradient
    Value constant(Tensor v) { return input(std::move(v)); }
    Value frozen(const Tensor& v);         // referenced, no gradient, memoized
    Value param(Param& p);                 // referenced, gradient iff trainable, memoized

    // -- op set ---------------------------------------------------------
    Value matmul(Value a, Value b);
    Value add(Value a, Value b);
    Value mul(Value a, Value b);
    Value scale(Value a, double s);
    Value concat(std::span<const Value> parts, int axis);
    Value slice(Value a, int r0, int r1, int c0, int c1);
    Value transpose(Value a);
    Value relu(Value a);
    Value gelu(Value a);
    Value layernorm(Value a, double eps = 1e-5);  // per row, no affine
    Value softmax(Value a);                       // per row, max-subtracted
    Value l2_normalize(Value a);                  // per row, norm floored at 1e-12
    Value exp(Value a);
    Value log(Value a);
    Value mean(Value a);  // all elements -> 1x1
    Value sum(Value a);   // all elements -> 1x1
    Value abs(Value a);
    Value detach(Value a);

    // -- composed helpers -----------------------------------------------
    Value sub(Value a, Value b) { return add(a, scale(b, -1.0)); }
    Value add_scalar(Value a, double s);
    Value rows(std::span<const Value> parts) { return concat(parts, 0); }
    Value cols(std::span<const Value> parts) { return concat(parts, 1); }
    Value slice_rows(Value a, int r0, int r1);
    Value slice_cols(Value a, int c0, int c1);
    Value flatten_to_row(Value a);                  // row-major, via slice+concat
    Value broadcast_row(Value row, int n);          // 1xd -> nxd via ones matmul
    Value add_rowvec(Value m, Value row);
    Value mul_rowvec(Value m, Value row);
    Value affine(Value x, Value w, Value b);        // x*w + broadcast(b)
    Value dot(Value a, Value b);                    // rows a,b -> 1x1
    Value cosine(Value a, Value b);                 // composed cosine similarity
    Value log_softmax(Value a) { return log(softmax(a)); }

    // -- execution -------------------------------------------------------
    // Replaces the tensor stored at an input node (shape must match).
    void set_input(Value v, Tensor t);
    // Re-runs the whole tape; leaves re-read their external stores, so call
    // after mutating Param values to refresh downstream values.
    void recompute();
    // Reverse sweep from a scalar loss. Accumulates into Param::grad of
    // trainable leaves only; frozen and detached paths receive nothing.
    void backward(Value loss);

    const Tensor& value(Value v) const;
    double scalar_value(Value v) const { return value(v).item(); }
    // Gradient buffer of a node from the last backward pass (zeros if the
    // node was not reached). Intended for tests.
    Tensor grad_of(Value v) const;

    size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        Op op;
        std::array<int, 2> in{{-1, -1}};
        std::vector<int> extra_in;  // kConcat operand list
        Tensor value;
        const Tensor* external = nullptr;  // kFrozen / kParam storage
        Param* param = nullptr;
        Tensor grad;
        bool requires_grad = false;
        bool grad_live = false;
        double scalar = 0.0;               // kScale factor / kLayerNorm eps
        int axis = 0;                      // kConcat
        std::array<int, 4> span{{0, 0, 0, 0}};  // kSlice r0,r1,c0,c1
    };

    const Tensor& node_value(const Node& n) const { return n.external ? *n.external : n.value; }
    Node& node(Value v);
    const Node& node(Value v) const;
    Value push(Node n);
    void compute(Node& n);
    void backprop(Node& n);
    Tensor& grad_buffer(int id);
    void check_same_shape(const char* op, const Tensor& a, const Tensor& b) const;

    std::vector<Node> nodes_;
    std::unordered_map<const void*, int> leaf_cache_;
};

}  // namespace promptforge
