#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "bidan/tensor.hpp"

namespace bidan {

enum class Op {
    kInput,
    kConst,
    kParam,
    kMatmul,
    kAdd,
    kMul,
    kConcatCols,
    kConcatRows,
    kSliceCols,
    kSliceRows,
    kReshape,
    kTanh,
    kSigmoid,
    kLog,
    kSoftmaxRows,
    kTakeRows,
    kCrossEntropyRows,
    kMeanAll,
    kSumAll,
    kScale,
    kDropout,
    kRepeatRows,
    kWeightedSumRows,
    kRowSum,
};

const char* op_name(Op op);

// Handle into a Graph's node list.
struct Value {
    int id = -1;
    bool valid() const { return id >= 0; }
};

// Gradient of a scalar w.r.t. named parameter tensors, double precision,
// iteration order fixed by name.
struct GradMap {
    struct Entry {
        std::vector<int> shape;
        std::vector<double> g;
    };
    std::map<std::string, Entry> entries;

    bool has(const std::string& name) const { return entries.count(name) != 0; }
    double global_norm() const;
    bool all_finite() const;
};

// Reverse-mode tape. Nodes are recorded in topological order (an op's inputs
// always precede it), evaluated by forward()/run_to() exactly once each, and
// differentiated by backward() walking the tape in reverse. All evaluation is
// double precision; Tensor I/O rounds to float32 at the boundary.
class Graph {
public:
    Value input(const std::string& name, std::vector<int> shape);
    void bind(const std::string& name, const Tensor& t);

    Value constant(const Tensor& t);
    Value constant(std::vector<int> shape, std::vector<double> data);
    Value zeros(std::vector<int> shape);

    // Leaf parameter backed by external float32 storage. Repeated calls with
    // the same name return the same node, so fan-out gradients accumulate.
    Value param(const std::string& name, const Tensor* storage);

    Value matmul(Value a, Value b);
    // b may broadcast: [n]/[1,n] across rows or [m,1] across columns
    Value add(Value a, Value b);
    Value mul(Value a, Value b);
    Value concat_cols(Value a, Value b);
    Value concat_rows(Value a, Value b);
    Value slice_cols(Value x, int start, int len);
    Value slice_rows(Value x, int start, int len);
    Value reshape(Value x, std::vector<int> shape);
    Value tanh(Value x);
    Value sigmoid(Value x);
    Value log(Value x);
    // Masked softmax along rows; mask entries are 0/1, fixed at build time.
    // Unmasked variant passes an empty mask.
    Value softmax_rows(Value x, std::vector<uint8_t> mask = {});
    Value take_rows(Value x, std::vector<int> ids);
    Value cross_entropy_rows(Value logits, std::vector<int> targets);
    Value mean_all(Value x);
    Value sum_all(Value x);
    Value scale(Value x, double c);
    // Inverted dropout; identity (no node) when train is false.
    Value dropout(Value x, double rate, uint64_t seed, bool train);
    Value repeat_rows(Value x, int k);
    Value weighted_sum_rows(Value w, Value h);
    Value row_sum(Value x);

    void forward();
    void run_to(Value v);
    void reset();  // clear computed values/grads, keep structure and bindings
    void backward(Value seed);

    const std::vector<int>& shape(Value v) const;
    const std::vector<double>& data(Value v) const;
    double scalar(Value v) const;
    Tensor value(Value v) const;
    const std::vector<double>& grad(Value v) const;

    GradMap param_grads() const;
    int node_count() const { return static_cast<int>(nodes_.size()); }

private:
    struct Node {
        Op op;
        std::string name;  // inputs/params; empty otherwise
        std::vector<int> in;
        std::vector<int> shape;
        std::vector<double> value;
        std::vector<double> grad;
        bool computed = false;
        bool bound = false;          // inputs only
        const Tensor* storage = nullptr;  // params only
        // op-specific payload
        int i0 = 0, i1 = 0;
        double c0 = 0.0;
        uint64_t seed = 0;
        std::vector<int> ids;
        std::vector<uint8_t> mask;
    };

    int add_node(Node n);
    Node& at(Value v);
    const Node& at(Value v) const;
    void check_value(Value v) const;
    void eval_node(int id);
    void backprop_node(int id);
    [[noreturn]] void fail(int id, const std::string& msg) const;
    std::string label(int id) const;

    std::vector<Node> nodes_;
    std::unordered_map<std::string, int> by_name_;
    int cursor_ = 0;         // first unevaluated node
    int backward_seed_ = -1;
};

// Max over all coordinates of all graph parameters of
// |analytic - central difference| / max(1, |analytic|).
// Perturbs the parameters' backing storage in place and restores it.
double grad_check(Graph& g, Value loss, const std::vector<std::pair<std::string, Tensor*>>& params,
                  double eps);

}  // namespace bidan
