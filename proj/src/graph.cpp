#include "bidan/graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace bidan {

const char* op_name(Op op) {
    switch (op) {
        case Op::kInput: return "input";
        case Op::kConst: return "const";
        case Op::kParam: return "param";
        case Op::kMatmul: return "matmul";
        case Op::kAdd: return "add";
        case Op::kMul: return "mul";
        case Op::kConcatCols: return "concat_cols";
        case Op::kConcatRows: return "concat_rows";
        case Op::kSliceCols: return "slice_cols";
        case Op::kSliceRows: return "slice_rows";
        case Op::kReshape: return "reshape";
        case Op::kTanh: return "tanh";
        case Op::kSigmoid: return "sigmoid";
        case Op::kLog: return "log";
        case Op::kSoftmaxRows: return "softmax_rows";
        case Op::kTakeRows: return "take_rows";
        case Op::kCrossEntropyRows: return "cross_entropy_rows";
        case Op::kMeanAll: return "mean_all";
        case Op::kSumAll: return "sum_all";
        case Op::kScale: return "scale";
        case Op::kDropout: return "dropout";
        case Op::kRepeatRows: return "repeat_rows";
        case Op::kWeightedSumRows: return "weighted_sum_rows";
        case Op::kRowSum: return "row_sum";
    }
    return "?";
}

double GradMap::global_norm() const {
    double s = 0.0;
    for (const auto& [name, e] : entries)
        for (double v : e.g) s += v * v;
    return std::sqrt(s);
}

bool GradMap::all_finite() const {
    for (const auto& [name, e] : entries)
        for (double v : e.g)
            if (!std::isfinite(v)) return false;
    return true;
}

namespace {

struct Dims {
    std::size_t rows, cols;
};

Dims dims2(const std::vector<int>& shape) {
    if (shape.empty()) return {1, 1};
    std::size_t rows = static_cast<std::size_t>(shape[0]);
    std::size_t cols = 1;
    for (std::size_t i = 1; i < shape.size(); ++i) cols *= static_cast<std::size_t>(shape[i]);
    if (shape.size() == 1) {  // rank-1 = one row
        cols = rows;
        rows = 1;
    }
    return {rows, cols};
}

// C[m,n] += A[m,k] * B[k,n]
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        double* ci = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            double av = ai[p];
            if (av == 0.0) continue;
            const double* bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

// C[m,k] += A[m,n] * B[k,n]^T
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = a + i * n;
        double* ci = c + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double* bp = b + p * n;
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j) s += ai[j] * bp[j];
            ci[p] += s;
        }
    }
}

// C[k,n] += A[m,k]^T * B[m,n]
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        const double* bi = b + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            double av = ai[p];
            if (av == 0.0) continue;
            double* cp = c + p * n;
            for (std::size_t j = 0; j < n; ++j) cp[j] += av * bi[j];
        }
    }
}

enum class Bcast { kSame, kRow, kCol };

}  // namespace

std::string Graph::label(int id) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    std::string s = "node#" + std::to_string(id) + "(" + op_name(n.op);
    if (!n.name.empty()) s += " '" + n.name + "'";
    s += ")";
    return s;
}

void Graph::fail(int id, const std::string& msg) const {
    throw std::runtime_error("graph: " + label(id) + ": " + msg);
}

int Graph::add_node(Node n) {
    for (int in : n.in) {
        if (in < 0 || in >= static_cast<int>(nodes_.size()))
            throw std::runtime_error("graph: op " + std::string(op_name(n.op)) + ": bad input node id");
    }
    n.value.assign(numel_of(n.shape), 0.0);
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

Graph::Node& Graph::at(Value v) {
    check_value(v);
    return nodes_[static_cast<std::size_t>(v.id)];
}

const Graph::Node& Graph::at(Value v) const {
    check_value(v);
    return nodes_[static_cast<std::size_t>(v.id)];
}

void Graph::check_value(Value v) const {
    if (!v.valid() || v.id >= static_cast<int>(nodes_.size()))
        throw std::runtime_error("graph: invalid value handle");
}

Value Graph::input(const std::string& name, std::vector<int> shape) {
    if (by_name_.count(name)) throw std::runtime_error("graph: duplicate name '" + name + "'");
    Node n;
    n.op = Op::kInput;
    n.name = name;
    n.shape = std::move(shape);
    int id = add_node(std::move(n));
    by_name_[name] = id;
    return {id};
}

void Graph::bind(const std::string& name, const Tensor& t) {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) throw std::runtime_error("graph: bind: unknown input '" + name + "'");
    Node& n = nodes_[static_cast<std::size_t>(it->second)];
    if (n.op != Op::kInput) fail(it->second, "bind target is not an input");
    if (t.numel() != n.value.size()) fail(it->second, "bind: shape mismatch");
    for (std::size_t i = 0; i < t.data.size(); ++i) n.value[i] = static_cast<double>(t.data[i]);
    n.bound = true;
}

Value Graph::constant(const Tensor& t) {
    Node n;
    n.op = Op::kConst;
    n.shape = t.shape;
    int id = add_node(std::move(n));
    Node& node = nodes_[static_cast<std::size_t>(id)];
    for (std::size_t i = 0; i < t.data.size(); ++i) node.value[i] = static_cast<double>(t.data[i]);
    return {id};
}

Value Graph::constant(std::vector<int> shape, std::vector<double> data) {
    if (data.size() != numel_of(shape)) throw std::runtime_error("graph: const: data/shape mismatch");
    Node n;
    n.op = Op::kConst;
    n.shape = std::move(shape);
    int id = add_node(std::move(n));
    nodes_[static_cast<std::size_t>(id)].value = std::move(data);
    return {id};
}

Value Graph::zeros(std::vector<int> shape) {
    Node n;
    n.op = Op::kConst;
    n.shape = std::move(shape);
    return {add_node(std::move(n))};
}

Value Graph::param(const std::string& name, const Tensor* storage) {
    auto it = by_name_.find(name);
    if (it != by_name_.end()) {
        const Node& n = nodes_[static_cast<std::size_t>(it->second)];
        if (n.op != Op::kParam || n.storage != storage)
            throw std::runtime_error("graph: name '" + name + "' already used with different binding");
        return {it->second};
    }
    if (storage == nullptr) throw std::runtime_error("graph: param '" + name + "': null storage");
    Node n;
    n.op = Op::kParam;
    n.name = name;
    n.shape = storage->shape;
    n.storage = storage;
    int id = add_node(std::move(n));
    by_name_[name] = id;
    return {id};
}

Value Graph::matmul(Value a, Value b) {
    const Node& na = at(a);
    const Node& nb = at(b);
    if (na.shape.size() != 2 || nb.shape.size() != 2)
        throw std::runtime_error("graph: matmul expects 2-d operands, got " + label(a.id) + " and " + label(b.id));
    if (na.shape[1] != nb.shape[0])
        throw std::runtime_error("graph: matmul: inner extents differ (" + std::to_string(na.shape[1]) + " vs " +
                                 std::to_string(nb.shape[0]) + ") for " + label(a.id) + " x " + label(b.id));
    Node n;
    n.op = Op::kMatmul;
    n.in = {a.id, b.id};
    n.shape = {na.shape[0], nb.shape[1]};
    return {add_node(std::move(n))};
}

static Bcast bcast_kind(const Dims& da, const Dims& db, const std::string& what) {
    if (da.rows == db.rows && da.cols == db.cols) return Bcast::kSame;
    if (db.rows == 1 && db.cols == da.cols) return Bcast::kRow;
    if (db.cols == 1 && db.rows == da.rows) return Bcast::kCol;
    throw std::runtime_error("graph: " + what + ": incompatible shapes");
}

Value Graph::add(Value a, Value b) {
    Dims da = dims2(at(a).shape), db = dims2(at(b).shape);
    bcast_kind(da, db, "add of " + label(a.id) + " and " + label(b.id));
    Node n;
    n.op = Op::kAdd;
    n.in = {a.id, b.id};
    n.shape = at(a).shape;
    return {add_node(std::move(n))};
}

Value Graph::mul(Value a, Value b) {
    Dims da = dims2(at(a).shape), db = dims2(at(b).shape);
    bcast_kind(da, db, "mul of " + label(a.id) + " and " + label(b.id));
    Node n;
    n.op = Op::kMul;
    n.in = {a.id, b.id};
    n.shape = at(a).shape;
    return {add_node(std::move(n))};
}

Value Graph::concat_cols(Value a, Value b) {
    const Node& na = at(a);
    const Node& nb = at(b);
    if (na.shape.size() != 2 || nb.shape.size() != 2 || na.shape[0] != nb.shape[0])
        throw std::runtime_error("graph: concat_cols: need 2-d with equal rows, " + label(a.id) + " vs " + label(b.id));
    Node n;
    n.op = Op::kConcatCols;
    n.in = {a.id, b.id};
    n.shape = {na.shape[0], na.shape[1] + nb.shape[1]};
    return {add_node(std::move(n))};
}

Value Graph::concat_rows(Value a, Value b) {
    const Node& na = at(a);
    const Node& nb = at(b);
    if (na.shape.size() != 2 || nb.shape.size() != 2 || na.shape[1] != nb.shape[1])
        throw std::runtime_error("graph: concat_rows: need 2-d with equal cols, " + label(a.id) + " vs " + label(b.id));
    Node n;
    n.op = Op::kConcatRows;
    n.in = {a.id, b.id};
    n.shape = {na.shape[0] + nb.shape[0], na.shape[1]};
    return {add_node(std::move(n))};
}

Value Graph::slice_cols(Value x, int start, int len) {
    const Node& nx = at(x);
    if (nx.shape.size() != 2) throw std::runtime_error("graph: slice_cols: need 2-d " + label(x.id));
    if (start < 0 || len <= 0 || start + len > nx.shape[1])
        throw std::runtime_error("graph: slice_cols: range [" + std::to_string(start) + "," +
                                 std::to_string(start + len) + ") out of bounds for " + label(x.id));
    Node n;
    n.op = Op::kSliceCols;
    n.in = {x.id};
    n.shape = {nx.shape[0], len};
    n.i0 = start;
    n.i1 = len;
    return {add_node(std::move(n))};
}

Value Graph::slice_rows(Value x, int start, int len) {
    const Node& nx = at(x);
    if (nx.shape.size() != 2) throw std::runtime_error("graph: slice_rows: need 2-d " + label(x.id));
    if (start < 0 || len <= 0 || start + len > nx.shape[0])
        throw std::runtime_error("graph: slice_rows: range [" + std::to_string(start) + "," +
                                 std::to_string(start + len) + ") out of bounds for " + label(x.id));
    Node n;
    n.op = Op::kSliceRows;
    n.in = {x.id};
    n.shape = {len, nx.shape[1]};
    n.i0 = start;
    n.i1 = len;
    return {add_node(std::move(n))};
}

Value Graph::reshape(Value x, std::vector<int> shape) {
    if (numel_of(shape) != at(x).value.size())
        throw std::runtime_error("graph: reshape: numel mismatch for " + label(x.id));
    Node n;
    n.op = Op::kReshape;
    n.in = {x.id};
    n.shape = std::move(shape);
    return {add_node(std::move(n))};
}

Value Graph::tanh(Value x) {
    Node n;
    n.op = Op::kTanh;
    n.in = {x.id};
    n.shape = at(x).shape;
    return {add_node(std::move(n))};
}

Value Graph::sigmoid(Value x) {
    Node n;
    n.op = Op::kSigmoid;
    n.in = {x.id};
    n.shape = at(x).shape;
    return {add_node(std::move(n))};
}

Value Graph::log(Value x) {
    Node n;
    n.op = Op::kLog;
    n.in = {x.id};
    n.shape = at(x).shape;
    return {add_node(std::move(n))};
}

Value Graph::softmax_rows(Value x, std::vector<uint8_t> mask) {
    const Node& nx = at(x);
    Dims d = dims2(nx.shape);
    if (!mask.empty()) {
        if (mask.size() != nx.value.size())
            throw std::runtime_error("graph: softmax_rows: mask size mismatch for " + label(x.id));
        for (std::size_t r = 0; r < d.rows; ++r) {
            bool any = false;
            for (std::size_t j = 0; j < d.cols; ++j) any = any || mask[r * d.cols + j] != 0;
            if (!any)
                throw std::runtime_error("graph: softmax_rows: all positions masked in row " + std::to_string(r) +
                                         " of " + label(x.id));
        }
    }
    Node n;
    n.op = Op::kSoftmaxRows;
    n.in = {x.id};
    n.shape = nx.shape;
    n.mask = std::move(mask);
    return {add_node(std::move(n))};
}

Value Graph::take_rows(Value x, std::vector<int> ids) {
    const Node& nx = at(x);
    if (nx.shape.size() != 2) throw std::runtime_error("graph: take_rows: need 2-d " + label(x.id));
    for (int id : ids)
        if (id < 0 || id >= nx.shape[0])
            throw std::runtime_error("graph: take_rows: row id " + std::to_string(id) + " out of range for " +
                                     label(x.id));
    Node n;
    n.op = Op::kTakeRows;
    n.in = {x.id};
    n.shape = {static_cast<int>(ids.size()), nx.shape[1]};
    n.ids = std::move(ids);
    return {add_node(std::move(n))};
}

Value Graph::cross_entropy_rows(Value logits, std::vector<int> targets) {
    const Node& nx = at(logits);
    if (nx.shape.size() != 2) throw std::runtime_error("graph: cross_entropy: need 2-d logits " + label(logits.id));
    if (static_cast<int>(targets.size()) != nx.shape[0])
        throw std::runtime_error("graph: cross_entropy: target count mismatch for " + label(logits.id));
    for (int t : targets)
        if (t < 0 || t >= nx.shape[1])
            throw std::runtime_error("graph: cross_entropy: target id " + std::to_string(t) + " out of range for " +
                                     label(logits.id));
    Node n;
    n.op = Op::kCrossEntropyRows;
    n.in = {logits.id};
    n.shape = {nx.shape[0], 1};
    n.ids = std::move(targets);
    return {add_node(std::move(n))};
}

Value Graph::mean_all(Value x) {
    Node n;
    n.op = Op::kMeanAll;
    n.in = {x.id};
    n.shape = {1};
    return {add_node(std::move(n))};
}

Value Graph::sum_all(Value x) {
    Node n;
    n.op = Op::kSumAll;
    n.in = {x.id};
    n.shape = {1};
    return {add_node(std::move(n))};
}

Value Graph::scale(Value x, double c) {
    Node n;
    n.op = Op::kScale;
    n.in = {x.id};
    n.shape = at(x).shape;
    n.c0 = c;
    return {add_node(std::move(n))};
}

Value Graph::dropout(Value x, double rate, uint64_t seed, bool train) {
    if (rate < 0.0 || rate >= 1.0) throw std::runtime_error("graph: dropout: rate must be in [0,1)");
    if (!train || rate == 0.0) return x;
    Node n;
    n.op = Op::kDropout;
    n.in = {x.id};
    n.shape = at(x).shape;
    n.c0 = rate;
    n.seed = seed;
    return {add_node(std::move(n))};
}

Value Graph::repeat_rows(Value x, int k) {
    const Node& nx = at(x);
    if (nx.shape.size() != 2 || k < 1)
        throw std::runtime_error("graph: repeat_rows: need 2-d and k >= 1, " + label(x.id));
    Node n;
    n.op = Op::kRepeatRows;
    n.in = {x.id};
    n.shape = {nx.shape[0] * k, nx.shape[1]};
    n.i0 = k;
    return {add_node(std::move(n))};
}

Value Graph::weighted_sum_rows(Value w, Value h) {
    const Node& nw = at(w);
    const Node& nh = at(h);
    if (nw.shape.size() != 2 || nh.shape.size() != 2)
        throw std::runtime_error("graph: weighted_sum_rows: need 2-d operands");
    int b = nw.shape[0], m = nw.shape[1];
    if (nh.shape[0] != b * m)
        throw std::runtime_error("graph: weighted_sum_rows: " + label(h.id) + " rows must equal " +
                                 std::to_string(b * m));
    Node n;
    n.op = Op::kWeightedSumRows;
    n.in = {w.id, h.id};
    n.shape = {b, nh.shape[1]};
    n.i0 = m;
    return {add_node(std::move(n))};
}

Value Graph::row_sum(Value x) {
    const Node& nx = at(x);
    if (nx.shape.size() != 2) throw std::runtime_error("graph: row_sum: need 2-d " + label(x.id));
    Node n;
    n.op = Op::kRowSum;
    n.in = {x.id};
    n.shape = {nx.shape[0], 1};
    return {add_node(std::move(n))};
}

void Graph::eval_node(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    const auto in = [&](int k) -> const std::vector<double>& {
        return nodes_[static_cast<std::size_t>(n.in[static_cast<std::size_t>(k)])].value;
    };
    const auto in_shape = [&](int k) -> const std::vector<int>& {
        return nodes_[static_cast<std::size_t>(n.in[static_cast<std::size_t>(k)])].shape;
    };

    switch (n.op) {
        case Op::kInput:
            if (!n.bound) fail(id, "forward before bind");
            break;
        case Op::kConst:
            break;
        case Op::kParam:
            for (std::size_t i = 0; i < n.value.size(); ++i)
                n.value[i] = static_cast<double>(n.storage->data[i]);
            break;
        case Op::kMatmul: {
            Dims da = dims2(in_shape(0)), db = dims2(in_shape(1));
            std::fill(n.value.begin(), n.value.end(), 0.0);
            gemm_nn(da.rows, da.cols, db.cols, in(0).data(), in(1).data(), n.value.data());
            break;
        }
        case Op::kAdd:
        case Op::kMul: {
            Dims da = dims2(in_shape(0)), db = dims2(in_shape(1));
            Bcast bc = bcast_kind(da, db, "eval");
            const auto& a = in(0);
            const auto& b = in(1);
            bool is_add = n.op == Op::kAdd;
            for (std::size_t r = 0; r < da.rows; ++r) {
                for (std::size_t j = 0; j < da.cols; ++j) {
                    std::size_t ia = r * da.cols + j;
                    std::size_t ib = bc == Bcast::kSame ? ia : (bc == Bcast::kRow ? j : r);
                    n.value[ia] = is_add ? a[ia] + b[ib] : a[ia] * b[ib];
                }
            }
            break;
        }
        case Op::kConcatCols: {
            Dims da = dims2(in_shape(0)), db = dims2(in_shape(1));
            std::size_t cols = da.cols + db.cols;
            for (std::size_t r = 0; r < da.rows; ++r) {
                std::memcpy(n.value.data() + r * cols, in(0).data() + r * da.cols, da.cols * sizeof(double));
                std::memcpy(n.value.data() + r * cols + da.cols, in(1).data() + r * db.cols,
                            db.cols * sizeof(double));
            }
            break;
        }
        case Op::kConcatRows: {
            std::memcpy(n.value.data(), in(0).data(), in(0).size() * sizeof(double));
            std::memcpy(n.value.data() + in(0).size(), in(1).data(), in(1).size() * sizeof(double));
            break;
        }
        case Op::kSliceCols: {
            Dims d = dims2(in_shape(0));
            std::size_t len = static_cast<std::size_t>(n.i1);
            for (std::size_t r = 0; r < d.rows; ++r)
                std::memcpy(n.value.data() + r * len, in(0).data() + r * d.cols + n.i0, len * sizeof(double));
            break;
        }
        case Op::kSliceRows: {
            Dims d = dims2(in_shape(0));
            std::memcpy(n.value.data(), in(0).data() + static_cast<std::size_t>(n.i0) * d.cols,
                        static_cast<std::size_t>(n.i1) * d.cols * sizeof(double));
            break;
        }
        case Op::kReshape:
            n.value = in(0);
            break;
        case Op::kTanh:
            for (std::size_t i = 0; i < n.value.size(); ++i) n.value[i] = std::tanh(in(0)[i]);
            break;
        case Op::kSigmoid:
            for (std::size_t i = 0; i < n.value.size(); ++i) n.value[i] = 1.0 / (1.0 + std::exp(-in(0)[i]));
            break;
        case Op::kLog:
            for (std::size_t i = 0; i < n.value.size(); ++i) n.value[i] = std::log(in(0)[i]);
            break;
        case Op::kSoftmaxRows: {
            Dims d = dims2(n.shape);
            const auto& x = in(0);
            for (std::size_t r = 0; r < d.rows; ++r) {
                const double* xr = x.data() + r * d.cols;
                double* yr = n.value.data() + r * d.cols;
                const uint8_t* mr = n.mask.empty() ? nullptr : n.mask.data() + r * d.cols;
                double mx = -1e300;
                for (std::size_t j = 0; j < d.cols; ++j)
                    if (!mr || mr[j]) mx = std::max(mx, xr[j]);
                double z = 0.0;
                for (std::size_t j = 0; j < d.cols; ++j) {
                    yr[j] = (!mr || mr[j]) ? std::exp(xr[j] - mx) : 0.0;
                    z += yr[j];
                }
                for (std::size_t j = 0; j < d.cols; ++j) yr[j] /= z;
            }
            break;
        }
        case Op::kTakeRows: {
            Dims d = dims2(in_shape(0));
            for (std::size_t i = 0; i < n.ids.size(); ++i)
                std::memcpy(n.value.data() + i * d.cols,
                            in(0).data() + static_cast<std::size_t>(n.ids[i]) * d.cols, d.cols * sizeof(double));
            break;
        }
        case Op::kCrossEntropyRows: {
            Dims d = dims2(in_shape(0));
            const auto& x = in(0);
            for (std::size_t r = 0; r < d.rows; ++r) {
                const double* xr = x.data() + r * d.cols;
                double mx = xr[0];
                for (std::size_t j = 1; j < d.cols; ++j) mx = std::max(mx, xr[j]);
                double z = 0.0;
                for (std::size_t j = 0; j < d.cols; ++j) z += std::exp(xr[j] - mx);
                n.value[r] = mx + std::log(z) - xr[static_cast<std::size_t>(n.ids[r])];
            }
            break;
        }
        case Op::kMeanAll:
        case Op::kSumAll: {
            double s = 0.0;
            for (double v : in(0)) s += v;
            n.value[0] = n.op == Op::kMeanAll ? s / static_cast<double>(in(0).size()) : s;
            break;
        }
        case Op::kScale:
            for (std::size_t i = 0; i < n.value.size(); ++i) n.value[i] = in(0)[i] * n.c0;
            break;
        case Op::kDropout: {
            uint64_t s = n.seed;
            double keep = 1.0 - n.c0;
            for (std::size_t i = 0; i < n.value.size(); ++i) {
                double u = static_cast<double>(splitmix64(s) >> 11) * 0x1.0p-53;
                n.value[i] = u < n.c0 ? 0.0 : in(0)[i] / keep;
            }
            break;
        }
        case Op::kRepeatRows: {
            Dims d = dims2(in_shape(0));
            std::size_t k = static_cast<std::size_t>(n.i0);
            for (std::size_t r = 0; r < d.rows; ++r)
                for (std::size_t j = 0; j < k; ++j)
                    std::memcpy(n.value.data() + (r * k + j) * d.cols, in(0).data() + r * d.cols,
                                d.cols * sizeof(double));
            break;
        }
        case Op::kWeightedSumRows: {
            Dims dw = dims2(in_shape(0));
            std::size_t cols = dims2(in_shape(1)).cols;
            std::size_t m = static_cast<std::size_t>(n.i0);
            std::fill(n.value.begin(), n.value.end(), 0.0);
            for (std::size_t b = 0; b < dw.rows; ++b) {
                double* out = n.value.data() + b * cols;
                for (std::size_t s = 0; s < m; ++s) {
                    double w = in(0)[b * m + s];
                    if (w == 0.0) continue;
                    const double* hr = in(1).data() + (b * m + s) * cols;
                    for (std::size_t j = 0; j < cols; ++j) out[j] += w * hr[j];
                }
            }
            break;
        }
        case Op::kRowSum: {
            Dims d = dims2(in_shape(0));
            for (std::size_t r = 0; r < d.rows; ++r) {
                double s = 0.0;
                const double* xr = in(0).data() + r * d.cols;
                for (std::size_t j = 0; j < d.cols; ++j) s += xr[j];
                n.value[r] = s;
            }
            break;
        }
    }

    for (double v : n.value)
        if (!std::isfinite(v)) fail(id, "non-finite output");
    n.computed = true;
}

void Graph::forward() { run_to(Value{static_cast<int>(nodes_.size()) - 1}); }

void Graph::run_to(Value v) {
    check_value(v);
    for (; cursor_ <= v.id; ++cursor_) eval_node(cursor_);
}

void Graph::reset() {
    for (auto& n : nodes_) {
        n.computed = false;
        n.grad.clear();
    }
    cursor_ = 0;
    backward_seed_ = -1;
}

void Graph::backward(Value seed) {
    check_value(seed);
    Node& s = at(seed);
    if (!s.computed) fail(seed.id, "backward before forward");
    if (s.value.size() != 1) fail(seed.id, "backward seed must be scalar");
    if (backward_seed_ >= 0) throw std::runtime_error("graph: backward already run; reset() first");
    backward_seed_ = seed.id;
    s.grad.assign(1, 1.0);
    for (int id = seed.id; id >= 0; --id) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (n.grad.empty()) continue;  // not on any path to the seed
        backprop_node(id);
    }
}

void Graph::backprop_node(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    const auto touch = [&](int k) -> std::vector<double>& {
        Node& p = nodes_[static_cast<std::size_t>(n.in[static_cast<std::size_t>(k)])];
        if (p.grad.empty()) p.grad.assign(p.value.size(), 0.0);
        return p.grad;
    };
    const auto in = [&](int k) -> const std::vector<double>& {
        return nodes_[static_cast<std::size_t>(n.in[static_cast<std::size_t>(k)])].value;
    };
    const auto in_shape = [&](int k) -> const std::vector<int>& {
        return nodes_[static_cast<std::size_t>(n.in[static_cast<std::size_t>(k)])].shape;
    };
    const std::vector<double>& gy = n.grad;

    switch (n.op) {
        case Op::kInput:
        case Op::kConst:
        case Op::kParam:
            break;
        case Op::kMatmul: {
            Dims da = dims2(in_shape(0)), db = dims2(in_shape(1));
            gemm_nt(da.rows, db.cols, da.cols, gy.data(), in(1).data(), touch(0).data());
            gemm_tn(da.rows, da.cols, db.cols, in(0).data(), gy.data(), touch(1).data());
            break;
        }
        case Op::kAdd:
        case Op::kMul: {
            Dims da = dims2(in_shape(0)), db = dims2(in_shape(1));
            Bcast bc = bcast_kind(da, db, "backward");
            auto& ga = touch(0);
            auto& gb = touch(1);
            bool is_add = n.op == Op::kAdd;
            for (std::size_t r = 0; r < da.rows; ++r) {
                for (std::size_t j = 0; j < da.cols; ++j) {
                    std::size_t ia = r * da.cols + j;
                    std::size_t ib = bc == Bcast::kSame ? ia : (bc == Bcast::kRow ? j : r);
                    if (is_add) {
                        ga[ia] += gy[ia];
                        gb[ib] += gy[ia];
                    } else {
                        ga[ia] += gy[ia] * in(1)[ib];
                        gb[ib] += gy[ia] * in(0)[ia];
                    }
                }
            }
            break;
        }
        case Op::kConcatCols: {
            Dims da = dims2(in_shape(0)), db = dims2(in_shape(1));
            std::size_t cols = da.cols + db.cols;
            auto& ga = touch(0);
            auto& gb = touch(1);
            for (std::size_t r = 0; r < da.rows; ++r) {
                for (std::size_t j = 0; j < da.cols; ++j) ga[r * da.cols + j] += gy[r * cols + j];
                for (std::size_t j = 0; j < db.cols; ++j) gb[r * db.cols + j] += gy[r * cols + da.cols + j];
            }
            break;
        }
        case Op::kConcatRows: {
            auto& ga = touch(0);
            auto& gb = touch(1);
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gy[i];
            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += gy[ga.size() + i];
            break;
        }
        case Op::kSliceCols: {
            Dims d = dims2(in_shape(0));
            std::size_t len = static_cast<std::size_t>(n.i1);
            auto& gx = touch(0);
            for (std::size_t r = 0; r < d.rows; ++r)
                for (std::size_t j = 0; j < len; ++j) gx[r * d.cols + n.i0 + j] += gy[r * len + j];
            break;
        }
        case Op::kSliceRows: {
            Dims d = dims2(in_shape(0));
            auto& gx = touch(0);
            std::size_t off = static_cast<std::size_t>(n.i0) * d.cols;
            for (std::size_t i = 0; i < gy.size(); ++i) gx[off + i] += gy[i];
            break;
        }
        case Op::kReshape: {
            auto& gx = touch(0);
            for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
            break;
        }
        case Op::kTanh: {
            auto& gx = touch(0);
            for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * (1.0 - n.value[i] * n.value[i]);
            break;
        }
        case Op::kSigmoid: {
            auto& gx = touch(0);
            for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * n.value[i] * (1.0 - n.value[i]);
            break;
        }
        case Op::kLog: {
            auto& gx = touch(0);
            for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] / in(0)[i];
            break;
        }
        case Op::kSoftmaxRows: {
            Dims d = dims2(n.shape);
            auto& gx = touch(0);
            for (std::size_t r = 0; r < d.rows; ++r) {
                const double* yr = n.value.data() + r * d.cols;
                const double* gr = gy.data() + r * d.cols;
                double dot = 0.0;
                for (std::size_t j = 0; j < d.cols; ++j) dot += yr[j] * gr[j];
                for (std::size_t j = 0; j < d.cols; ++j) gx[r * d.cols + j] += yr[j] * (gr[j] - dot);
            }
            break;
        }
        case Op::kTakeRows: {
            Dims d = dims2(in_shape(0));
            auto& gx = touch(0);
            for (std::size_t i = 0; i < n.ids.size(); ++i) {
                double* dst = gx.data() + static_cast<std::size_t>(n.ids[i]) * d.cols;
                const double* src = gy.data() + i * d.cols;
                for (std::size_t j = 0; j < d.cols; ++j) dst[j] += src[j];
            }
            break;
        }
        case Op::kCrossEntropyRows: {
            Dims d = dims2(in_shape(0));
            const auto& x = in(0);
            auto& gx = touch(0);
            for (std::size_t r = 0; r < d.rows; ++r) {
                const double* xr = x.data() + r * d.cols;
                double mx = xr[0];
                for (std::size_t j = 1; j < d.cols; ++j) mx = std::max(mx, xr[j]);
                double z = 0.0;
                for (std::size_t j = 0; j < d.cols; ++j) z += std::exp(xr[j] - mx);
                double g = gy[r];
                for (std::size_t j = 0; j < d.cols; ++j) {
                    double p = std::exp(xr[j] - mx) / z;
                    gx[r * d.cols + j] += g * (p - (static_cast<int>(j) == n.ids[r] ? 1.0 : 0.0));
                }
            }
            break;
        }
        case Op::kMeanAll: {
            auto& gx = touch(0);
            double g = gy[0] / static_cast<double>(gx.size());
            for (double& v : gx) v += g;
            break;
        }
        case Op::kSumAll: {
            auto& gx = touch(0);
            for (double& v : gx) v += gy[0];
            break;
        }
        case Op::kScale: {
            auto& gx = touch(0);
            for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * n.c0;
            break;
        }
        case Op::kDropout: {
            auto& gx = touch(0);
            uint64_t s = n.seed;
            double keep = 1.0 - n.c0;
            for (std::size_t i = 0; i < gy.size(); ++i) {
                double u = static_cast<double>(splitmix64(s) >> 11) * 0x1.0p-53;
                if (u >= n.c0) gx[i] += gy[i] / keep;
            }
            break;
        }
        case Op::kRepeatRows: {
            Dims d = dims2(in_shape(0));
            std::size_t k = static_cast<std::size_t>(n.i0);
            auto& gx = touch(0);
            for (std::size_t r = 0; r < d.rows; ++r)
                for (std::size_t j = 0; j < k; ++j) {
                    const double* src = gy.data() + (r * k + j) * d.cols;
                    double* dst = gx.data() + r * d.cols;
                    for (std::size_t c = 0; c < d.cols; ++c) dst[c] += src[c];
                }
            break;
        }
        case Op::kWeightedSumRows: {
            Dims dw = dims2(in_shape(0));
            std::size_t cols = dims2(in_shape(1)).cols;
            std::size_t m = static_cast<std::size_t>(n.i0);
            auto& gw = touch(0);
            auto& gh = touch(1);
            for (std::size_t b = 0; b < dw.rows; ++b) {
                const double* go = gy.data() + b * cols;
                for (std::size_t s = 0; s < m; ++s) {
                    const double* hr = in(1).data() + (b * m + s) * cols;
                    double* ghr = gh.data() + (b * m + s) * cols;
                    double w = in(0)[b * m + s];
                    double acc = 0.0;
                    for (std::size_t j = 0; j < cols; ++j) {
                        acc += go[j] * hr[j];
                        ghr[j] += go[j] * w;
                    }
                    gw[b * m + s] += acc;
                }
            }
            break;
        }
        case Op::kRowSum: {
            Dims d = dims2(in_shape(0));
            auto& gx = touch(0);
            for (std::size_t r = 0; r < d.rows; ++r)
                for (std::size_t j = 0; j < d.cols; ++j) gx[r * d.cols + j] += gy[r];
            break;
        }
    }
}

const std::vector<int>& Graph::shape(Value v) const { return at(v).shape; }

const std::vector<double>& Graph::data(Value v) const {
    const Node& n = at(v);
    if (!n.computed) fail(v.id, "value read before forward");
    return n.value;
}

double Graph::scalar(Value v) const {
    const auto& d = data(v);
    if (d.size() != 1) fail(v.id, "scalar read of non-scalar");
    return d[0];
}

Tensor Graph::value(Value v) const {
    const Node& n = at(v);
    if (!n.computed) fail(v.id, "value read before forward");
    Tensor t = Tensor::zeros(n.shape);
    for (std::size_t i = 0; i < n.value.size(); ++i) t.data[i] = static_cast<float>(n.value[i]);
    return t;
}

const std::vector<double>& Graph::grad(Value v) const {
    const Node& n = at(v);
    if (backward_seed_ < 0) fail(v.id, "grad read before backward");
    if (n.grad.empty()) {
        static const std::vector<double> kEmpty;
        return kEmpty;
    }
    return n.grad;
}

GradMap Graph::param_grads() const {
    if (backward_seed_ < 0) throw std::runtime_error("graph: param_grads before backward");
    GradMap out;
    for (const auto& n : nodes_) {
        if (n.op != Op::kParam || n.grad.empty()) continue;
        GradMap::Entry e;
        e.shape = n.shape;
        e.g = n.grad;
        out.entries.emplace(n.name, std::move(e));
    }
    return out;
}

double grad_check(Graph& g, Value loss, const std::vector<std::pair<std::string, Tensor*>>& params,
                  double eps) {
    if (eps <= 0.0 || eps > 1e-2) throw std::invalid_argument("grad_check: eps must be in (0, 1e-2]");
    g.reset();
    g.forward();
    g.backward(loss);
    GradMap analytic = g.param_grads();

    double max_err = 0.0;
    for (const auto& [name, tensor] : params) {
        const GradMap::Entry* e = analytic.has(name) ? &analytic.entries.at(name) : nullptr;
        for (std::size_t i = 0; i < tensor->data.size(); ++i) {
            float orig = tensor->data[i];
            float xp = static_cast<float>(static_cast<double>(orig) + eps);
            float xm = static_cast<float>(static_cast<double>(orig) - eps);
            double span = static_cast<double>(xp) - static_cast<double>(xm);

            tensor->data[i] = xp;
            g.reset();
            g.forward();
            double fp = g.scalar(loss);
            tensor->data[i] = xm;
            g.reset();
            g.forward();
            double fm = g.scalar(loss);
            tensor->data[i] = orig;

            double numeric = (fp - fm) / span;
            double ana = e ? e->g[i] : 0.0;
            double err = std::abs(ana - numeric) / std::max(1.0, std::abs(ana));
            max_err = std::max(max_err, err);
        }
    }
    g.reset();
    return max_err;
}

}  // namespace bidan
