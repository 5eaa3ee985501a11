#include "doctest.h"

#include <cmath>
#include <cstring>
#include <functional>

#include "bidan/graph.hpp"
#include "bidan/tensor.hpp"

using namespace bidan;

namespace {

Tensor random_tensor(Rng& rng, std::vector<int> shape, double lo = -0.5, double hi = 0.5) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (auto& v : t.data) v = static_cast<float>(rng.uniform(lo, hi));
    return t;
}

// Builds `loss = sum(op_output * C)` with random C and grad-checks all params.
// The builder receives the graph and the named param tensors in order.
double check_primitive(uint64_t seed, std::vector<Tensor>& params,
                       const std::function<Value(Graph&, std::vector<Value>&)>& build) {
    Graph g;
    std::vector<Value> vals;
    std::vector<std::pair<std::string, Tensor*>> refs;
    for (std::size_t i = 0; i < params.size(); ++i) {
        std::string name = "p" + std::to_string(i);
        vals.push_back(g.param(name, &params[i]));
        refs.emplace_back(name, &params[i]);
    }
    Value out = build(g, vals);
    Rng rng(seed ^ 0xabcdef);
    Tensor c = Tensor::zeros(g.shape(out));
    for (auto& v : c.data) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    Value loss = g.sum_all(g.mul(out, g.constant(c)));
    return grad_check(g, loss, refs, 1e-3);
}

}  // namespace

TEST_CASE("forward: spec value cases") {
    Graph g;
    Value a = g.constant({2, 2}, {1, 2, 3, 4});
    Value eye = g.constant({2, 2}, {1, 0, 0, 1});
    Value prod = g.matmul(a, eye);
    Value sm = g.softmax_rows(g.constant({1, 3}, {0, 0, 0}));
    Value th = g.tanh(g.constant({1}, {0}));
    Value sg = g.sigmoid(g.constant({1}, {0}));
    g.forward();

    Tensor p = g.value(prod);
    CHECK(p.data == std::vector<float>{1, 2, 3, 4});
    for (double v : g.data(sm)) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-9));
    CHECK(g.data(th)[0] == 0.0);
    CHECK(g.data(sg)[0] == 0.5);
}

TEST_CASE("backward: sum gives all-ones, x*x at 3 gives 6") {
    Tensor x = Tensor::full({2, 3}, 0.7f);
    Graph g;
    Value xv = g.param("x", &x);
    Value s = g.sum_all(xv);
    g.forward();
    g.backward(s);
    for (double v : g.grad(xv)) CHECK(v == 1.0);

    Tensor x2 = Tensor::full({1}, 3.0f);
    Graph g2;
    Value xv2 = g2.param("x", &x2);
    Value sq = g2.sum_all(g2.mul(xv2, xv2));
    g2.forward();
    g2.backward(sq);
    CHECK(g2.grad(xv2)[0] == doctest::Approx(6.0));
}

TEST_CASE("softmax cross-entropy gradient at uniform logits") {
    Tensor logits = Tensor::zeros({1, 3});
    Graph g;
    Value lv = g.param("logits", &logits);
    Value ce = g.cross_entropy_rows(lv, {2});
    Value loss = g.sum_all(ce);
    g.forward();
    g.backward(loss);
    const auto& grad = g.grad(lv);
    CHECK(grad[0] == doctest::Approx(1.0 / 3).epsilon(1e-9));
    CHECK(grad[1] == doctest::Approx(1.0 / 3).epsilon(1e-9));
    CHECK(grad[2] == doctest::Approx(-2.0 / 3).epsilon(1e-9));

    double err = grad_check(g, loss, {{"logits", &logits}}, 1e-3);
    CHECK(err < 1e-6);
}

TEST_CASE("grad_check: quadratic form exact to 1e-6") {
    Rng rng(11);
    for (int trial = 0; trial < 3; ++trial) {
        Tensor x = random_tensor(rng, {1, 4});
        Tensor a = random_tensor(rng, {4, 4});
        Graph g;
        Value xv = g.param("x", &x);
        Value quad = g.sum_all(g.mul(g.matmul(xv, g.constant(a)), xv));
        double err = grad_check(g, quad, {{"x", &x}}, 1e-3);
        CHECK(err < 1e-6);
    }
}

TEST_CASE("grad_check: every primitive at 10 seeded points") {
    struct Case {
        const char* name;
        std::vector<std::vector<int>> shapes;
        std::function<Value(Graph&, std::vector<Value>&)> build;
        double lo = -0.5, hi = 0.5;
    };
    const std::vector<Case> cases = {
        {"matmul", {{3, 4}, {4, 2}}, [](Graph& g, auto& v) { return g.matmul(v[0], v[1]); }},
        {"add", {{3, 4}, {3, 4}}, [](Graph& g, auto& v) { return g.add(v[0], v[1]); }},
        {"add_row_bcast", {{3, 4}, {4}}, [](Graph& g, auto& v) { return g.add(v[0], v[1]); }},
        {"add_col_bcast", {{3, 4}, {3, 1}}, [](Graph& g, auto& v) { return g.add(v[0], v[1]); }},
        {"mul", {{3, 4}, {3, 4}}, [](Graph& g, auto& v) { return g.mul(v[0], v[1]); }},
        {"mul_row_bcast", {{3, 4}, {4}}, [](Graph& g, auto& v) { return g.mul(v[0], v[1]); }},
        {"mul_col_bcast", {{3, 4}, {3, 1}}, [](Graph& g, auto& v) { return g.mul(v[0], v[1]); }},
        {"concat_cols", {{2, 3}, {2, 2}}, [](Graph& g, auto& v) { return g.concat_cols(v[0], v[1]); }},
        {"concat_rows", {{2, 3}, {4, 3}}, [](Graph& g, auto& v) { return g.concat_rows(v[0], v[1]); }},
        {"slice_cols", {{3, 5}}, [](Graph& g, auto& v) { return g.slice_cols(v[0], 1, 3); }},
        {"slice_rows", {{5, 3}}, [](Graph& g, auto& v) { return g.slice_rows(v[0], 2, 2); }},
        {"reshape", {{2, 6}}, [](Graph& g, auto& v) { return g.reshape(v[0], {4, 3}); }},
        {"tanh", {{2, 5}}, [](Graph& g, auto& v) { return g.tanh(v[0]); }},
        {"sigmoid", {{2, 5}}, [](Graph& g, auto& v) { return g.sigmoid(v[0]); }},
        {"log", {{2, 5}}, [](Graph& g, auto& v) { return g.log(v[0]); }, 0.5, 1.5},
        {"softmax", {{3, 4}}, [](Graph& g, auto& v) { return g.softmax_rows(v[0]); }},
        {"softmax_masked", {{2, 4}},
         [](Graph& g, auto& v) { return g.softmax_rows(v[0], {1, 1, 0, 1, 0, 1, 1, 0}); }},
        {"take_rows", {{5, 3}}, [](Graph& g, auto& v) { return g.take_rows(v[0], {4, 0, 0, 2}); }},
        {"cross_entropy", {{3, 5}}, [](Graph& g, auto& v) { return g.cross_entropy_rows(v[0], {1, 4, 0}); }},
        {"mean", {{3, 4}}, [](Graph& g, auto& v) { return g.mean_all(v[0]); }},
        {"sum", {{3, 4}}, [](Graph& g, auto& v) { return g.sum_all(v[0]); }},
        {"scale", {{3, 4}}, [](Graph& g, auto& v) { return g.scale(v[0], -1.7); }},
        {"dropout", {{4, 6}}, [](Graph& g, auto& v) { return g.dropout(v[0], 0.3, 99, true); }},
        {"repeat_rows", {{2, 3}}, [](Graph& g, auto& v) { return g.repeat_rows(v[0], 3); }},
        {"weighted_sum_rows", {{2, 3}, {6, 4}},
         [](Graph& g, auto& v) { return g.weighted_sum_rows(v[0], v[1]); }},
        {"row_sum", {{3, 4}}, [](Graph& g, auto& v) { return g.row_sum(v[0]); }},
    };

    for (const auto& c : cases) {
        CAPTURE(c.name);
        for (uint64_t point = 0; point < 10; ++point) {
            Rng rng(1000 * point + 7);
            std::vector<Tensor> params;
            for (const auto& s : c.shapes) params.push_back(random_tensor(rng, s, c.lo, c.hi));
            double err = check_primitive(point, params, c.build);
            CHECK(err < 1e-4);
        }
    }
}

TEST_CASE("softmax rows: nonnegative and normalized") {
    Rng rng(5);
    Tensor x = random_tensor(rng, {6, 9}, -3.0, 3.0);
    Graph g;
    Value sm = g.softmax_rows(g.constant(x));
    g.forward();
    const auto& y = g.data(sm);
    for (int r = 0; r < 6; ++r) {
        double s = 0.0;
        for (int j = 0; j < 9; ++j) {
            CHECK(y[r * 9 + j] >= 0.0);
            s += y[r * 9 + j];
        }
        CHECK(std::abs(s - 1.0) <= 1e-6);
    }
}

TEST_CASE("forward determinism: identical inputs give bit-identical outputs") {
    auto run = [] {
        Rng rng(42);
        Tensor a = random_tensor(rng, {5, 7});
        Tensor b = random_tensor(rng, {7, 3});
        Graph g;
        Value out = g.tanh(g.matmul(g.constant(a), g.constant(b)));
        Value dropped = g.dropout(out, 0.5, 123, true);
        g.forward();
        return g.value(dropped);
    };
    Tensor t1 = run();
    Tensor t2 = run();
    REQUIRE(t1.data.size() == t2.data.size());
    CHECK(std::memcmp(t1.data.data(), t2.data.data(), t1.data.size() * sizeof(float)) == 0);
}

TEST_CASE("dropout: eval mode is identity, train mode is inverted") {
    Tensor x = Tensor::full({1, 1000}, 1.0f);
    Graph g;
    Value xv = g.constant(x);
    Value eval_out = g.dropout(xv, 0.4, 7, false);
    CHECK(eval_out.id == xv.id);  // no node added

    Value train_out = g.dropout(xv, 0.4, 7, true);
    g.forward();
    const auto& y = g.data(train_out);
    int zeros = 0;
    for (double v : y) {
        if (v == 0.0)
            ++zeros;
        else
            CHECK(v == doctest::Approx(1.0 / 0.6));
    }
    CHECK(zeros > 300);
    CHECK(zeros < 500);
}

TEST_CASE("errors: shape mismatch names the node, backward needs forward") {
    Graph g;
    Value a = g.constant({2, 3}, {1, 2, 3, 4, 5, 6});
    Value b = g.constant({2, 2}, {1, 2, 3, 4});
    CHECK_THROWS_WITH_AS(g.matmul(a, b), doctest::Contains("matmul"), std::runtime_error);

    Value s = g.sum_all(a);
    CHECK_THROWS_AS(g.backward(s), std::runtime_error);  // forward not run

    Graph g2;
    Value neg = g2.constant({1}, {-1.0});
    Value lg = g2.log(neg);
    (void)lg;
    CHECK_THROWS_WITH_AS(g2.forward(), doctest::Contains("non-finite"), std::runtime_error);
}

TEST_CASE("backward seed must be scalar; fan-out accumulates") {
    Tensor x = Tensor::full({1, 2}, 2.0f);
    Graph g;
    Value xv = g.param("x", &x);
    Value y = g.add(xv, xv);  // y = 2x
    Value s = g.sum_all(y);
    g.forward();
    CHECK_THROWS_AS(g.backward(y), std::runtime_error);
    g.backward(s);
    for (double v : g.grad(xv)) CHECK(v == doctest::Approx(2.0));
}
