// Gradient checks: analytic backward vs central finite differences in double
// precision at tiny dimensions, plus the exact-masking semantics the encoders
// rely on.

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "retfiner/autograd.hpp"
#include "retfiner/rng.hpp"

using namespace retfiner;
using ag::make_param;
using ag::NodePtr;
using ag::Tape;

namespace {

Mat<double> random_mat(Rng& rng, Index rows, Index cols, double scale = 1.0) {
    Mat<double> m(rows, cols);
    for (Index r = 0; r < rows; ++r) {
        for (Index c = 0; c < cols; ++c) {
            m(r, c) = scale * rng.normal();
        }
    }
    return m;
}

// Builds the graph twice per probe entry (f(x+h), f(x-h)) and once with the
// analytic backward; every input leaf is checked.
void check_gradients(const std::vector<Mat<double>>& inputs,
                     const std::function<NodePtr<double>(Tape<double>&,
                                                         std::vector<NodePtr<double>>&)>& fn,
                     double tol = 1e-6, double h = 1e-5) {
    // Analytic pass.
    Tape<double> g(true);
    std::vector<NodePtr<double>> leaves;
    for (const auto& m : inputs) {
        leaves.push_back(make_param<double>(m, "leaf"));
    }
    auto loss = fn(g, leaves);
    REQUIRE(loss->value.size() == 1);
    for (auto& leaf : leaves) {
        leaf->zero_grad();
    }
    g.backward(loss);

    auto eval = [&](const std::vector<Mat<double>>& pts) {
        Tape<double> gg(false);
        std::vector<NodePtr<double>> ls;
        for (const auto& m : pts) {
            ls.push_back(gg.constant(m));
        }
        return fn(gg, ls)->scalar();
    };

    for (size_t i = 0; i < inputs.size(); ++i) {
        for (Index r = 0; r < inputs[i].rows(); ++r) {
            for (Index c = 0; c < inputs[i].cols(); ++c) {
                auto plus = inputs;
                auto minus = inputs;
                plus[i](r, c) += h;
                minus[i](r, c) -= h;
                const double fd = (eval(plus) - eval(minus)) / (2 * h);
                const double an = leaves[i]->grad_ready ? leaves[i]->grad(r, c) : 0.0;
                const double denom = std::max({std::abs(fd), std::abs(an), 1e-8});
                INFO("input " << i << " entry (" << r << "," << c << ") fd=" << fd
                              << " analytic=" << an);
                REQUIRE(std::abs(fd - an) / denom < tol);
            }
        }
    }
}

// Reduces a matrix to a scalar with fixed nonuniform coefficients:
// loss = sum(x .* w) = trace(x w^T), so every entry carries distinct weight.
NodePtr<double> weigh(Tape<double>& g, NodePtr<double> x) {
    const Index rows = x->value.rows();
    const Index cols = x->value.cols();
    Mat<double> w(rows, cols);
    for (Index r = 0; r < rows; ++r) {
        for (Index c = 0; c < cols; ++c) {
            w(r, c) = 0.25 + 0.5 * std::sin(static_cast<double>(r * cols + c));
        }
    }
    auto prod = g.matmul_nt(x, g.constant(w));  // [rows, rows]; diag(r) = x.row(r)·w.row(r)
    NodePtr<double> total;
    for (Index r = 0; r < rows; ++r) {
        auto row = g.gather_rows(prod, {r});  // [1, rows]
        Mat<double> pick = Mat<double>::Zero(rows, 1);
        pick(r, 0) = 1.0;
        auto entry = g.matmul(row, g.constant(pick));  // [1, 1]
        total = total ? g.add(total, entry) : entry;
    }
    return total;
}

}  // namespace

TEST_CASE("matmul gradients match finite differences") {
    Rng rng(11);
    const auto a = random_mat(rng, 3, 4);
    const auto b = random_mat(rng, 4, 2);
    check_gradients({a, b}, [](Tape<double>& g, std::vector<NodePtr<double>>& in) {
        return weigh(g, g.matmul(in[0], in[1]));
    });
}

TEST_CASE("matmul_nt gradients match finite differences") {
    Rng rng(12);
    const auto a = random_mat(rng, 3, 4);
    const auto b = random_mat(rng, 2, 4);
    check_gradients({a, b}, [](Tape<double>& g, std::vector<NodePtr<double>>& in) {
        return weigh(g, g.matmul_nt(in[0], in[1]));
    });
}

TEST_CASE("linear gradients match finite differences") {
    Rng rng(13);
    const auto x = random_mat(rng, 3, 4);
    const auto w = random_mat(rng, 4, 5);
    const auto b = random_mat(rng, 1, 5);
    check_gradients({x, w, b}, [](Tape<double>& g, std::vector<NodePtr<double>>& in) {
        return weigh(g, g.linear(in[0], in[1], in[2]));
    });
}

TEST_CASE("add, scale, add_rowvec, transpose gradients") {
    Rng rng(14);
    const auto a = random_mat(rng, 3, 4);
    const auto b = random_mat(rng, 3, 4);
    const auto r = random_mat(rng, 1, 3);
    check_gradients({a, b, r}, [](Tape<double>& g, std::vector<NodePtr<double>>& in) {
        auto sum = g.add(in[0], g.scale(in[1], 0.7));
        auto t = g.transpose(sum);                // [4, 3]
        return weigh(g, g.add_rowvec(t, in[2]));  // rowvec length 3
    });
}

TEST_CASE("exp_elem and mul_scalar_node gradients") {
    Rng rng(15);
    const auto a = random_mat(rng, 2, 3, 0.5);
    const auto s = random_mat(rng, 1, 1, 0.5);
    check_gradients({a, s}, [](Tape<double>& g, std::vector<NodePtr<double>>& in) {
        return weigh(g, g.mul_scalar_node(g.exp_elem(in[0]), g.exp_elem(in[1])));
    });
}

TEST_CASE("gather_rows and concat_rows gradients") {
    Rng rng(16);
    const auto a = random_mat(rng, 4, 3);
    const auto b = random_mat(rng, 2, 3);
    check_gradients({a, b}, [](Tape<double>& g, std::vector<NodePtr<double>>& in) {
        auto cat = g.concat_rows(in[0], in[1]);                 // [6, 3]
        auto picked = g.gather_rows(cat, {5, 0, 2, 2});         // repeats accumulate
        return weigh(g, picked);
    });
}

TEST_CASE("add_positional gradients") {
    Rng rng(17);
    const auto x = random_mat(rng, 6, 3);    // batch 2, len 3
    const auto pos = random_mat(rng, 3, 3);  // [len, dim]
    check_gradients({x, pos}, [](Tape<double>& g, std::vector<NodePtr<double>>& in) {
        return weigh(g, g.add_positional(in[0], in[1], 2));
    });
}

TEST_CASE("layer_norm gradients match finite differences") {
    Rng rng(18);
    const auto x = random_mat(rng, 3, 5);
    const auto gamma = random_mat(rng, 1, 5, 0.5);
    const auto beta = random_mat(rng, 1, 5, 0.5);
    check_gradients(
        {x, gamma, beta},
        [](Tape<double>& g, std::vector<NodePtr<double>>& in) {
            return weigh(g, g.layer_norm(in[0], in[1], in[2], 1e-5));
        },
        1e-5);
}

TEST_CASE("gelu gradients match finite differences") {
    Rng rng(19);
    const auto x = random_mat(rng, 3, 4);
    check_gradients({x}, [](Tape<double>& g, std::vector<NodePtr<double>>& in) {
        return weigh(g, g.gelu(in[0]));
    });
}

TEST_CASE("l2_normalize_rows gradients match finite differences") {
    Rng rng(20);
    auto x = random_mat(rng, 3, 4);
    x.array() += 0.5;  // keep norms comfortably away from zero
    check_gradients({x}, [](Tape<double>& g, std::vector<NodePtr<double>>& in) {
        return weigh(g, g.l2_normalize_rows(in[0]));
    });
}

TEST_CASE("attention gradients match finite differences (unmasked)") {
    Rng rng(21);
    const Index batch = 2, len = 3, dim = 4, heads = 2;
    const auto q = random_mat(rng, batch * len, dim);
    const auto k = random_mat(rng, batch * len, dim);
    const auto v = random_mat(rng, batch * len, dim);
    check_gradients(
        {q, k, v},
        [&](Tape<double>& g, std::vector<NodePtr<double>>& in) {
            Mat<double> no_mask;
            return weigh(g, g.attention(in[0], in[1], in[2], batch, heads, no_mask));
        },
        1e-5);
}

TEST_CASE("attention gradients match finite differences (masked)") {
    Rng rng(22);
    const Index batch = 1, len = 4, dim = 4, heads = 2;
    const auto q = random_mat(rng, batch * len, dim);
    const auto k = random_mat(rng, batch * len, dim);
    const auto v = random_mat(rng, batch * len, dim);
    // Causal + one padded column: -inf entries must contribute exactly zero.
    Mat<double> mask = Mat<double>::Zero(len, len);
    const double ninf = -std::numeric_limits<double>::infinity();
    for (Index r = 0; r < len; ++r) {
        for (Index c = 0; c < len; ++c) {
            if (c > r || c == len - 1) {
                mask(r, c) = ninf;
            }
        }
    }
    mask(len - 1, len - 1) = 0.0;  // keep the padded row's own position finite
    check_gradients(
        {q, k, v},
        [&](Tape<double>& g, std::vector<NodePtr<double>>& in) {
            return weigh(g, g.attention(in[0], in[1], in[2], batch, heads, mask));
        },
        1e-5);
}

TEST_CASE("cross attention gradients with rectangular kv") {
    Rng rng(23);
    const Index batch = 2, len_q = 3, len_kv = 5, dim = 4, heads = 2;
    const auto q = random_mat(rng, batch * len_q, dim);
    const auto k = random_mat(rng, batch * len_kv, dim);
    const auto v = random_mat(rng, batch * len_kv, dim);
    check_gradients(
        {q, k, v},
        [&](Tape<double>& g, std::vector<NodePtr<double>>& in) {
            Mat<double> no_mask;
            return weigh(g, g.attention(in[0], in[1], in[2], batch, heads, no_mask));
        },
        1e-5);
}

TEST_CASE("softmax_cross_entropy gradients and inactive targets") {
    Rng rng(24);
    const auto logits = random_mat(rng, 4, 5);
    check_gradients({logits}, [](Tape<double>& g, std::vector<NodePtr<double>>& in) {
        return g.softmax_cross_entropy(in[0], {1, -1, 4, 0});  // row 1 inactive
    });
    // Inactive rows receive exactly zero gradient.
    Tape<double> g(true);
    auto leaf = make_param<double>(logits, "logits");
    auto loss = g.softmax_cross_entropy(leaf, {1, -1, 4, 0});
    leaf->zero_grad();
    g.backward(loss);
    for (Index c = 0; c < 5; ++c) {
        REQUIRE(leaf->grad(1, c) == 0.0);
    }
}

TEST_CASE("exact -inf masking zeroes attention probabilities") {
    // exp(-inf) == 0 exactly, so a masked position can never leak value.
    Rng rng(25);
    const Index batch = 1, len = 3, dim = 2, heads = 1;
    Tape<double> g(false);
    auto q = g.constant(random_mat(rng, len, dim));
    auto k = g.constant(random_mat(rng, len, dim));
    Mat<double> v_val = Mat<double>::Zero(len, dim);
    v_val(2, 0) = 1e18;  // poison the masked position
    auto v = g.constant(v_val);
    Mat<double> mask = Mat<double>::Zero(len, len);
    mask.col(2).setConstant(-std::numeric_limits<double>::infinity());
    auto out = g.attention(q, k, v, batch, heads, mask);
    for (Index r = 0; r < len; ++r) {
        REQUIRE(out->value(r, 0) == 0.0);  // exact, not approximate
    }
}

TEST_CASE("backward visits shared subgraphs once") {
    // f(x) = sum over two branches reusing one node: d/dx (x*2 + x*3) = 5.
    Tape<double> g(true);
    Mat<double> one(1, 1);
    one(0, 0) = 1.5;
    auto x = make_param<double>(one, "x");
    auto shared = g.scale(x, 1.0);
    auto loss = g.add(g.scale(shared, 2.0), g.scale(shared, 3.0));
    x->zero_grad();
    g.backward(loss);
    REQUIRE(x->grad(0, 0) == Catch::Approx(5.0).epsilon(1e-12));
}
