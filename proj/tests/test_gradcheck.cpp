#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fiberseg/nn.hpp"
#include "fiberseg/rng.hpp"

using namespace fiberseg;

namespace {

Matrix random_seq(std::size_t T, std::size_t dim, Rng& rng) {
    Matrix x(T, dim);
    for (double& v : x.data) v = rng.uniform(-1.5, 1.5);
    return x;
}

double batch_loss(const ModelParams& m, const std::vector<const Matrix*>& xs,
                  const std::vector<const std::vector<std::uint8_t>*>& vs,
                  const std::vector<int>& labels) {
    double sum = 0.0;
    for (std::size_t e = 0; e < xs.size(); ++e) {
        const Vec p = model_forward(m, *xs[e], *vs[e]);
        sum += m.head_kind == HeadKind::SigmoidBinary
                   ? binary_cross_entropy(p[0], labels[e])
                   : categorical_cross_entropy(p, labels[e]);
    }
    return sum / static_cast<double>(xs.size());
}

struct GradCheckResult {
    double max_rel = 0.0;
    std::string worst;
};

// Central finite differences (h = 1e-5) over every parameter. The relative
// error uses max(|analytic|, |numeric|, 1e-4) as denominator: below that
// scale the difference quotient's own rounding noise exceeds 1e-5 relative.
GradCheckResult gradcheck(ModelParams m, const std::vector<const Matrix*>& xs,
                          const std::vector<const std::vector<std::uint8_t>*>& vs,
                          const std::vector<int>& labels) {
    const BatchGrads bg = backward(m, xs, vs, labels);
    auto analytic = tensor_refs(const_cast<ModelParams&>(bg.grads));
    auto params = tensor_refs(m);

    const double h = 1e-5;
    GradCheckResult res;
    for (std::size_t i = 0; i < params.size(); ++i) {
        for (std::size_t j = 0; j < params[i].size; ++j) {
            const double orig = params[i].data[j];
            params[i].data[j] = orig + h;
            const double up = batch_loss(m, xs, vs, labels);
            params[i].data[j] = orig - h;
            const double down = batch_loss(m, xs, vs, labels);
            params[i].data[j] = orig;

            const double numeric = (up - down) / (2.0 * h);
            const double exact = analytic[i].data[j];
            const double rel = std::fabs(exact - numeric) /
                               std::max({std::fabs(exact), std::fabs(numeric), 1e-4});
            if (rel > res.max_rel) {
                res.max_rel = rel;
                res.worst = params[i].name + "[" + std::to_string(j) + "]";
            }
        }
    }
    return res;
}

}  // namespace

TEST_CASE("gradients match finite differences on the 4/3/2 sigmoid model") {
    NetConfig cfg;
    cfg.bilstm_hidden = 4;
    cfg.stack_hidden = {3, 2};
    cfg.head_kind = HeadKind::SigmoidBinary;
    const ModelParams m = init_params(cfg, 1234);

    Rng rng(55);
    const Matrix x0 = random_seq(6, 3, rng);
    const Matrix x1 = random_seq(6, 3, rng);
    const std::vector<std::uint8_t> v_full(6, 1);
    const std::vector<std::uint8_t> v_masked{1, 1, 1, 1, 0, 0};

    const auto res = gradcheck(m, {&x0, &x1}, {&v_full, &v_masked}, {1, 0});
    INFO("worst parameter: ", res.worst, " rel err ", res.max_rel);
    CHECK(res.max_rel <= 1e-5);
}

TEST_CASE("gradients match finite differences with softmax head and mid dense") {
    NetConfig cfg;
    cfg.bilstm_hidden = 3;
    cfg.stack_hidden = {2};
    cfg.dense_hidden = 3;
    cfg.head_kind = HeadKind::SoftmaxMulticlass;
    const ModelParams m = init_params(cfg, 77);

    Rng rng(56);
    const Matrix x0 = random_seq(5, 3, rng);
    const Matrix x1 = random_seq(5, 3, rng);
    const std::vector<std::uint8_t> v0(5, 1);
    const std::vector<std::uint8_t> v1{1, 1, 1, 0, 0};

    const auto res = gradcheck(m, {&x0, &x1}, {&v0, &v1}, {2, 7});
    INFO("worst parameter: ", res.worst, " rel err ", res.max_rel);
    CHECK(res.max_rel <= 1e-5);
}

TEST_CASE("gradients match finite differences with an empty stack") {
    NetConfig cfg;
    cfg.bilstm_hidden = 3;
    cfg.stack_hidden = {};
    cfg.head_kind = HeadKind::SigmoidBinary;
    const ModelParams m = init_params(cfg, 88);

    Rng rng(57);
    const Matrix x0 = random_seq(4, 3, rng);
    const std::vector<std::uint8_t> v0(4, 1);
    const auto res = gradcheck(m, {&x0}, {&v0}, {1});
    INFO("worst parameter: ", res.worst, " rel err ", res.max_rel);
    CHECK(res.max_rel <= 1e-5);
}

TEST_CASE("output-gate bias gradient matches the hand derivation") {
    // One BiLSTM unit per direction, one timestep, sigmoid head. With
    // c0 = 0: c = i*g, h = o*tanh(c), p = sigma(w_f*h_f + w_b*h_b + b);
    // dL/db_o(fwd) = (p - y) * w_f * tanh(c_f) * o_f * (1 - o_f).
    NetConfig cfg;
    cfg.bilstm_hidden = 1;
    cfg.stack_hidden = {};
    const ModelParams m = init_params(cfg, 3);

    Matrix x(1, 3);
    x(0, 0) = 0.4;
    x(0, 1) = -0.7;
    x(0, 2) = 0.9;
    const std::vector<std::uint8_t> v{1};
    const int y = 1;

    auto gate = [&](const LstmCellParams& c, const Matrix& w, const Vec& b,
                    std::size_t r) {
        double a = b[r];
        a += w(r, 0) * 0.0;  // h_prev = 0
        for (int d = 0; d < 3; ++d)
            a += w(r, 1 + static_cast<std::size_t>(d)) * x(0, static_cast<std::size_t>(d));
        (void)c;
        return a;
    };
    auto sig = [](double t) { return 1.0 / (1.0 + std::exp(-t)); };

    const LstmCellParams& cf = m.bilstm_fwd;
    const double i_f = sig(gate(cf, cf.W_i, cf.b_i, 0));
    const double g_f = std::tanh(gate(cf, cf.W_C, cf.b_C, 0));
    const double o_f = sig(gate(cf, cf.W_o, cf.b_o, 0));
    const double c_f = i_f * g_f;
    const double h_f = o_f * std::tanh(c_f);

    const LstmCellParams& cb = m.bilstm_bwd;
    const double i_b = sig(gate(cb, cb.W_i, cb.b_i, 0));
    const double g_b = std::tanh(gate(cb, cb.W_C, cb.b_C, 0));
    const double o_b = sig(gate(cb, cb.W_o, cb.b_o, 0));
    const double c_b = i_b * g_b;
    const double h_b = o_b * std::tanh(c_b);

    const double p = sig(m.head.W(0, 0) * h_f + m.head.W(0, 1) * h_b + m.head.b[0]);
    const double expected_dbo_f =
        (p - y) * m.head.W(0, 0) * std::tanh(c_f) * o_f * (1.0 - o_f);

    const BatchGrads bg = backward(m, {&x}, {&v}, {y});
    CHECK(bg.grads.bilstm_fwd.b_o[0] == doctest::Approx(expected_dbo_f).epsilon(1e-10));
}

TEST_CASE("near-perfect predictions give near-zero gradients") {
    NetConfig cfg;
    cfg.bilstm_hidden = 2;
    cfg.stack_hidden = {2};
    ModelParams m = init_params(cfg, 9);
    m.head.b[0] = 50.0;  // saturate the head: p ~ 1 - eps

    Rng rng(58);
    const Matrix x = random_seq(6, 3, rng);
    const std::vector<std::uint8_t> v(6, 1);
    const BatchGrads bg = backward(m, {&x}, {&v}, {1});
    CHECK(bg.mean_loss <= 1e-6);
    for (const auto& t : tensor_refs(const_cast<ModelParams&>(bg.grads)))
        for (std::size_t j = 0; j < t.size; ++j) CHECK(std::fabs(t.data[j]) <= 1e-6);
}
