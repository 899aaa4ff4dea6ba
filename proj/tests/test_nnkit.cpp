#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <numeric>
#include <random>

#include "support.hpp"
#include "uatr/error.hpp"
#include "uatr/losses.hpp"
#include "uatr/model.hpp"
#include "uatr/optim.hpp"

using namespace uatr;
using namespace uatr::testing;

TEST_CASE("cross-entropy hand values") {
    CHECK(cross_entropy(Tensor({1, 9}), std::vector<int>{4}) == doctest::Approx(std::log(9.0)).epsilon(1e-12));
    CHECK(cross_entropy(Tensor({1, 9}), std::vector<int>{4}) == doctest::Approx(2.19722).epsilon(1e-5));
    Tensor sat({1, 3}, {0, 1000, 0});
    CHECK(cross_entropy(sat, std::vector<int>{1}) == doctest::Approx(0.0).epsilon(1e-12));
    Tensor z({1, 3}, {1, 2, 3});
    const double expect = std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0)) - 3.0;
    CHECK(cross_entropy(z, std::vector<int>{2}) == doctest::Approx(expect).epsilon(1e-12));
    CHECK(cross_entropy(z, std::vector<int>{2}) == doctest::Approx(0.40761).epsilon(1e-5));
    CHECK_THROWS_AS(cross_entropy(z, std::vector<int>{3}), LabelError);
}

TEST_CASE("KL divergence contract") {
    Tensor p({1, 2}, {std::log(0.9), std::log(0.1)});
    Tensor q({1, 2}, {0.0, 0.0});
    const double expect = 0.9 * std::log(0.9 / 0.5) + 0.1 * std::log(0.1 / 0.5);
    CHECK(kl_term(p, q) == doctest::Approx(expect).epsilon(1e-12));
    CHECK(std::abs(kl_term(p, q) - 0.36806) < 1e-5);
    CHECK(kl_term(p, p) == 0.0);

    std::mt19937_64 rng(3);
    for (int i = 0; i < 10000; ++i) {
        const Tensor a = random_tensor({2, 5}, rng, 3.0);
        const Tensor b = random_tensor({2, 5}, rng, 3.0);
        CHECK(kl_term(a, b) >= 0.0);
    }
}

TEST_CASE("learning-rate schedule") {
    CHECK(lr_schedule(0) == 0.0);
    CHECK(lr_schedule(2.5) == doctest::Approx(2.5e-4));
    CHECK(lr_schedule(5) == doctest::Approx(5e-4).epsilon(1e-15));
    CHECK(lr_schedule(52.5) == doctest::Approx(2.5e-4).epsilon(1e-12));
    CHECK(lr_schedule(100) == doctest::Approx(0.0));
    CHECK(lr_schedule(150) == doctest::Approx(0.0));
}

TEST_CASE("Adam matches the bias-corrected recurrence") {
    ModelConfig cfg = compact_config();
    ModelState m = init_model(cfg, 1);
    Parameter& p = m.param("head.b");
    const std::vector<double> start = p.value.data;

    // First step moves each entry by about -lr * sign(g).
    for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad.data[i] = (i % 2 ? -1.0 : 1.0) * 0.3;
    adam_step(m, 1e-3);
    for (std::size_t i = 0; i < p.value.size(); ++i)
        CHECK(p.value.data[i] - start[i] == doctest::Approx((i % 2 ? 1.0 : -1.0) * 1e-3).epsilon(1e-6));

    // Three more steps against an explicit recurrence.
    double x = p.value.data[0], mm = p.m.data[0], vv = p.v.data[0];
    const double grads[] = {0.5, -0.2, 0.05};
    for (int s = 0; s < 3; ++s) {
        for (auto& q : m.params) std::fill(q.grad.data.begin(), q.grad.data.end(), 0.0);
        p.grad.data[0] = grads[s];
        adam_step(m, 2e-3);
        const int t = s + 2;
        mm = 0.9 * mm + 0.1 * grads[s];
        vv = 0.999 * vv + 0.001 * grads[s] * grads[s];
        const double mhat = mm / (1 - std::pow(0.9, t));
        const double vhat = vv / (1 - std::pow(0.999, t));
        x -= 2e-3 * mhat / (std::sqrt(vhat) + 1e-8);
        CHECK(p.value.data[0] == doctest::Approx(x).epsilon(1e-12));
    }
    CHECK(m.step == 4);
}

TEST_CASE("gradients of the full objective match central differences") {
    std::mt19937_64 rng(42);
    for (int trial = 0; trial < 3; ++trial) {
        ModelConfig cfg = compact_config();
        cfg.time_kernel = trial == 2 ? 1 : 3;
        ModelState m = init_model(cfg, 100 + trial);
        randomize_biases(m, rng);
        const Tensor raw = random_tensor({2, 4, 5}, rng);
        const Tensor noisy = random_tensor({2, 4, 5}, rng);
        const std::vector<int> labels{0, 2};
        const GradCheck g = gradient_check(m, raw, &noisy, labels, 2.0);
        INFO("worst relative error " << g.worst_rel << " in " << g.worst_param);
        CHECK(g.checked == m.parameter_count());
        CHECK(g.failures == 0);
    }
}

TEST_CASE("conv2d forward matches a direct loop") {
    std::mt19937_64 rng(8);
    const Tensor x = random_tensor({1, 2, 4, 7}, rng);
    const Tensor w = random_tensor({3, 2, 3, 3}, rng);
    const Tensor b = random_tensor({3}, rng);
    for (std::size_t sf : {1u, 2u}) {
        Tape tape;
        const Tensor& y = tape.value(ops::conv2d(tape, tape.constant(x), tape.constant(w), tape.constant(b), sf));
        const std::size_t Fo = (7 - 1) / sf + 1;
        REQUIRE(y.shape == std::vector<std::size_t>{1, 3, 4, Fo});
        for (std::size_t o = 0; o < 3; ++o)
            for (std::size_t t = 0; t < 4; ++t)
                for (std::size_t f = 0; f < Fo; ++f) {
                    double acc = b.data[o];
                    for (std::size_t c = 0; c < 2; ++c)
                        for (int dt = -1; dt <= 1; ++dt)
                            for (int df = -1; df <= 1; ++df) {
                                const int ti = static_cast<int>(t) + dt;
                                const int fi = static_cast<int>(f * sf) + df;
                                if (ti < 0 || ti >= 4 || fi < 0 || fi >= 7) continue;
                                acc += w.data[((o * 2 + c) * 3 + (dt + 1)) * 3 + (df + 1)] *
                                       x.data[(c * 4 + ti) * 7 + fi];
                            }
                    CHECK(y.data[(o * 4 + t) * Fo + f] == doctest::Approx(acc).epsilon(1e-12));
                }
    }
}

TEST_CASE("forward shapes") {
    ModelConfig cfg = compact_config(5);
    ModelState m = init_model(cfg, 3);
    std::mt19937_64 rng(1);
    Tape tape;
    auto bound = bind(tape, m);
    auto out = forward(tape, bound, random_tensor({3, 6, 9}, rng));
    CHECK(tape.value(out.logits).shape == std::vector<std::size_t>{3, 5});
    CHECK(tape.value(out.emb).shape == std::vector<std::size_t>{3, 4});
    CHECK(tape.value(out.s_raw).shape == std::vector<std::size_t>{3, 3});
    CHECK(tape.value(out.sequence).shape == std::vector<std::size_t>{3, 6, 4});
    CHECK_THROWS_AS(forward(tape, bound, Tensor({3, 6})), ShapeError);
}

TEST_CASE("attention pooling is invariant to time permutations") {
    ModelConfig cfg = compact_config();
    ModelState m = init_model(cfg, 9);
    std::mt19937_64 rng(2);
    const Tensor seq = random_tensor({2, 6, 4}, rng);
    std::vector<std::size_t> perm{3, 0, 5, 1, 4, 2};
    Tensor shuffled(seq.shape);
    for (std::size_t s = 0; s < 2; ++s)
        for (std::size_t t = 0; t < 6; ++t)
            for (std::size_t c = 0; c < 4; ++c) shuffled.data[(s * 6 + t) * 4 + c] = seq.data[(s * 6 + perm[t]) * 4 + c];
    Tape tape;
    auto bound = bind(tape, m);
    const Tensor a = tape.value(pool_and_heads(tape, bound, tape.constant(seq)).logits);
    const Tensor b = tape.value(pool_and_heads(tape, bound, tape.constant(shuffled)).logits);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.data[i] == doctest::Approx(b.data[i]).epsilon(1e-12));

    // With time-local kernels the whole network is permutation invariant.
    cfg.time_kernel = 1;
    ModelState m1 = init_model(cfg, 9);
    const Tensor x = random_tensor({1, 6, 5}, rng);
    Tensor xp(x.shape);
    for (std::size_t t = 0; t < 6; ++t)
        for (std::size_t f = 0; f < 5; ++f) xp.data[t * 5 + f] = x.data[perm[t] * 5 + f];
    Tape t2;
    auto b2 = bind(t2, m1);
    const Tensor za = t2.value(forward(t2, b2, x).logits);
    const Tensor zb = t2.value(forward(t2, b2, xp).logits);
    for (std::size_t i = 0; i < za.size(); ++i) CHECK(za.data[i] == doctest::Approx(zb.data[i]).epsilon(1e-12));
}

TEST_CASE("checkpoint round trip and architecture digest") {
    ModelConfig cfg = compact_config();
    ModelState m = init_model(cfg, 4);
    m.step = 17;
    const auto bytes = encode_checkpoint(m);
    const ModelState back = decode_checkpoint({bytes.data(), bytes.size()}, cfg);
    CHECK(back.step == 17);
    REQUIRE(back.params.size() == m.params.size());
    for (std::size_t i = 0; i < m.params.size(); ++i) {
        CHECK(back.params[i].name == m.params[i].name);
        for (std::size_t k = 0; k < m.params[i].value.size(); ++k)
            CHECK(back.params[i].value.data[k] == static_cast<double>(static_cast<float>(m.params[i].value.data[k])));
    }
    ModelConfig other = cfg;
    other.heads = 1;
    CHECK_THROWS_AS(decode_checkpoint({bytes.data(), bytes.size()}, other), FormatError);
    CHECK_THROWS_AS(decode_checkpoint({bytes.data(), bytes.size() - 2}, cfg), FormatError);
}

TEST_CASE("objective wiring") {
    ModelConfig cfg = compact_config();
    ModelState m = init_model(cfg, 5);
    std::mt19937_64 rng(6);
    const Tensor raw = random_tensor({2, 4, 5}, rng);
    const Tensor noisy = random_tensor({2, 4, 5}, rng);
    const std::vector<int> labels{1, 0};
    Tape tape;
    auto bound = bind(tape, m);
    CHECK_THROWS_AS(total_loss(tape, forward_bundle(tape, bound, raw), labels, 1.0), ParameterError);

    // alpha = 0: the loss is the clean cross-entropy, whatever the noisy input.
    const double clean = objective(m, raw, nullptr, labels, 0.0, false);
    CHECK(objective(m, raw, &noisy, labels, 0.0, false) == clean);
    // alpha > 0 adds a non-negative symmetric KL term.
    CHECK(objective(m, raw, &noisy, labels, 2.0, false) > clean);
    CHECK(objective(m, raw, &raw, labels, 2.0, false) == doctest::Approx(clean).epsilon(1e-14));
}

TEST_CASE("numeric guard names the operation") {
    Tape tape;
    Var x = tape.constant(Tensor({1}, {1e308}));
    try {
        ops::scale(tape, x, 10.0);
        FAIL("expected a numeric error");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("scale") != std::string::npos);
    }
}
