#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "fd_check.hpp"
#include "patchrec/optimizer.hpp"
#include "patchrec/rng.hpp"
#include "patchrec/tensor.hpp"

using namespace patchrec;
using patchrec::testing::fd_check;

namespace {

Tensor random_tensor(Shape shape, Rng& rng) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& v : t.data()) v = rng.uniform() * 2.0 - 1.0;
    return t;
}

} // namespace

TEST_CASE("matmul identity and hand arithmetic") {
    Tensor i2 = Tensor::from({2, 2}, {1, 0, 0, 1});
    Tensor p = matmul(i2, i2);
    CHECK(p.data()[0] == 1.0);
    CHECK(p.data()[1] == 0.0);
    CHECK(p.data()[2] == 0.0);
    CHECK(p.data()[3] == 1.0);

    Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
    Tensor b = Tensor::from({2, 1}, {1, 1});
    Tensor c = matmul(a, b);
    CHECK(c.data()[0] == 3.0);
    CHECK(c.data()[1] == 7.0);
}

TEST_CASE("matmul shape mismatch names both shapes") {
    Tensor a = Tensor::zeros({5, 4});
    Tensor b = Tensor::zeros({3, 2});
    CHECK_THROWS_WITH(matmul(a, b), Catch::Matchers::ContainsSubstring("[5 x 4]") &&
                                        Catch::Matchers::ContainsSubstring("[3 x 2]"));
}

TEST_CASE("matmul gradient matches finite differences") {
    Rng rng(7);
    Tensor a = random_tensor({5, 4}, rng);
    Tensor b = random_tensor({4, 3}, rng);
    Tensor w = random_tensor({5, 3}, rng);
    auto report = fd_check({a, b}, [&] { return dot(matmul(a, b), w); });
    CHECK(report.checked == 32);
    CHECK(report.max_rel_err < 1e-6);
}

TEST_CASE("every primitive op matches finite differences") {
    Rng rng(11);
    const double tol = 1e-5;

    SECTION("matmul_nt") {
        Tensor a = random_tensor({4, 6}, rng);
        Tensor b = random_tensor({5, 6}, rng);
        Tensor w = random_tensor({4, 5}, rng);
        CHECK(fd_check({a, b}, [&] { return dot(matmul_nt(a, b), w); }).max_rel_err < tol);
    }
    SECTION("add and add_rowvec and scale") {
        Tensor a = random_tensor({3, 4}, rng);
        Tensor b = random_tensor({3, 4}, rng);
        Tensor v = random_tensor({1, 4}, rng);
        Tensor w = random_tensor({3, 4}, rng);
        CHECK(fd_check({a, b}, [&] { return dot(add(a, b), w); }).max_rel_err < tol);
        CHECK(fd_check({a, v}, [&] { return dot(add_rowvec(a, v), w); }).max_rel_err < tol);
        CHECK(fd_check({a}, [&] { return dot(scale(a, -1.7), w); }).max_rel_err < tol);
    }
    SECTION("gelu") {
        Tensor a = random_tensor({4, 5}, rng);
        Tensor w = random_tensor({4, 5}, rng);
        CHECK(fd_check({a}, [&] { return dot(gelu(a), w); }).max_rel_err < tol);
    }
    SECTION("layer_norm") {
        Tensor a = random_tensor({4, 8}, rng);
        Tensor gain = random_tensor({1, 8}, rng);
        Tensor bias = random_tensor({1, 8}, rng);
        Tensor w = random_tensor({4, 8}, rng);
        CHECK(fd_check({a, gain, bias}, [&] { return dot(layer_norm(a, gain, bias), w); })
                  .max_rel_err < tol);
    }
    SECTION("causal_softmax") {
        Tensor a = random_tensor({6, 6}, rng);
        Tensor w = random_tensor({6, 6}, rng);
        CHECK(fd_check({a}, [&] { return dot(causal_softmax(a), w); }).max_rel_err < tol);
    }
    SECTION("mean_pool") {
        Tensor a = random_tensor({5, 7}, rng);
        Tensor w = random_tensor({1, 7}, rng);
        CHECK(fd_check({a}, [&] { return dot(mean_pool(a), w); }).max_rel_err < tol);
    }
    SECTION("slices and concats") {
        Tensor a = random_tensor({5, 8}, rng);
        Tensor b = random_tensor({3, 8}, rng);
        Tensor wr = random_tensor({3, 8}, rng);
        Tensor wc = random_tensor({5, 4}, rng);
        CHECK(fd_check({a}, [&] { return dot(slice_rows(a, 1, 3), wr); }).max_rel_err < tol);
        CHECK(fd_check({a}, [&] { return dot(slice_cols(a, 2, 4), wc); }).max_rel_err < tol);
        Tensor w2 = random_tensor({8, 8}, rng);
        CHECK(fd_check({a, b}, [&] { return dot(concat_rows({a, b}), w2); }).max_rel_err < tol);
        Tensor c = random_tensor({5, 2}, rng);
        Tensor w3 = random_tensor({5, 10}, rng);
        CHECK(fd_check({a, c}, [&] { return dot(concat_cols({a, c}), w3); }).max_rel_err < tol);
    }
    SECTION("embedding_gather") {
        Tensor table = random_tensor({9, 4}, rng);
        std::vector<std::int32_t> ids = {3, 0, 3, 8, 1};
        Tensor w = random_tensor({5, 4}, rng);
        CHECK(fd_check({table}, [&] { return dot(embedding_gather(table, ids), w); })
                  .max_rel_err < tol);
    }
    SECTION("softmax_cross_entropy") {
        Tensor logits = random_tensor({4, 6}, rng);
        std::vector<std::int32_t> targets = {2, 5, 0, 3};
        std::vector<std::uint8_t> mask = {1, 0, 1, 1};
        CHECK(fd_check({logits}, [&] { return softmax_cross_entropy(logits, targets, mask); })
                  .max_rel_err < tol);
    }
}

TEST_CASE("mean_pool values and exact backward split") {
    Tensor single = Tensor::from({1, 3}, {4, 5, 6});
    Tensor pooled = mean_pool(single);
    CHECK(pooled.data()[0] == 4.0);
    CHECK(pooled.data()[2] == 6.0);

    Tensor sym = Tensor::from({2, 2}, {2, 0, 0, 2});
    Tensor p2 = mean_pool(sym);
    CHECK(p2.data()[0] == 1.0);
    CHECK(p2.data()[1] == 1.0);

    // Gradient of sum(output) w.r.t. each row element is exactly 1/7.
    Rng rng(3);
    Tensor rows = random_tensor({7, 16}, rng);
    rows.set_requires_grad(true);
    Tensor ones = Tensor::from({1, 16}, std::vector<double>(16, 1.0));
    ComputationTape tape;
    {
        ComputationTape::Scope scope(tape);
        Tensor loss = dot(mean_pool(rows), ones);
        tape.backward(loss);
    }
    for (double g : rows.grad()) CHECK(g == 1.0 / 7.0);

    CHECK_THROWS_AS(mean_pool(Tensor::zeros({0, 4})), DimensionError);
}

TEST_CASE("mean_pool backward is grad over n exactly") {
    // Received gradient g must land as g/n on every input row, bit for bit.
    Rng rng(5);
    Tensor rows = random_tensor({3, 4}, rng);
    rows.set_requires_grad(true);
    Tensor w = random_tensor({1, 4}, rng);
    ComputationTape tape;
    {
        ComputationTape::Scope scope(tape);
        Tensor loss = dot(mean_pool(rows), w);
        tape.backward(loss);
    }
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 4; ++j)
            CHECK(rows.grad()[i * 4 + j] == w.data()[j] / 3.0);
}

TEST_CASE("softmax cross entropy closed forms") {
    // Near-deterministic correct prediction.
    Tensor logits = Tensor::zeros({2, 5});
    logits.at(0, 3) = 20.0;
    logits.at(1, 1) = 20.0;
    std::vector<std::int32_t> targets = {3, 1};
    std::vector<std::uint8_t> mask = {1, 1};
    CHECK(softmax_cross_entropy(logits, targets, mask).value() < 1e-6);

    // Uniform logits, V = 4, single masked-in position: loss = ln 4.
    Tensor uniform = Tensor::zeros({3, 4});
    std::vector<std::int32_t> t2 = {0, 2, 1};
    std::vector<std::uint8_t> m2 = {0, 1, 0};
    CHECK(softmax_cross_entropy(uniform, t2, m2).value() ==
          Catch::Approx(std::log(4.0)).epsilon(1e-12));

    // All-false mask is a hard error.
    std::vector<std::uint8_t> m3 = {0, 0, 0};
    CHECK_THROWS_AS(softmax_cross_entropy(uniform, t2, m3), DataError);
}

TEST_CASE("masked-out positions receive exactly zero gradient") {
    Rng rng(13);
    Tensor logits = random_tensor({4, 6}, rng);
    logits.set_requires_grad(true);
    std::vector<std::int32_t> targets = {1, 2, 3, 4};
    std::vector<std::uint8_t> mask = {1, 0, 1, 0};
    ComputationTape tape;
    {
        ComputationTape::Scope scope(tape);
        Tensor loss = softmax_cross_entropy(logits, targets, mask);
        tape.backward(loss);
    }
    for (std::size_t j = 0; j < 6; ++j) {
        CHECK(logits.grad()[1 * 6 + j] == 0.0);
        CHECK(logits.grad()[3 * 6 + j] == 0.0);
        CHECK(logits.grad()[0 * 6 + j] != 0.0);
    }
}

TEST_CASE("loss invariant under per-position logit shift") {
    Rng rng(17);
    Tensor logits = random_tensor({3, 8}, rng);
    std::vector<std::int32_t> targets = {5, 0, 7};
    std::vector<std::uint8_t> mask = {1, 1, 1};
    const double base = softmax_cross_entropy(logits, targets, mask).value();

    Tensor shifted = logits.clone();
    for (std::size_t j = 0; j < 8; ++j) {
        shifted.at(0, j) += 3.25;
        shifted.at(1, j) -= 11.0;
        shifted.at(2, j) += 0.5;
    }
    const double moved = softmax_cross_entropy(shifted, targets, mask).value();
    CHECK(std::abs(base - moved) < 1e-10);
}

TEST_CASE("gradients accumulate across multiple uses") {
    Tensor x = Tensor::from({1, 2}, {2.0, 3.0}, true);
    Tensor w = Tensor::from({1, 2}, {1.0, 1.0});
    ComputationTape tape;
    {
        ComputationTape::Scope scope(tape);
        Tensor y = add(x, x); // dy/dx = 2
        Tensor loss = dot(y, w);
        tape.backward(loss);
    }
    CHECK(x.grad()[0] == 2.0);
    CHECK(x.grad()[1] == 2.0);
}

TEST_CASE("no tape means no graph bookkeeping") {
    Tensor x = Tensor::from({2, 2}, {1, 2, 3, 4}, true);
    Tensor y = matmul(x, x);
    CHECK_FALSE(y.tracked());
    CHECK_FALSE(y.has_grad());
}

TEST_CASE("adam zero-gradient fixed point") {
    Tensor p = Tensor::from({2, 2}, {1, 2, 3, 4}, true);
    OptimizerConfig cfg;
    cfg.learning_rate = 0.1;
    cfg.total_steps = 10;
    cfg.warmup_frac = 0.0;
    AdamOptimizer opt({{"p", p}}, cfg);
    p.zero_grad(); // allocate zeros
    opt.step();
    CHECK(p.data()[0] == 1.0);
    CHECK(p.data()[3] == 4.0);
    CHECK(opt.step_count() == 1);
}

TEST_CASE("learning rate schedule: warmup then cosine") {
    Tensor p = Tensor::scalar(0.0, true);
    OptimizerConfig cfg;
    cfg.learning_rate = 0.4;
    cfg.total_steps = 200;
    cfg.warmup_frac = 0.05;
    AdamOptimizer opt({{"p", p}}, cfg);

    // Warmup start: step 0 of T runs at lr 0.
    CHECK(opt.effective_lr(0) == 0.0);

    // At step floor(0.05 * T) the rate is the peak, within one warmup increment.
    const std::size_t warm = static_cast<std::size_t>(0.05 * 200);
    const double increment = cfg.learning_rate / static_cast<double>(warm);
    CHECK(opt.effective_lr(warm) >= cfg.learning_rate - increment);
    CHECK(opt.effective_lr(warm) <= cfg.learning_rate);

    // Cosine tail decays monotonically to ~0.
    CHECK(opt.effective_lr(120) > opt.effective_lr(180));
    CHECK(opt.effective_lr(199) < 0.01 * cfg.learning_rate);
}

TEST_CASE("adam rejects non-finite gradients naming the parameter") {
    Tensor p = Tensor::from({1, 2}, {1.0, 2.0}, true);
    OptimizerConfig cfg;
    cfg.total_steps = 5;
    AdamOptimizer opt({{"embedding", p}}, cfg);
    p.grad()[1] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_WITH(opt.step(), Catch::Matchers::ContainsSubstring("embedding"));
}

TEST_CASE("tensor invariants") {
    CHECK_THROWS_AS(Tensor::from({2, 3}, {1.0, 2.0}), DimensionError);
    Tensor t = Tensor::zeros({3, 4});
    CHECK(t.numel() == 12);
    CHECK(t.grad().size() == t.numel());
}
