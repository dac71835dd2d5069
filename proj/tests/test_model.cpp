#include <doctest.h>

#include <cmath>
#include <numbers>

#include "ocil/error.hpp"
#include "ocil/model.hpp"
#include "support.hpp"

using namespace ocil;

TEST_CASE("forward_logits examples") {
    LinearHead id;
    id.classes = 2;
    id.dim = 2;
    id.weights = {1, 0, 0, 1};
    id.bias = {0, 0};
    CHECK(forward_logits(id, Vec{3, 4}) == Vec{3, 4});

    LinearHead zero = id;
    zero.weights.assign(4, 0.0);
    zero.bias = {1, -1};
    CHECK(forward_logits(zero, Vec{7, -2}) == Vec{1, -1});
    CHECK_THROWS_AS(forward_logits(id, Vec{1, 2, 3}), Error);
}

TEST_CASE("forward matches a naive matrix product") {
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t C = static_cast<std::size_t>(testing::random_int(1, 6));
        const std::size_t d = static_cast<std::size_t>(testing::random_int(1, 40));
        const auto h = testing::random_head(C, d);
        const auto x = testing::random_vec(d);
        const auto got = forward_logits(h, x);
        for (std::size_t c = 0; c < C; ++c) {
            long double s = h.bias[c];
            for (std::size_t j = 0; j < d; ++j) s += static_cast<long double>(h.weights[c * d + j]) * x[j];
            CHECK(std::abs(got[c] - static_cast<double>(s)) < 1e-12);
        }
        // Batched forward agrees with the single-row path.
        const auto xs = testing::random_vec(3 * d);
        std::vector<double> out(3 * C);
        h.forward_batch(xs, 3, out);
        for (std::size_t r = 0; r < 3; ++r) {
            const auto one = forward_logits(h, std::span<const double>(xs).subspan(r * d, d));
            for (std::size_t c = 0; c < C; ++c) CHECK(out[r * C + c] == one[c]);
        }
    }
}

TEST_CASE("expand_head preserves old rows") {
    Rng rng(1, "expand");
    const auto fresh = expand_head(LinearHead::empty(4), 3, HeadInit::seeded_uniform, rng);
    CHECK(fresh.classes == 3);
    for (double w : fresh.weights) CHECK(std::abs(w) <= 0.5);  // 1 / sqrt(4)
    for (double b : fresh.bias) CHECK(b == 0.0);

    const auto old = testing::random_head(3, 4);
    const auto x = testing::random_vec(4);
    const auto before = forward_logits(old, x);
    for (auto init : {HeadInit::zeros, HeadInit::copy_scaled, HeadInit::seeded_uniform}) {
        const auto big = expand_head(old, 2, init, rng);
        CHECK(big.classes == 5);
        CHECK(std::equal(old.weights.begin(), old.weights.end(), big.weights.begin()));
        CHECK(std::equal(old.bias.begin(), old.bias.end(), big.bias.begin()));
        const auto after = forward_logits(big, x);
        for (std::size_t c = 0; c < 3; ++c) CHECK(after[c] == before[c]);
        if (init == HeadInit::zeros) {
            CHECK(after[3] == 0.0);
            CHECK(after[4] == 0.0);
        }
        if (init == HeadInit::copy_scaled)
            for (std::size_t j = 0; j < 4; ++j) CHECK(big.weights[3 * 4 + j] == old.weights[j] * 0.1);
    }
}

TEST_CASE("sgd plain gradient descent") {
    SgdConfig cfg;
    cfg.lr0 = 0.5;
    cfg.momentum = 0.0;
    cfg.weight_decay = 0.0;
    cfg.schedule = LrSchedule::constant;
    SgdState opt(cfg);
    LinearHead h = testing::random_head(2, 3);
    const LinearHead start = h;
    HeadGrad g = HeadGrad::zeros_like(h);
    g.weights = testing::random_vec(6);
    g.bias = testing::random_vec(2);
    opt.step(h, g, 0, 10);
    for (std::size_t i = 0; i < 6; ++i) CHECK(h.weights[i] == doctest::Approx(start.weights[i] - 0.5 * g.weights[i]));
    for (std::size_t i = 0; i < 2; ++i) CHECK(h.bias[i] == doctest::Approx(start.bias[i] - 0.5 * g.bias[i]));
}

TEST_CASE("sgd momentum recurrence unrolled by hand") {
    SgdConfig cfg;  // lr0 .1, momentum .9, wd 5e-4, cosine
    SgdState opt(cfg);
    LinearHead h;
    h.classes = 1;
    h.dim = 1;
    h.weights = {2.0};
    h.bias = {0.0};
    HeadGrad g = HeadGrad::zeros_like(h);
    const double g1 = 0.3, g2 = -0.7;
    const std::size_t total = 4;
    g.weights = {g1};
    opt.step(h, g, 0, total);
    g.weights = {g2};
    opt.step(h, g, 1, total);

    double p = 2.0, v = 0.0;
    const double lr0 = 0.1, lr1 = 0.1 * 0.5 * (1.0 + std::cos(std::numbers::pi / 4.0));
    v = 0.9 * v + (g1 + 5e-4 * p);
    p -= lr0 * v;
    v = 0.9 * v + (g2 + 5e-4 * p);
    p -= lr1 * v;
    CHECK(h.weights[0] == doctest::Approx(p).epsilon(1e-14));
    CHECK(opt.velocity_weights()[0] == doctest::Approx(v).epsilon(1e-14));
}

TEST_CASE("cosine schedule") {
    SgdState opt;
    CHECK(opt.lr_at(0, 100) == 0.1);
    CHECK(opt.lr_at(100, 100) == doctest::Approx(0.0).epsilon(1e-18));
    CHECK(std::abs(opt.lr_at(100, 100)) < 1e-17);
    for (std::size_t s = 1; s <= 100; ++s) CHECK(opt.lr_at(s, 100) <= opt.lr_at(s - 1, 100));
}

TEST_CASE("sgd velocity follows head expansion") {
    SgdState opt;
    Rng rng(2, "sgd");
    LinearHead h = expand_head(LinearHead::empty(3), 2, HeadInit::seeded_uniform, rng);
    HeadGrad g = HeadGrad::zeros_like(h);
    g.weights.assign(6, 1.0);
    opt.step(h, g, 0, 10);
    h = expand_head(h, 1, HeadInit::zeros, rng);
    opt.sync(h);
    REQUIRE(opt.velocity_weights().size() == 9);
    for (std::size_t i = 6; i < 9; ++i) CHECK(opt.velocity_weights()[i] == 0.0);
    HeadGrad bad = HeadGrad::zeros_like(h);
    bad.weights.pop_back();
    CHECK_THROWS_AS(opt.step(h, bad, 1, 10), Error);
}

TEST_CASE("weight_align examples") {
    LinearHead h;
    h.classes = 2;
    h.dim = 2;
    h.weights = {3, 4, 6, 8};
    h.bias = {1, 2};
    const std::vector<std::size_t> old_rows{0}, new_rows{1};
    const auto a = weight_align(h, old_rows, new_rows);
    CHECK(a.weights == std::vector<double>{3, 4, 3, 4});
    CHECK(a.bias == h.bias);
    h.weights = {3, 4, 4, 3};
    CHECK(weight_align(h, old_rows, new_rows).weights == h.weights);

    for (int trial = 0; trial < 20; ++trial) {
        const auto r = testing::random_head(7, 5);
        const std::vector<std::size_t> o{0, 1, 2, 3}, n{4, 5, 6};
        const auto w = weight_align(r, o, n);
        auto mean_norm = [&](const LinearHead& hh, const std::vector<std::size_t>& rows) {
            double s = 0.0;
            for (auto i : rows) {
                double q = 0.0;
                for (std::size_t j = 0; j < 5; ++j) q += hh.weights[i * 5 + j] * hh.weights[i * 5 + j];
                s += std::sqrt(q);
            }
            return s / static_cast<double>(rows.size());
        };
        CHECK(std::abs(mean_norm(w, n) - mean_norm(r, o)) < 1e-10);
    }
    LinearHead zero = h;
    zero.weights.assign(4, 0.0);
    CHECK_THROWS_AS(weight_align(zero, old_rows, new_rows), Error);
}

TEST_CASE("head checkpoint round trip") {
    testing::TempDir dir;
    const auto h = testing::random_head(4, 6);
    save_head(h, dir / "h.och");
    const auto back = load_head(dir / "h.och");
    CHECK(back.classes == 4);
    CHECK(back.dim == 6);
    CHECK(back.weights == h.weights);
    CHECK(back.bias == h.bias);
    CHECK(std::filesystem::file_size(dir / "h.och") == 12 + 8 * (24 + 4));
}

TEST_CASE("random projection extractor is fixed and its transpose is exact") {
    const auto e1 = Extractor::random_projection(5, 3, 9);
    const auto e2 = Extractor::random_projection(5, 3, 9);
    CHECK(e1.fingerprint() == e2.fingerprint());
    const auto x = testing::random_vec(5), y = testing::random_vec(3);
    const auto ex = e1.apply(x);
    CHECK(ex == e2.apply(x));
    std::vector<double> ety(5);
    e1.backward(y, ety);
    double lhs = 0.0, rhs = 0.0;
    for (std::size_t i = 0; i < 3; ++i) lhs += ex[i] * y[i];
    for (std::size_t i = 0; i < 5; ++i) rhs += x[i] * ety[i];
    CHECK(std::abs(lhs - rhs) < 1e-12);

    const auto id = Extractor::identity(4);
    const auto z = testing::random_vec(4);
    CHECK(id.apply(z) == z);
}
