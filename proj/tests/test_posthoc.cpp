#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gradcheck.hpp"
#include "ocil/cil.hpp"
#include "ocil/error.hpp"
#include "ocil/posthoc.hpp"
#include "support.hpp"

using namespace ocil;

TEST_CASE("msp examples") {
    CHECK(msp_score(Vec{0.0, 0.0}) == 0.5);
    CHECK(msp_score(Vec{10.0, 0.0}) == doctest::Approx(1.0 / (1.0 + std::exp(-10.0))).epsilon(1e-15));
    CHECK(msp_score(Vec{10.0, 0.0}) == doctest::Approx(0.99995).epsilon(1e-5));
    const auto v = testing::random_vec(6, -4.0, 4.0);
    auto w = v;
    for (double& x : w) x += 3.25;
    CHECK(std::abs(msp_score(v) - msp_score(w)) < 1e-15);
}

TEST_CASE("maxlogit examples") {
    CHECK(maxlogit_score(Vec{3.0, -1.0}) == 3.0);
    for (int i = 0; i < 100; ++i) {
        auto v = testing::random_vec(7);
        const double mx = *std::max_element(v.begin(), v.end());
        CHECK(maxlogit_score(v) == mx);
        for (double& x : v) x += 2.0;
        CHECK(maxlogit_score(v) == mx + 2.0);
    }
}

TEST_CASE("energy score examples") {
    CHECK(energy_score(Vec{0.0, 0.0}, 1.0) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    CHECK(energy_score(Vec{-2.5}, 1.0) == -2.5);
    CHECK(std::abs(energy_score(Vec{1.0, 2.0, 3.0}, 1.0) -
                   static_cast<double>(testing::logsumexp_ld({1.0, 2.0, 3.0}))) < 1e-14);
}

TEST_CASE("gen examples") {
    CHECK(gen_score(Vec{0.0, 0.0}, 0.1, 100) == doctest::Approx(-2.0 * std::pow(0.5, 0.2)).epsilon(1e-14));
    CHECK(gen_score(Vec{800.0, 0.0, 0.0}, 0.1, 100) > -1e-20);
    double prev = -1e9;
    for (double sharp = 0.0; sharp <= 10.0; sharp += 0.5) {
        const double s = gen_score(Vec{sharp, 0.0, 0.0, 0.0}, 0.1, 100);
        CHECK(s > prev);
        prev = s;
    }
    // Only the top-M probabilities contribute.
    const Vec f{3.0, 1.0, 0.0, -1.0};
    const auto p = testing::softmax_ld(std::vector<double>(f.begin(), f.end()));
    const double top2 = -(std::pow(static_cast<double>(p[0]), 0.1) * std::pow(1.0 - static_cast<double>(p[0]), 0.1) +
                          std::pow(static_cast<double>(p[1]), 0.1) * std::pow(1.0 - static_cast<double>(p[1]), 0.1));
    CHECK(gen_score(f, 0.1, 2) == doctest::Approx(top2).epsilon(1e-12));
}

TEST_CASE("klm examples") {
    const Vec f{1.0, 2.0};
    const Vec p = softmax(f);
    std::vector<std::optional<Vec>> templates{p, std::nullopt};
    CHECK(std::abs(klm_score(f, templates)) < 1e-15);

    std::vector<std::optional<Vec>> uniform{Vec{0.5, 0.5}, Vec{0.5, 0.5}};
    CHECK(klm_score(Vec{800.0, 0.0}, uniform) == doctest::Approx(-std::log(2.0)).epsilon(1e-12));

    std::vector<std::optional<Vec>> spiky{Vec{1.0, 0.0}};
    CHECK(std::isfinite(klm_score(Vec{0.0, 0.0}, spiky)));
    CHECK(klm_score(Vec{0.0, 0.0}, spiky) == doctest::Approx(-(0.5 * std::log(0.5) + 0.5 * (std::log(0.5) - std::log(1e-12)))));
}

TEST_CASE("percentile matches a sort-based oracle") {
    for (int trial = 0; trial < 200; ++trial) {
        const auto v = testing::random_vec(static_cast<std::size_t>(testing::random_int(1, 1000)), -5.0, 5.0);
        const double p = trial == 0 ? 100.0 : (trial == 1 ? 0.0 : testing::uniform(0.0, 100.0));
        auto s = v;
        std::sort(s.begin(), s.end());
        const double pos = p / 100.0 * static_cast<double>(s.size() - 1);
        const auto lo = static_cast<std::size_t>(pos);
        const double want = lo + 1 < s.size() ? s[lo] + (pos - static_cast<double>(lo)) * (s[lo + 1] - s[lo]) : s[lo];
        CHECK(percentile(v, p) == doctest::Approx(want).epsilon(1e-15));
    }
    CHECK(percentile({1.0, 2.0, 3.0, 4.0}, 100.0) == 4.0);
    CHECK(percentile({1.0, 2.0, 3.0, 4.0}, 50.0) == 2.5);
    CHECK_THROWS_AS(percentile({}, 50.0), Error);
}

namespace {

FeatureBank bank_of(const std::vector<Vec>& rows, const Vec& msp) {
    FeatureBank b;
    b.dim = rows[0].size();
    for (const auto& r : rows) {
        const double n = l2_norm(r);
        for (double v : r) b.unit_features.push_back(v / n);
        ++b.rows;
    }
    b.msp = msp;
    return b;
}

}  // namespace

TEST_CASE("nearest neighbours match an exhaustive oracle") {
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t rows = static_cast<std::size_t>(testing::random_int(1, 12));
        const std::size_t d = 4;
        std::vector<Vec> bank_rows;
        Vec msp;
        for (std::size_t r = 0; r < rows; ++r) {
            bank_rows.push_back(testing::random_vec(d));
            msp.push_back(testing::uniform(0.2, 1.0));
        }
        const auto bank = bank_of(bank_rows, msp);
        const auto x = testing::random_vec(d);
        const std::size_t k = static_cast<std::size_t>(testing::random_int(1, 6));

        std::vector<double> sims;
        for (const auto& r : bank_rows) sims.push_back(cosine_sim(x, r));
        std::vector<std::size_t> idx(rows);
        std::iota(idx.begin(), idx.end(), 0);
        std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return sims[a] > sims[b]; });
        const std::size_t kk = std::min(k, rows);
        double guide = 0.0, rel = 0.0;
        for (std::size_t i = 0; i < kk; ++i) {
            guide += sims[idx[i]];
            rel += std::max(0.0, sims[idx[i]]) * msp[idx[i]];
        }
        guide /= static_cast<double>(kk);

        const auto nn = bank.nearest(x, k);
        REQUIRE(nn.size() == kk);
        for (std::size_t i = 0; i < kk; ++i) CHECK(nn[i].first == idx[i]);
        const Vec logits = testing::random_vec(3);
        CHECK(nnguide_score(x, logits, bank, k, 1.0) == doctest::Approx(energy_score(logits, 1.0) * guide).epsilon(1e-12));
        CHECK(relation_score(x, bank, k) == doctest::Approx(rel).epsilon(1e-12));
    }
}

TEST_CASE("nnguide and relation examples") {
    const auto bank = bank_of({{1.0, 0.0}, {0.0, 1.0}}, {0.9, 0.4});
    const Vec logits{2.0, -1.0};
    CHECK(nnguide_score(Vec{3.0, 0.0}, logits, bank, 1, 1.0) == doctest::Approx(energy_score(logits, 1.0)));
    const auto only_y = bank_of({{0.0, 1.0}, {0.0, 2.0}}, {0.5, 0.5});
    CHECK(nnguide_score(Vec{1.0, 0.0}, logits, only_y, 2, 1.0) == 0.0);
    const auto one = bank_of({{1.0, 1.0}}, {0.9});
    CHECK(relation_score(Vec{1.0, 1.0}, one, 1) == doctest::Approx(0.9));
    const auto opposite = bank_of({{-1.0, 0.0}}, {0.9});
    CHECK(relation_score(Vec{1.0, 0.0}, opposite, 1) == 0.0);
}

namespace {

struct Fixture {
    Extractor ext = Extractor::random_projection(6, 5, 17);
    LinearHead head = testing::random_head(4, 5, 1.5);
    ScoringModel model{&ext, &head, 0.0};
};

FeatureDataset random_rows(std::size_t n, std::size_t d) {
    FeatureDataset ds;
    ds.n = n;
    ds.d = d;
    ds.num_classes = 1;
    ds.features = testing::random_vec(n * d, -3.0, 3.0);
    ds.labels.assign(n, 0);
    return ds;
}

}  // namespace

TEST_CASE("degenerate scorer identities") {
    Fixture fx;
    const auto rows = random_rows(1000, 6);

    ScorerParams p100;
    p100.react_percentile = 100.0;
    Scorer react(ScorerKind::react, p100), energy(ScorerKind::energy, p100);
    react.fit(fx.model, rows);
    energy.fit(fx.model, rows);

    ScorerParams plain;
    plain.odin_epsilon = 0.0;
    plain.odin_temperature = 1.0;
    Scorer odin(ScorerKind::odin, plain), msp(ScorerKind::msp, plain);
    for (std::size_t i = 0; i < rows.n; ++i) {
        CHECK(react.score(fx.model, rows.row(i)) == energy.score(fx.model, rows.row(i)));
        CHECK(odin.score(fx.model, rows.row(i)) == msp.score(fx.model, rows.row(i)));
    }

    const auto x = rows.row(0);
    const Vec f = fx.model.logits(fx.model.features(x));
    const Vec pt = softmax(f, 1000.0);
    CHECK(odin_score(fx.model, x, 1000.0, 0.0) == *std::max_element(pt.begin(), pt.end()));
}

TEST_CASE("react saturation gives constant logits") {
    Fixture fx;
    const Extractor id = Extractor::identity(5);
    const ScoringModel m{&id, &fx.head, 0.0};
    const double c = -10.0;
    const Vec a = testing::random_vec(5, 0.0, 1.0), b = testing::random_vec(5, 2.0, 3.0);
    CHECK(react_score(m, a, c, 1.0) == react_score(m, b, c, 1.0));
    const Vec clipped(5, c);
    CHECK(react_score(m, a, c, 1.0) == doctest::Approx(energy_score(forward_logits(fx.head, clipped), 1.0)));
}

TEST_CASE("odin gradient matches finite differences") {
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t d_in = static_cast<std::size_t>(testing::random_int(2, 6));
        const std::size_t d_out = static_cast<std::size_t>(testing::random_int(2, 6));
        const Extractor ext = trial % 2 ? Extractor::identity(d_in) : Extractor::random_projection(d_in, d_out, trial);
        const LinearHead head = testing::random_head(3, ext.output_dim());
        const double norm_tau = trial % 3 == 0 ? 0.5 : 0.0;
        const ScoringModel m{&ext, &head, norm_tau};
        const double T = trial % 4 == 0 ? 1000.0 : 2.0;
        const Vec x = testing::random_vec(d_in, -2.0, 2.0);
        const Vec f0 = m.logits(m.features(x));
        const std::size_t top = argmax(f0);
        auto objective = [&](const std::vector<double>& z) {
            const Vec f = m.logits(m.features(z));
            return f[top] / T - logsumexp(f, T) / T;
        };
        worst = std::max(worst, testing::vec_grad_error(x, odin_input_gradient(m, x, T), objective, 1e-5));
    }
    CHECK(worst < 1e-6);
}

TEST_CASE("scorer fit statistics") {
    Fixture fx;
    const auto rows = random_rows(300, 6);
    Scorer klm(ScorerKind::klm, {});
    klm.fit(fx.model, rows);
    const auto& templates = klm.fit_state().klm_templates;
    REQUIRE(templates.size() == 4);
    // Templates are mean softmax vectors over rows grouped by prediction.
    std::vector<Vec> sums(4, Vec(4, 0.0));
    std::vector<int> counts(4, 0);
    for (std::size_t i = 0; i < rows.n; ++i) {
        const Vec f = fx.model.logits(fx.model.features(rows.row(i)));
        const auto p = softmax(f);
        std::size_t k = 0;
        for (std::size_t j = 1; j < 4; ++j)
            if (f[j] > f[k]) k = j;
        for (std::size_t j = 0; j < 4; ++j) sums[k][j] += p[j];
        ++counts[k];
    }
    for (std::size_t k = 0; k < 4; ++k) {
        CHECK(templates[k].has_value() == (counts[k] > 0));
        if (!templates[k]) continue;
        for (std::size_t j = 0; j < 4; ++j) CHECK((*templates[k])[j] == doctest::Approx(sums[k][j] / counts[k]));
    }

    Scorer react(ScorerKind::react, {});
    react.fit(fx.model, rows);
    std::vector<double> acts;
    for (std::size_t i = 0; i < rows.n; ++i) {
        const auto z = fx.model.features(rows.row(i));
        acts.insert(acts.end(), z.begin(), z.end());
    }
    CHECK(react.fit_state().react_threshold == doctest::Approx(percentile(acts, 90.0)));

    Scorer nn(ScorerKind::nnguide, {});
    nn.fit(fx.model, rows);
    CHECK(nn.fit_state().bank.rows == 300);

    Scorer unfitted(ScorerKind::nnguide, {});
    CHECK_THROWS_AS(unfitted.score(fx.model, rows.row(0)), Error);
    Scorer e(ScorerKind::energy, {});
    CHECK_THROWS_AS(e.score(fx.model, Vec{1.0, 2.0}), Error);
}

TEST_CASE("scores are deterministic and parse round trip") {
    Fixture fx;
    const auto rows = random_rows(50, 6);
    for (ScorerKind k : kAllScorers) {
        CHECK(parse_scorer_kind(to_string(k)) == k);
        Scorer a(k, {}), b(k, {});
        a.fit(fx.model, rows);
        b.fit(fx.model, rows);
        CHECK(a.score_all(fx.model, rows) == b.score_all(fx.model, rows));
    }
    CHECK_THROWS_AS(parse_scorer_kind("mahalanobis"), Error);
}
