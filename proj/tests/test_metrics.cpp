#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "ocil/error.hpp"
#include "ocil/metrics.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace ocil;

namespace {

using Scores = std::vector<double>;

Scores random_scores(std::size_t n, bool ties) {
    Scores v(n);
    for (double& x : v) x = ties ? static_cast<double>(testing::random_int(0, 20)) : testing::uniform(-3.0, 3.0);
    return v;
}

Scores range(int lo, int hi) {
    Scores v;
    for (int i = lo; i <= hi; ++i) v.push_back(i);
    return v;
}

double auc(const Scores& id, const Scores& ood) { return auroc({id, ood}); }
double fpr(const Scores& id, const Scores& ood) { return fpr_at_tpr95({id, ood}); }
double ap(const Scores& id, const Scores& ood) { return average_precision({id, ood}); }

}  // namespace

TEST_CASE("auroc examples") {
    CHECK(auc({5, 6, 7}, {1, 2}) == 1.0);
    CHECK(auc({3, 3, 3}, {3, 3}) == 0.5);
    CHECK(auc({1, 2}, {5, 6, 7}) == 0.0);
    CHECK_THROWS_AS(auc({}, {1}), Error);
    CHECK_THROWS_AS(auc({1}, {}), Error);
    CHECK_THROWS_AS(auc({NAN}, {1}), Error);
}

TEST_CASE("fpr95 examples") {
    CHECK(fpr(range(10, 20), range(1, 5)) == 0.0);
    CHECK(fpr(range(1, 100), range(1, 100)) == 0.95);
    CHECK(fpr({1.0}, {1.0, 0.5}) == 0.5);
    CHECK_THROWS_AS(fpr({}, {1}), Error);
}

TEST_CASE("average precision examples") {
    CHECK(ap(range(5, 9), range(1, 4)) == 1.0);
    CHECK(ap(range(1, 9), {5.0}) == doctest::Approx(1.0 / 6.0).epsilon(1e-15));
    CHECK(ap({1.0}, {1.0}) == 0.5);
    CHECK_THROWS_AS(ap({1}, {}), Error);
}

TEST_CASE("average over steps") {
    CHECK(average_over_steps(Scores{70, 80}) == 75.0);
    CHECK(average_over_steps(Scores{42.5}) == 42.5);
    for (int i = 0; i < 20; ++i) {
        const auto v = testing::random_vec(10, 0.0, 100.0);
        long double s = 0;
        for (double x : v) s += x;
        CHECK(average_over_steps(v) == doctest::Approx(static_cast<double>(s / 10)).epsilon(1e-14));
    }
    CHECK_THROWS_AS(average_over_steps(Scores{}), Error);
}

TEST_CASE("metrics equal brute-force oracles") {
    for (int trial = 0; trial < 300; ++trial) {
        const bool ties = trial % 2 == 0;
        const auto id = random_scores(static_cast<std::size_t>(testing::random_int(1, 150)), ties);
        const auto ood = random_scores(static_cast<std::size_t>(testing::random_int(1, 150)), ties);
        CHECK(auc(id, ood) == testing::auroc_oracle(id, ood));
        CHECK(fpr(id, ood) == testing::fpr95_oracle(id, ood));
        CHECK(std::abs(ap(id, ood) - testing::ap_oracle(id, ood)) <= 1e-12);
    }
    const auto id = random_scores(200, false), ood = random_scores(200, false);
    CHECK(auc(id, ood) == testing::auroc_oracle(id, ood));
    CHECK(fpr(id, ood) == testing::fpr95_oracle(id, ood));
    CHECK(std::abs(ap(id, ood) - testing::ap_oracle(id, ood)) <= 1e-12);
}

TEST_CASE("metric properties") {
    for (int trial = 0; trial < 200; ++trial) {
        const auto id = random_scores(static_cast<std::size_t>(testing::random_int(1, 100)), false);
        const auto ood = random_scores(static_cast<std::size_t>(testing::random_int(1, 100)), false);

        // Strictly monotone maps leave the rank statistic unchanged.
        const double a = testing::uniform(0.1, 3.0), b = testing::uniform(-5.0, 5.0);
        auto mono = [&](double x) { return std::exp(a * x) + b + x * x * x; };
        Scores mid = id, mood = ood;
        std::transform(mid.begin(), mid.end(), mid.begin(), mono);
        std::transform(mood.begin(), mood.end(), mood.begin(), mono);
        CHECK(auc(mid, mood) == auc(id, ood));

        CHECK(std::abs(auc(id, ood) + auc(ood, id) - 1.0) < 1e-15);

        Scores shifted = ood;
        const double c = testing::uniform(0.01, 2.0);
        for (double& v : shifted) v -= c;
        CHECK(fpr(id, shifted) <= fpr(id, ood));

        const double r = auc(id, ood), f = fpr(id, ood), p = ap(id, ood);
        CHECK((r >= 0.0 && r <= 1.0));
        CHECK((f >= 0.0 && f <= 1.0));
        CHECK((p > 0.0 && p <= 1.0));
    }
}
