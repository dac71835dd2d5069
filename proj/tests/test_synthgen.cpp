#include <doctest.h>

#include <fstream>
#include <iterator>

#include "ocil/cil.hpp"
#include "ocil/error.hpp"
#include "ocil/protocol.hpp"
#include "ocil/synthgen.hpp"
#include "support.hpp"

using namespace ocil;

namespace {

SynthSpec small_spec(std::uint64_t seed = 0) {
    SynthSpec s;
    s.num_classes = 6;
    s.dim = 8;
    s.n_train = 50;
    s.n_test = 10;
    s.n_ood = 60;
    s.seed = seed;
    return s;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

double distance(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
}

// Mean step-1 energy AUROC per OOD tag for one seed.
std::pair<double, double> step1_energy_auc(const SynthSpec& spec, std::uint64_t seed) {
    RunConfig cfg;
    cfg.data = to_benchmark_data(generate(spec));
    cfg.seeds = {seed};
    const auto report = run_benchmark(cfg);
    double near = 0.0, far = 0.0;
    int nn = 0, nf = 0;
    for (const auto& r : report.records) {
        if (r.step != 1) continue;
        (r.tag == OodTag::near ? near : far) += r.auroc;
        ++(r.tag == OodTag::near ? nn : nf);
    }
    return {near / nn, far / nf};
}

}  // namespace

TEST_CASE("synth spec validation") {
    CHECK_NOTHROW(SynthSpec{}.validate());
    auto bad = SynthSpec{};
    bad.num_classes = 3;
    CHECK_THROWS_AS(bad.validate(), Error);
    for (double SynthSpec::*field : {&SynthSpec::radius, &SynthSpec::sigma, &SynthSpec::near_jitter,
                                     &SynthSpec::far_radius, &SynthSpec::far_sigma}) {
        bad = SynthSpec{};
        bad.*field = 0.0;
        CHECK_THROWS_AS(bad.validate(), Error);
        CHECK_THROWS_AS(generate(bad), Error);
    }
    bad = SynthSpec{};
    bad.n_train = 0;
    CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("generated shapes and labels") {
    const auto spec = small_spec();
    const auto d = generate(spec);
    CHECK(d.train.n == 6 * 50);
    CHECK(d.test.n == 6 * 10);
    CHECK(d.train.d == 8);
    CHECK(d.train.num_classes == 6);
    CHECK(d.class_means.size() == 6 * 8);
    REQUIRE(d.ood.sets.size() == 4);
    const char* names[] = {"near_0", "near_1", "far_0", "far_1"};
    for (std::size_t s = 0; s < 4; ++s) {
        CHECK(d.ood.sets[s].name == names[s]);
        CHECK(d.ood.sets[s].tag == (s < 2 ? OodTag::near : OodTag::far));
        CHECK(d.ood.sets[s].data.n == 60);
        CHECK(d.ood.sets[s].data.d == 8);
    }
    for (int c = 0; c < 6; ++c) {
        CHECK(d.train.rows_of_class(c).size() == 50);
        CHECK(d.test.rows_of_class(c).size() == 10);
        CHECK(l2_norm({d.class_means.data() + c * 8, 8}) == doctest::Approx(spec.radius).epsilon(1e-6));
    }
    CHECK_NOTHROW(d.train.validate());
    CHECK_NOTHROW(d.ood.validate());
}

TEST_CASE("same seed gives byte-identical files") {
    testing::TempDir a, b, c;
    const auto ma = write_synth(generate(small_spec(3)), a.path());
    const auto mb = write_synth(generate(small_spec(3)), b.path());
    write_synth(generate(small_spec(4)), c.path());
    for (const char* f : {"id_train.ocf", "id_test.ocf", "ood_near_0.ocf", "ood_far_1.ocf", "suite.json"})
        CHECK(slurp(a / f) == slurp(b / f));
    CHECK(slurp(a / "id_train.ocf") != slurp(c / "id_train.ocf"));

    // Files load back to exactly the in-memory data.
    const auto loaded = load_benchmark_data(load_manifest(ma));
    const auto mem = to_benchmark_data(generate(small_spec(3)));
    CHECK(loaded.train.features == mem.train.features);
    CHECK(loaded.test.labels == mem.test.labels);
    REQUIRE(loaded.ood.sets.size() == mem.ood.sets.size());
    for (std::size_t s = 0; s < mem.ood.sets.size(); ++s) {
        CHECK(loaded.ood.sets[s].name == mem.ood.sets[s].name);
        CHECK(loaded.ood.sets[s].tag == mem.ood.sets[s].tag);
        CHECK(loaded.ood.sets[s].data.features == mem.ood.sets[s].data.features);
    }
    (void)mb;
}

TEST_CASE("empirical class means lie within 3 sigma over root n") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        SynthSpec spec;
        spec.seed = seed;
        const auto d = generate(spec);
        for (int c = 0; c < spec.num_classes; ++c) {
            std::vector<double> mean(spec.dim, 0.0);
            const auto rows = d.train.rows_of_class(c);
            for (auto r : rows)
                for (std::size_t j = 0; j < spec.dim; ++j) mean[j] += d.train.row(r)[j] / static_cast<double>(rows.size());
            const double rms = distance(mean, {d.class_means.data() + c * spec.dim, spec.dim}) /
                               std::sqrt(static_cast<double>(spec.dim));
            CHECK(rms <= 3.0 * spec.sigma / std::sqrt(static_cast<double>(spec.n_train)));
        }
    }
}

TEST_CASE("ood centres follow the near and far construction") {
    const SynthSpec spec;
    const auto d = generate(spec);
    const std::size_t K = static_cast<std::size_t>(spec.num_classes), D = spec.dim;
    auto mean_of = [&](std::size_t c) { return std::span<const double>(d.class_means.data() + c * D, D); };
    REQUIRE(d.ood_centres.size() == 4);
    for (std::size_t s = 0; s < 2; ++s) {
        for (std::size_t k = 0; k * D < d.ood_centres[s].size(); ++k) {
            const std::span<const double> centre(d.ood_centres[s].data() + k * D, D);
            bool found = false;
            for (std::size_t a = 0; a < K && !found; ++a)
                for (std::size_t b = a + 1; b < K && !found; ++b) {
                    std::vector<double> mid(D);
                    for (std::size_t j = 0; j < D; ++j) mid[j] = 0.5 * (mean_of(a)[j] + mean_of(b)[j]);
                    found = std::abs(distance(centre, mid) - spec.near_jitter) < 1e-9;
                }
            CHECK(found);
        }
    }
    for (std::size_t s = 2; s < 4; ++s) {
        const auto& centre = d.ood_centres[s];
        REQUIRE(centre.size() == D);
        CHECK(l2_norm(centre) == doctest::Approx(spec.far_radius).epsilon(1e-9));
        for (std::size_t c = 0; c < K; ++c) CHECK(distance(centre, mean_of(c)) >= spec.far_radius);
        std::vector<double> emp(D, 0.0);
        const auto& set = d.ood.sets[s].data;
        for (std::size_t i = 0; i < set.n; ++i)
            for (std::size_t j = 0; j < D; ++j) emp[j] += set.row(i)[j] / static_cast<double>(set.n);
        CHECK(distance(emp, centre) / std::sqrt(static_cast<double>(D)) <=
              3.0 * spec.far_sigma / std::sqrt(static_cast<double>(set.n)));
    }
}

TEST_CASE("point classes are linearly separable") {
    auto spec = small_spec(7);
    spec.sigma = 1e-3;
    const auto d = generate(spec);
    Rng order(0, "order");
    const auto stream = split_tasks(d.train, d.test, spec.num_classes, order);
    Rng rng(0, "cil");
    MemoryBuffer mem;
    const auto res = train_task(CilModel::create(Extractor::identity(spec.dim)), stream, 1, mem, CilConfig{}, rng);
    CHECK(evaluate_accuracy(res.model, d.train) == 1.0);
}

TEST_CASE("far clusters are easy and near clusters hard for energy at step one") {
    const auto [near, far] = step1_energy_auc(SynthSpec{}, 0);
    CHECK(far > 0.99);
    CHECK(near < far);
}

TEST_CASE("spec json round trip") {
    auto spec = small_spec(11);
    spec.far_sigma = 0.25;
    nlohmann::json j = spec;
    const auto back = j.get<SynthSpec>();
    CHECK(back.seed == 11);
    CHECK(back.far_sigma == 0.25);
    CHECK(back.n_ood == spec.n_ood);
    nlohmann::json partial = {{"num_classes", 8}};
    CHECK(partial.get<SynthSpec>().num_classes == 8);
    CHECK(partial.get<SynthSpec>().dim == SynthSpec{}.dim);
    nlohmann::json unknown = {{"num_clases", 8}};
    CHECK_THROWS_AS(unknown.get<SynthSpec>(), Error);
}
