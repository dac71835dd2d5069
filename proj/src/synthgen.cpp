#include "ocil/synthgen.hpp"

#include <cmath>

#include "ocil/error.hpp"

namespace ocil {

void SynthSpec::validate() const {
    require(num_classes >= 4, ErrorCode::Config, "synth: need at least 4 classes");
    require(dim >= 1 && n_train >= 1 && n_test >= 1, ErrorCode::Config, "synth: sizes must be positive");
    require(radius > 0.0 && sigma > 0.0 && near_jitter > 0.0, ErrorCode::Config,
            "synth: radius, sigma and near_jitter must be positive");
    require(far_radius > 0.0 && far_sigma > 0.0, ErrorCode::Config, "synth: invalid far-OOD geometry");
    require(n_ood >= 1, ErrorCode::Config, "synth: n_ood must be positive");
    require(near_sets >= 0 && far_sets >= 0, ErrorCode::Config, "synth: set counts must be >= 0");
}

namespace {

std::vector<double> unit_direction(Rng& rng, std::size_t dim) {
    std::vector<double> u(dim);
    double n = 0.0;
    do {
        for (double& v : u) v = rng.normal();
        n = l2_norm(u);
    } while (n == 0.0);
    for (double& v : u) v /= n;
    return u;
}

void sample_cluster(FeatureDataset& ds, std::span<const double> mean, double sigma, std::size_t count, int label,
                    Rng& rng) {
    for (std::size_t i = 0; i < count; ++i) {
        for (double m : mean) ds.features.push_back(m + sigma * rng.normal());
        ds.labels.push_back(label);
    }
    ds.n += count;
}

}  // namespace

SynthData generate(const SynthSpec& spec) {
    spec.validate();
    const std::size_t d = spec.dim;
    const auto K = static_cast<std::size_t>(spec.num_classes);
    Rng root(spec.seed, "synthgen");

    SynthData out;
    out.class_means.resize(K * d);
    Rng mean_rng = root.substream("means");
    for (std::size_t c = 0; c < K; ++c) {
        const auto u = unit_direction(mean_rng, d);
        for (std::size_t j = 0; j < d; ++j) out.class_means[c * d + j] = spec.radius * u[j];
    }
    auto mean_of = [&](std::size_t c) { return std::span<const double>(out.class_means.data() + c * d, d); };

    out.train.d = out.test.d = d;
    out.train.num_classes = out.test.num_classes = spec.num_classes;
    for (std::size_t c = 0; c < K; ++c) {
        Rng tr = root.substream("train", c);
        Rng te = root.substream("test", c);
        sample_cluster(out.train, mean_of(c), spec.sigma, spec.n_train, static_cast<int>(c), tr);
        sample_cluster(out.test, mean_of(c), spec.sigma, spec.n_test, static_cast<int>(c), te);
    }

    for (int s = 0; s < spec.near_sets; ++s) {
        Rng r = root.substream("near", static_cast<std::uint64_t>(s));
        // One centre per class-mean pair drawn for this set.
        std::vector<double> centres;
        for (std::size_t p = 0; p < K; ++p) {
            const std::size_t a = r.below(K);
            std::size_t b = r.below(K - 1);
            if (b >= a) ++b;
            const auto jitter = unit_direction(r, d);
            for (std::size_t j = 0; j < d; ++j)
                centres.push_back(0.5 * (mean_of(a)[j] + mean_of(b)[j]) + spec.near_jitter * jitter[j]);
        }
        OodSet set{"near_" + std::to_string(s), OodTag::near, {}};
        set.data.d = d;
        set.data.num_classes = 1;
        for (std::size_t i = 0; i < spec.n_ood; ++i) {
            const std::size_t p = r.below(K);
            sample_cluster(set.data, {centres.data() + p * d, d}, spec.sigma, 1, 0, r);
        }
        out.ood_centres.push_back(std::move(centres));
        out.ood.sets.push_back(std::move(set));
    }

    for (int s = 0; s < spec.far_sets; ++s) {
        Rng r = root.substream("far", static_cast<std::uint64_t>(s));
        std::vector<double> centre = unit_direction(r, d);
        for (double& v : centre) v *= spec.far_radius;
        OodSet set{"far_" + std::to_string(s), OodTag::far, {}};
        set.data.d = d;
        set.data.num_classes = 1;
        sample_cluster(set.data, centre, spec.far_sigma, spec.n_ood, 0, r);
        out.ood_centres.push_back(std::move(centre));
        out.ood.sets.push_back(std::move(set));
    }

    // Round to the float32 storage precision.
    auto to_f32 = [](FeatureDataset& ds) {
        for (double& v : ds.features) v = static_cast<float>(v);
    };
    to_f32(out.train);
    to_f32(out.test);
    for (auto& set : out.ood.sets) to_f32(set.data);

    out.train.validate();
    out.test.validate();
    out.ood.validate();
    return out;
}

std::filesystem::path write_synth(const SynthData& data, const std::filesystem::path& out_dir) {
    std::filesystem::create_directories(out_dir);
    SuiteManifest m;
    m.id_train = out_dir / "id_train.ocf";
    m.id_test = out_dir / "id_test.ocf";
    m.format = DataFormat::binary;
    m.num_classes = data.train.num_classes;
    save_dataset(data.train, m.id_train, DataFormat::binary);
    save_dataset(data.test, m.id_test, DataFormat::binary);
    for (const auto& set : data.ood.sets) {
        const auto path = out_dir / ("ood_" + set.name + ".ocf");
        save_dataset(set.data, path, DataFormat::binary);
        m.ood.push_back({set.name, path, set.tag});
    }
    const auto manifest = out_dir / "suite.json";
    save_manifest(m, manifest);
    return manifest;
}

void to_json(nlohmann::json& j, const SynthSpec& s) {
    j = {{"num_classes", s.num_classes}, {"dim", s.dim},         {"n_train", s.n_train},
         {"n_test", s.n_test},           {"radius", s.radius},   {"sigma", s.sigma},
         {"near_jitter", s.near_jitter}, {"far_radius", s.far_radius}, {"far_sigma", s.far_sigma},
         {"n_ood", s.n_ood},             {"near_sets", s.near_sets},   {"far_sets", s.far_sets},
         {"seed", s.seed}};
}

void from_json(const nlohmann::json& j, SynthSpec& s) {
    static const char* known[] = {"num_classes", "dim",       "n_train",   "n_test", "radius",
                                  "sigma",       "near_jitter", "far_radius", "far_sigma", "n_ood",
                                  "near_sets",   "far_sets",  "seed"};
    for (const auto& [key, _] : j.items()) {
        bool ok = false;
        for (const char* k : known) ok = ok || key == k;
        require(ok, ErrorCode::Config, "synth spec: unknown key '" + key + "'");
    }
    const SynthSpec defaults;
    s.num_classes = j.value("num_classes", defaults.num_classes);
    s.dim = j.value("dim", defaults.dim);
    s.n_train = j.value("n_train", defaults.n_train);
    s.n_test = j.value("n_test", defaults.n_test);
    s.radius = j.value("radius", defaults.radius);
    s.sigma = j.value("sigma", defaults.sigma);
    s.near_jitter = j.value("near_jitter", defaults.near_jitter);
    s.far_radius = j.value("far_radius", defaults.far_radius);
    s.far_sigma = j.value("far_sigma", defaults.far_sigma);
    s.n_ood = j.value("n_ood", defaults.n_ood);
    s.near_sets = j.value("near_sets", defaults.near_sets);
    s.far_sets = j.value("far_sets", defaults.far_sets);
    s.seed = j.value("seed", defaults.seed);
}

BenchmarkData to_benchmark_data(const SynthData& data) { return {data.train, data.test, data.ood}; }

}  // namespace ocil
