#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>

#include <json.hpp>

#include "ocil/data.hpp"

namespace ocil {

// Seeded Gaussian-mixture benchmark.
//
// ID classes: means at `radius` along seeded random unit directions,
// isotropic noise `sigma`.
// Near OOD: clusters centred at midpoints of random ID class-mean pairs,
// offset by `near_jitter` in a random direction, noise `sigma`.
// Far OOD: activation-collapsed clusters centred at norm `far_radius`
// with noise `far_sigma`; they carry none of the class structure.
struct SynthSpec {
    int num_classes = 20;
    std::size_t dim = 32;
    std::size_t n_train = 200;  // per class
    std::size_t n_test = 50;    // per class
    double radius = 5.0;
    double sigma = 1.0;
    double near_jitter = 0.5;
    double far_radius = 1.0;
    double far_sigma = 0.5;
    std::size_t n_ood = 1000;  // per set
    int near_sets = 2;
    int far_sets = 2;
    std::uint64_t seed = 0;

    void validate() const;
};

struct SynthData {
    FeatureDataset train;
    FeatureDataset test;
    OodSuite ood;
    // Class means used to generate train/test, num_classes x dim.
    std::vector<double> class_means;
    // One centre per near-OOD pair / far-OOD cluster, per set.
    std::vector<std::vector<double>> ood_centres;
};

SynthData generate(const SynthSpec& spec);

// Writes train/test/OOD files in the binary format plus suite.json; returns
// the manifest path.
std::filesystem::path write_synth(const SynthData& data, const std::filesystem::path& out_dir);

void to_json(nlohmann::json& j, const SynthSpec& s);
void from_json(const nlohmann::json& j, SynthSpec& s);

BenchmarkData to_benchmark_data(const SynthData& data);

}  // namespace ocil
