#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ocil/numerics.hpp"

namespace ocil {

// Row-major n x d feature matrix with one integer label per row.
struct FeatureDataset {
    std::size_t n = 0;
    std::size_t d = 0;
    std::vector<double> features;
    std::vector<int> labels;
    // Exclusive upper bound on labels.
    int num_classes = 0;
    std::vector<std::string> class_names;

    std::span<const double> row(std::size_t i) const { return {features.data() + i * d, d}; }
    std::span<double> row(std::size_t i) { return {features.data() + i * d, d}; }

    // Throws on any broken invariant.
    void validate() const;

    FeatureDataset subset(std::span<const std::size_t> rows) const;
    // Rows whose label is in `classes`, in original order.
    FeatureDataset filter_classes(std::span<const int> classes) const;
    std::vector<std::size_t> rows_of_class(int c) const;

    void append(const FeatureDataset& other);
};

enum class DataFormat { binary, csv };

// `num_classes` bounds the labels; when absent it is max(label) + 1.
FeatureDataset load_dataset(const std::filesystem::path& path, DataFormat format,
                            std::optional<int> num_classes = std::nullopt);
void save_dataset(const FeatureDataset& ds, const std::filesystem::path& path, DataFormat format);

struct Task {
    FeatureDataset train;
    FeatureDataset test;
    std::vector<int> classes;  // global class ids, in stream order
};

struct TaskStream {
    std::vector<Task> tasks;
    int step_size = 0;

    std::size_t size() const noexcept { return tasks.size(); }
    // 1-based step index t.
    const Task& task(std::size_t t) const { return tasks.at(t - 1); }
    // Q_t: classes of tasks 1..t.
    std::vector<int> seen_classes(std::size_t t) const;
    // Union of the test sets of tasks 1..t.
    FeatureDataset test_union(std::size_t t) const;
    // Index of the task (0-based) that owns class c.
    std::size_t task_of_class(int c) const;
};

// Class order: an explicit permutation of 0..K-1.
TaskStream split_tasks(const FeatureDataset& train, const FeatureDataset& test, int k,
                       std::span<const int> class_order);
// Class order: a seeded shuffle of 0..K-1.
TaskStream split_tasks(const FeatureDataset& train, const FeatureDataset& test, int k, Rng& rng);

enum class ExemplarStrategy { herding, random };

// Fixed-budget exemplar store. Entries index rows of the owning task's
// train set (stream.tasks[task_of_class(c)].train).
struct MemoryBuffer {
    std::size_t budget = 0;
    std::map<int, std::vector<std::size_t>> entries;

    std::size_t total() const noexcept;
    // Stored rows as a labelled dataset, class by class in ascending id.
    FeatureDataset materialize(const TaskStream& stream) const;
};

// Maps raw rows to the feature space used for exemplar selection.
using FeatureMap = std::function<FeatureDataset(const FeatureDataset&)>;

MemoryBuffer rebalance_memory(const MemoryBuffer& mem, const TaskStream& stream, std::size_t t,
                              ExemplarStrategy strategy, Rng& rng,
                              const FeatureMap& features = {});

// Greedy herding over an n x d matrix; returns q indices in selection order.
std::vector<std::size_t> herding_select(std::span<const double> class_features, std::size_t n,
                                        std::size_t d, std::size_t q);

// First floor(n * t / total_steps) rows of a seeded permutation.
// Subsets for growing t are nested when the same rng state is supplied.
FeatureDataset ood_subset(const FeatureDataset& ood, std::size_t t, std::size_t total_steps,
                          Rng rng);
std::size_t ood_subset_size(std::size_t n, std::size_t t, std::size_t total_steps);

enum class OodTag { near, far };

struct OodSet {
    std::string name;
    OodTag tag = OodTag::near;
    FeatureDataset data;
};

struct OodSuite {
    std::vector<OodSet> sets;
    void validate() const;
};

std::string to_string(OodTag tag);
OodTag parse_ood_tag(const std::string& s);
std::string to_string(DataFormat f);
DataFormat parse_data_format(const std::string& s);

// Suite manifest: ID train/test paths plus named, tagged OOD sets.
struct ManifestEntry {
    std::string name;
    std::filesystem::path path;
    OodTag tag = OodTag::near;
};

struct SuiteManifest {
    std::filesystem::path id_train;
    std::filesystem::path id_test;
    DataFormat format = DataFormat::binary;
    std::optional<int> num_classes;
    std::vector<ManifestEntry> ood;
};

// Relative paths inside the manifest resolve against its directory.
SuiteManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const SuiteManifest& m, const std::filesystem::path& path);

struct BenchmarkData {
    FeatureDataset train;
    FeatureDataset test;
    OodSuite ood;
};

BenchmarkData load_benchmark_data(const SuiteManifest& m);

}  // namespace ocil
