#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "ocil/data.hpp"

namespace ocil {

struct StepRecord {
    std::uint64_t seed = 0;
    std::size_t step = 0;
    std::string dataset;
    OodTag tag = OodTag::near;
    double acc = 0.0;
    double auroc = 0.0;
    double fpr95 = 0.0;
    double ap = 0.0;
    std::size_t n_id_test = 0;
    std::size_t n_ood_test = 0;

    bool operator==(const StepRecord&) const = default;
};

struct SeedFailure {
    std::uint64_t seed = 0;
    std::size_t step = 0;  // 0 when the failure happened before step 1
    std::string code;
    std::string message;

    bool operator==(const SeedFailure&) const = default;
};

struct MetricMeans {
    double acc = 0.0;
    double auroc = 0.0;
    double fpr95 = 0.0;
    double ap = 0.0;

    bool operator==(const MetricMeans&) const = default;
};

struct MeanSpread {
    double mean = 0.0;
    double spread = 0.0;  // sample standard deviation, 0 for one seed

    bool operator==(const MeanSpread&) const = default;
};

struct Aggregates {
    std::vector<MetricMeans> per_step;  // index t - 1, averaged over seeds and OOD sets
    MetricMeans over_steps;
    MetricMeans near;  // over steps, near-tagged sets only
    MetricMeans far;
    MeanSpread seed_acc;
    MeanSpread seed_auroc;
    MeanSpread seed_fpr95;
    MeanSpread seed_ap;
    std::size_t effective_seeds = 0;

    bool operator==(const Aggregates&) const = default;
};

struct BenchmarkReport {
    std::string cil_method;
    std::string ood_method;
    std::size_t steps = 0;
    std::vector<std::uint64_t> seeds;
    std::vector<StepRecord> records;  // ordered by seed, step, OOD set
    std::vector<SeedFailure> failures;
    Aggregates aggregates;
    // Largest difference between stored aggregates and ones recomputed
    // from `records`.
    double consistency_max_abs_diff = 0.0;
    bool consistent = true;

    bool operator==(const BenchmarkReport&) const = default;
};

Aggregates compute_aggregates(const std::vector<StepRecord>& records, std::size_t steps);
double aggregate_distance(const Aggregates& a, const Aggregates& b);
// Fills aggregates and the self-consistency fields from records.
void finalize_report(BenchmarkReport& r);

void to_json(nlohmann::json& j, const BenchmarkReport& r);
void from_json(const nlohmann::json& j, BenchmarkReport& r);

std::string report_json(const BenchmarkReport& r);
std::string report_csv(const BenchmarkReport& r);
std::string report_markdown(const BenchmarkReport& r);
BenchmarkReport load_report(const std::filesystem::path& path);

enum class ReportFormat { json, csv, markdown };
ReportFormat parse_report_format(const std::string& s);
std::string render_report(const BenchmarkReport& r, ReportFormat f);
// Writes report.json, report.csv and report.md into `dir`.
void emit_report(const BenchmarkReport& r, const std::filesystem::path& dir);

}  // namespace ocil
