#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ocil/cil.hpp"
#include "ocil/data.hpp"
#include "ocil/finetune.hpp"
#include "ocil/posthoc.hpp"
#include "ocil/report.hpp"

namespace ocil {

// One of the benchmarked OOD methods: a post-hoc scorer over h_t, or a
// fine-tuning method that trains f_t and is scored through it.
struct OodMethod {
    bool finetuned = false;
    ScorerKind scorer = ScorerKind::energy;
    FinetuneMethod finetune = FinetuneMethod::ber;

    static OodMethod posthoc(ScorerKind k) { return {false, k, FinetuneMethod::ber}; }
    static OodMethod finetuning(FinetuneMethod m, ScorerKind k) { return {true, k, m}; }
};

// Names: the scorer names (msp, maxlogit, energy, gen, odin, react, klm,
// nnguide, relation_simplified) and the fine-tuning names (logitnorm,
// t2fnorm, ber, finetune_plain).
OodMethod parse_ood_method(const std::string& s);
std::string to_string(const OodMethod& m);
// Scorer applied to f_t when the config does not name one.
ScorerKind default_finetune_scorer(FinetuneMethod m);
std::vector<std::string> ood_method_names();

struct ExtractorConfig {
    Extractor::Kind kind = Extractor::Kind::identity;
    std::size_t output_dim = 0;  // random_projection only
    std::uint64_t seed = 0;
};

enum class ClassOrder { seeded, sequential };

struct RunConfig {
    // Either a suite manifest or inline data; `data` takes precedence.
    std::filesystem::path manifest;
    std::optional<BenchmarkData> data;

    int step_size = 4;
    std::size_t memory_budget = 200;
    ClassOrder class_order = ClassOrder::seeded;
    ExtractorConfig extractor{};
    CilConfig cil{};
    OodMethod ood = OodMethod::posthoc(ScorerKind::energy);
    ScorerParams scorer{};
    FinetuneConfig finetune{};
    std::vector<std::uint64_t> seeds{0};
    std::filesystem::path output_dir = "out";
    // Writes h_t / f_t checkpoints and training logs under
    // output_dir/checkpoints/seed_<s>/.
    bool save_checkpoints = false;

    void validate() const;
};

// Paths in the JSON document are kept as written; the CLI resolves them
// against its working directory.
void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);
RunConfig load_run_config(const std::filesystem::path& path);

// Everything an observer may inspect after step t of one seed. Pointers
// are valid only during the callback.
struct StepContext {
    std::uint64_t seed = 0;
    std::size_t step = 0;
    const TaskStream* stream = nullptr;
    const CilModel* model = nullptr;
    const MemoryBuffer* memory_before = nullptr;  // M_t
    const MemoryBuffer* memory_after = nullptr;   // M_{t+1}
    const ScoringModel* scoring = nullptr;
    const Scorer* scorer = nullptr;
    const FeatureDataset* fit_rows = nullptr;
    const FeatureDataset* id_test = nullptr;
    const std::vector<FeatureDataset>* ood_tests = nullptr;
};

struct RunOptions {
    // 0 means one thread per seed, capped by hardware concurrency.
    unsigned threads = 1;
    // Invoked after each step; called concurrently when seeds run in
    // parallel.
    std::function<void(const StepContext&)> observer;
};

BenchmarkReport run_benchmark(const RunConfig& cfg, const RunOptions& opts = {});

// Resolves the configured data source into memory.
BenchmarkData resolve_data(const RunConfig& cfg);

// Thread count from --threads, then OPENCIL_THREADS, then 1.
unsigned resolve_threads(std::optional<unsigned> flag);

}  // namespace ocil
