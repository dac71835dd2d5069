#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

#include "ocil/data.hpp"
#include "ocil/model.hpp"

namespace ocil {

// Stand-ins for the benchmarked CIL families:
//  replay              cross-entropy on new-task rows plus replay memory
//  replay_distill      + KD-softmax distillation against the pre-step head
//  replay_distill_wa   + weight alignment of the new-class rows after training
enum class CilMethod { replay, replay_distill, replay_distill_wa };

struct CilConfig {
    int epochs_per_task = 10;
    std::size_t batch_size = 128;
    CilMethod method = CilMethod::replay;
    double distill_temperature = 2.0;
    double distill_weight = 1.0;
    SgdConfig sgd{};
    HeadInit init = HeadInit::seeded_uniform;
    ExemplarStrategy memory_strategy = ExemplarStrategy::herding;

    void validate() const;
};

struct CilModel {
    Extractor extractor;
    LinearHead head;
    // Global class id of each head row, in the order rows were added.
    std::vector<int> seen_classes;

    static CilModel create(Extractor extractor);

    // Head row for a global class id; throws when the class is unseen.
    std::size_t row_of(int label) const;
    // Row index with the largest logit, lowest index on ties.
    std::size_t predict_row(std::span<const double> x) const;
};

struct TrainLogEntry {
    std::size_t task = 0;
    int epoch = 0;
    double loss = 0.0;
    double lr = 0.0;
    double train_acc = 0.0;
};

struct TrainResult {
    CilModel model;
    MemoryBuffer memory;
    std::vector<TrainLogEntry> log;
};

// Trains step t (1-based) on T_t^{train+} = task t train rows plus the
// memory rows, then rebalances the memory for step t.
TrainResult train_task(const CilModel& model, const TaskStream& stream, std::size_t t,
                       const MemoryBuffer& memory, const CilConfig& cfg, Rng& rng);

// Fraction of rows whose predicted class equals the label.
double evaluate_accuracy(const CilModel& model, const FeatureDataset& test);

// Row index of the argmax over a logits vector, lowest index on ties.
std::size_t argmax(std::span<const double> v);

// JSON array of {task, epoch, loss, lr, train_acc}.
void write_training_log(const std::vector<TrainLogEntry>& log, const std::filesystem::path& path);

std::string to_string(CilMethod m);
CilMethod parse_cil_method(const std::string& s);

}  // namespace ocil
