#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fiberseg/metrics.hpp"
#include "fiberseg/nn.hpp"
#include "fiberseg/prune.hpp"
#include "fiberseg/synth.hpp"

namespace fiberseg {

enum class Level { Macro, Micro };
enum class Protocol { Intra, Inter, Merged };

std::string to_string(Level level);
std::string to_string(Protocol protocol);
Level level_from_string(const std::string& s);
Protocol protocol_from_string(const std::string& s);

struct Dataset {
    std::vector<MaskedSequence> sequences;
    std::vector<int> labels;  // 0..8
    std::string brain_id;

    std::size_t size() const { return sequences.size(); }
};

// Fibers -> masked sequences: mask-collision shift, then fixed-length
// conversion. Labels come from the sidecar (or the fibers themselves).
Dataset make_dataset(const Tractogram& t, const std::vector<int>& labels,
                     std::string brain_id, std::size_t max_len = kDefaultSeqLen,
                     double mask_value = kDefaultMaskValue);
Dataset make_dataset(const LabeledBrain& brain, std::size_t max_len = kDefaultSeqLen,
                     double mask_value = kDefaultMaskValue);

struct TrainConfig {
    int epochs = 15;
    int batch_size = 64;
    double train_fraction = 0.4;
    double val_fraction = 0.2;  // of the training pool
    std::uint64_t seed = 42;
    Level level = Level::Macro;

    std::size_t bilstm_hidden = 64;
    std::vector<std::size_t> stack_hidden{64, 32, 16};
    std::size_t dense_hidden = 0;

    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double clip_norm = 5.0;

    // Coordinates are mm-scale; this brings them into the gates' linear range.
    double input_scale = 0.01;
    int threads = 1;
    std::size_t seq_len = kDefaultSeqLen;
    double mask_value = kDefaultMaskValue;
    double inter_test_fraction = 1.0;  // fraction of each held-out brain tested
};

// Throws BadConfig listing every violated constraint.
void validate(const TrainConfig& cfg);

struct SplitIndices {
    std::vector<std::size_t> train, val, test;
};

// Seeded shuffle; train_fraction of the fibers form the training pool and
// val_fraction of that pool becomes validation. Floor rounding with a
// minimum of 1; throws EmptySplit when any part ends up empty.
SplitIndices split_train_val(const Dataset& d, const TrainConfig& cfg);

Dataset subset(const Dataset& d, const std::vector<std::size_t>& idx);
Dataset to_macro(const Dataset& d);  // labels -> 0 (grey) / 1 (white)
Dataset to_micro(const Dataset& d);  // white fibers only, labels -> 0..7

struct EpochStats {
    int epoch = 0;
    double train_loss = 0.0, train_acc = 0.0;
    double val_loss = 0.0, val_acc = 0.0;
};

struct TrainResult {
    ModelParams params;  // from the epoch with the best validation accuracy
    std::vector<EpochStats> history;
    int best_epoch = 0;
};

// Labels must already live in head space: {0,1} for macro, 0..7 for micro.
TrainResult train(const TrainConfig& cfg, const Dataset& train_set, const Dataset& val_set);

// Head probabilities for one sequence.
Vec predict_probs(const ModelParams& m, const MaskedSequence& seq, double input_scale);
int predict_macro(const ModelParams& m, const MaskedSequence& seq, double input_scale);
int predict_micro(const ModelParams& m, const MaskedSequence& seq, double input_scale);

// Macro p >= 0.5 routes to the micro argmax (remapped to 1..8), else 0.
int hierarchical_predict(const ModelParams& macro_model, const ModelParams& micro_model,
                         const MaskedSequence& seq, double input_scale);

struct EvalReport {
    Protocol protocol = Protocol::Intra;
    Level level = Level::Macro;
    std::string unit;        // brain id, or "merged"
    std::string trained_on;  // brain id(s) the models were fitted on
    double accuracy = 0.0;
    std::optional<double> recall_white;           // macro only
    std::optional<double> hierarchical_accuracy;  // micro reports, 9-way end-to-end
    Confusion confusion;                          // 2x2 macro, 9x9 micro
    std::vector<EpochStats> history;
};

EvalReport evaluate_macro(const ModelParams& macro_model, const Dataset& test,
                          const TrainConfig& cfg, Protocol protocol, std::string unit,
                          std::string trained_on);
// Micro accuracy and confusion cover the ground-truth white test fibers; the
// hierarchical accuracy additionally runs the two-stage predictor over the
// whole test set when a macro model is supplied.
EvalReport evaluate_micro(const ModelParams& micro_model, const ModelParams* macro_model,
                          const Dataset& test, const TrainConfig& cfg, Protocol protocol,
                          std::string unit, std::string trained_on);

// Merged-protocol pools: a seeded shuffled half of each brain goes to
// training (validation carved from the pool), the other halves are the test
// set. Shared by training and evaluation so both sides agree on the halves.
struct MergedSplit {
    Dataset train, val, test;
};
MergedSplit merged_split(const std::vector<Dataset>& brains, const TrainConfig& cfg);

// Trains macro + micro models per the protocol and returns one report pair
// per evaluated unit. `inter_train_index` designates the training brain for
// the inter protocol (default: the second brain).
std::vector<EvalReport> run_protocol(Protocol protocol, const std::vector<Dataset>& brains,
                                     const TrainConfig& cfg,
                                     std::size_t inter_train_index = 1);

}  // namespace fiberseg
