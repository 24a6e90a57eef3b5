#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dsn/data.hpp"
#include "dsn/sn_core.hpp"
#include "dsn/training.hpp"

namespace dsn {

enum class AttackKind { finetune, prune, transfer, overwrite, scratch_baseline };

std::string attack_kind_name(AttackKind k);
AttackKind attack_kind_from(const std::string& s);

struct AttackConfig {
    AttackKind kind = AttackKind::finetune;
    double data_fraction = 0.1;   // unused for prune
    double prune_ratio = 0.0;     // prune only
    int epochs = 0;
    double lr = 1e-3;
    int batch = 500;              // sub-batch size for the overwrite branches
    std::uint64_t seed = 0;
    double grl_lambda = 1.0;          // overwrite only
    bool overwrite_two_branch = false;  // drop the raw/SNE sub-batch
    int target_classes = 0;       // transfer only; 0 = same as source

    void validate() const;
};

struct TrajectoryPoint {
    int epoch = 0;
    long long step_count = 0;
    double acc_raw = 0.0;
    double acc_orig_sn = -1.0;  // -1 = not applicable / not measured
    double acc_new_sn = -1.0;
};

struct AttackOutcome {
    AttackKind kind;
    AttackConfig config;
    std::vector<TrajectoryPoint> trajectory;  // one point per epoch
    long long total_steps = 0;                // optimizer updates (0 for prune)
    TrajectoryPoint final_metrics;
    ModelHandles<float> attacked_model;

    // Writes <prefix>.trajectory.csv, <prefix>.summary.json and the attacked
    // checkpoint weights.
    void write(const std::string& path_prefix);
};

// Continued CE training on raw images from a stratified fraction subsample.
AttackOutcome finetune_attack(const StudentBundle& bundle, const DatasetHandle& dataset,
                              const std::optional<SNPattern>& original_pattern,
                              const AttackConfig& cfg);

// CE training from random init on the same subsample protocol (MNIST* rows).
AttackOutcome scratch_baseline(const DatasetHandle& dataset, const ArchitectureSpec& spec,
                               const std::optional<SNPattern>& original_pattern,
                               const AttackConfig& cfg);

// One-shot global L1 pruning; zeroes exactly ceil(ratio * n_prunable) of the
// conv+dense weights (biases exempt). No retraining.
AttackOutcome prune_attack(const StudentBundle& bundle, const DatasetHandle& dataset,
                           const std::optional<SNPattern>& original_pattern, double prune_ratio);

// Replaces every dense layer with fresh parameters (last sized to the target
// class count), then trains with CE on the fraction subsample.
AttackOutcome transfer_attack(const StudentBundle& bundle, const DatasetHandle& target_dataset,
                              const std::optional<SNPattern>& original_pattern,
                              const AttackConfig& cfg);

// DSN re-embedding with the teacher replaced by ground-truth CE: a CE branch
// on new-pattern-stamped inputs plus SNE/GRL branches on original-pattern and
// (by default) raw inputs.
AttackOutcome overwrite_attack(const StudentBundle& bundle, const SNPattern& original_pattern,
                               const SNPattern& new_pattern, const DatasetHandle& dataset,
                               const AttackConfig& cfg);

// Number of prunable weights in a model (conv+dense weight tensors).
long long prunable_weight_count(ModelHandles<float>& model);

}  // namespace dsn
