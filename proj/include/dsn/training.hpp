#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dsn/data.hpp"
#include "dsn/model_zoo.hpp"
#include "dsn/sn_core.hpp"

namespace dsn {

struct TrainingConfig {
    std::string optimizer = "adam";
    double lr_initial = 1e-3;
    int plateau_patience = 3;       // epochs without val-accuracy gain
    double plateau_min_delta = 0.1; // accuracy points
    int teacher_batch = 500;
    int student_batch = 1000;       // 500 raw + 500 stamped
    double grl_lambda = 1.0;
    double grl_warmup_epochs = 0.0; // optional linear ramp of lambda, 0 = off
    int grl_cooldown_start = 0;     // epoch from which lambda is scaled down, 0 = off
    double grl_cooldown_factor = 0.2;
    double distill_temperature = 1.0;
    int epochs = 0;
    std::uint64_t seed = 0;
    bool alternate_steps = false;      // ablation: strict distill/SNE alternation
    bool augment_near_miss = false;    // opt-in: SNE branch also sees perturbed patterns
    int sne_inner_steps = 8;           // extra G_d refits per step (keeps it near best response)
    bool init_from_teacher = true;     // start G_e/G_y from the teacher weights
    int augment_translate = 0;         // random +-k pixel shifts (applied before stamping)

    void validate() const;
    std::string to_json() const;
    static TrainingConfig from_json(const std::string& text);
};

struct EpochMetrics {
    int epoch = 0;
    double loss_distill = 0.0;  // teacher training reports its CE loss here
    double loss_sne = 0.0;
    double acc_with_sn = 0.0;
    double acc_without_sn = 0.0;
};

void write_metrics_csv(const std::string& path, const std::vector<EpochMetrics>& metrics);

struct TeacherModel {
    ModelHandles<float> model;  // no auxiliary branch
    TrainingConfig config;
    std::vector<EpochMetrics> metrics;
    double final_val_accuracy = 0.0;
};

enum class BundleStage { in_training, packaged };

std::string stage_name(BundleStage s);
BundleStage stage_from(const std::string& s);

struct StudentBundle {
    ModelHandles<float> model;
    std::string sn_record_hash;  // SignatureRecord content hash, not the pattern
    BundleStage stage = BundleStage::in_training;
    TrainingConfig config;
    std::vector<EpochMetrics> metrics;
};

// Plain cross-entropy training of the teacher on raw images.
TeacherModel train_teacher(const DatasetHandle& dataset, const ArchitectureSpec& spec,
                           const TrainingConfig& config);

// Two-branch DSN training: the stamped half of each step distills from the
// teacher into (G_e, G_y); the raw half drives the SN-embedding loss through
// the gradient reversal layer into (G_e ascent, G_d descent).
StudentBundle train_student(const TeacherModel& teacher, const DatasetHandle& dataset,
                            const SNPattern& pattern, const std::string& sn_record_hash,
                            const TrainingConfig& config);

// Strips GRL and the auxiliary head. G_e / G_y weights are untouched.
StudentBundle package_student(StudentBundle bundle);

// Inference on a packaged bundle; stamps first iff a pattern is supplied.
struct Prediction {
    std::vector<int> labels;
    Eigen::MatrixXf probabilities;  // (num_classes, batch)
};
Prediction predict(StudentBundle& bundle, const StampedBatch& images,
                   const std::optional<SNPattern>& pattern);

// Checkpoint I/O: weights binary + JSON manifest side by side.
// `path_prefix` produces <prefix>.weights and <prefix>.manifest.json.
void save_teacher(const std::string& path_prefix, TeacherModel& teacher);
TeacherModel load_teacher(const std::string& path_prefix);
void save_student(const std::string& path_prefix, StudentBundle& bundle);
StudentBundle load_student(const std::string& path_prefix);

}  // namespace dsn
