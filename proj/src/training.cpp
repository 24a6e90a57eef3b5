#include "dsn/training.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "dsn/checkpoint.hpp"
#include "dsn/eval.hpp"

namespace dsn {

using nlohmann::json;

void TrainingConfig::validate() const {
    if (optimizer != "adam") throw config_error("unsupported optimizer: " + optimizer);
    if (lr_initial <= 0) throw config_error("lr_initial must be > 0");
    if (teacher_batch < 1 || student_batch < 2)
        throw config_error("batch sizes must be positive");
    if (student_batch % 2 != 0)
        throw config_error("student_batch must split into equal raw/stamped halves");
    if (grl_lambda < 0) throw config_error("grl_lambda must be >= 0");
    if (sne_inner_steps < 0) throw config_error("sne_inner_steps must be >= 0");
    if (augment_translate < 0) throw config_error("augment_translate must be >= 0");
    if (distill_temperature <= 0) throw config_error("distill_temperature must be > 0");
    if (epochs < 0) throw config_error("epochs must be >= 0");
}

std::string TrainingConfig::to_json() const {
    json j;
    j["optimizer"] = optimizer;
    j["lr_initial"] = lr_initial;
    j["plateau_patience"] = plateau_patience;
    j["plateau_min_delta"] = plateau_min_delta;
    j["teacher_batch"] = teacher_batch;
    j["student_batch"] = student_batch;
    j["grl_lambda"] = grl_lambda;
    j["grl_warmup_epochs"] = grl_warmup_epochs;
    j["grl_cooldown_start"] = grl_cooldown_start;
    j["grl_cooldown_factor"] = grl_cooldown_factor;
    j["distill_temperature"] = distill_temperature;
    j["epochs"] = epochs;
    j["seed"] = seed;
    j["alternate_steps"] = alternate_steps;
    j["augment_near_miss"] = augment_near_miss;
    j["sne_inner_steps"] = sne_inner_steps;
    j["init_from_teacher"] = init_from_teacher;
    j["augment_translate"] = augment_translate;
    return j.dump(2);
}

TrainingConfig TrainingConfig::from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw format_error(std::string("config is not valid JSON: ") + e.what());
    }
    TrainingConfig c;
    c.optimizer = j.value("optimizer", c.optimizer);
    c.lr_initial = j.value("lr_initial", c.lr_initial);
    c.plateau_patience = j.value("plateau_patience", c.plateau_patience);
    c.plateau_min_delta = j.value("plateau_min_delta", c.plateau_min_delta);
    c.teacher_batch = j.value("teacher_batch", c.teacher_batch);
    c.student_batch = j.value("student_batch", c.student_batch);
    c.grl_lambda = j.value("grl_lambda", c.grl_lambda);
    c.grl_warmup_epochs = j.value("grl_warmup_epochs", c.grl_warmup_epochs);
    c.grl_cooldown_start = j.value("grl_cooldown_start", c.grl_cooldown_start);
    c.grl_cooldown_factor = j.value("grl_cooldown_factor", c.grl_cooldown_factor);
    c.distill_temperature = j.value("distill_temperature", c.distill_temperature);
    c.epochs = j.value("epochs", c.epochs);
    c.seed = j.value("seed", c.seed);
    c.alternate_steps = j.value("alternate_steps", c.alternate_steps);
    c.augment_near_miss = j.value("augment_near_miss", c.augment_near_miss);
    c.sne_inner_steps = j.value("sne_inner_steps", c.sne_inner_steps);
    c.init_from_teacher = j.value("init_from_teacher", c.init_from_teacher);
    c.augment_translate = j.value("augment_translate", c.augment_translate);
    c.validate();
    return c;
}

void write_metrics_csv(const std::string& path, const std::vector<EpochMetrics>& metrics) {
    std::ofstream out(path);
    if (!out) throw missing_input_error("cannot write metrics: " + path);
    out << "epoch,loss_distill,loss_sne,acc_with_sn,acc_without_sn\n";
    for (const auto& m : metrics)
        out << m.epoch << "," << m.loss_distill << "," << m.loss_sne << ","
            << m.acc_with_sn << "," << m.acc_without_sn << "\n";
}

std::string stage_name(BundleStage s) {
    return s == BundleStage::packaged ? "packaged" : "in_training";
}

BundleStage stage_from(const std::string& s) {
    if (s == "packaged") return BundleStage::packaged;
    if (s == "in_training") return BundleStage::in_training;
    throw format_error("unknown bundle stage: " + s);
}

namespace {

// Index stream yielding seeded shuffled minibatches, reshuffled every epoch.
class BatchStream {
public:
    BatchStream(Eigen::Index n, std::uint64_t seed) : seed_(seed), idx_(static_cast<std::size_t>(n)) {
        std::iota(idx_.begin(), idx_.end(), 0);
        reshuffle();
    }

    std::vector<Eigen::Index> next(int batch) {
        std::vector<Eigen::Index> out;
        out.reserve(static_cast<std::size_t>(batch));
        for (int i = 0; i < batch; ++i) {
            if (pos_ == idx_.size()) reshuffle();
            out.push_back(idx_[pos_++]);
        }
        return out;
    }

private:
    void reshuffle() {
        std::mt19937_64 rng(split_seed(seed_, "epoch-" + std::to_string(epoch_++)));
        std::shuffle(idx_.begin(), idx_.end(), rng);
        pos_ = 0;
    }

    std::uint64_t seed_;
    std::vector<Eigen::Index> idx_;
    std::size_t pos_ = 0;
    int epoch_ = 0;
};

// Random ±k pixel translation with zero fill, one offset per image.
Eigen::MatrixXf translate_batch(const Eigen::MatrixXf& images, nn::Shape3 shape, int k,
                                std::mt19937_64& rng) {
    if (k == 0) return images;
    Eigen::MatrixXf out = Eigen::MatrixXf::Zero(images.rows(), images.cols());
    std::uniform_int_distribution<int> d(-k, k);
    for (Eigen::Index b = 0; b < images.cols(); ++b) {
        const int dr = d(rng), dc = d(rng);
        for (int ch = 0; ch < shape.c; ++ch)
            for (int r = 0; r < shape.h; ++r) {
                const int sr = r - dr;
                if (sr < 0 || sr >= shape.h) continue;
                for (int col = 0; col < shape.w; ++col) {
                    const int sc = col - dc;
                    if (sc < 0 || sc >= shape.w) continue;
                    out((static_cast<Eigen::Index>(ch) * shape.h + r) * shape.w + col, b) =
                        images((static_cast<Eigen::Index>(ch) * shape.h + sr) * shape.w + sc, b);
                }
            }
    }
    return out;
}

void check_finite(double loss, int epoch, const char* what) {
    if (!std::isfinite(loss))
        throw training_error(std::string(what) + " diverged (non-finite loss) at epoch " +
                             std::to_string(epoch));
}

}  // namespace

TeacherModel train_teacher(const DatasetHandle& dataset, const ArchitectureSpec& spec,
                           const TrainingConfig& config) {
    config.validate();
    dataset.validate();
    if (dataset.image_shape != spec.input_shape)
        throw shape_error("dataset image shape does not match architecture input");

    TeacherModel teacher;
    teacher.config = config;
    teacher.model = instantiate<float>(spec, split_seed(config.seed, "teacher-init"),
                                       /*with_auxiliary=*/false);

    auto params = teacher.model.net.params();
    nn::Adam<float> adam(static_cast<float>(config.lr_initial));
    nn::PlateauDecay<float> plateau(config.plateau_patience, config.plateau_min_delta);
    BatchStream stream(dataset.train_size(), split_seed(config.seed, "teacher-data"));

    const int steps_per_epoch =
        static_cast<int>((dataset.train_size() + config.teacher_batch - 1) / config.teacher_batch);
    std::mt19937_64 aug_rng(split_seed(config.seed, "teacher-augment"));

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        double loss_sum = 0.0;
        for (int step = 0; step < steps_per_epoch; ++step) {
            auto idx = stream.next(config.teacher_batch);
            Eigen::MatrixXf x = translate_batch(gather_images(dataset.train_images, idx),
                                                dataset.image_shape,
                                                config.augment_translate, aug_rng);
            std::vector<int> y = gather_labels(dataset.train_labels, idx);
            Eigen::MatrixXf logits = teacher.model.net.forward(x);
            Eigen::MatrixXf dlogits;
            double loss = nn::cross_entropy_loss_grad(logits, y, dlogits);
            check_finite(loss, epoch, "teacher training");
            loss_sum += loss;
            teacher.model.net.backward(dlogits);
            adam.step(params);
        }
        double val_acc = evaluate_net(teacher.model, dataset.test_images, dataset.test_labels,
                                      dataset.image_shape, std::nullopt);
        teacher.metrics.push_back(
            {epoch, loss_sum / steps_per_epoch, 0.0, val_acc, val_acc});
        if (plateau.observe(val_acc))
            adam.set_learning_rate(adam.learning_rate() / 10.0f);
    }
    teacher.model.net.drop_caches();
    teacher.final_val_accuracy = evaluate_net(teacher.model, dataset.test_images,
                                              dataset.test_labels, dataset.image_shape,
                                              std::nullopt);
    return teacher;
}

StudentBundle train_student(const TeacherModel& teacher, const DatasetHandle& dataset,
                            const SNPattern& pattern, const std::string& sn_record_hash,
                            const TrainingConfig& config) {
    config.validate();
    dataset.validate();
    pattern.validate();
    const nn::Shape3 shape = dataset.image_shape;
    if (pattern.anchor_row + pattern.rows() > shape.h ||
        pattern.anchor_col + pattern.cols() > shape.w)
        throw geometry_error("SN pattern does not fit the dataset image shape");
    if (teacher.model.spec.input_shape != shape)
        throw shape_error("teacher input shape does not match dataset");

    StudentBundle bundle;
    bundle.config = config;
    bundle.sn_record_hash = sn_record_hash;
    bundle.model = instantiate<float>(teacher.model.spec,
                                      split_seed(config.seed, "student-init"),
                                      /*with_auxiliary=*/true);
    bundle.model.grl_lambda = static_cast<float>(config.grl_lambda);
    if (config.init_from_teacher) {
        auto sp = bundle.model.net.params();
        auto tp = const_cast<nn::Net<float>&>(teacher.model.net).params();
        for (std::size_t i = 0; i < sp.size(); ++i) *sp[i].value = *tp[i].value;
    }

    // Local copy: forward passes cache activations, and the teacher stays
    // frozen and shareable.
    nn::Net<float> teacher_net = teacher.model.net;

    // The stamp is deterministic per image, so the teacher's soft targets are
    // too: compute them once on the clean stamped images instead of re-running
    // the teacher every epoch. Under augmentation the student still distills
    // toward the clean-image target (consistency-style), which also keeps the
    // teacher out of the per-step loop.
    const float temp = static_cast<float>(config.distill_temperature);
    Eigen::MatrixXf teacher_targets;
    {
        teacher_targets.resize(dataset.num_classes, dataset.train_size());
        const Eigen::Index chunk = config.teacher_batch;
        for (Eigen::Index at = 0; at < dataset.train_size(); at += chunk) {
            Eigen::Index n = std::min(chunk, dataset.train_size() - at);
            StampedBatch part{dataset.train_images.middleCols(at, n),
                              dataset.image_shape.h, dataset.image_shape.w,
                              dataset.image_shape.c, std::nullopt};
            teacher_targets.middleCols(at, n) =
                nn::softmax(teacher_net.forward(stamp(part, pattern).images), temp);
        }
        teacher_net.drop_caches();
    }

    auto params_e = bundle.model.params_e();
    auto params_y = bundle.model.params_y();
    auto params_d = bundle.model.params_d();
    nn::Adam<float> adam(static_cast<float>(config.lr_initial));
    nn::PlateauDecay<float> plateau(config.plateau_patience, config.plateau_min_delta);

    const int half = config.student_batch / 2;
    BatchStream raw_stream(dataset.train_size(), split_seed(config.seed, "student-raw"));
    BatchStream stamped_stream(dataset.train_size(), split_seed(config.seed, "student-stamped"));
    std::mt19937_64 aug_rng(split_seed(config.seed, "student-augment"));
    const int steps_per_epoch =
        static_cast<int>((dataset.train_size() + half - 1) / half);
    const std::size_t split = bundle.model.split();

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        double distill_sum = 0.0, sne_sum = 0.0;
        for (int step = 0; step < steps_per_epoch; ++step) {
            float lambda = bundle.model.grl_lambda;
            if (config.grl_warmup_epochs > 0) {
                double progress = (epoch + static_cast<double>(step) / steps_per_epoch) /
                                  config.grl_warmup_epochs;
                lambda *= static_cast<float>(std::min(1.0, progress));
            }
            // Once the lock has formed, the reversed branch mostly injects
            // gradient noise; the polish phase eases lambda and drops the
            // augmentation so distillation converges on the clean behavior.
            const bool polish =
                config.grl_cooldown_start > 0 && epoch >= config.grl_cooldown_start;
            if (polish) lambda *= static_cast<float>(config.grl_cooldown_factor);
            const int shift = polish ? 0 : config.augment_translate;

            // Distillation branch: SN-stamped inputs, generated on the fly.
            auto sidx = stamped_stream.next(half);
            StampedBatch sb{translate_batch(gather_images(dataset.train_images, sidx),
                                            shape, shift, aug_rng),
                            shape.h, shape.w, shape.c, std::nullopt};
            StampedBatch stamped = stamp(sb, pattern);
            Eigen::MatrixXf teacher_probs(dataset.num_classes,
                                          static_cast<Eigen::Index>(sidx.size()));
            for (Eigen::Index i = 0; i < teacher_probs.cols(); ++i)
                teacher_probs.col(i) =
                    teacher_targets.col(sidx[static_cast<std::size_t>(i)]);
            Eigen::MatrixXf feat_s = bundle.model.net.forward(stamped.images, 0, split);
            Eigen::MatrixXf logits_s = bundle.model.net.forward(feat_s, split);
            Eigen::MatrixXf dlogits;
            double distill =
                nn::distill_loss_grad(teacher_probs, logits_s, temp, dlogits);
            check_finite(distill, epoch, "student distillation");
            distill_sum += distill;
            Eigen::MatrixXf dfeat = bundle.model.net.backward(dlogits, split);
            bundle.model.net.backward(dfeat, 0, split);
            if (config.alternate_steps) {
                adam.step(params_e);
                adam.step(params_y);
            }

            // SN-embedding branch: raw inputs through GRL into the auxiliary
            // head. The reversal drives theta_e up the CE slope while theta_d
            // descends it.
            auto ridx = raw_stream.next(half);
            Eigen::MatrixXf raw = translate_batch(gather_images(dataset.train_images, ridx),
                                                  shape, shift, aug_rng);
            std::vector<int> ylab = gather_labels(dataset.train_labels, ridx);
            if (config.augment_near_miss) {
                // Half of the raw sub-batch carries a near-miss pattern.
                int flips = std::uniform_int_distribution<int>(1, pattern.active_cells())(aug_rng);
                SNPattern miss = perturb_pattern(pattern, flips, aug_rng());
                StampedBatch part{raw.leftCols(half / 2), shape.h, shape.w, shape.c,
                                  std::nullopt};
                raw.leftCols(half / 2) = stamp(part, miss).images;
            }
            Eigen::MatrixXf feat_r = bundle.model.net.forward(raw, 0, split);
            // Refit G_d toward its best response on the cached features before
            // the adversarial pass; otherwise theta_e wins the race by making a
            // stale G_d confidently wrong instead of removing label information.
            for (int inner = 0; inner < config.sne_inner_steps; ++inner) {
                Eigen::MatrixXf li = bundle.model.g_d->forward(feat_r);
                Eigen::MatrixXf dli;
                nn::cross_entropy_loss_grad(li, ylab, dli);
                bundle.model.g_d->backward(dli);
                adam.step(params_d);
            }
            Eigen::MatrixXf logits_d = bundle.model.g_d->forward(feat_r);
            Eigen::MatrixXf dlogits_d;
            double sne = nn::cross_entropy_loss_grad(logits_d, ylab, dlogits_d);
            check_finite(sne, epoch, "student SN embedding");
            sne_sum += sne;
            Eigen::MatrixXf dfeat_d = bundle.model.g_d->backward(dlogits_d);
            bundle.model.net.backward(nn::grl_backward(dfeat_d, lambda), 0, split);

            if (config.alternate_steps) {
                adam.step(params_e);
                adam.step(params_d);
            } else {
                adam.step(params_e);
                adam.step(params_y);
                adam.step(params_d);
            }
        }
        double acc_with = evaluate_net(bundle.model, dataset.test_images, dataset.test_labels,
                                       shape, pattern);
        double acc_without = evaluate_net(bundle.model, dataset.test_images,
                                          dataset.test_labels, shape, std::nullopt);
        bundle.metrics.push_back({epoch, distill_sum / steps_per_epoch,
                                  sne_sum / steps_per_epoch, acc_with, acc_without});
        if (plateau.observe(acc_with))
            adam.set_learning_rate(adam.learning_rate() / 10.0f);
    }
    bundle.model.net.drop_caches();
    if (bundle.model.g_d) bundle.model.g_d->drop_caches();
    return bundle;
}

StudentBundle package_student(StudentBundle bundle) {
    if (bundle.stage == BundleStage::packaged)
        throw stage_error("bundle is already packaged");
    bundle.model.g_d.reset();
    bundle.model.grl_lambda = 0.0f;
    bundle.stage = BundleStage::packaged;
    return bundle;
}

Prediction predict(StudentBundle& bundle, const StampedBatch& images,
                   const std::optional<SNPattern>& pattern) {
    if (bundle.stage != BundleStage::packaged)
        throw stage_error("predict requires a packaged bundle");
    const StampedBatch* input = &images;
    StampedBatch stamped;
    if (pattern) {
        stamped = stamp(images, *pattern);
        input = &stamped;
    }
    Prediction p;
    p.probabilities = nn::softmax(bundle.model.net.forward(input->images));
    p.labels = argmax_labels(p.probabilities);
    bundle.model.net.drop_caches();
    return p;
}

namespace {

json metrics_to_json(const std::vector<EpochMetrics>& ms) {
    json arr = json::array();
    for (const auto& m : ms)
        arr.push_back({{"epoch", m.epoch},
                       {"loss_distill", m.loss_distill},
                       {"loss_sne", m.loss_sne},
                       {"acc_with_sn", m.acc_with_sn},
                       {"acc_without_sn", m.acc_without_sn}});
    return arr;
}

std::vector<EpochMetrics> metrics_from_json(const json& arr) {
    std::vector<EpochMetrics> ms;
    for (const auto& m : arr)
        ms.push_back({m.at("epoch").get<int>(), m.at("loss_distill").get<double>(),
                      m.at("loss_sne").get<double>(), m.at("acc_with_sn").get<double>(),
                      m.at("acc_without_sn").get<double>()});
    return ms;
}

json load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw missing_input_error("manifest missing: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    try {
        return json::parse(ss.str());
    } catch (const json::parse_error& e) {
        throw format_error(std::string("manifest is not valid JSON: ") + e.what());
    }
}

void write_manifest(const std::string& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw missing_input_error("cannot write manifest: " + path);
    out << j.dump(2) << "\n";
}

}  // namespace

void save_teacher(const std::string& prefix, TeacherModel& teacher) {
    save_weights(prefix + ".weights", teacher.model.net.params());
    json j;
    j["kind"] = "teacher";
    j["spec"] = json::parse(teacher.model.spec.to_json());
    j["config"] = json::parse(teacher.config.to_json());
    j["metrics"] = metrics_to_json(teacher.metrics);
    j["final_val_accuracy"] = teacher.final_val_accuracy;
    j["weights_sha256"] = sha256_file_hex(prefix + ".weights");
    write_manifest(prefix + ".manifest.json", j);
}

TeacherModel load_teacher(const std::string& prefix) {
    json j = load_manifest(prefix + ".manifest.json");
    if (j.value("kind", "") != "teacher")
        throw stage_error("checkpoint is not a teacher model: " + prefix);
    TeacherModel t;
    t.config = TrainingConfig::from_json(j.at("config").dump());
    auto spec = ArchitectureSpec::from_json(j.at("spec").dump());
    t.model = instantiate<float>(spec, 0, /*with_auxiliary=*/false);
    assign_weights(t.model.net.params(), load_weights(prefix + ".weights"));
    t.metrics = metrics_from_json(j.value("metrics", json::array()));
    t.final_val_accuracy = j.value("final_val_accuracy", 0.0);
    return t;
}

void save_student(const std::string& prefix, StudentBundle& bundle) {
    auto params = bundle.model.net.params();
    if (bundle.model.g_d)
        for (auto& p : bundle.model.g_d->params()) params.push_back(p);
    save_weights(prefix + ".weights", params);
    json j;
    j["kind"] = "student";
    j["stage"] = stage_name(bundle.stage);
    j["spec"] = json::parse(bundle.model.spec.to_json());
    j["config"] = json::parse(bundle.config.to_json());
    j["sn_record_hash"] = bundle.sn_record_hash;
    j["grl_lambda"] = bundle.model.grl_lambda;
    j["metrics"] = metrics_to_json(bundle.metrics);
    j["weights_sha256"] = sha256_file_hex(prefix + ".weights");
    write_manifest(prefix + ".manifest.json", j);
}

StudentBundle load_student(const std::string& prefix) {
    json j = load_manifest(prefix + ".manifest.json");
    if (j.value("kind", "") != "student")
        throw stage_error("checkpoint is not a student bundle: " + prefix);
    StudentBundle b;
    b.stage = stage_from(j.at("stage").get<std::string>());
    b.config = TrainingConfig::from_json(j.at("config").dump());
    b.sn_record_hash = j.value("sn_record_hash", "");
    auto spec = ArchitectureSpec::from_json(j.at("spec").dump());
    b.model = instantiate<float>(spec, 0, b.stage == BundleStage::in_training);
    b.model.grl_lambda = j.value("grl_lambda", 1.0f);
    auto tensors = load_weights(prefix + ".weights");
    assign_weights(b.model.net.params(), tensors);
    if (b.model.g_d) assign_weights(b.model.g_d->params(), tensors);
    b.metrics = metrics_from_json(j.value("metrics", json::array()));
    return b;
}

}  // namespace dsn
