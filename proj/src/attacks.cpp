#include "dsn/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include <nlohmann/json.hpp>

#include "dsn/checkpoint.hpp"
#include "dsn/eval.hpp"
#include "dsn/model_zoo.hpp"

namespace dsn {

using nlohmann::json;

std::string attack_kind_name(AttackKind k) {
    switch (k) {
        case AttackKind::finetune: return "finetune";
        case AttackKind::prune: return "prune";
        case AttackKind::transfer: return "transfer";
        case AttackKind::overwrite: return "overwrite";
        case AttackKind::scratch_baseline: return "scratch_baseline";
    }
    return "?";
}

AttackKind attack_kind_from(const std::string& s) {
    if (s == "finetune") return AttackKind::finetune;
    if (s == "prune") return AttackKind::prune;
    if (s == "transfer") return AttackKind::transfer;
    if (s == "overwrite") return AttackKind::overwrite;
    if (s == "scratch_baseline" || s == "scratch") return AttackKind::scratch_baseline;
    throw config_error("unknown attack kind: " + s);
}

void AttackConfig::validate() const {
    if (kind == AttackKind::prune) {
        if (prune_ratio <= 0.0 || prune_ratio >= 1.0)
            throw config_error("prune_ratio must be in (0,1)");
        return;
    }
    if (data_fraction <= 0.0 || data_fraction > 1.0)
        throw config_error("data_fraction must be in (0,1]");
    if (epochs < 0) throw config_error("epochs must be >= 0");
    if (lr <= 0) throw config_error("lr must be > 0");
    if (batch < 1) throw config_error("batch must be >= 1");
}

namespace {

void require_packaged(const StudentBundle& bundle) {
    if (bundle.stage != BundleStage::packaged)
        throw stage_error("attacks operate on packaged bundles");
}

struct EvalPatterns {
    std::optional<SNPattern> orig;
    std::optional<SNPattern> next;
};

TrajectoryPoint measure(ModelHandles<float>& model, const DatasetHandle& d,
                        const EvalPatterns& pats, int epoch, long long steps) {
    TrajectoryPoint p;
    p.epoch = epoch;
    p.step_count = steps;
    p.acc_raw = evaluate_net(model, d.test_images, d.test_labels, d.image_shape, std::nullopt);
    if (pats.orig)
        p.acc_orig_sn =
            evaluate_net(model, d.test_images, d.test_labels, d.image_shape, pats.orig);
    if (pats.next)
        p.acc_new_sn =
            evaluate_net(model, d.test_images, d.test_labels, d.image_shape, pats.next);
    return p;
}

// Cross-entropy training over a fixed subsample, recording per-epoch metrics.
AttackOutcome run_ce_training(ModelHandles<float> model, const DatasetHandle& dataset,
                              const EvalPatterns& pats, const AttackConfig& cfg) {
    auto keep = stratified_subsample(dataset.train_labels, cfg.data_fraction, cfg.seed);
    Eigen::MatrixXf images = gather_images(dataset.train_images, keep);
    std::vector<int> labels = gather_labels(dataset.train_labels, keep);
    if (images.cols() == 0) throw data_error("attack subsample is empty");

    AttackOutcome out;
    out.kind = cfg.kind;
    out.config = cfg;

    auto params = model.net.params();
    nn::Adam<float> adam(static_cast<float>(cfg.lr));
    std::vector<Eigen::Index> order(static_cast<std::size_t>(images.cols()));
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(split_seed(cfg.seed, "attack-order"));

    long long steps = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
            std::size_t len = std::min<std::size_t>(cfg.batch, order.size() - start);
            std::vector<Eigen::Index> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                          order.begin() + static_cast<std::ptrdiff_t>(start + len));
            Eigen::MatrixXf dlogits;
            double loss = nn::cross_entropy_loss_grad(
                model.net.forward(gather_images(images, idx)), gather_labels(labels, idx),
                dlogits);
            if (!std::isfinite(loss))
                throw training_error("attack training diverged at epoch " +
                                     std::to_string(epoch));
            model.net.backward(dlogits);
            adam.step(params);
            ++steps;
        }
        out.trajectory.push_back(measure(model, dataset, pats, epoch, steps));
    }
    out.total_steps = steps;
    out.final_metrics = out.trajectory.empty() ? measure(model, dataset, pats, -1, 0)
                                               : out.trajectory.back();
    model.net.drop_caches();
    out.attacked_model = std::move(model);
    return out;
}

}  // namespace

AttackOutcome finetune_attack(const StudentBundle& bundle, const DatasetHandle& dataset,
                              const std::optional<SNPattern>& original_pattern,
                              const AttackConfig& cfg) {
    require_packaged(bundle);
    if (cfg.kind != AttackKind::finetune) throw config_error("attack_kind must be finetune");
    cfg.validate();
    return run_ce_training(bundle.model, dataset, {original_pattern, std::nullopt}, cfg);
}

AttackOutcome scratch_baseline(const DatasetHandle& dataset, const ArchitectureSpec& spec,
                               const std::optional<SNPattern>& original_pattern,
                               const AttackConfig& cfg) {
    if (cfg.kind != AttackKind::scratch_baseline)
        throw config_error("attack_kind must be scratch_baseline");
    cfg.validate();
    auto model = instantiate<float>(spec, split_seed(cfg.seed, "scratch-init"),
                                    /*with_auxiliary=*/false);
    return run_ce_training(std::move(model), dataset, {original_pattern, std::nullopt}, cfg);
}

long long prunable_weight_count(ModelHandles<float>& model) {
    long long n = 0;
    for (auto& p : model.net.params())
        if (p.name.ends_with(".weight")) n += p.value->size();
    return n;
}

AttackOutcome prune_attack(const StudentBundle& bundle, const DatasetHandle& dataset,
                           const std::optional<SNPattern>& original_pattern,
                           double prune_ratio) {
    require_packaged(bundle);
    if (prune_ratio <= 0.0 || prune_ratio >= 1.0)
        throw config_error("prune_ratio must be in (0,1)");

    ModelHandles<float> model = bundle.model;
    std::vector<float*> cells;
    for (auto& p : model.net.params())
        if (p.name.ends_with(".weight"))
            for (Eigen::Index i = 0; i < p.value->size(); ++i)
                cells.push_back(p.value->data() + i);

    const auto n = static_cast<long long>(cells.size());
    const auto k = static_cast<long long>(std::ceil(prune_ratio * static_cast<double>(n)));
    // partial sort by |w|, ties broken by traversal order for a deterministic cut
    std::nth_element(cells.begin(), cells.begin() + (k - 1), cells.end(),
                     [](const float* a, const float* b) { return std::fabs(*a) < std::fabs(*b); });
    for (long long i = 0; i < k; ++i) *cells[static_cast<std::size_t>(i)] = 0.0f;

    AttackOutcome out;
    out.kind = AttackKind::prune;
    out.config.kind = AttackKind::prune;
    out.config.prune_ratio = prune_ratio;
    out.total_steps = 0;
    out.final_metrics = measure(model, dataset, {original_pattern, std::nullopt}, 0, 0);
    out.attacked_model = std::move(model);
    return out;
}

AttackOutcome transfer_attack(const StudentBundle& bundle, const DatasetHandle& target_dataset,
                              const std::optional<SNPattern>& original_pattern,
                              const AttackConfig& cfg) {
    require_packaged(bundle);
    if (cfg.kind != AttackKind::transfer) throw config_error("attack_kind must be transfer");
    cfg.validate();

    ModelHandles<float> model = bundle.model;
    int target_classes = cfg.target_classes > 0 ? cfg.target_classes : target_dataset.num_classes;

    // Replace every fully-connected layer with fresh parameters; the last one
    // is sized to the target task.
    std::mt19937_64 rng(split_seed(cfg.seed, "transfer-head"));
    std::normal_distribution<double> dist(0.0, 1.0);
    for (std::size_t i = 0; i < model.net.layers.size(); ++i) {
        if (model.net.layers[i]->kind() != "dense") continue;
        bool last = i + 1 == model.net.layers.size();
        auto old_params = model.net.layers[i]->params();
        Eigen::Index in_dim = old_params[0].value->cols();
        Eigen::Index units = last ? target_classes : old_params[0].value->rows();
        bool relu = model.spec.layers[i].activation == Activation::relu;
        auto fresh = std::make_unique<nn::Dense<float>>("fc" + std::to_string(i), in_dim,
                                                        units, relu);
        for (auto& p : fresh->params()) {
            if (p.name.ends_with(".bias")) {
                p.value->setZero();
                continue;
            }
            double stddev = std::sqrt((relu ? 2.0 : 1.0) / static_cast<double>(in_dim));
            for (Eigen::Index j = 0; j < p.value->size(); ++j)
                p.value->data()[j] = static_cast<float>(dist(rng) * stddev);
        }
        model.net.layers[i] = std::move(fresh);
        model.spec.layers[i].channels = static_cast<int>(units);
    }
    model.spec.num_classes = target_classes;

    return run_ce_training(std::move(model), target_dataset,
                           {original_pattern, std::nullopt}, cfg);
}

AttackOutcome overwrite_attack(const StudentBundle& bundle, const SNPattern& original_pattern,
                               const SNPattern& new_pattern, const DatasetHandle& dataset,
                               const AttackConfig& cfg) {
    require_packaged(bundle);
    if (cfg.kind != AttackKind::overwrite) throw config_error("attack_kind must be overwrite");
    cfg.validate();
    if (original_pattern.block == new_pattern.block &&
        original_pattern.anchor_row == new_pattern.anchor_row &&
        original_pattern.anchor_col == new_pattern.anchor_col)
        throw config_error("overwrite requires a new pattern differing from the original");

    ModelHandles<float> model = bundle.model;
    // The adversary rebuilds the two-branch scaffold with a fresh auxiliary head.
    model.g_d = build_head<float>(model.spec, split_seed(cfg.seed, "overwrite-gd"));
    model.grl_lambda = static_cast<float>(cfg.grl_lambda);

    auto keep = stratified_subsample(dataset.train_labels, cfg.data_fraction, cfg.seed);
    Eigen::MatrixXf images = gather_images(dataset.train_images, keep);
    std::vector<int> labels = gather_labels(dataset.train_labels, keep);
    const nn::Shape3 shape = dataset.image_shape;

    AttackOutcome out;
    out.kind = cfg.kind;
    out.config = cfg;

    auto params_e = model.params_e();
    auto params_y = model.params_y();
    auto params_d = model.params_d();
    nn::Adam<float> adam(static_cast<float>(cfg.lr));
    const std::size_t split = model.split();

    std::vector<Eigen::Index> order(static_cast<std::size_t>(images.cols()));
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(split_seed(cfg.seed, "overwrite-order"));

    EvalPatterns pats{original_pattern, new_pattern};
    long long steps = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
            std::size_t len = std::min<std::size_t>(cfg.batch, order.size() - start);
            std::vector<Eigen::Index> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                          order.begin() + static_cast<std::ptrdiff_t>(start + len));
            Eigen::MatrixXf raw = gather_images(images, idx);
            std::vector<int> y = gather_labels(labels, idx);
            StampedBatch batch{raw, shape.h, shape.w, shape.c, std::nullopt};

            // CE branch: inject the new serial number.
            Eigen::MatrixXf stamped_new = stamp(batch, new_pattern).images;
            Eigen::MatrixXf feat = model.net.forward(stamped_new, 0, split);
            Eigen::MatrixXf logits = model.net.forward(feat, split);
            Eigen::MatrixXf dlogits;
            double ce = nn::cross_entropy_loss_grad(logits, y, dlogits);
            if (!std::isfinite(ce))
                throw training_error("overwrite attack diverged at epoch " +
                                     std::to_string(epoch));
            Eigen::MatrixXf dfeat = model.net.backward(dlogits, split);
            model.net.backward(dfeat, 0, split);

            // SNE branch: scrub the original serial number.
            auto sne_branch = [&](const Eigen::MatrixXf& x) {
                Eigen::MatrixXf f = model.net.forward(x, 0, split);
                Eigen::MatrixXf zd = model.g_d->forward(f);
                Eigen::MatrixXf dzd;
                nn::cross_entropy_loss_grad(zd, y, dzd);
                Eigen::MatrixXf dfd = model.g_d->backward(dzd);
                model.net.backward(nn::grl_backward(dfd, model.grl_lambda), 0, split);
            };
            sne_branch(stamp(batch, original_pattern).images);
            if (!cfg.overwrite_two_branch) sne_branch(raw);

            adam.step(params_e);
            adam.step(params_y);
            adam.step(params_d);
            ++steps;
        }
        out.trajectory.push_back(measure(model, dataset, pats, epoch, steps));
    }
    out.total_steps = steps;
    out.final_metrics = out.trajectory.empty() ? measure(model, dataset, pats, -1, 0)
                                               : out.trajectory.back();
    model.net.drop_caches();
    model.g_d->drop_caches();
    out.attacked_model = std::move(model);
    return out;
}

void AttackOutcome::write(const std::string& prefix) {
    {
        std::ofstream csv(prefix + ".trajectory.csv");
        if (!csv) throw missing_input_error("cannot write trajectory: " + prefix);
        csv << "epoch,step_count,acc_raw,acc_orig_sn,acc_new_sn\n";
        for (const auto& p : trajectory) {
            csv << p.epoch << "," << p.step_count << "," << p.acc_raw << ",";
            if (p.acc_orig_sn >= 0) csv << p.acc_orig_sn;
            csv << ",";
            if (p.acc_new_sn >= 0) csv << p.acc_new_sn;
            csv << "\n";
        }
    }
    {
        auto params = attacked_model.net.params();
        if (attacked_model.g_d)
            for (auto& p : attacked_model.g_d->params()) params.push_back(p);
        save_weights(prefix + ".weights", params);
    }
    json j;
    j["type"] = "attack";
    j["attack_kind"] = attack_kind_name(kind);
    if (kind == AttackKind::prune)
        j["ratio"] = config.prune_ratio;
    else
        j["fraction"] = config.data_fraction;
    j["seed"] = config.seed;
    j["epochs"] = config.epochs;
    j["total_steps"] = total_steps;
    j["acc_raw"] = final_metrics.acc_raw;
    if (final_metrics.acc_orig_sn >= 0) j["acc_orig_sn"] = final_metrics.acc_orig_sn;
    if (final_metrics.acc_new_sn >= 0) j["acc_new_sn"] = final_metrics.acc_new_sn;
    j["checkpoint_sha256"] = sha256_file_hex(prefix + ".weights");
    std::ofstream out(prefix + ".summary.json");
    if (!out) throw missing_input_error("cannot write summary: " + prefix);
    out << j.dump(2) << "\n";
}

}  // namespace dsn
