// dsn: serial-number-locked model training, packaging and attack benchmarks.
#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#ifdef __GLIBC__
#include <malloc.h>
#endif
#include <fstream>
#include <iostream>

#include <nlohmann/json.hpp>

#include "dsn/attacks.hpp"
#include "dsn/checkpoint.hpp"
#include "dsn/common.hpp"
#include "dsn/data.hpp"
#include "dsn/eval.hpp"
#include "dsn/model_zoo.hpp"
#include "dsn/run_manifest.hpp"
#include "dsn/sn_core.hpp"
#include "dsn/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Exit codes: 0 ok, 2 config error, 3 missing input, 4 stage violation,
// 5 training divergence.
constexpr int kOk = 0;
constexpr int kConfigError = 2;
constexpr int kMissingInput = 3;
constexpr int kStageViolation = 4;
constexpr int kTrainingDivergence = 5;

std::string default_data_root() {
    if (const char* env = std::getenv("DSN_DATA_ROOT")) return env;
    return "data";
}

std::pair<int, int> parse_anchor(const std::string& s) {
    auto comma = s.find(',');
    if (comma == std::string::npos)
        throw dsn::config_error("anchor must be 'row,col': " + s);
    return {std::stoi(s.substr(0, comma)), std::stoi(s.substr(comma + 1))};
}

dsn::SNPattern pattern_from_cert(const std::string& path) {
    auto record = dsn::SignatureRecord::load(path);
    if (!dsn::verify_signature(record))
        throw dsn::format_error("certificate failed verification: " + path);
    return dsn::pattern_from_record(record);
}

void add_training_options(CLI::App* cmd, dsn::TrainingConfig& cfg) {
    cmd->add_option("--lr", cfg.lr_initial, "initial learning rate");
    cmd->add_option("--epochs", cfg.epochs, "training epochs");
    cmd->add_option("--seed", cfg.seed, "master seed");
    cmd->add_option("--teacher-batch", cfg.teacher_batch, "teacher batch size");
    cmd->add_option("--student-batch", cfg.student_batch, "student batch size (raw+stamped)");
    cmd->add_option("--grl-lambda", cfg.grl_lambda, "gradient reversal strength");
    cmd->add_option("--grl-warmup-epochs", cfg.grl_warmup_epochs, "lambda warm-up ramp length");
    cmd->add_option("--grl-cooldown-start", cfg.grl_cooldown_start,
                    "epoch from which lambda is scaled down (0 = off)");
    cmd->add_option("--grl-cooldown-factor", cfg.grl_cooldown_factor,
                    "lambda scale applied after the cooldown start");
    cmd->add_option("--sne-inner-steps", cfg.sne_inner_steps,
                    "auxiliary-head refits per step before the reversed update");
    cmd->add_flag("--teacher-init,!--random-init", cfg.init_from_teacher,
                  "initialize the student from the teacher weights");
    cmd->add_option("--augment-translate", cfg.augment_translate,
                    "max random pixel shift for training inputs (0 = off)");
    cmd->add_option("--temperature", cfg.distill_temperature, "distillation temperature");
    cmd->add_option("--patience", cfg.plateau_patience, "plateau patience (epochs)");
    cmd->add_flag("--alternate-steps", cfg.alternate_steps,
                  "strict distill/SNE step alternation (ablation)");
    cmd->add_flag("--augment-near-miss", cfg.augment_near_miss,
                  "train the SNE branch on perturbed patterns too");
}

struct ModelSummary {
    std::string model_id;
    double acc_with_sn = -1;
    double acc_without_sn = -1;
};

void write_model_summary(const std::string& path, const ModelSummary& s,
                         const std::string& checkpoint_hash) {
    json j;
    j["type"] = "model";
    j["model_id"] = s.model_id;
    if (s.acc_with_sn >= 0) j["acc_with_sn"] = s.acc_with_sn;
    if (s.acc_without_sn >= 0) j["acc_without_sn"] = s.acc_without_sn;
    j["checkpoint_sha256"] = checkpoint_hash;
    std::ofstream out(path);
    out << j.dump(2) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
#ifdef __GLIBC__
    // Large activation buffers are allocated and freed every batch; keep them
    // on the heap instead of round-tripping through mmap.
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
    CLI::App app{"Serial-number-locked DNN training and attack benchmarks"};
    app.require_subcommand(1);
    app.fallthrough();
    // Resolution order: command-line flag > config file > built-in default.
    // Subcommand options live under a [subcommand] section in the file.
    app.set_config("--config", "", "read options from an INI-style config file");

    std::string data_root = default_data_root();
    std::string runs_root = "runs";
    app.add_option("--data-root", data_root, "dataset root directory (env DSN_DATA_ROOT)")
        ->envname("DSN_DATA_ROOT");
    app.add_option("--runs-root", runs_root, "root directory for run outputs");

    // fetch-data
    auto* fetch = app.add_subcommand("fetch-data", "download dataset archives");
    std::string fetch_name, fetch_url;
    fetch->add_option("--dataset", fetch_name, "mnist | gtsrb")->required();
    fetch->add_option("--base-url", fetch_url, "mirror base URL")->required();


    // genkey
    auto* genkey = app.add_subcommand("genkey", "generate an Ed25519 signing keypair");
    std::string genkey_out = "owner_key.pem";
    genkey->add_option("--out", genkey_out, "private key PEM path");


    // keygen
    auto* keygen = app.add_subcommand("keygen", "derive an SN certificate from owner identity");
    std::string kg_owner, kg_timestamp, kg_key, kg_out = "sn_cert.json", kg_anchor = "0,0";
    int kg_rows = 3, kg_cols = 3, kg_img_h = 0, kg_img_w = 0;
    keygen->add_option("--owner", kg_owner, "owner name")->required();
    keygen->add_option("--timestamp", kg_timestamp, "ISO-8601 UTC timestamp (default: now)");
    keygen->add_option("--key", kg_key, "private key PEM")->required();
    keygen->add_option("--rows", kg_rows, "pattern rows");
    keygen->add_option("--cols", kg_cols, "pattern cols");
    keygen->add_option("--anchor", kg_anchor, "anchor 'row,col'");
    keygen->add_option("--image-height", kg_img_h, "optional target image height bound");
    keygen->add_option("--image-width", kg_img_w, "optional target image width bound");
    keygen->add_option("--out", kg_out, "certificate output path");


    // verify-cert
    auto* verify = app.add_subcommand("verify-cert", "check an SN certificate's provenance");
    std::string vc_path;
    verify->add_option("--cert", vc_path, "certificate path")->required();


    // train-teacher
    auto* ttrain = app.add_subcommand("train-teacher", "train the private teacher model");
    std::string tt_dataset = "mnist";
    dsn::TrainingConfig tt_cfg;
    tt_cfg.epochs = 12;
    ttrain->add_option("--dataset", tt_dataset, "mnist | gtsrb");
    add_training_options(ttrain, tt_cfg);


    // train-student
    auto* strain = app.add_subcommand("train-student", "distill an SN-locked student");
    std::string st_dataset = "mnist", st_teacher, st_cert;
    dsn::TrainingConfig st_cfg;
    st_cfg.epochs = 15;
    strain->add_option("--dataset", st_dataset, "mnist | gtsrb");
    strain->add_option("--teacher", st_teacher, "teacher checkpoint prefix")->required();
    strain->add_option("--sn-cert", st_cert, "SN certificate path")->required();
    add_training_options(strain, st_cfg);


    // package
    auto* package = app.add_subcommand("package", "strip GRL and the auxiliary head");
    std::string pk_student;
    package->add_option("--student", pk_student, "in-training student checkpoint prefix")
        ->required();


    // predict
    auto* predict = app.add_subcommand("predict", "run a packaged model on the test split");
    std::string pr_model, pr_dataset = "mnist", pr_cert;
    int pr_limit = 10;
    predict->add_option("--model", pr_model, "packaged checkpoint prefix")->required();
    predict->add_option("--dataset", pr_dataset, "mnist | gtsrb");
    predict->add_option("--sn-cert", pr_cert, "SN certificate (omit for raw inputs)");
    predict->add_option("--limit", pr_limit, "how many per-image labels to print");


    // attack
    auto* attack = app.add_subcommand("attack", "run an adversary benchmark");
    std::string at_kind, at_model, at_dataset = "mnist", at_cert, at_new_cert;
    dsn::AttackConfig at_cfg;
    at_cfg.epochs = 20;
    attack->add_option("--kind", at_kind, "finetune|prune|transfer|overwrite|scratch")
        ->required();
    attack->add_option("--model", at_model, "packaged checkpoint prefix");
    attack->add_option("--dataset", at_dataset, "mnist | gtsrb");
    attack->add_option("--sn-cert", at_cert, "original SN certificate");
    attack->add_option("--new-sn-cert", at_new_cert, "adversary SN certificate (overwrite)");
    attack->add_option("--fraction", at_cfg.data_fraction, "training-data fraction");
    attack->add_option("--ratio", at_cfg.prune_ratio, "prune ratio");
    attack->add_option("--epochs", at_cfg.epochs, "attack epochs");
    attack->add_option("--lr", at_cfg.lr, "attack learning rate");
    attack->add_option("--batch", at_cfg.batch, "attack batch size");
    attack->add_option("--seed", at_cfg.seed, "attack seed");
    attack->add_option("--target-classes", at_cfg.target_classes,
                       "transfer target class count (default: dataset classes)");
    attack->add_flag("--two-branch", at_cfg.overwrite_two_branch,
                     "overwrite: drop the raw/SNE sub-batch");


    // eval
    auto* eval = app.add_subcommand("eval", "accuracy of a packaged model");
    std::string ev_model, ev_dataset = "mnist", ev_cert, ev_out;
    eval->add_option("--model", ev_model, "packaged checkpoint prefix")->required();
    eval->add_option("--dataset", ev_dataset, "mnist | gtsrb");
    eval->add_option("--sn-cert", ev_cert, "SN certificate (evaluates with and without)");
    eval->add_option("--out", ev_out, "write a model summary JSON here");


    // export-embeddings
    auto* embed = app.add_subcommand("export-embeddings", "dump G_e features for analysis");
    std::string em_model, em_dataset = "mnist", em_cert, em_out = "embeddings.csv";
    int em_n = 1000;
    std::uint64_t em_seed = 0;
    embed->add_option("--model", em_model, "packaged checkpoint prefix")->required();
    embed->add_option("--dataset", em_dataset, "mnist | gtsrb");
    embed->add_option("--sn-cert", em_cert, "SN certificate")->required();
    embed->add_option("--n", em_n, "sample count");
    embed->add_option("--seed", em_seed, "sampling seed");
    embed->add_option("--out", em_out, "CSV output path");


    // report
    auto* report = app.add_subcommand("report", "assemble tables from run summaries");
    std::string rp_dir, rp_out;
    report->add_option("--dir", rp_dir, "directory to scan for *.summary.json");
    report->add_option("--out", rp_out, "write report files under this prefix");


    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? kOk : kConfigError;
    }

    try {
        if (*fetch) {
            dsn::fetch_dataset(fetch_name, data_root, fetch_url);
            std::cout << "fetched " << fetch_name << " into " << data_root << "\n";
        } else if (*genkey) {
            dsn::generate_keypair_pem(genkey_out);
            std::cout << "wrote " << genkey_out << "\n";
        } else if (*keygen) {
            dsn::OwnerIdentity id{kg_owner,
                                  kg_timestamp.empty() ? dsn::utc_now_iso8601() : kg_timestamp,
                                  kg_key};
            std::optional<std::pair<int, int>> bounds;
            if (kg_img_h > 0 && kg_img_w > 0) bounds = {kg_img_h, kg_img_w};
            auto [pattern, record] =
                dsn::generate_serial(id, kg_rows, kg_cols, parse_anchor(kg_anchor), bounds);
            record.save(kg_out);
            std::cout << "serial number " << pattern.bits() << " anchored at ("
                      << pattern.anchor_row << "," << pattern.anchor_col << ")\n"
                      << "certificate: " << kg_out << "\n";
        } else if (*verify) {
            auto record = dsn::SignatureRecord::load(vc_path);
            bool ok = dsn::verify_signature(record);
            std::cout << (ok ? "VALID" : "INVALID") << " " << record.verifier << "\n";
            return ok ? kOk : kConfigError;
        } else if (*ttrain) {
            auto dataset = dsn::load_dataset(tt_dataset, data_root,
                                             dsn::split_seed(tt_cfg.seed, "data-shuffle"));
            dsn::RunDirectory run(runs_root, "train-teacher");
            run.snapshot_config(tt_cfg.to_json());
            run.record_seed("master", tt_cfg.seed);
            auto spec = dsn::build_spec(tt_dataset);
            auto teacher = dsn::train_teacher(dataset, spec, tt_cfg);
            std::string prefix = run.checkpoints() + "/teacher";
            dsn::save_teacher(prefix, teacher);
            dsn::write_metrics_csv(run.metrics() + "/train.csv", teacher.metrics);
            write_model_summary(run.reports() + "/teacher.summary.json",
                                {"teacher-" + tt_dataset, teacher.final_val_accuracy, -1},
                                dsn::sha256_file_hex(prefix + ".weights"));
            run.record_output(prefix + ".weights");
            run.record_output(prefix + ".manifest.json");
            run.finalize();
            std::cout << "teacher val accuracy " << teacher.final_val_accuracy << "%\n"
                      << "checkpoint: " << prefix << "\n";
        } else if (*strain) {
            auto record = dsn::SignatureRecord::load(st_cert);
            if (!dsn::verify_signature(record))
                throw dsn::format_error("certificate failed verification: " + st_cert);
            auto pattern = dsn::pattern_from_record(record);
            auto teacher = dsn::load_teacher(st_teacher);
            auto dataset = dsn::load_dataset(st_dataset, data_root,
                                             dsn::split_seed(st_cfg.seed, "data-shuffle"));
            dsn::RunDirectory run(runs_root, "train-student");
            run.snapshot_config(st_cfg.to_json());
            run.record_seed("master", st_cfg.seed);
            run.record_input(st_teacher + ".weights");
            run.record_input(st_cert);
            auto bundle = dsn::train_student(teacher, dataset, pattern,
                                             record.content_hash(), st_cfg);
            std::string prefix = run.checkpoints() + "/student";
            dsn::save_student(prefix, bundle);
            dsn::write_metrics_csv(run.metrics() + "/train.csv", bundle.metrics);
            run.record_output(prefix + ".weights");
            run.finalize();
            const auto& last = bundle.metrics.back();
            std::cout << "student acc with SN " << last.acc_with_sn << "%, without "
                      << last.acc_without_sn << "%\ncheckpoint: " << prefix << "\n";
        } else if (*package) {
            auto bundle = dsn::load_student(pk_student);
            auto packaged = dsn::package_student(std::move(bundle));
            dsn::RunDirectory run(runs_root, "package");
            run.record_input(pk_student + ".weights");
            std::string prefix = run.checkpoints() + "/student";
            dsn::save_student(prefix, packaged);
            run.record_output(prefix + ".weights");
            run.finalize();
            std::cout << "packaged checkpoint: " << prefix << "\n";
        } else if (*predict) {
            auto bundle = dsn::load_student(pr_model);
            auto dataset = dsn::load_dataset(pr_dataset, data_root);
            std::optional<dsn::SNPattern> pattern;
            if (!pr_cert.empty())
                pattern = pattern_from_cert(pr_cert);
            else
                std::cout << "warning: no serial number supplied; expect near-random accuracy\n";
            dsn::StampedBatch batch{dataset.test_images, dataset.image_shape.h,
                                    dataset.image_shape.w, dataset.image_shape.c, std::nullopt};
            auto pred = dsn::predict(bundle, batch, pattern);
            for (int i = 0; i < pr_limit && i < static_cast<int>(pred.labels.size()); ++i)
                std::cout << "image " << i << ": " << pred.labels[static_cast<std::size_t>(i)]
                          << "\n";
            Eigen::Index correct = 0;
            for (std::size_t i = 0; i < pred.labels.size(); ++i)
                if (pred.labels[i] == dataset.test_labels[i]) ++correct;
            std::cout << "accuracy "
                      << 100.0 * static_cast<double>(correct) /
                             static_cast<double>(pred.labels.size())
                      << "%\n";
        } else if (*attack) {
            auto kind = dsn::attack_kind_from(at_kind);
            at_cfg.kind = kind;
            at_cfg.validate();
            auto dataset = dsn::load_dataset(at_dataset, data_root);
            std::optional<dsn::SNPattern> orig;
            if (!at_cert.empty()) orig = pattern_from_cert(at_cert);
            std::optional<dsn::StudentBundle> bundle;
            if (kind != dsn::AttackKind::scratch_baseline) {
                if (at_model.empty())
                    throw dsn::config_error("--model is required for this attack");
                bundle = dsn::load_student(at_model);
            }
            dsn::RunDirectory run(runs_root, "attack-" + at_kind);
            dsn::AttackOutcome outcome;
            if (kind == dsn::AttackKind::scratch_baseline) {
                outcome = dsn::scratch_baseline(dataset, dsn::build_spec(at_dataset), orig,
                                                at_cfg);
            } else {
                run.record_input(at_model + ".weights");
                switch (kind) {
                    case dsn::AttackKind::finetune:
                        outcome = dsn::finetune_attack(*bundle, dataset, orig, at_cfg);
                        break;
                    case dsn::AttackKind::prune:
                        outcome = dsn::prune_attack(*bundle, dataset, orig, at_cfg.prune_ratio);
                        break;
                    case dsn::AttackKind::transfer:
                        outcome = dsn::transfer_attack(*bundle, dataset, orig, at_cfg);
                        break;
                    case dsn::AttackKind::overwrite: {
                        if (!orig) throw dsn::config_error("overwrite needs --sn-cert");
                        if (at_new_cert.empty())
                            throw dsn::config_error("overwrite needs --new-sn-cert");
                        auto next = pattern_from_cert(at_new_cert);
                        outcome = dsn::overwrite_attack(*bundle, *orig, next, dataset, at_cfg);
                        break;
                    }
                    default:
                        throw dsn::config_error("unhandled attack kind");
                }
            }
            std::string prefix = run.reports() + "/" + at_kind;
            outcome.write(prefix);
            run.record_output(prefix + ".summary.json");
            run.finalize();
            std::cout << "attack " << at_kind << ": acc_raw " << outcome.final_metrics.acc_raw;
            if (outcome.final_metrics.acc_orig_sn >= 0)
                std::cout << ", acc_orig_sn " << outcome.final_metrics.acc_orig_sn;
            if (outcome.final_metrics.acc_new_sn >= 0)
                std::cout << ", acc_new_sn " << outcome.final_metrics.acc_new_sn;
            std::cout << "\nsummary: " << prefix << ".summary.json\n";
        } else if (*eval) {
            auto bundle = dsn::load_student(ev_model);
            auto dataset = dsn::load_dataset(ev_dataset, data_root);
            ModelSummary s;
            s.model_id = "student-" + ev_dataset;
            if (!ev_cert.empty()) {
                auto pattern = pattern_from_cert(ev_cert);
                s.acc_with_sn = dsn::evaluate(bundle, dataset, pattern);
            }
            s.acc_without_sn = dsn::evaluate(bundle, dataset, std::nullopt);
            if (s.acc_with_sn >= 0) std::cout << "acc_with_sn " << s.acc_with_sn << "%\n";
            std::cout << "acc_without_sn " << s.acc_without_sn << "%\n";
            if (!ev_out.empty())
                write_model_summary(ev_out, s, dsn::sha256_file_hex(ev_model + ".weights"));
        } else if (*embed) {
            auto bundle = dsn::load_student(em_model);
            auto dataset = dsn::load_dataset(em_dataset, data_root);
            auto pattern = pattern_from_cert(em_cert);
            auto e = dsn::export_embeddings(bundle.model, dataset, pattern, em_n, em_seed);
            dsn::write_embeddings_csv(em_out, e);
            std::cout << "wrote " << em_out << "\n";
        } else if (*report) {
            std::string dir = rp_dir.empty() ? runs_root : rp_dir;
            auto rep = dsn::build_report(dir);
            if (!rp_out.empty()) {
                std::ofstream(rp_out + ".md") << rep.markdown;
                std::ofstream(rp_out + ".csv") << rep.csv;
            }
            std::cout << rep.markdown;
        }
    } catch (const dsn::missing_input_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kMissingInput;
    } catch (const dsn::key_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kMissingInput;
    } catch (const dsn::stage_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kStageViolation;
    } catch (const dsn::training_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kTrainingDivergence;
    } catch (const dsn::error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kConfigError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kConfigError;
    }
    return kOk;
}
