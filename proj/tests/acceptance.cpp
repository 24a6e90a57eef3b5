// End-to-end acceptance suite for the serial-number locking pipeline.
//
// Each criterion prints exactly one PASS/FAIL line; the exit code is the
// number of failed criteria. Expensive artifacts (teacher, student, attack
// sweeps) are cached under DSN_ACCEPT_DIR so reruns only recompute what
// changed; a fresh checkout reproduces everything from scratch.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <vector>
#ifdef __GLIBC__
#include <malloc.h>
#endif

#include <nlohmann/json.hpp>

#include "dsn/attacks.hpp"
#include "dsn/checkpoint.hpp"
#include "dsn/common.hpp"
#include "dsn/data.hpp"
#include "dsn/eval.hpp"
#include "dsn/model_zoo.hpp"
#include "dsn/sn_core.hpp"
#include "dsn/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using clk = std::chrono::steady_clock;

namespace {

double seconds_since(clk::time_point t0) {
    return std::chrono::duration<double>(clk::now() - t0).count();
}

std::string env_or(const char* name, const std::string& fallback) {
    const char* v = std::getenv(name);
    return v ? v : fallback;
}

std::string fmt(double v) {
    std::ostringstream ss;
    ss.precision(2);
    ss << std::fixed << v;
    return ss.str();
}

// Collects sub-checks for one criterion and renders a single verdict line.
class Criterion {
public:
    Criterion(int number, std::string title) : number_(number), title_(std::move(title)) {}

    void require(bool ok, const std::string& what) {
        if (!ok) failures_.push_back(what);
    }
    void note(const std::string& text) { notes_.push_back(text); }

    bool report() const {
        bool ok = failures_.empty();
        std::cout << "criterion-" << number_ << " " << title_ << ": "
                  << (ok ? "PASS" : "FAIL") << "\n";
        for (const auto& f : failures_) std::cout << "    failed: " << f << "\n";
        for (const auto& n : notes_) std::cout << "    note: " << n << "\n";
        return ok;
    }

private:
    int number_;
    std::string title_;
    std::vector<std::string> failures_;
    std::vector<std::string> notes_;
};

// ---- shared experiment configuration --------------------------------------

constexpr int kTeacherEpochs = 10;
constexpr int kStudentEpochs = 12;
constexpr std::uint64_t kTeacherSeed = 7;
constexpr std::uint64_t kStudentSeed = 11;
constexpr double kStudentLambda = 1.0;

constexpr int kAttackEpochs = 10;      // finetune / scratch / transfer
constexpr int kOverwriteEpochs = 20;   // needs headroom for the step-cost bound
constexpr double kAttackLr = 1e-3;
constexpr std::uint64_t kAttackSeed = 23;
const std::vector<double> kFractions{0.10, 0.20, 0.30, 0.40};
const std::vector<double> kPruneRatios{0.10, 0.20, 0.30, 0.40};

// ---- artifact cache --------------------------------------------------------

struct Cache {
    fs::path dir;

    fs::path path(const std::string& leaf) const { return dir / leaf; }

    json read_times() const {
        std::ifstream in(path("times.json"));
        if (!in) return json::object();
        try {
            json j;
            in >> j;
            return j;
        } catch (...) {
            return json::object();
        }
    }

    void record_time(const std::string& key, double seconds) const {
        json j = read_times();
        j[key] = seconds;
        std::ofstream(path("times.json")) << j.dump(2) << "\n";
    }
};

struct AttackRecord {
    std::vector<dsn::TrajectoryPoint> trajectory;
    long long total_steps = 0;
    dsn::TrajectoryPoint final;
};

AttackRecord to_record(const dsn::AttackOutcome& out) {
    return {out.trajectory, out.total_steps, out.final_metrics};
}

json point_to_json(const dsn::TrajectoryPoint& p) {
    return {{"epoch", p.epoch},        {"steps", p.step_count},
            {"acc_raw", p.acc_raw},    {"acc_orig_sn", p.acc_orig_sn},
            {"acc_new_sn", p.acc_new_sn}};
}

dsn::TrajectoryPoint point_from_json(const json& j) {
    dsn::TrajectoryPoint p;
    p.epoch = j.at("epoch").get<int>();
    p.step_count = j.at("steps").get<long long>();
    p.acc_raw = j.at("acc_raw").get<double>();
    p.acc_orig_sn = j.at("acc_orig_sn").get<double>();
    p.acc_new_sn = j.at("acc_new_sn").get<double>();
    return p;
}

// Runs `fn` unless an identically-keyed result is already cached.
template <class Fn>
AttackRecord cached_attack(const Cache& cache, const std::string& key, Fn&& fn) {
    fs::path file = cache.path("attack-" + key + ".json");
    if (std::ifstream in(file); in) {
        try {
            json j;
            in >> j;
            AttackRecord r;
            for (const auto& p : j.at("trajectory")) r.trajectory.push_back(point_from_json(p));
            r.total_steps = j.at("total_steps").get<long long>();
            r.final = point_from_json(j.at("final"));
            return r;
        } catch (...) {
            // fall through and recompute
        }
    }
    AttackRecord r = to_record(fn());
    json j;
    j["trajectory"] = json::array();
    for (const auto& p : r.trajectory) j["trajectory"].push_back(point_to_json(p));
    j["total_steps"] = r.total_steps;
    j["final"] = point_to_json(r.final);
    std::ofstream(file) << j.dump(2) << "\n";
    return r;
}

// ---- criterion 7: framework-independent property suite ---------------------

dsn::ArchitectureSpec tiny_spec() {
    dsn::ArchitectureSpec s;
    s.name = "tiny";
    s.input_shape = {6, 6, 1};
    s.num_classes = 4;
    s.layers = {{dsn::LayerKind::conv, 3, 3, 1, dsn::Activation::relu},
                {dsn::LayerKind::maxpool, 0, 2, 2, dsn::Activation::none},
                {dsn::LayerKind::dense, 4, 0, 1, dsn::Activation::softmax}};
    s.split_index = 2;
    return s;
}

bool property_suite() {
    auto t0 = clk::now();
    Criterion c(7, "property suite");
    std::mt19937_64 rng(99);
    std::normal_distribution<double> g(0.0, 1.0);

    // gradient reversal: exact identity forward, exact -lambda scaling backward
    Eigen::MatrixXd x = Eigen::MatrixXd::Random(5, 7);
    c.require(dsn::nn::grl_forward(x) == x, "GRL forward is not the identity");
    Eigen::MatrixXd up = Eigen::MatrixXd::Random(5, 7);
    c.require(dsn::nn::grl_backward(up, 1.75) == (-1.75 * up).eval(),
              "GRL backward is not exactly -lambda * g");

    // losses: finite-difference checks in double, relative error <= 1e-4
    {
        const int C = 4, B = 6;
        Eigen::MatrixXd logits_t = Eigen::MatrixXd::Random(C, B);
        Eigen::MatrixXd logits_s = Eigen::MatrixXd::Random(C, B);
        Eigen::MatrixXd pt = dsn::nn::softmax(logits_t, 2.0);
        Eigen::MatrixXd dl;
        dsn::nn::distill_loss_grad(pt, logits_s, 2.0, dl);
        double worst = 0.0;
        const double eps = 1e-6;
        for (Eigen::Index i = 0; i < logits_s.size(); ++i) {
            Eigen::MatrixXd lp = logits_s, lm = logits_s;
            lp.data()[i] += eps;
            lm.data()[i] -= eps;
            Eigen::MatrixXd scratch;
            double fd = (dsn::nn::distill_loss_grad(pt, lp, 2.0, scratch) -
                         dsn::nn::distill_loss_grad(pt, lm, 2.0, scratch)) /
                        (2 * eps);
            double denom = std::max(std::abs(fd), std::abs(dl.data()[i]));
            if (denom > 1e-10) worst = std::max(worst, std::abs(fd - dl.data()[i]) / denom);
        }
        c.require(worst <= 1e-4, "distill gradient FD error " + std::to_string(worst));

        std::vector<int> labels{0, 1, 2, 3, 1, 2};
        Eigen::MatrixXd dce;
        dsn::nn::cross_entropy_loss_grad(logits_s, labels, dce);
        worst = 0.0;
        for (Eigen::Index i = 0; i < logits_s.size(); ++i) {
            Eigen::MatrixXd lp = logits_s, lm = logits_s;
            lp.data()[i] += eps;
            lm.data()[i] -= eps;
            Eigen::MatrixXd scratch;
            double fd = (dsn::nn::cross_entropy_loss_grad(lp, labels, scratch) -
                         dsn::nn::cross_entropy_loss_grad(lm, labels, scratch)) /
                        (2 * eps);
            double denom = std::max(std::abs(fd), std::abs(dce.data()[i]));
            if (denom > 1e-10) worst = std::max(worst, std::abs(fd - dce.data()[i]) / denom);
        }
        c.require(worst <= 1e-4, "cross-entropy gradient FD error " + std::to_string(worst));
    }

    // end-to-end SNE gradient through the reversal layer, against FD over all
    // network parameters
    {
        auto m = dsn::instantiate<double>(tiny_spec(), 4242, /*with_auxiliary=*/true);
        const int B = 3;
        Eigen::MatrixXd imgs = Eigen::MatrixXd::Random(36, B).cwiseAbs();
        std::vector<int> labels{1, 3, 0};
        auto loss_of = [&]() {
            Eigen::MatrixXd f = m.net.forward(imgs, 0, m.split());
            Eigen::MatrixXd z = m.g_d->forward(f);
            Eigen::MatrixXd unused;
            return dsn::nn::cross_entropy_loss_grad(z, labels, unused);
        };
        // analytic pass: CE into g_d, reversed into the feature extractor
        Eigen::MatrixXd f = m.net.forward(imgs, 0, m.split());
        Eigen::MatrixXd z = m.g_d->forward(f);
        Eigen::MatrixXd dz;
        dsn::nn::cross_entropy_loss_grad(z, labels, dz);
        Eigen::MatrixXd df = m.g_d->backward(dz);
        const double lambda = 0.7;
        m.net.backward(dsn::nn::grl_backward(df, lambda), 0, m.split());

        double worst = 0.0;
        const double eps = 1e-5;
        auto check_group = [&](std::vector<dsn::nn::ParamRef<double>> group, double sign) {
            for (auto& p : group)
                for (Eigen::Index i = 0; i < p.value->size(); ++i) {
                    double saved = p.value->data()[i];
                    p.value->data()[i] = saved + eps;
                    double lp = loss_of();
                    p.value->data()[i] = saved - eps;
                    double lm = loss_of();
                    p.value->data()[i] = saved;
                    double fd = sign * (lp - lm) / (2 * eps);
                    double an = p.grad->data()[i];
                    double denom = std::max({std::abs(fd), std::abs(an), 1e-6});
                    worst = std::max(worst, std::abs(fd - an) / denom);
                }
        };
        // the extractor sees the reversed (scaled by -lambda) gradient, the
        // auxiliary head the plain one
        check_group(m.params_e(), -lambda);
        check_group(m.params_d(), 1.0);
        c.require(worst <= 1e-4, "SNE/GRL end-to-end FD error " + std::to_string(worst));
    }

    // KL divergence properties
    {
        std::mt19937_64 krng(5);
        for (int t = 0; t < 200; ++t) {
            Eigen::MatrixXd a = Eigen::MatrixXd::Random(6, 4);
            Eigen::MatrixXd b = Eigen::MatrixXd::Random(6, 4);
            Eigen::MatrixXd p = dsn::nn::softmax(a);
            Eigen::MatrixXd q = dsn::nn::softmax(b);
            if (dsn::nn::kl_divergence(p, q) < 0.0) {
                c.require(false, "KL(p,q) < 0");
                break;
            }
            if (std::abs(dsn::nn::kl_divergence(p, p)) > 1e-12) {
                c.require(false, "KL(p,p) != 0");
                break;
            }
        }
    }

    // stamping: trit semantics, idempotence, input purity
    {
        dsn::SNPattern pat;
        pat.block.resize(2, 3);
        pat.block << 1, 0, -1, 0, 1, 1;
        pat.anchor_row = 2;
        pat.anchor_col = 1;
        Eigen::MatrixXf imgs = (Eigen::MatrixXf::Random(36, 8).array() * 0.5f + 0.5f).matrix();
        Eigen::MatrixXf before = imgs;
        dsn::StampedBatch batch{imgs, 6, 6, 1, std::nullopt};
        auto stamped = dsn::stamp(batch, pat);
        bool conforms = true;
        for (int b = 0; b < 8 && conforms; ++b)
            for (int r = 0; r < 6 && conforms; ++r)
                for (int col = 0; col < 6; ++col) {
                    float got = stamped.images(r * 6 + col, b);
                    int br = r - pat.anchor_row, bc = col - pat.anchor_col;
                    int trit = (br >= 0 && br < 2 && bc >= 0 && bc < 3) ? pat.block(br, bc) : -1;
                    float want = trit == -1 ? imgs(r * 6 + col, b) : static_cast<float>(trit);
                    if (got != want) {
                        conforms = false;
                        break;
                    }
                }
        c.require(conforms, "stamp output violates the trit rule");
        c.require(dsn::stamp(stamped, pat).images == stamped.images, "stamp is not idempotent");
        c.require(imgs == before, "stamp mutated its input");
    }

    // key generation: determinism and tamper detection
    {
        fs::path key = fs::temp_directory_path() / "dsn_accept_key.pem";
        dsn::generate_keypair_pem(key.string());
        dsn::OwnerIdentity id{"AcceptanceCorp", "2026-08-24T00:00:00Z", key.string()};
        auto [pat1, rec1] = dsn::generate_serial(id, 3, 3, {0, 0});
        auto [pat2, rec2] = dsn::generate_serial(id, 3, 3, {0, 0});
        c.require(rec1.to_json() == rec2.to_json(), "serial generation is not deterministic");
        c.require(pat1 == pat2, "pattern derivation is not deterministic");
        c.require(dsn::verify_signature(rec1), "genuine certificate rejected");
        auto tampered = rec1;
        tampered.pattern_bits[0] = tampered.pattern_bits[0] == '0' ? '1' : '0';
        c.require(!dsn::verify_signature(tampered), "bit-flipped certificate accepted");
        auto renamed = rec1;
        renamed.verifier = "EvilCorp|2026-08-24T00:00:00Z";
        c.require(!dsn::verify_signature(renamed), "re-attributed certificate accepted");
    }

    // packaging: identical classifier outputs once the auxiliary branch is gone
    {
        dsn::StudentBundle bundle;
        bundle.model = dsn::instantiate<float>(dsn::build_spec("mnist"), 77, true);
        dsn::StudentBundle packaged = bundle;
        packaged = dsn::package_student(std::move(packaged));
        Eigen::MatrixXf probe = Eigen::MatrixXf::Random(784, 64).cwiseAbs();
        c.require(bundle.model.net.forward(probe) == packaged.model.net.forward(probe),
                  "packaging changed classifier outputs");
        c.require(!packaged.model.g_d.has_value(), "packaging kept the auxiliary head");
    }

    // pruning: exact zero count on conv+dense weights, biases untouched
    {
        dsn::StudentBundle bundle;
        bundle.model = dsn::instantiate<float>(dsn::build_spec("mnist"), 78, false);
        bundle.stage = dsn::BundleStage::packaged;
        dsn::DatasetHandle tiny;
        tiny.name = "probe";
        tiny.num_classes = 10;
        tiny.image_shape = {28, 28, 1};
        tiny.train_images = tiny.test_images = Eigen::MatrixXf::Random(784, 50).cwiseAbs();
        tiny.train_labels = tiny.test_labels = std::vector<int>(50, 0);
        for (int i = 0; i < 50; ++i) tiny.test_labels[static_cast<std::size_t>(i)] = i % 10;
        tiny.train_labels = tiny.test_labels;

        long long prunable = dsn::prunable_weight_count(bundle.model);
        auto out = dsn::prune_attack(bundle, tiny, std::nullopt, 0.25);
        long long zeros = 0;
        for (auto& p : out.attacked_model.net.params())
            if (p.name.ends_with(".weight"))
                for (Eigen::Index i = 0; i < p.value->size(); ++i)
                    if (p.value->data()[i] == 0.0f) ++zeros;
        long long want = static_cast<long long>(std::ceil(0.25 * static_cast<double>(prunable)));
        c.require(zeros == want, "prune zeroed " + std::to_string(zeros) + " weights, expected " +
                                     std::to_string(want));
        bool bias_ok = true;
        auto attacked = out.attacked_model.net.params();
        auto original = bundle.model.net.params();
        for (std::size_t i = 0; i < attacked.size(); ++i)
            if (attacked[i].name.ends_with(".bias") &&
                *attacked[i].value != *original[i].value)
                bias_ok = false;
        c.require(bias_ok, "prune modified bias tensors");
    }

    // branch isolation under the optimizer's group stepping
    {
        auto m = dsn::instantiate<float>(tiny_spec(), 55, true);
        dsn::nn::Adam<float> adam(1e-2f);
        Eigen::MatrixXf imgs = Eigen::MatrixXf::Random(36, 4).cwiseAbs();
        std::vector<int> labels{0, 1, 2, 3};

        auto snapshot = [](std::vector<dsn::nn::ParamRef<float>> ps) {
            std::vector<Eigen::MatrixXf> copy;
            for (auto& p : ps) copy.push_back(*p.value);
            return copy;
        };
        auto unchanged = [](const std::vector<Eigen::MatrixXf>& snap,
                            std::vector<dsn::nn::ParamRef<float>> ps) {
            for (std::size_t i = 0; i < ps.size(); ++i)
                if (*ps[i].value != snap[i]) return false;
            return true;
        };

        // distillation-style update: theta_d must not move
        auto d_before = snapshot(m.params_d());
        Eigen::MatrixXf logits = m.net.forward(imgs);
        Eigen::MatrixXf dlogits;
        dsn::nn::cross_entropy_loss_grad(logits, labels, dlogits);
        m.net.backward(dlogits);
        adam.step(m.params_e());
        adam.step(m.params_y());
        c.require(unchanged(d_before, m.params_d()), "distill step moved theta_d");

        // SNE-style update: theta_y must not move
        auto y_before = snapshot(m.params_y());
        Eigen::MatrixXf f = m.net.forward(imgs, 0, m.split());
        Eigen::MatrixXf zd = m.g_d->forward(f);
        Eigen::MatrixXf dzd;
        dsn::nn::cross_entropy_loss_grad(zd, labels, dzd);
        Eigen::MatrixXf dfd = m.g_d->backward(dzd);
        m.net.backward(dsn::nn::grl_backward(dfd, 1.0f), 0, m.split());
        adam.step(m.params_e());
        adam.step(m.params_d());
        c.require(unchanged(y_before, m.params_y()), "SNE step moved theta_y");
    }

    double elapsed = seconds_since(t0);
    c.require(elapsed < 60.0, "property suite took " + fmt(elapsed) + "s (budget 60s)");
    return c.report();
}

}  // namespace

int main() {
#ifdef __GLIBC__
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
    const std::string data_root = env_or("DSN_DATA_ROOT", "data");
    Cache cache{fs::path(env_or("DSN_ACCEPT_DIR", "acceptance-cache"))};
    fs::create_directories(cache.dir);

    int failures = 0;
    auto tally = [&](bool ok) {
        if (!ok) ++failures;
    };

    // fast, model-free properties first
    tally(property_suite());

    dsn::DatasetHandle mnist;
    try {
        mnist = dsn::load_dataset("mnist", data_root, dsn::split_seed(kTeacherSeed, "data-shuffle"));
    } catch (const std::exception& e) {
        std::cout << "criteria 1-6,8: FAIL (cannot load mnist: " << e.what() << ")\n";
        return failures + 7;
    }

    // ---- teacher + student (cached) ---------------------------------------
    dsn::TrainingConfig tcfg;
    tcfg.epochs = kTeacherEpochs;
    tcfg.seed = kTeacherSeed;
    dsn::TeacherModel teacher;
    bool teacher_cached = true;
    try {
        teacher = dsn::load_teacher(cache.path("teacher").string());
    } catch (const std::exception&) {
        teacher_cached = false;
    }
    if (!teacher_cached) {
        auto t0 = clk::now();
        teacher = dsn::train_teacher(mnist, dsn::build_spec("mnist"), tcfg);
        cache.record_time("teacher_seconds", seconds_since(t0));
        dsn::save_teacher(cache.path("teacher").string(), teacher);
    }

    fs::path key_path = cache.path("owner.pem");
    if (!fs::exists(key_path)) dsn::generate_keypair_pem(key_path.string());
    dsn::OwnerIdentity owner{"AcceptanceCorp", "2026-08-24T00:00:00Z", key_path.string()};
    auto [pattern, record] = dsn::generate_serial(owner, 3, 3, {0, 0});
    dsn::OwnerIdentity adversary{"OverwriteCorp", "2026-08-24T01:00:00Z", key_path.string()};
    auto [new_pattern, new_record] = dsn::generate_serial(adversary, 3, 3, {25, 25});

    dsn::TrainingConfig scfg;
    scfg.epochs = kStudentEpochs;
    scfg.seed = kStudentSeed;
    scfg.grl_lambda = kStudentLambda;
    dsn::StudentBundle student;
    bool student_cached = true;
    try {
        student = dsn::load_student(cache.path("student").string());
    } catch (const std::exception&) {
        student_cached = false;
    }
    if (!student_cached) {
        auto t0 = clk::now();
        student = dsn::train_student(teacher, mnist, pattern, record.content_hash(), scfg);
        cache.record_time("student_seconds", seconds_since(t0));
        dsn::save_student(cache.path("student").string(), student);
    }

    dsn::StudentBundle packaged = student;
    packaged = dsn::package_student(std::move(packaged));
    const std::string model_tag = dsn::sha256_file_hex(cache.path("student.weights").string())
                                      .substr(0, 12);

    double teacher_acc = teacher.final_val_accuracy;
    double acc_with = dsn::evaluate(packaged, mnist, pattern);
    double acc_without = dsn::evaluate(packaged, mnist, std::nullopt);

    // ---- criterion 1: distortion ------------------------------------------
    {
        Criterion c(1, "distortion");
        c.require(teacher_acc >= 99.0, "teacher accuracy " + fmt(teacher_acc) + " < 99.0");
        c.require(acc_with >= 99.0, "student with-SN accuracy " + fmt(acc_with) + " < 99.0");
        c.require(std::abs(teacher_acc - acc_with) <= 0.8,
                  "teacher/student gap " + fmt(std::abs(teacher_acc - acc_with)) + " > 0.8");
        json times = cache.read_times();
        if (times.contains("teacher_seconds") && times.contains("student_seconds")) {
            double total = times["teacher_seconds"].get<double>() +
                           times["student_seconds"].get<double>();
            c.require(total <= 1800.0,
                      "training wall time " + fmt(total) + "s exceeds the 30 min budget");
            c.note("teacher " + fmt(teacher_acc) + "%, student with SN " + fmt(acc_with) +
                   "%, training " + fmt(total) + "s");
        } else {
            c.require(false, "no recorded training times (cache tampered?)");
        }
        tally(!c.report());
    }

    // ---- criterion 2: reliability -----------------------------------------
    {
        Criterion c(2, "reliability");
        c.require(acc_without >= 5.0 && acc_without <= 15.0,
                  "student without-SN accuracy " + fmt(acc_without) + " outside [5, 15]");
        c.note("without SN " + fmt(acc_without) + "% (random guess 10%)");
        try {
            dsn::DatasetHandle gtsrb = dsn::load_dataset("gtsrb", data_root);
            c.note("gtsrb present but the extended run is not wired into this suite");
        } catch (const std::exception&) {
            c.note("extended gtsrb check skipped: dataset not present");
        }
        tally(!c.report());
    }

    // ---- criterion 3: pruning robustness ----------------------------------
    {
        Criterion c(3, "pruning robustness");
        auto t0 = clk::now();
        for (double ratio : kPruneRatios) {
            auto out = dsn::prune_attack(packaged, mnist, pattern, ratio);
            double drop = acc_with - out.final_metrics.acc_orig_sn;
            c.require(drop <= 2.0, "ratio " + fmt(ratio) + ": with-SN drop " + fmt(drop) +
                                       " > 2.0");
            c.require(out.final_metrics.acc_raw < 15.0,
                      "ratio " + fmt(ratio) + ": without-SN accuracy " +
                          fmt(out.final_metrics.acc_raw) + " >= 15");
        }
        double elapsed = seconds_since(t0);
        c.require(elapsed <= 300.0, "pruning sweep took " + fmt(elapsed) + "s (budget 300s)");
        tally(!c.report());
    }

    // ---- criteria 4-6: training attacks ------------------------------------
    auto frac_tag = [&](double f) { return std::to_string(static_cast<int>(f * 100 + 0.5)); };

    std::vector<AttackRecord> finetunes, scratches, transfers, overwrites;
    for (double f : kFractions) {
        dsn::AttackConfig acfg;
        acfg.data_fraction = f;
        acfg.epochs = kAttackEpochs;
        acfg.lr = kAttackLr;
        acfg.seed = kAttackSeed;

        acfg.kind = dsn::AttackKind::finetune;
        finetunes.push_back(cached_attack(
            cache, "finetune-" + frac_tag(f) + "-" + model_tag,
            [&] { return dsn::finetune_attack(packaged, mnist, std::nullopt, acfg); }));

        acfg.kind = dsn::AttackKind::scratch_baseline;
        scratches.push_back(cached_attack(cache, "scratch-" + frac_tag(f), [&] {
            return dsn::scratch_baseline(mnist, dsn::build_spec("mnist"), std::nullopt, acfg);
        }));

        acfg.kind = dsn::AttackKind::transfer;
        transfers.push_back(cached_attack(
            cache, "transfer-" + frac_tag(f) + "-" + model_tag,
            [&] { return dsn::transfer_attack(packaged, mnist, std::nullopt, acfg); }));

        acfg.kind = dsn::AttackKind::overwrite;
        acfg.epochs = kOverwriteEpochs;
        overwrites.push_back(cached_attack(
            cache, "overwrite-" + frac_tag(f) + "-" + model_tag, [&] {
                return dsn::overwrite_attack(packaged, pattern, new_pattern, mnist, acfg);
            }));
    }

    // ---- criterion 4: fine-tuning cost parity -----------------------------
    {
        Criterion c(4, "fine-tuning cost parity");
        const int head = std::max(1, kAttackEpochs / 10);
        for (std::size_t i = 0; i < kFractions.size(); ++i) {
            double ft = finetunes[i].final.acc_raw;
            double sc = scratches[i].final.acc_raw;
            c.require(std::abs(ft - sc) <= 2.5,
                      frac_tag(kFractions[i]) + "%: finetune " + fmt(ft) + " vs scratch " +
                          fmt(sc) + " gap > 2.5");
            double ft_head = 0, sc_head = 0;
            for (int e = 0; e < head; ++e) {
                ft_head += finetunes[i].trajectory[static_cast<std::size_t>(e)].acc_raw;
                sc_head += scratches[i].trajectory[static_cast<std::size_t>(e)].acc_raw;
            }
            c.require(ft_head < sc_head,
                      frac_tag(kFractions[i]) +
                          "%: no slow start (early finetune mean " + fmt(ft_head / head) +
                          " >= scratch " + fmt(sc_head / head) + ")");
            c.note(frac_tag(kFractions[i]) + "%: finetune " + fmt(ft) + ", scratch " + fmt(sc));
        }
        tally(!c.report());
    }

    // ---- criterion 5: transfer robustness ---------------------------------
    {
        Criterion c(5, "transfer robustness");
        const std::vector<double> anchor{93.6, 94.5, 95.6, 96.9};
        for (std::size_t i = 0; i < kFractions.size(); ++i) {
            double acc = transfers[i].final.acc_raw;
            c.require(std::abs(acc - anchor[i]) <= 3.0,
                      frac_tag(kFractions[i]) + "%: transfer final " + fmt(acc) +
                          " not within 3 of " + fmt(anchor[i]));
            c.note(frac_tag(kFractions[i]) + "%: transfer " + fmt(acc));
        }
        // epoch-0 probe: fresh linear head on frozen raw-input features
        auto sub = dsn::stratified_subsample(mnist.train_labels, 0.05, kAttackSeed);
        Eigen::MatrixXf train_feats =
            packaged.model.forward_features(dsn::gather_images(mnist.train_images, sub));
        Eigen::MatrixXf test_feats =
            packaged.model.forward_features(mnist.test_images.leftCols(2000));
        double probe = dsn::linear_probe_accuracy(
            train_feats, dsn::gather_labels(mnist.train_labels, sub), test_feats,
            {mnist.test_labels.begin(), mnist.test_labels.begin() + 2000}, mnist.num_classes);
        c.require(probe <= 30.0, "frozen-feature probe " + fmt(probe) + " > 30");
        c.note("frozen-feature probe " + fmt(probe) + "%");
        tally(!c.report());
    }

    // ---- criterion 6: overwriting cost ------------------------------------
    {
        Criterion c(6, "overwriting cost");
        const std::vector<double> anchor{93.2, 93.7, 94.3, 95.8};
        for (std::size_t i = 0; i < kFractions.size(); ++i) {
            double acc = overwrites[i].final.acc_new_sn;
            c.require(std::abs(acc - anchor[i]) <= 3.0,
                      frac_tag(kFractions[i]) + "%: new-SN final " + fmt(acc) +
                          " not within 3 of " + fmt(anchor[i]));
            // optimizer steps until the overwrite matches the scratch final
            double target = scratches[i].final.acc_raw;
            long long to_quality = -1;
            for (const auto& p : overwrites[i].trajectory)
                if (p.acc_new_sn >= target) {
                    to_quality = p.step_count;
                    break;
                }
            long long scratch_steps = scratches[i].total_steps;
            if (to_quality < 0) {
                c.note(frac_tag(kFractions[i]) + "%: scratch quality " + fmt(target) +
                       " not reached within " + std::to_string(kOverwriteEpochs) +
                       " epochs (bound holds vacuously)");
            } else {
                double ratio = static_cast<double>(to_quality) /
                               static_cast<double>(scratch_steps);
                c.require(ratio >= 1.5, frac_tag(kFractions[i]) + "%: step ratio " +
                                            fmt(ratio) + " < 1.5");
                c.note(frac_tag(kFractions[i]) + "%: new-SN " + fmt(acc) + ", step ratio " +
                       fmt(ratio));
            }
        }
        tally(!c.report());
    }

    // ---- criterion 8: embedding separability -------------------------------
    {
        Criterion c(8, "embedding separability");
        const int n = 1000;
        auto e = dsn::export_embeddings(packaged.model, mnist, pattern, n, kAttackSeed);
        std::vector<int> labels(e.labels.begin(), e.labels.begin() + n);
        double raw_sil = dsn::silhouette_score(e.projection.leftCols(n), labels);
        double stamped_sil = dsn::silhouette_score(e.projection.rightCols(n), labels);
        c.require(stamped_sil > raw_sil, "stamped silhouette " + fmt(stamped_sil) +
                                             " <= raw " + fmt(raw_sil));
        c.note("silhouette stamped " + fmt(stamped_sil) + " vs raw " + fmt(raw_sil));
        tally(!c.report());
    }

    std::cout << (failures == 0 ? "all criteria passed\n"
                                : std::to_string(failures) + " criteria failed\n");
    return failures;
}
