#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "dsn/eval.hpp"
#include "dsn/training.hpp"

using namespace dsn;
namespace fs = std::filesystem;

namespace {

// A model whose logits are exactly its 4-dim input: identity dense layer.
ModelHandles<float> identity_model() {
    ModelHandles<float> m;
    m.spec.name = "identity";
    m.spec.input_shape = {2, 2, 1};
    m.spec.num_classes = 4;
    m.spec.layers = {{LayerKind::dense, 4, 0, 1, Activation::relu},
                     {LayerKind::dense, 4, 0, 1, Activation::softmax}};
    m.spec.split_index = 1;
    auto l1 = std::make_unique<nn::Dense<float>>("fc0", 4, 4, false);
    auto l2 = std::make_unique<nn::Dense<float>>("fc1", 4, 4, false);
    for (auto* l : {l1.get(), l2.get()})
        for (auto& p : l->params()) {
            if (p.name.ends_with(".weight"))
                *p.value = Eigen::MatrixXf::Identity(4, 4);
            else
                p.value->setZero();
        }
    m.net.layers.push_back(std::move(l1));
    m.net.layers.push_back(std::move(l2));
    return m;
}

fs::path temp_dir(const std::string& sub) {
    auto dir = fs::temp_directory_path() / "dsn_test_eval" / sub;
    fs::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("argmax breaks ties toward the lowest class index") {
    Eigen::MatrixXf probs(3, 3);
    probs << 0.2f, 0.4f, 0.3f,
             0.2f, 0.4f, 0.4f,
             0.6f, 0.2f, 0.3f;
    CHECK(argmax_labels(probs) == std::vector<int>{2, 0, 1});
}

TEST_CASE("evaluate_net scores known predictions under odd batch splits") {
    auto m = identity_model();
    // 5 samples whose argmax classes are 0,1,2,3,0
    Eigen::MatrixXf x(4, 5);
    x << 0.9f, 0.1f, 0.1f, 0.1f, 0.8f,
         0.1f, 0.9f, 0.1f, 0.1f, 0.1f,
         0.1f, 0.1f, 0.9f, 0.1f, 0.1f,
         0.1f, 0.1f, 0.1f, 0.9f, 0.2f;
    std::vector<int> labels{0, 1, 2, 3, 3};  // last one is wrong -> 80%
    double acc = evaluate_net(m, x, labels, {2, 2, 1}, std::nullopt, /*batch=*/2);
    CHECK(acc == 80.0);

    CHECK_THROWS_AS(evaluate_net(m, x, {0, 1}, {2, 2, 1}, std::nullopt), data_error);
}

TEST_CASE("evaluate_net with a pattern equals evaluating pre-stamped images") {
    auto m = identity_model();
    Eigen::MatrixXf x = Eigen::MatrixXf::Constant(4, 6, 0.5f);
    for (int i = 0; i < 6; ++i) x(i % 4, i) = 0.7f;
    std::vector<int> labels{0, 1, 2, 3, 0, 1};

    SNPattern p;
    p.block.resize(1, 2);
    p.block << 1, 0;
    p.anchor_row = 0;
    p.anchor_col = 0;

    StampedBatch batch{x, 2, 2, 1, std::nullopt};
    Eigen::MatrixXf stamped = stamp(batch, p).images;
    CHECK(evaluate_net(m, x, labels, {2, 2, 1}, p) ==
          evaluate_net(m, stamped, labels, {2, 2, 1}, std::nullopt));
}

TEST_CASE("evaluate refuses unpackaged bundles") {
    StudentBundle b;
    b.model = identity_model();
    b.stage = BundleStage::in_training;
    DatasetHandle d;
    CHECK_THROWS_AS(evaluate(b, d, std::nullopt), stage_error);
}

TEST_CASE("silhouette matches the analytic value for two tight clusters") {
    Eigen::MatrixXf pts(2, 4);
    pts << 0, 0, 10, 10,
           0, 1, 0, 1;
    std::vector<int> labels{0, 0, 1, 1};
    // every point: a = 1, b = (10 + sqrt(101)) / 2
    double b = (10.0 + std::sqrt(101.0)) / 2.0;
    double expect = (b - 1.0) / b;
    CHECK(silhouette_score(pts, labels) == doctest::Approx(expect).epsilon(1e-6));

    // mixing the clusters destroys the score
    std::vector<int> mixed{0, 1, 0, 1};
    CHECK(silhouette_score(pts, mixed) < 0.0);

    CHECK_THROWS_AS(silhouette_score(pts, std::vector<int>{0, 0, 0, 0}), data_error);
    CHECK_THROWS_AS(silhouette_score(pts, std::vector<int>{0, 0}), data_error);
}

TEST_CASE("linear probe separates separable features and not noise") {
    const int n = 400, d = 8;
    std::mt19937_64 rng(3);
    std::normal_distribution<float> g(0.0f, 0.1f);
    Eigen::MatrixXf feats(d, n);
    std::vector<int> labels(n);
    for (int i = 0; i < n; ++i) {
        labels[static_cast<std::size_t>(i)] = i % 4;
        for (int r = 0; r < d; ++r) feats(r, i) = g(rng) + (r == i % 4 ? 1.0f : 0.0f);
    }
    double sep = linear_probe_accuracy(feats.leftCols(300), {labels.begin(), labels.begin() + 300},
                                       feats.rightCols(100), {labels.end() - 100, labels.end()}, 4,
                                       /*epochs=*/300);
    CHECK(sep > 95.0);

    Eigen::MatrixXf noise(d, n);
    for (Eigen::Index i = 0; i < noise.size(); ++i) noise.data()[i] = g(rng) * 10.0f;
    double chance =
        linear_probe_accuracy(noise.leftCols(300), {labels.begin(), labels.begin() + 300},
                              noise.rightCols(100), {labels.end() - 100, labels.end()}, 4);
    CHECK(chance < 45.0);
}

TEST_CASE("embedding export: layout, determinism and csv schema") {
    auto m = identity_model();
    DatasetHandle d;
    d.name = "toy";
    d.num_classes = 4;
    d.image_shape = {2, 2, 1};
    d.train_images = d.test_images = Eigen::MatrixXf::Random(4, 20).cwiseAbs() * 0.5f;
    d.train_labels = d.test_labels = std::vector<int>(20, 1);
    for (int i = 0; i < 20; ++i) d.test_labels[static_cast<std::size_t>(i)] = i % 4;
    d.train_labels = d.test_labels;

    SNPattern p;
    p.block.resize(1, 1);
    p.block << 1;
    p.anchor_row = 1;
    p.anchor_col = 1;

    auto e = export_embeddings(m, d, p, 8, 5);
    CHECK(e.features.rows() == 4);
    CHECK(e.features.cols() == 16);  // raw block then stamped block
    CHECK(e.projection.rows() == 2);
    CHECK(e.projection.cols() == 16);
    CHECK(e.stamped == std::vector<int>{0, 0, 0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 1, 1, 1});
    for (int i = 0; i < 8; ++i) {
        CHECK(e.labels[static_cast<std::size_t>(i)] == e.labels[static_cast<std::size_t>(i + 8)]);
        CHECK(e.index[static_cast<std::size_t>(i)] == e.index[static_cast<std::size_t>(i + 8)]);
    }
    // pc1 carries at least as much spread as pc2
    auto var = [&](int r) {
        Eigen::VectorXf row = e.projection.row(r);
        return (row.array() - row.mean()).square().sum();
    };
    CHECK(var(0) >= var(1));

    auto e2 = export_embeddings(m, d, p, 8, 5);
    CHECK(e2.features == e.features);
    auto e3 = export_embeddings(m, d, p, 8, 6);
    CHECK(e3.index != e.index);

    CHECK_THROWS_AS(export_embeddings(m, d, p, 0, 0), config_error);
    CHECK_THROWS_AS(export_embeddings(m, d, p, 21, 0), config_error);

    auto path = (temp_dir("embed") / "e.csv").string();
    write_embeddings_csv(path, e);
    std::ifstream in(path);
    std::string header;
    std::getline(in, header);
    CHECK(header == "index,label,stamped,e_0,e_1,e_2,e_3,pc1,pc2");
    int rows = 0;
    for (std::string line; std::getline(in, line);) ++rows;
    CHECK(rows == 16);
}

TEST_CASE("report assembly renders the paper-style tables from summaries") {
    auto dir = temp_dir("report");
    fs::remove_all(dir);
    fs::create_directories(dir / "run1");
    fs::create_directories(dir / "run2" / "nested");

    auto put = [&](const fs::path& p, const std::string& text) {
        std::ofstream(p) << text;
    };
    put(dir / "run1" / "model.summary.json",
        R"({"type":"model","model_id":"student-mnist","acc_with_sn":99.8,"acc_without_sn":9.2})");
    put(dir / "run1" / "ft10.summary.json",
        R"({"type":"attack","attack_kind":"finetune","fraction":0.1,"acc_raw":94.7,"acc_orig_sn":95.0})");
    put(dir / "run2" / "ft30.summary.json",
        R"({"type":"attack","attack_kind":"finetune","fraction":0.3,"acc_raw":96.6})");
    put(dir / "run2" / "nested" / "scratch10.summary.json",
        R"({"type":"attack","attack_kind":"scratch_baseline","fraction":0.1,"acc_raw":93.2})");
    put(dir / "run2" / "prune.summary.json",
        R"({"type":"attack","attack_kind":"prune","ratio":0.2,"acc_raw":8.3,"acc_orig_sn":98.4})");
    put(dir / "run2" / "ow.summary.json",
        R"({"type":"attack","attack_kind":"overwrite","fraction":0.4,"acc_raw":90.0,"acc_new_sn":95.8,"acc_orig_sn":12.0})");
    put(dir / "run2" / "not_a_summary.json", "{}");

    auto rep = build_report(dir.string());
    CHECK(rep.markdown.find("student-mnist | 99.8 | 9.2") != std::string::npos);
    // finetune row: 10% and 30% filled, 20% and 40% dashed
    CHECK(rep.markdown.find("| student | 94.7 | - | 96.6 | - |") != std::string::npos);
    CHECK(rep.markdown.find("| scratch (MNIST*) | 93.2 | - | - | - |") != std::string::npos);
    // overwrite table reports the new-SN column
    CHECK(rep.markdown.find("| student | - | - | - | 95.8 |") != std::string::npos);
    CHECK(rep.markdown.find("| 20% | 98.4 / 8.3 |") != std::string::npos);
    CHECK(rep.csv.find("finetune,94.7,-,96.6,-") != std::string::npos);

    // assembly is deterministic byte for byte
    auto rep2 = build_report(dir.string());
    CHECK(rep2.markdown == rep.markdown);
    CHECK(rep2.csv == rep.csv);

    put(dir / "run1" / "broken.summary.json", "{nope");
    CHECK_THROWS_AS(build_report(dir.string()), format_error);
    CHECK_THROWS_AS(build_report((dir / "missing").string()), missing_input_error);
}
