#include "dsn/eval.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "dsn/training.hpp"

namespace dsn {

using nlohmann::json;
namespace fs = std::filesystem;

std::vector<int> argmax_labels(const Eigen::MatrixXf& probs) {
    std::vector<int> labels(static_cast<std::size_t>(probs.cols()));
    for (Eigen::Index b = 0; b < probs.cols(); ++b) {
        int best = 0;
        for (Eigen::Index i = 1; i < probs.rows(); ++i)
            if (probs(i, b) > probs(best, b)) best = static_cast<int>(i);
        labels[static_cast<std::size_t>(b)] = best;  // ties keep the lowest index
    }
    return labels;
}

double evaluate_net(ModelHandles<float>& model, const Eigen::MatrixXf& images,
                    const std::vector<int>& labels, nn::Shape3 shape,
                    const std::optional<SNPattern>& pattern, int batch) {
    if (images.cols() != static_cast<Eigen::Index>(labels.size()))
        throw data_error("evaluate: image/label count mismatch");
    Eigen::Index n = images.cols();
    Eigen::Index correct = 0;
    for (Eigen::Index start = 0; start < n; start += batch) {
        Eigen::Index len = std::min<Eigen::Index>(batch, n - start);
        StampedBatch b{images.middleCols(start, len), shape.h, shape.w, shape.c, std::nullopt};
        if (pattern) b = stamp(b, *pattern);
        Eigen::MatrixXf logits = model.net.forward(b.images);
        auto pred = argmax_labels(logits);  // argmax of logits == argmax of softmax
        for (Eigen::Index i = 0; i < len; ++i)
            if (pred[static_cast<std::size_t>(i)] == labels[static_cast<std::size_t>(start + i)])
                ++correct;
    }
    model.net.drop_caches();
    return 100.0 * static_cast<double>(correct) / static_cast<double>(n);
}

double evaluate(StudentBundle& bundle, const DatasetHandle& dataset,
                const std::optional<SNPattern>& pattern) {
    if (bundle.stage != BundleStage::packaged)
        throw stage_error("evaluate requires a packaged bundle");
    return evaluate_net(bundle.model, dataset.test_images, dataset.test_labels,
                        dataset.image_shape, pattern);
}

namespace {

// Principal 2-component projection via the Gram matrix (columns are samples).
Eigen::MatrixXf project_2d(const Eigen::MatrixXf& features) {
    Eigen::MatrixXf centered = features.colwise() - features.rowwise().mean();
    Eigen::MatrixXf gram = centered.transpose() * centered;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXf> es(gram);
    Eigen::Index n = gram.rows();
    Eigen::MatrixXf proj(2, n);
    for (int k = 0; k < 2; ++k) {
        // eigenvalues ascend; take the two largest
        Eigen::VectorXf v = es.eigenvectors().col(n - 1 - k);
        float lam = std::max(es.eigenvalues()(n - 1 - k), 0.0f);
        proj.row(k) = (std::sqrt(lam) * v).transpose();
    }
    return proj;
}

}  // namespace

EmbeddingExport export_embeddings(ModelHandles<float>& model, const DatasetHandle& dataset,
                                  const SNPattern& pattern, int n, std::uint64_t seed) {
    if (n < 1 || n > dataset.test_size())
        throw config_error("embedding sample count out of range");
    std::vector<Eigen::Index> all(static_cast<std::size_t>(dataset.test_size()));
    std::iota(all.begin(), all.end(), 0);
    std::mt19937_64 rng(split_seed(seed, "embedding-sample"));
    std::shuffle(all.begin(), all.end(), rng);
    all.resize(static_cast<std::size_t>(n));
    std::sort(all.begin(), all.end());

    Eigen::MatrixXf raw = gather_images(dataset.test_images, all);
    StampedBatch sb{raw, dataset.image_shape.h, dataset.image_shape.w, dataset.image_shape.c,
                    std::nullopt};
    Eigen::MatrixXf stamped = stamp(sb, pattern).images;

    EmbeddingExport e;
    const int D = model.spec.feature_dim();
    e.features.resize(D, 2 * n);
    for (Eigen::Index start = 0; start < n; start += 500) {
        Eigen::Index len = std::min<Eigen::Index>(500, n - start);
        e.features.middleCols(start, len) =
            model.forward_features(raw.middleCols(start, len));
        e.features.middleCols(n + start, len) =
            model.forward_features(stamped.middleCols(start, len));
    }
    model.net.drop_caches();
    for (int pass = 0; pass < 2; ++pass)
        for (int i = 0; i < n; ++i) {
            e.index.push_back(static_cast<int>(all[static_cast<std::size_t>(i)]));
            e.labels.push_back(
                dataset.test_labels[static_cast<std::size_t>(all[static_cast<std::size_t>(i)])]);
            e.stamped.push_back(pass);
        }
    e.projection = project_2d(e.features);
    return e;
}

void write_embeddings_csv(const std::string& path, const EmbeddingExport& e) {
    std::ofstream out(path);
    if (!out) throw missing_input_error("cannot write embeddings: " + path);
    out << "index,label,stamped";
    for (Eigen::Index d = 0; d < e.features.rows(); ++d) out << ",e_" << d;
    out << ",pc1,pc2\n";
    for (Eigen::Index c = 0; c < e.features.cols(); ++c) {
        out << e.index[static_cast<std::size_t>(c)] << ","
            << e.labels[static_cast<std::size_t>(c)] << ","
            << e.stamped[static_cast<std::size_t>(c)];
        for (Eigen::Index d = 0; d < e.features.rows(); ++d) out << "," << e.features(d, c);
        out << "," << e.projection(0, c) << "," << e.projection(1, c) << "\n";
    }
}

double silhouette_score(const Eigen::MatrixXf& points, const std::vector<int>& labels) {
    const Eigen::Index n = points.cols();
    if (n != static_cast<Eigen::Index>(labels.size()) || n < 2)
        throw data_error("silhouette needs >= 2 labeled points");
    std::map<int, std::vector<Eigen::Index>> clusters;
    for (Eigen::Index i = 0; i < n; ++i) clusters[labels[static_cast<std::size_t>(i)]].push_back(i);
    if (clusters.size() < 2) throw data_error("silhouette needs >= 2 clusters");

    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        int li = labels[static_cast<std::size_t>(i)];
        double a = 0.0, b = std::numeric_limits<double>::infinity();
        for (const auto& [lc, members] : clusters) {
            double sum = 0.0;
            for (Eigen::Index j : members)
                if (j != i) sum += (points.col(i) - points.col(j)).norm();
            if (lc == li) {
                a = members.size() > 1 ? sum / static_cast<double>(members.size() - 1) : 0.0;
            } else {
                b = std::min(b, sum / static_cast<double>(members.size()));
            }
        }
        if (clusters.at(li).size() > 1)
            total += (b - a) / std::max(a, b);
        // singleton clusters contribute 0
    }
    return total / static_cast<double>(n);
}

double linear_probe_accuracy(const Eigen::MatrixXf& train_features,
                             const std::vector<int>& train_labels,
                             const Eigen::MatrixXf& test_features,
                             const std::vector<int>& test_labels, int num_classes,
                             int epochs, std::uint64_t seed) {
    nn::Dense<float> probe("probe", train_features.rows(), num_classes, /*relu=*/false);
    {
        std::mt19937_64 rng(split_seed(seed, "probe-init"));
        std::normal_distribution<double> dist(0.0, 1.0);
        for (auto& p : probe.params()) {
            if (p.name.ends_with(".bias"))
                p.value->setZero();
            else
                for (Eigen::Index i = 0; i < p.value->size(); ++i)
                    p.value->data()[i] = static_cast<float>(
                        dist(rng) / std::sqrt(static_cast<double>(p.value->cols())));
        }
    }
    nn::Adam<float> adam(1e-3f);
    const int batch = 256;
    std::vector<Eigen::Index> order(static_cast<std::size_t>(train_features.cols()));
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(split_seed(seed, "probe-data"));
    for (int epoch = 0; epoch < epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < order.size(); start += batch) {
            std::size_t len = std::min<std::size_t>(batch, order.size() - start);
            std::vector<Eigen::Index> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                          order.begin() + static_cast<std::ptrdiff_t>(start + len));
            Eigen::MatrixXf x = gather_images(train_features, idx);
            std::vector<int> y = gather_labels(train_labels, idx);
            Eigen::MatrixXf dlogits;
            nn::cross_entropy_loss_grad(probe.forward(x), y, dlogits);
            probe.backward(dlogits);
            adam.step(probe.params());
        }
    }
    Eigen::MatrixXf logits = probe.forward(test_features);
    auto pred = argmax_labels(logits);
    Eigen::Index correct = 0;
    for (std::size_t i = 0; i < test_labels.size(); ++i)
        if (pred[i] == test_labels[i]) ++correct;
    return 100.0 * static_cast<double>(correct) / static_cast<double>(test_labels.size());
}

// ---- Report assembly -------------------------------------------------------

namespace {

std::string fmt1(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.1f", v);
    return buf;
}

std::string cell(const json& row, const char* key) {
    if (!row.contains(key) || row[key].is_null()) return "-";
    return fmt1(row[key].get<double>());
}

}  // namespace

EvalReport build_report(const std::string& run_directory) {
    if (!fs::exists(run_directory))
        throw missing_input_error("run directory missing: " + run_directory);

    std::vector<json> models, attacks;
    std::vector<fs::path> files;
    for (const auto& entry : fs::recursive_directory_iterator(run_directory)) {
        if (!entry.is_regular_file()) continue;
        auto name = entry.path().filename().string();
        if (name.ends_with(".summary.json")) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& p : files) {
        std::ifstream in(p);
        std::stringstream ss;
        ss << in.rdbuf();
        json j;
        try {
            j = json::parse(ss.str());
        } catch (const json::parse_error&) {
            throw format_error("malformed summary file: " + p.string());
        }
        std::string type = j.value("type", "");
        if (type == "model")
            models.push_back(j);
        else if (type == "attack")
            attacks.push_back(j);
    }

    std::ostringstream md, csv;
    const std::vector<int> fracs = {10, 20, 30, 40};

    if (!models.empty()) {
        md << "## Model accuracy with/without SN\n\n";
        md << "| Model | acc_with_sn | acc_without_sn |\n|---|---|---|\n";
        csv << "table,model_id,acc_with_sn,acc_without_sn\n";
        for (const auto& m : models) {
            md << "| " << m.value("model_id", "?") << " | " << cell(m, "acc_with_sn")
               << " | " << cell(m, "acc_without_sn") << " |\n";
            csv << "accuracy," << m.value("model_id", "?") << "," << cell(m, "acc_with_sn")
                << "," << cell(m, "acc_without_sn") << "\n";
        }
        md << "\n";
    }

    struct TableDef {
        const char* kind;
        const char* title;
    };
    for (TableDef t : {TableDef{"finetune", "Fine-tuning attack"},
                       TableDef{"transfer", "Transfer-learning attack"},
                       TableDef{"overwrite", "Overwriting attack"}}) {
        std::map<int, json> by_frac, scratch_by_frac;
        for (const auto& a : attacks) {
            int pct = static_cast<int>(std::lround(a.value("fraction", 0.0) * 100));
            if (a.value("attack_kind", "") == t.kind) by_frac[pct] = a;
            if (std::string(t.kind) == "finetune" &&
                a.value("attack_kind", "") == "scratch_baseline")
                scratch_by_frac[pct] = a;
        }
        if (by_frac.empty()) continue;
        const char* key = std::string(t.kind) == "overwrite" ? "acc_new_sn" : "acc_raw";
        md << "## " << t.title << "\n\n| Model |";
        for (int f : fracs) md << " " << f << "% |";
        md << "\n|---|";
        for (std::size_t i = 0; i < fracs.size(); ++i) md << "---|";
        md << "\n| student |";
        csv << t.kind;
        for (int f : fracs) {
            std::string c = by_frac.count(f) ? cell(by_frac[f], key) : "-";
            md << " " << c << " |";
            csv << "," << c;
        }
        md << "\n";
        csv << "\n";
        if (!scratch_by_frac.empty()) {
            md << "| scratch (MNIST*) |";
            csv << "scratch_baseline";
            for (int f : fracs) {
                std::string c =
                    scratch_by_frac.count(f) ? cell(scratch_by_frac[f], "acc_raw") : "-";
                md << " " << c << " |";
                csv << "," << c;
            }
            md << "\n";
            csv << "\n";
        }
        md << "\n";
    }

    std::map<int, json> prunes;
    for (const auto& a : attacks)
        if (a.value("attack_kind", "") == "prune")
            prunes[static_cast<int>(std::lround(a.value("ratio", 0.0) * 100))] = a;
    if (!prunes.empty()) {
        md << "## Model-pruning attack\n\n| Ratio | acc_with_sn / acc_raw |\n|---|---|\n";
        for (const auto& [r, a] : prunes) {
            md << "| " << r << "% | " << cell(a, "acc_orig_sn") << " / " << cell(a, "acc_raw")
               << " |\n";
            csv << "prune," << r << "," << cell(a, "acc_orig_sn") << "," << cell(a, "acc_raw")
                << "\n";
        }
        md << "\n";
    }

    EvalReport r;
    r.markdown = md.str();
    r.csv = csv.str();
    return r;
}

}  // namespace dsn
