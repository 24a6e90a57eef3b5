#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dsn/data.hpp"
#include "dsn/model_zoo.hpp"
#include "dsn/sn_core.hpp"

namespace dsn {

struct StudentBundle;

// Top-1 accuracy in percent over (images, labels); argmax ties break toward
// the lowest class index. Stamps first iff a pattern is given.
double evaluate_net(ModelHandles<float>& model, const Eigen::MatrixXf& images,
                    const std::vector<int>& labels, nn::Shape3 shape,
                    const std::optional<SNPattern>& pattern,
                    int batch = 500);

// Full-test-split accuracy of a packaged bundle.
double evaluate(StudentBundle& bundle, const DatasetHandle& dataset,
                const std::optional<SNPattern>& pattern);

std::vector<int> argmax_labels(const Eigen::MatrixXf& probs);

// Feature table for embedding analysis: for the first n seeded test samples,
// the raw and stamped G_e features plus a 2-component principal projection.
// CSV schema: index,label,stamped,e_0..e_{D-1},pc1,pc2
struct EmbeddingExport {
    Eigen::MatrixXf features;   // (D, 2n): raw rows then stamped for each index
    std::vector<int> labels;    // per column
    std::vector<int> stamped;   // 0/1 per column
    std::vector<int> index;     // test-set index per column
    Eigen::MatrixXf projection; // (2, 2n)
};
EmbeddingExport export_embeddings(ModelHandles<float>& model, const DatasetHandle& dataset,
                                  const SNPattern& pattern, int n, std::uint64_t seed = 0);
void write_embeddings_csv(const std::string& path, const EmbeddingExport& e);

// Mean silhouette coefficient of the given 2-D points under their labels.
double silhouette_score(const Eigen::MatrixXf& points2d, const std::vector<int>& labels);

// Multinomial logistic probe trained on frozen features; returns accuracy in
// percent on held-out features. Used for the separability checks.
double linear_probe_accuracy(const Eigen::MatrixXf& train_features,
                             const std::vector<int>& train_labels,
                             const Eigen::MatrixXf& test_features,
                             const std::vector<int>& test_labels, int num_classes,
                             int epochs = 40, std::uint64_t seed = 0);

// Report assembly: scans a directory tree for summary JSON files written by
// training / attack runs and renders Tables 2-6 style CSV + Markdown.
struct EvalReport {
    std::string markdown;
    std::string csv;
};
EvalReport build_report(const std::string& run_directory);

}  // namespace dsn
