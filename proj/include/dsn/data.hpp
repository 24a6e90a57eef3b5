#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

#include "dsn/common.hpp"
#include "dsn/nn.hpp"

namespace dsn {

// Normalized dataset: pixels in [0,1], one flattened CHW image per column.
struct DatasetHandle {
    std::string name;
    Eigen::MatrixXf train_images;
    std::vector<int> train_labels;
    Eigen::MatrixXf test_images;
    std::vector<int> test_labels;
    int num_classes = 0;
    nn::Shape3 image_shape;

    Eigen::Index train_size() const { return train_images.cols(); }
    Eigen::Index test_size() const { return test_images.cols(); }
    void validate() const;
};

// Loads a dataset from local files (never touches the network). MNIST reads
// the standard IDX files; GTSRB reads the public PPM archive layout and
// resizes every sign to 32x32 with bilinear interpolation. The train split is
// shuffled with `shuffle_seed`.
DatasetHandle load_dataset(const std::string& name, const std::string& root_path,
                           std::uint64_t shuffle_seed = 0);

// Downloads a dataset's archive files into root_path/<name>/.
// `base_url` must serve the standard file names (http only).
void fetch_dataset(const std::string& name, const std::string& root_path,
                   const std::string& base_url);

// Deterministic class-stratified subsample: per class, a seeded shuffle of
// that class's indices, keeping ceil(fraction * class_size). The result is
// sorted, so the same (seed, fraction) always yields the same index set.
std::vector<Eigen::Index> stratified_subsample(const std::vector<int>& labels,
                                               double fraction, std::uint64_t seed);

// Column-gather helpers.
Eigen::MatrixXf gather_images(const Eigen::MatrixXf& images,
                              const std::vector<Eigen::Index>& idx);
std::vector<int> gather_labels(const std::vector<int>& labels,
                               const std::vector<Eigen::Index>& idx);

// IDX parsing, exposed for tests.
Eigen::MatrixXf read_idx_images(const std::string& path);
std::vector<int> read_idx_labels(const std::string& path);

// PPM (P6) parsing + bilinear resize, exposed for tests.
Eigen::VectorXf read_ppm_chw(const std::string& path, int& height, int& width);
Eigen::VectorXf bilinear_resize_chw(const Eigen::VectorXf& chw, int h, int w, int channels,
                                    int out_h, int out_w);

}  // namespace dsn
