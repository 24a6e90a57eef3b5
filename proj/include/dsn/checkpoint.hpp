#pragma once

#include <Eigen/Dense>

#include <map>
#include <string>
#include <vector>

#include "dsn/nn.hpp"

namespace dsn {

// Weight container: "DSNW" magic, u32 tensor count, then per tensor
// name (u32 length + bytes), u32 rows, u32 cols, f32 data, little-endian.
void save_weights(const std::string& path, const std::vector<nn::ParamRef<float>>& params);
std::map<std::string, Eigen::MatrixXf> load_weights(const std::string& path);

// Copies loaded tensors into the given parameter refs; every ref must be
// present with a matching shape.
void assign_weights(const std::vector<nn::ParamRef<float>>& params,
                    const std::map<std::string, Eigen::MatrixXf>& tensors);

}  // namespace dsn
