#include "dsn/checkpoint.hpp"

#include <cstdint>
#include <fstream>

#include "dsn/common.hpp"

namespace dsn {

namespace {

void write_u32(std::ostream& out, std::uint32_t v) {
    char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                 static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
    out.write(b, 4);
}

std::uint32_t read_u32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
           (std::uint32_t(b[3]) << 24);
}

}  // namespace

void save_weights(const std::string& path, const std::vector<nn::ParamRef<float>>& params) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw missing_input_error("cannot write weights: " + path);
    out.write("DSNW", 4);
    write_u32(out, static_cast<std::uint32_t>(params.size()));
    for (const auto& p : params) {
        write_u32(out, static_cast<std::uint32_t>(p.name.size()));
        out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
        write_u32(out, static_cast<std::uint32_t>(p.value->rows()));
        write_u32(out, static_cast<std::uint32_t>(p.value->cols()));
        out.write(reinterpret_cast<const char*>(p.value->data()),
                  static_cast<std::streamsize>(sizeof(float)) * p.value->size());
    }
    if (!out) throw format_error("short write to " + path);
}

std::map<std::string, Eigen::MatrixXf> load_weights(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw missing_input_error("weights file missing: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::string(magic, 4) != "DSNW")
        throw format_error("not a weights file: " + path);
    std::uint32_t count = read_u32(in);
    if (!in || count > 1u << 20)
        throw format_error("implausible tensor count in " + path);
    std::map<std::string, Eigen::MatrixXf> tensors;
    for (std::uint32_t i = 0; i < count; ++i) {
        std::uint32_t nlen = read_u32(in);
        if (!in || nlen > 4096) throw format_error("implausible tensor name in " + path);
        std::string name(nlen, '\0');
        in.read(name.data(), nlen);
        std::uint32_t rows = read_u32(in), cols = read_u32(in);
        if (!in || static_cast<std::uint64_t>(rows) * cols > 1ull << 31)
            throw format_error("implausible tensor shape in " + path);
        Eigen::MatrixXf m(rows, cols);
        in.read(reinterpret_cast<char*>(m.data()),
                static_cast<std::streamsize>(sizeof(float)) * m.size());
        if (!in) throw format_error("truncated weights file: " + path);
        tensors.emplace(std::move(name), std::move(m));
    }
    return tensors;
}

void assign_weights(const std::vector<nn::ParamRef<float>>& params,
                    const std::map<std::string, Eigen::MatrixXf>& tensors) {
    for (const auto& p : params) {
        auto it = tensors.find(p.name);
        if (it == tensors.end())
            throw format_error("weights file lacks tensor " + p.name);
        if (it->second.rows() != p.value->rows() || it->second.cols() != p.value->cols())
            throw shape_error("tensor shape mismatch for " + p.name);
        *p.value = it->second;
    }
}

}  // namespace dsn
