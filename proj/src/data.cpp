#include "dsn/data.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

namespace dsn {

namespace fs = std::filesystem;

void DatasetHandle::validate() const {
    if (train_images.cols() != static_cast<Eigen::Index>(train_labels.size()) ||
        test_images.cols() != static_cast<Eigen::Index>(test_labels.size()))
        throw data_error("image/label count mismatch in " + name);
    if (train_images.rows() != image_shape.size())
        throw data_error("image buffer does not match declared shape in " + name);
    for (int y : train_labels)
        if (y < 0 || y >= num_classes) throw data_error("train label out of range");
    for (int y : test_labels)
        if (y < 0 || y >= num_classes) throw data_error("test label out of range");
    auto in01 = [](const Eigen::MatrixXf& m) {
        return (m.array() >= 0.0f).all() && (m.array() <= 1.0f).all();
    };
    if (!in01(train_images) || !in01(test_images))
        throw data_error("pixels outside [0,1] in " + name);
}

namespace {

std::uint32_t read_be32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
           (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

}  // namespace

Eigen::MatrixXf read_idx_images(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw missing_input_error("dataset file missing: " + path);
    if (read_be32(in) != 0x00000803u)
        throw format_error("not an IDX image file: " + path);
    const std::uint32_t n = read_be32(in), h = read_be32(in), w = read_be32(in);
    std::vector<unsigned char> raw(static_cast<std::size_t>(n) * h * w);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!in) throw format_error("truncated IDX image file: " + path);
    Eigen::MatrixXf out(static_cast<Eigen::Index>(h) * w, n);
    for (std::uint32_t i = 0; i < n; ++i)
        for (std::uint32_t p = 0; p < h * w; ++p)
            out(p, i) = static_cast<float>(raw[static_cast<std::size_t>(i) * h * w + p]) / 255.0f;
    return out;
}

std::vector<int> read_idx_labels(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw missing_input_error("dataset file missing: " + path);
    if (read_be32(in) != 0x00000801u)
        throw format_error("not an IDX label file: " + path);
    const std::uint32_t n = read_be32(in);
    std::vector<unsigned char> raw(n);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!in) throw format_error("truncated IDX label file: " + path);
    return {raw.begin(), raw.end()};
}

Eigen::VectorXf read_ppm_chw(const std::string& path, int& height, int& width) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw missing_input_error("image file missing: " + path);
    std::string magic;
    in >> magic;
    if (magic != "P6") throw format_error("not a binary PPM (P6): " + path);
    auto next_int = [&in, &path]() {
        int v;
        // skip whitespace and comment lines
        while (true) {
            int c = in.peek();
            if (c == '#') {
                std::string line;
                std::getline(in, line);
            } else if (std::isspace(c)) {
                in.get();
            } else {
                break;
            }
        }
        if (!(in >> v)) throw format_error("malformed PPM header: " + path);
        return v;
    };
    width = next_int();
    height = next_int();
    int maxval = next_int();
    if (maxval != 255) throw format_error("unsupported PPM maxval: " + path);
    in.get();  // single whitespace after header
    std::vector<unsigned char> raw(static_cast<std::size_t>(width) * height * 3);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!in) throw format_error("truncated PPM payload: " + path);
    Eigen::VectorXf chw(static_cast<Eigen::Index>(3) * height * width);
    for (int c = 0; c < 3; ++c)
        for (int i = 0; i < height; ++i)
            for (int j = 0; j < width; ++j)
                chw((static_cast<Eigen::Index>(c) * height + i) * width + j) =
                    raw[(static_cast<std::size_t>(i) * width + j) * 3 + static_cast<std::size_t>(c)] /
                    255.0f;
    return chw;
}

Eigen::VectorXf bilinear_resize_chw(const Eigen::VectorXf& chw, int h, int w, int channels,
                                    int out_h, int out_w) {
    if (chw.size() != static_cast<Eigen::Index>(channels) * h * w)
        throw shape_error("resize input size mismatch");
    Eigen::VectorXf out(static_cast<Eigen::Index>(channels) * out_h * out_w);
    const float sy = static_cast<float>(h) / out_h;
    const float sx = static_cast<float>(w) / out_w;
    for (int c = 0; c < channels; ++c)
        for (int oi = 0; oi < out_h; ++oi)
            for (int oj = 0; oj < out_w; ++oj) {
                float fy = (oi + 0.5f) * sy - 0.5f;
                float fx = (oj + 0.5f) * sx - 0.5f;
                int y0 = std::clamp(static_cast<int>(std::floor(fy)), 0, h - 1);
                int x0 = std::clamp(static_cast<int>(std::floor(fx)), 0, w - 1);
                int y1 = std::min(y0 + 1, h - 1);
                int x1 = std::min(x0 + 1, w - 1);
                float wy = std::clamp(fy - y0, 0.0f, 1.0f);
                float wx = std::clamp(fx - x0, 0.0f, 1.0f);
                auto px = [&](int yy, int xx) {
                    return chw((static_cast<Eigen::Index>(c) * h + yy) * w + xx);
                };
                float v = (1 - wy) * ((1 - wx) * px(y0, x0) + wx * px(y0, x1)) +
                          wy * ((1 - wx) * px(y1, x0) + wx * px(y1, x1));
                out((static_cast<Eigen::Index>(c) * out_h + oi) * out_w + oj) = v;
            }
    return out;
}

namespace {

void shuffle_train(DatasetHandle& d, std::uint64_t seed) {
    std::vector<Eigen::Index> perm(static_cast<std::size_t>(d.train_size()));
    std::iota(perm.begin(), perm.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(perm.begin(), perm.end(), rng);
    d.train_images = gather_images(d.train_images, perm);
    d.train_labels = gather_labels(d.train_labels, perm);
}

DatasetHandle load_mnist(const std::string& root, std::uint64_t seed) {
    fs::path dir = fs::path(root) / "mnist";
    std::vector<std::string> missing;
    for (const char* f : {"train-images-idx3-ubyte", "train-labels-idx1-ubyte",
                          "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"})
        if (!fs::exists(dir / f)) missing.push_back((dir / f).string());
    if (!missing.empty()) {
        std::string msg = "missing MNIST files:";
        for (const auto& m : missing) msg += " " + m;
        throw missing_input_error(msg);
    }
    DatasetHandle d;
    d.name = "mnist";
    d.train_images = read_idx_images((dir / "train-images-idx3-ubyte").string());
    d.train_labels = read_idx_labels((dir / "train-labels-idx1-ubyte").string());
    d.test_images = read_idx_images((dir / "t10k-images-idx3-ubyte").string());
    d.test_labels = read_idx_labels((dir / "t10k-labels-idx1-ubyte").string());
    d.num_classes = 10;
    d.image_shape = {28, 28, 1};
    shuffle_train(d, seed);
    d.validate();
    return d;
}

// GTSRB archive layout: <root>/gtsrb/Final_Training/Images/000NN/*.ppm for
// training and <root>/gtsrb/Final_Test/Images/*.ppm with GT-final_test.csv
// for the labeled test split.
DatasetHandle load_gtsrb(const std::string& root, std::uint64_t seed) {
    fs::path dir = fs::path(root) / "gtsrb";
    fs::path train_dir = dir / "Final_Training" / "Images";
    if (!fs::exists(train_dir))
        throw missing_input_error("missing GTSRB training directory: " + train_dir.string());

    DatasetHandle d;
    d.name = "gtsrb";
    d.num_classes = 43;
    d.image_shape = {32, 32, 3};

    std::vector<Eigen::VectorXf> images;
    std::vector<int> labels;
    auto load_one = [&](const fs::path& p, int label) {
        int h = 0, w = 0;
        Eigen::VectorXf chw = read_ppm_chw(p.string(), h, w);
        images.push_back(bilinear_resize_chw(chw, h, w, 3, 32, 32));
        labels.push_back(label);
    };
    for (int cls = 0; cls < 43; ++cls) {
        char sub[8];
        std::snprintf(sub, sizeof(sub), "%05d", cls);
        fs::path cdir = train_dir / sub;
        if (!fs::exists(cdir)) continue;
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(cdir))
            if (e.path().extension() == ".ppm") files.push_back(e.path());
        std::sort(files.begin(), files.end());
        for (const auto& f : files) load_one(f, cls);
    }
    if (images.empty()) throw missing_input_error("no GTSRB training images found");
    d.train_images.resize(d.image_shape.size(), static_cast<Eigen::Index>(images.size()));
    for (std::size_t i = 0; i < images.size(); ++i) d.train_images.col(static_cast<Eigen::Index>(i)) = images[i];
    d.train_labels = labels;

    images.clear();
    labels.clear();
    fs::path test_csv = dir / "GT-final_test.csv";
    fs::path test_dir = dir / "Final_Test" / "Images";
    if (!fs::exists(test_csv) || !fs::exists(test_dir))
        throw missing_input_error("missing GTSRB test files: " + test_csv.string());
    std::ifstream csv(test_csv);
    std::string line;
    std::getline(csv, line);  // header
    while (std::getline(csv, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string field;
        std::vector<std::string> fields;
        while (std::getline(ss, field, ';')) fields.push_back(field);
        if (fields.size() < 8) throw format_error("malformed GTSRB csv row: " + line);
        load_one(test_dir / fields[0], std::stoi(fields[7]));
    }
    d.test_images.resize(d.image_shape.size(), static_cast<Eigen::Index>(images.size()));
    for (std::size_t i = 0; i < images.size(); ++i) d.test_images.col(static_cast<Eigen::Index>(i)) = images[i];
    d.test_labels = labels;

    shuffle_train(d, seed);
    d.validate();
    return d;
}

}  // namespace

DatasetHandle load_dataset(const std::string& name, const std::string& root_path,
                           std::uint64_t shuffle_seed) {
    if (name == "mnist") return load_mnist(root_path, shuffle_seed);
    if (name == "gtsrb") return load_gtsrb(root_path, shuffle_seed);
    throw missing_input_error("unknown dataset: " + name);
}

std::vector<Eigen::Index> stratified_subsample(const std::vector<int>& labels,
                                               double fraction, std::uint64_t seed) {
    if (fraction <= 0.0 || fraction > 1.0)
        throw config_error("subsample fraction must be in (0,1]");
    int num_classes = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
    std::vector<std::vector<Eigen::Index>> by_class(static_cast<std::size_t>(num_classes));
    for (std::size_t i = 0; i < labels.size(); ++i)
        by_class[static_cast<std::size_t>(labels[i])].push_back(static_cast<Eigen::Index>(i));
    std::vector<Eigen::Index> keep;
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        auto& idx = by_class[c];
        std::mt19937_64 rng(split_seed(seed, "subsample-class-" + std::to_string(c)));
        std::shuffle(idx.begin(), idx.end(), rng);
        auto take = static_cast<std::size_t>(
            std::ceil(fraction * static_cast<double>(idx.size())));
        keep.insert(keep.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(take));
    }
    if (keep.empty()) throw data_error("subsample produced an empty index set");
    std::sort(keep.begin(), keep.end());
    return keep;
}

Eigen::MatrixXf gather_images(const Eigen::MatrixXf& images,
                              const std::vector<Eigen::Index>& idx) {
    Eigen::MatrixXf out(images.rows(), static_cast<Eigen::Index>(idx.size()));
    for (std::size_t i = 0; i < idx.size(); ++i)
        out.col(static_cast<Eigen::Index>(i)) = images.col(idx[i]);
    return out;
}

std::vector<int> gather_labels(const std::vector<int>& labels,
                               const std::vector<Eigen::Index>& idx) {
    std::vector<int> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(labels[static_cast<std::size_t>(i)]);
    return out;
}

}  // namespace dsn
