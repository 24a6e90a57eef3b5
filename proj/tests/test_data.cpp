#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>

#include "dsn/data.hpp"

using namespace dsn;
namespace fs = std::filesystem;

namespace {

void write_be32(std::ofstream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<char*>(b), 4);
}

void write_idx_images(const std::string& path, const std::vector<unsigned char>& pixels,
                      std::uint32_t n, std::uint32_t h, std::uint32_t w) {
    std::ofstream out(path, std::ios::binary);
    write_be32(out, 0x00000803u);
    write_be32(out, n);
    write_be32(out, h);
    write_be32(out, w);
    out.write(reinterpret_cast<const char*>(pixels.data()),
              static_cast<std::streamsize>(pixels.size()));
}

void write_idx_labels(const std::string& path, const std::vector<unsigned char>& labels) {
    std::ofstream out(path, std::ios::binary);
    write_be32(out, 0x00000801u);
    write_be32(out, static_cast<std::uint32_t>(labels.size()));
    out.write(reinterpret_cast<const char*>(labels.data()),
              static_cast<std::streamsize>(labels.size()));
}

fs::path temp_dir() {
    auto dir = fs::temp_directory_path() / "dsn_test_data";
    fs::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("idx image parsing normalizes bytes into [0,1] column-major-per-image") {
    auto dir = temp_dir();
    auto path = (dir / "imgs.idx").string();
    // two 2x3 images with known bytes
    std::vector<unsigned char> px = {0, 51, 102, 153, 204, 255, 255, 0, 128, 64, 32, 16};
    write_idx_images(path, px, 2, 2, 3);

    auto m = read_idx_images(path);
    CHECK(m.rows() == 6);
    CHECK(m.cols() == 2);
    CHECK(m(0, 0) == 0.0f);
    CHECK(m(1, 0) == doctest::Approx(51.0f / 255.0f));
    CHECK(m(5, 0) == 1.0f);
    CHECK(m(0, 1) == 1.0f);
    CHECK(m(2, 1) == doctest::Approx(128.0f / 255.0f));
}

TEST_CASE("idx parsing rejects wrong magic and truncation") {
    auto dir = temp_dir();
    auto bad_magic = (dir / "bad.idx").string();
    {
        std::ofstream out(bad_magic, std::ios::binary);
        write_be32(out, 0x00000801u);  // label magic in an image file
        write_be32(out, 1);
        write_be32(out, 2);
        write_be32(out, 2);
    }
    CHECK_THROWS_AS(read_idx_images(bad_magic), format_error);

    auto truncated = (dir / "trunc.idx").string();
    {
        std::ofstream out(truncated, std::ios::binary);
        write_be32(out, 0x00000803u);
        write_be32(out, 4);
        write_be32(out, 28);
        write_be32(out, 28);
        out.put(char(7));  // far too few payload bytes
    }
    CHECK_THROWS_AS(read_idx_images(truncated), format_error);
    CHECK_THROWS_AS(read_idx_images((dir / "nonexistent.idx").string()), missing_input_error);
}

TEST_CASE("mnist loader errors list every missing file") {
    auto root = temp_dir() / "empty_root";
    fs::create_directories(root / "mnist");
    try {
        load_dataset("mnist", root.string());
        FAIL("expected missing_input_error");
    } catch (const missing_input_error& e) {
        std::string msg = e.what();
        CHECK(msg.find("train-images-idx3-ubyte") != std::string::npos);
        CHECK(msg.find("t10k-labels-idx1-ubyte") != std::string::npos);
    }
    CHECK_THROWS_AS(load_dataset("svhn", root.string()), missing_input_error);
}

TEST_CASE("synthetic mnist round-trips through the loader with label alignment") {
    auto root = temp_dir() / "mini_mnist";
    fs::create_directories(root / "mnist");
    // 20 train + 10 test 28x28 images; pixel value encodes the label so we can
    // verify images and labels stay aligned through the shuffle
    auto make = [&](int n, const std::string& img, const std::string& lbl) {
        std::vector<unsigned char> px(static_cast<std::size_t>(n) * 28 * 28);
        std::vector<unsigned char> labels(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            labels[static_cast<std::size_t>(i)] = static_cast<unsigned char>(i % 10);
            std::fill_n(px.begin() + static_cast<std::ptrdiff_t>(i) * 28 * 28, 28 * 28,
                        static_cast<unsigned char>((i % 10) * 20));
        }
        write_idx_images((root / "mnist" / img).string(), px, static_cast<std::uint32_t>(n), 28, 28);
        write_idx_labels((root / "mnist" / lbl).string(), labels);
    };
    make(20, "train-images-idx3-ubyte", "train-labels-idx1-ubyte");
    make(10, "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte");

    auto d = load_dataset("mnist", root.string(), 99);
    CHECK(d.train_size() == 20);
    CHECK(d.test_size() == 10);
    CHECK(d.image_shape == nn::Shape3{28, 28, 1});
    for (Eigen::Index i = 0; i < d.train_size(); ++i) {
        int label = d.train_labels[static_cast<std::size_t>(i)];
        CHECK(d.train_images(0, i) == doctest::Approx(label * 20 / 255.0f));
    }

    // the shuffle is seed-deterministic
    auto d2 = load_dataset("mnist", root.string(), 99);
    CHECK(d2.train_labels == d.train_labels);
    auto d3 = load_dataset("mnist", root.string(), 100);
    CHECK(d3.train_labels != d.train_labels);
}

TEST_CASE("ppm parsing handles comments and converts to CHW") {
    auto dir = temp_dir();
    auto path = (dir / "img.ppm").string();
    {
        std::ofstream out(path, std::ios::binary);
        out << "P6\n# a comment line\n2 2\n255\n";
        // RGB interleaved: (10,20,30) (40,50,60) / (70,80,90) (100,110,120)
        unsigned char px[] = {10, 20, 30, 40, 50, 60, 70, 80, 90, 100, 110, 120};
        out.write(reinterpret_cast<char*>(px), sizeof(px));
    }
    int h = 0, w = 0;
    auto chw = read_ppm_chw(path, h, w);
    CHECK(h == 2);
    CHECK(w == 2);
    CHECK(chw.size() == 12);
    CHECK(chw(0) == doctest::Approx(10 / 255.0f));   // R(0,0)
    CHECK(chw(3) == doctest::Approx(100 / 255.0f));  // R(1,1)
    CHECK(chw(4) == doctest::Approx(20 / 255.0f));   // G(0,0)
    CHECK(chw(8) == doctest::Approx(30 / 255.0f));   // B(0,0)

    auto bad = (dir / "bad.ppm").string();
    std::ofstream(bad) << "P3\n2 2\n255\n";
    CHECK_THROWS_AS(read_ppm_chw(bad, h, w), format_error);
}

TEST_CASE("bilinear resize: constant images stay constant, 2x downscale averages") {
    // constant image: any resize leaves values untouched
    Eigen::VectorXf flat = Eigen::VectorXf::Constant(3 * 8 * 8, 0.42f);
    auto r = bilinear_resize_chw(flat, 8, 8, 3, 32, 32);
    CHECK(r.size() == 3 * 32 * 32);
    CHECK((r.array() - 0.42f).abs().maxCoeff() < 1e-6f);

    // exact 2x downscale with half-pixel centers averages each 2x2 block
    Eigen::VectorXf img(16);  // 1 channel, 4x4
    for (int i = 0; i < 16; ++i) img(i) = static_cast<float>(i) / 16.0f;
    auto half = bilinear_resize_chw(img, 4, 4, 1, 2, 2);
    CHECK(half(0) == doctest::Approx((img(0) + img(1) + img(4) + img(5)) / 4));
    CHECK(half(3) == doctest::Approx((img(10) + img(11) + img(14) + img(15)) / 4));

    CHECK_THROWS_AS(bilinear_resize_chw(img, 5, 5, 1, 2, 2), shape_error);
}

TEST_CASE("stratified subsampling is deterministic, per-class exact and sorted") {
    std::vector<int> labels;
    for (int c = 0; c < 10; ++c)
        for (int i = 0; i < 100 + c; ++i) labels.push_back(c);  // uneven classes

    auto idx1 = stratified_subsample(labels, 0.1, 42);
    auto idx2 = stratified_subsample(labels, 0.1, 42);
    CHECK(idx1 == idx2);
    CHECK(std::is_sorted(idx1.begin(), idx1.end()));
    CHECK(std::set<Eigen::Index>(idx1.begin(), idx1.end()).size() == idx1.size());

    // ceil(0.1 * class_size) per class
    std::vector<int> per_class(10, 0);
    for (auto i : idx1) per_class[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])]++;
    for (int c = 0; c < 10; ++c)
        CHECK(per_class[static_cast<std::size_t>(c)] ==
              static_cast<int>(std::ceil(0.1 * (100 + c))));

    auto idx3 = stratified_subsample(labels, 0.1, 43);
    CHECK(idx3 != idx1);

    // fraction 1.0 keeps everything exactly once
    auto all = stratified_subsample(labels, 1.0, 0);
    CHECK(all.size() == labels.size());

    CHECK_THROWS_AS(stratified_subsample(labels, 0.0, 0), config_error);
    CHECK_THROWS_AS(stratified_subsample(labels, 1.5, 0), config_error);
}

TEST_CASE("gather keeps images and labels aligned") {
    Eigen::MatrixXf imgs(2, 5);
    imgs << 0, 1, 2, 3, 4, 10, 11, 12, 13, 14;
    std::vector<int> labels{0, 1, 2, 3, 4};
    std::vector<Eigen::Index> idx{4, 0, 2};
    auto gi = gather_images(imgs, idx);
    auto gl = gather_labels(labels, idx);
    CHECK(gi.cols() == 3);
    CHECK(gi(0, 0) == 4.0f);
    CHECK(gi(0, 1) == 0.0f);
    CHECK(gl == std::vector<int>{4, 0, 2});
}

TEST_CASE("dataset validation catches inconsistencies") {
    DatasetHandle d;
    d.name = "toy";
    d.num_classes = 2;
    d.image_shape = {2, 2, 1};
    d.train_images = Eigen::MatrixXf::Constant(4, 3, 0.5f);
    d.train_labels = {0, 1, 0};
    d.test_images = Eigen::MatrixXf::Constant(4, 2, 0.5f);
    d.test_labels = {1, 0};
    CHECK_NOTHROW(d.validate());

    auto bad = d;
    bad.train_labels = {0, 1};
    CHECK_THROWS_AS(bad.validate(), data_error);
    bad = d;
    bad.test_labels = {1, 2};
    CHECK_THROWS_AS(bad.validate(), data_error);
    bad = d;
    bad.train_images(0, 0) = 1.5f;
    CHECK_THROWS_AS(bad.validate(), data_error);
}
