#include "dsn/data.hpp"

#include <zlib.h>

#include <filesystem>
#include <fstream>

#include <httplib.h>

namespace dsn {

namespace fs = std::filesystem;

namespace {

// MNIST mirrors usually serve the canonical gzip names.
const std::vector<std::string> kMnistFiles = {
    "train-images-idx3-ubyte", "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"};

const std::vector<std::string> kGtsrbFiles = {
    "GTSRB_Final_Training_Images.zip", "GTSRB_Final_Test_Images.zip",
    "GTSRB_Final_Test_GT.zip"};

std::string gunzip(const std::string& gz) {
    z_stream zs{};
    if (inflateInit2(&zs, 16 + MAX_WBITS) != Z_OK)
        throw format_error("zlib init failed");
    zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(gz.data()));
    zs.avail_in = static_cast<uInt>(gz.size());
    std::string out;
    char buf[1 << 16];
    int ret;
    do {
        zs.next_out = reinterpret_cast<Bytef*>(buf);
        zs.avail_out = sizeof(buf);
        ret = inflate(&zs, Z_NO_FLUSH);
        if (ret != Z_OK && ret != Z_STREAM_END) {
            inflateEnd(&zs);
            throw format_error("gzip payload is corrupt");
        }
        out.append(buf, sizeof(buf) - zs.avail_out);
    } while (ret != Z_STREAM_END);
    inflateEnd(&zs);
    return out;
}

void write_file(const fs::path& path, const std::string& body) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw missing_input_error("cannot write " + path.string());
    out.write(body.data(), static_cast<std::streamsize>(body.size()));
}

}  // namespace

void fetch_dataset(const std::string& name, const std::string& root_path,
                   const std::string& base_url) {
    std::vector<std::string> files;
    if (name == "mnist")
        files = kMnistFiles;
    else if (name == "gtsrb")
        files = kGtsrbFiles;
    else
        throw missing_input_error("unknown dataset: " + name);

    auto slash = base_url.find('/', base_url.find("//") + 2);
    std::string host = base_url.substr(0, slash == std::string::npos ? base_url.size() : slash);
    std::string prefix = slash == std::string::npos ? "" : base_url.substr(slash);
    httplib::Client client(host);
    client.set_follow_location(true);
    client.set_read_timeout(120, 0);

    fs::path dir = fs::path(root_path) / name;
    fs::create_directories(dir);

    for (const auto& f : files) {
        fs::path target = dir / f;
        if (fs::exists(target)) continue;
        auto res = client.Get(prefix + "/" + f);
        if (res && res->status == 200) {
            write_file(target, res->body);
            continue;
        }
        auto gz = client.Get(prefix + "/" + f + ".gz");
        if (gz && gz->status == 200) {
            write_file(target, gunzip(gz->body));
            continue;
        }
        throw missing_input_error("download failed for " + f + " from " + base_url);
    }
}

}  // namespace dsn
