#include "dsn/run_manifest.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <random>

#include <nlohmann/json.hpp>

#include "dsn/common.hpp"

namespace dsn {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string make_run_id(const std::string& command) {
    std::random_device rd;
    char suffix[8];
    std::snprintf(suffix, sizeof(suffix), "%04x", rd() & 0xffff);
    std::string ts = utc_now_iso8601();
    for (char& c : ts)
        if (c == ':') c = '-';
    ts.pop_back();  // trailing 'Z'
    return ts + "-" + command + "-" + suffix;
}

}  // namespace

RunDirectory::RunDirectory(const std::string& runs_root, const std::string& command,
                           const std::string& run_id)
    : run_id_(run_id.empty() ? make_run_id(command) : run_id),
      command_(command),
      started_(utc_now_iso8601()) {
    dir_ = (fs::path(runs_root) / run_id_).string();
    fs::create_directories(checkpoints());
    fs::create_directories(metrics());
    fs::create_directories(reports());
    int fd = ::open((dir_ + "/lock").c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0)
        throw stage_error("run directory is locked by another writer: " + dir_);
    ::close(fd);
}

RunDirectory::~RunDirectory() {
    if (!finalized_) std::error_code ec;  // leave the lock for post-mortem on abnormal exit
}

void RunDirectory::snapshot_config(const std::string& text) {
    std::ofstream out(dir_ + "/config.snapshot");
    if (!out) throw missing_input_error("cannot write config snapshot in " + dir_);
    out << text;
}

void RunDirectory::record_seed(const std::string& role, std::uint64_t seed) {
    seeds_[role] = seed;
}

void RunDirectory::record_input(const std::string& path) {
    input_hashes_[path] = sha256_file_hex(path);
}

void RunDirectory::record_output(const std::string& path) {
    output_hashes_[path] = sha256_file_hex(path);
}

void RunDirectory::finalize() {
    json j;
    j["run_id"] = run_id_;
    j["command"] = command_;
    j["started"] = started_;
    j["finished"] = utc_now_iso8601();
    j["seeds"] = seeds_;
    j["input_hashes"] = input_hashes_;
    j["output_hashes"] = output_hashes_;
    std::string tmp = dir_ + "/manifest.json.tmp";
    {
        std::ofstream out(tmp);
        if (!out) throw missing_input_error("cannot write manifest in " + dir_);
        out << j.dump(2) << "\n";
    }
    fs::rename(tmp, dir_ + "/manifest.json");
    fs::remove(dir_ + "/lock");
    finalized_ = true;
}

}  // namespace dsn
