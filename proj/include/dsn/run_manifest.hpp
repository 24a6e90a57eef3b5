#pragma once

#include <map>
#include <string>

namespace dsn {

// Per-run artifact bookkeeping. Each CLI command owns one run directory:
//   <run_dir>/{manifest.json, config.snapshot, checkpoints/, metrics/, reports/}
// A lock file serializes writers; read-only commands never take the lock.
class RunDirectory {
public:
    // Creates the directory tree and takes the writer lock.
    RunDirectory(const std::string& runs_root, const std::string& command,
                 const std::string& run_id = "");
    ~RunDirectory();

    RunDirectory(const RunDirectory&) = delete;
    RunDirectory& operator=(const RunDirectory&) = delete;

    const std::string& path() const { return dir_; }
    const std::string& run_id() const { return run_id_; }
    std::string checkpoints() const { return dir_ + "/checkpoints"; }
    std::string metrics() const { return dir_ + "/metrics"; }
    std::string reports() const { return dir_ + "/reports"; }

    void snapshot_config(const std::string& resolved_config_text);
    void record_seed(const std::string& role, std::uint64_t seed);
    void record_input(const std::string& path);   // hashes the file
    void record_output(const std::string& path);  // hashes the file

    // Writes manifest.json atomically and releases the lock.
    void finalize();

private:
    std::string dir_;
    std::string run_id_;
    std::string command_;
    std::string started_;
    std::map<std::string, std::uint64_t> seeds_;
    std::map<std::string, std::string> input_hashes_;
    std::map<std::string, std::string> output_hashes_;
    bool finalized_ = false;
};

}  // namespace dsn
