#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace dsn {

// Error taxonomy. The CLI maps these onto its documented exit codes;
// library callers can catch the base type.
struct error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct config_error : error { using error::error; };     // bad option / config value
struct missing_input_error : error { using error::error; }; // absent file, key, dataset
struct stage_error : error { using error::error; };      // wrong bundle stage
struct training_error : error { using error::error; };   // divergence etc.
struct geometry_error : error { using error::error; };   // pattern / image bounds
struct domain_error_ : error { using error::error; };    // values outside contract
struct format_error : error { using error::error; };     // malformed bytes on disk
struct data_error : error { using error::error; };       // labels / splits inconsistent
struct key_error : error { using error::error; };        // signing key problems
struct shape_error : error { using error::error; };      // tensor shape mismatch

// SHA-256 helpers (thin wrappers over OpenSSL).
std::vector<std::uint8_t> sha256(const void* data, std::size_t len);
std::string sha256_hex(const void* data, std::size_t len);
std::string sha256_hex(const std::string& s);
std::string sha256_file_hex(const std::string& path);

std::string base64_encode(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> base64_decode(const std::string& text);

// One master seed fans out to per-role seeds. The rule is
// seed(role) = first 8 bytes (big-endian) of SHA-256("dsn-seed:" + role + ":" + master).
std::uint64_t split_seed(std::uint64_t master_seed, const std::string& role);

// ISO-8601 UTC timestamp for "now", e.g. "2021-04-07T12:00:00Z".
std::string utc_now_iso8601();
bool looks_like_iso8601(const std::string& ts);

}  // namespace dsn
