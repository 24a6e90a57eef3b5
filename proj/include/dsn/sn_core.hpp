#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dsn/common.hpp"

namespace dsn {

// Owner identity plus a handle to the signing key. The private key lives in a
// PEM file referenced by path; it is never copied into model artifacts.
struct OwnerIdentity {
    std::string owner_name;
    std::string timestamp;    // ISO-8601 UTC
    std::string keypair_ref;  // path to an Ed25519 private key PEM

    void validate() const;
};

struct PatternDerivation {
    std::string hash_algorithm = "sha256";
    int rows = 0;
    int cols = 0;
    int anchor_row = 0;
    int anchor_col = 0;
};

// The distributable serial-number certificate: binds the pattern to the
// owner's signature so provenance can be checked without the private key.
struct SignatureRecord {
    std::string verifier;  // owner_name + "|" + timestamp
    std::vector<std::uint8_t> signature;
    std::vector<std::uint8_t> public_key;  // raw Ed25519 public key (32 bytes)
    PatternDerivation derivation;
    std::string pattern_bits;  // '0'/'1' row-major, len rows*cols

    std::string to_json() const;
    static SignatureRecord from_json(const std::string& text);
    void save(const std::string& path) const;
    static SignatureRecord load(const std::string& path);

    // Content hash used to reference this record from model manifests.
    std::string content_hash() const;
};

// A trit grid stamped at a fixed anchor. Cells are 1, 0 or -1; -1 leaves the
// underlying pixel untouched. Conceptually the pattern extends to a full-image
// grid that is -1 everywhere outside the block.
struct SNPattern {
    Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic> block;  // values in {-1,0,1}
    int anchor_row = 0;
    int anchor_col = 0;

    int rows() const { return static_cast<int>(block.rows()); }
    int cols() const { return static_cast<int>(block.cols()); }
    int active_cells() const;
    void validate() const;
    std::string bits() const;  // '0'/'1'/'-' row-major

    // Nearest-neighbor cell replication by an integer factor, for
    // high-resolution deployments. Anchor scales with the factor.
    SNPattern upscaled(int factor) const;

    bool operator==(const SNPattern&) const = default;
};

// A batch of images, one flattened CHW image per column, pixels in [0,1].
struct StampedBatch {
    Eigen::MatrixXf images;  // (c*h*w, batch)
    int height = 0;
    int width = 0;
    int channels = 1;
    std::optional<SNPattern> pattern_applied;
};

// Key management (Ed25519; deterministic signatures).
void generate_keypair_pem(const std::string& private_key_path);
std::vector<std::uint8_t> public_key_of(const std::string& private_key_path);

std::vector<std::uint8_t> sign_message(const std::string& private_key_path,
                                       const std::string& message);
bool verify_message(const std::vector<std::uint8_t>& public_key_raw,
                    const std::string& message,
                    const std::vector<std::uint8_t>& signature);

// Derive the SN pattern and its certificate from an owner identity.
// bits = leading rows*cols bits of sha256(signature), row-major; every cell of
// the generated block is active.
std::pair<SNPattern, SignatureRecord> generate_serial(
    const OwnerIdentity& identity, int rows, int cols, std::pair<int, int> anchor,
    std::optional<std::pair<int, int>> target_image_hw = std::nullopt);

// Re-derive the pattern block from a certificate's signature bytes.
SNPattern pattern_from_record(const SignatureRecord& record);

// Pixelwise stamp: 1 where the trit is 1, 0 where it is 0, untouched where -1.
// Applied identically to every channel. Pure; the input batch is not mutated.
StampedBatch stamp(const StampedBatch& images, const SNPattern& pattern);

// Signature check plus derivation check (the recorded bits must equal the bits
// re-derived from the signature).
bool verify_signature(const SignatureRecord& record);

// Flip exactly n_flips active cells (0<->1), chosen by a seeded RNG. Produces
// near-miss serial numbers for reliability experiments.
SNPattern perturb_pattern(const SNPattern& pattern, int n_flips, std::uint64_t rng_seed);

}  // namespace dsn
