#include "dsn/sn_core.hpp"

#include <openssl/evp.h>
#include <openssl/pem.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <memory>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

namespace dsn {

using nlohmann::json;

namespace {

struct EvpPkeyDeleter {
    void operator()(EVP_PKEY* p) const { EVP_PKEY_free(p); }
};
using PkeyPtr = std::unique_ptr<EVP_PKEY, EvpPkeyDeleter>;

PkeyPtr load_private_key(const std::string& path) {
    if (!std::filesystem::exists(path))
        throw missing_input_error("signing key not found: " + path);
    std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "r"), &std::fclose);
    if (!fp) throw missing_input_error("cannot open signing key: " + path);
    EVP_PKEY* raw = PEM_read_PrivateKey(fp.get(), nullptr, nullptr, nullptr);
    if (!raw) throw key_error("cannot parse private key PEM: " + path);
    if (EVP_PKEY_id(raw) != EVP_PKEY_ED25519) {
        EVP_PKEY_free(raw);
        throw key_error("signing key is not Ed25519: " + path);
    }
    return PkeyPtr(raw);
}

}  // namespace

void OwnerIdentity::validate() const {
    if (owner_name.empty()) throw config_error("owner_name must be non-empty");
    if (!looks_like_iso8601(timestamp))
        throw config_error("timestamp is not valid ISO-8601: '" + timestamp + "'");
}

void generate_keypair_pem(const std::string& private_key_path) {
    EVP_PKEY_CTX* ctx = EVP_PKEY_CTX_new_id(EVP_PKEY_ED25519, nullptr);
    EVP_PKEY* pkey = nullptr;
    if (!ctx || EVP_PKEY_keygen_init(ctx) <= 0 || EVP_PKEY_keygen(ctx, &pkey) <= 0)
        throw key_error("Ed25519 keypair generation failed");
    EVP_PKEY_CTX_free(ctx);
    PkeyPtr key(pkey);

    std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(private_key_path.c_str(), "w"),
                                             &std::fclose);
    if (!fp) throw missing_input_error("cannot write key file: " + private_key_path);
    if (!PEM_write_PrivateKey(fp.get(), key.get(), nullptr, nullptr, 0, nullptr, nullptr))
        throw key_error("cannot serialize private key PEM");
}

std::vector<std::uint8_t> public_key_of(const std::string& private_key_path) {
    auto key = load_private_key(private_key_path);
    std::size_t len = 0;
    EVP_PKEY_get_raw_public_key(key.get(), nullptr, &len);
    std::vector<std::uint8_t> pub(len);
    if (EVP_PKEY_get_raw_public_key(key.get(), pub.data(), &len) <= 0)
        throw key_error("cannot extract raw public key");
    pub.resize(len);
    return pub;
}

std::vector<std::uint8_t> sign_message(const std::string& private_key_path,
                                       const std::string& message) {
    auto key = load_private_key(private_key_path);
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    std::vector<std::uint8_t> sig(64);
    std::size_t siglen = sig.size();
    int ok = EVP_DigestSignInit(ctx, nullptr, nullptr, nullptr, key.get()) > 0 &&
             EVP_DigestSign(ctx, sig.data(), &siglen,
                            reinterpret_cast<const unsigned char*>(message.data()),
                            message.size()) > 0;
    EVP_MD_CTX_free(ctx);
    if (!ok) throw key_error("signing failed");
    sig.resize(siglen);
    return sig;
}

bool verify_message(const std::vector<std::uint8_t>& public_key_raw,
                    const std::string& message,
                    const std::vector<std::uint8_t>& signature) {
    if (public_key_raw.size() != 32)
        throw format_error("Ed25519 public key must be 32 bytes");
    if (signature.size() != 64)
        throw format_error("Ed25519 signature must be 64 bytes");
    EVP_PKEY* raw = EVP_PKEY_new_raw_public_key(EVP_PKEY_ED25519, nullptr,
                                                public_key_raw.data(), public_key_raw.size());
    if (!raw) throw format_error("malformed public key bytes");
    PkeyPtr key(raw);
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    bool ok = EVP_DigestVerifyInit(ctx, nullptr, nullptr, nullptr, key.get()) > 0 &&
              EVP_DigestVerify(ctx, signature.data(), signature.size(),
                               reinterpret_cast<const unsigned char*>(message.data()),
                               message.size()) == 1;
    EVP_MD_CTX_free(ctx);
    return ok;
}

int SNPattern::active_cells() const {
    int n = 0;
    for (Eigen::Index i = 0; i < block.size(); ++i)
        if (block.data()[i] != -1) ++n;
    return n;
}

void SNPattern::validate() const {
    if (block.size() == 0) throw geometry_error("pattern block is empty");
    for (Eigen::Index i = 0; i < block.size(); ++i) {
        int v = block.data()[i];
        if (v != -1 && v != 0 && v != 1)
            throw domain_error_("pattern trit outside {-1,0,1}");
    }
    if (active_cells() == 0)
        throw domain_error_("pattern has no active cell");
    if (anchor_row < 0 || anchor_col < 0)
        throw geometry_error("pattern anchor must be non-negative");
}

std::string SNPattern::bits() const {
    std::string s;
    s.reserve(static_cast<std::size_t>(block.size()));
    for (int i = 0; i < rows(); ++i)
        for (int j = 0; j < cols(); ++j) {
            int v = block(i, j);
            s.push_back(v == -1 ? '-' : static_cast<char>('0' + v));
        }
    return s;
}

SNPattern SNPattern::upscaled(int factor) const {
    if (factor < 1) throw config_error("upscale factor must be >= 1");
    SNPattern out;
    out.block.resize(rows() * factor, cols() * factor);
    for (int i = 0; i < out.block.rows(); ++i)
        for (int j = 0; j < out.block.cols(); ++j)
            out.block(i, j) = block(i / factor, j / factor);
    out.anchor_row = anchor_row * factor;
    out.anchor_col = anchor_col * factor;
    return out;
}

namespace {

SNPattern derive_pattern(const std::vector<std::uint8_t>& signature,
                         const PatternDerivation& d) {
    if (d.hash_algorithm != "sha256")
        throw format_error("unsupported hash algorithm: " + d.hash_algorithm);
    auto digest = sha256(signature.data(), signature.size());
    int n = d.rows * d.cols;
    if (n > static_cast<int>(digest.size() * 8))
        throw config_error("pattern larger than hash output");
    SNPattern p;
    p.block.resize(d.rows, d.cols);
    for (int i = 0; i < d.rows; ++i)
        for (int j = 0; j < d.cols; ++j) {
            int idx = i * d.cols + j;
            int bit = (digest[static_cast<std::size_t>(idx / 8)] >> (7 - idx % 8)) & 1;
            p.block(i, j) = bit;
        }
    p.anchor_row = d.anchor_row;
    p.anchor_col = d.anchor_col;
    return p;
}

}  // namespace

std::pair<SNPattern, SignatureRecord> generate_serial(
    const OwnerIdentity& identity, int rows, int cols, std::pair<int, int> anchor,
    std::optional<std::pair<int, int>> target_image_hw) {
    identity.validate();
    if (rows < 1 || cols < 1) throw config_error("pattern must have rows*cols >= 1");
    if (anchor.first < 0 || anchor.second < 0)
        throw geometry_error("anchor must be non-negative");
    if (target_image_hw) {
        if (anchor.first + rows > target_image_hw->first ||
            anchor.second + cols > target_image_hw->second)
            throw geometry_error("pattern at anchor exceeds declared image bounds");
    }

    SignatureRecord record;
    record.verifier = identity.owner_name + "|" + identity.timestamp;
    record.signature = sign_message(identity.keypair_ref, record.verifier);
    record.public_key = public_key_of(identity.keypair_ref);
    record.derivation = {"sha256", rows, cols, anchor.first, anchor.second};

    SNPattern pattern = derive_pattern(record.signature, record.derivation);
    record.pattern_bits = pattern.bits();
    return {pattern, record};
}

SNPattern pattern_from_record(const SignatureRecord& record) {
    return derive_pattern(record.signature, record.derivation);
}

StampedBatch stamp(const StampedBatch& batch, const SNPattern& pattern) {
    pattern.validate();
    const int h = batch.height, w = batch.width, c = batch.channels;
    if (h <= 0 || w <= 0 || c <= 0 ||
        batch.images.rows() != static_cast<Eigen::Index>(h) * w * c)
        throw shape_error("batch image shape inconsistent with buffer");
    if (pattern.anchor_row + pattern.rows() > h || pattern.anchor_col + pattern.cols() > w)
        throw geometry_error("pattern exceeds image bounds at anchor");
    if ((batch.images.array() < 0.0f).any() || (batch.images.array() > 1.0f).any())
        throw domain_error_("input pixels must be normalized to [0,1]");

    StampedBatch out = batch;
    for (int i = 0; i < pattern.rows(); ++i)
        for (int j = 0; j < pattern.cols(); ++j) {
            int trit = pattern.block(i, j);
            if (trit == -1) continue;
            int pi = pattern.anchor_row + i;
            int pj = pattern.anchor_col + j;
            for (int ch = 0; ch < c; ++ch) {
                Eigen::Index row = (static_cast<Eigen::Index>(ch) * h + pi) * w + pj;
                out.images.row(row).setConstant(static_cast<float>(trit));
            }
        }
    out.pattern_applied = pattern;
    return out;
}

bool verify_signature(const SignatureRecord& record) {
    if (record.derivation.rows * record.derivation.cols < 1)
        throw format_error("record derivation geometry invalid");
    if (!verify_message(record.public_key, record.verifier, record.signature))
        return false;
    return pattern_from_record(record).bits() == record.pattern_bits;
}

SNPattern perturb_pattern(const SNPattern& pattern, int n_flips, std::uint64_t rng_seed) {
    pattern.validate();
    std::vector<int> active;
    for (int i = 0; i < pattern.rows(); ++i)
        for (int j = 0; j < pattern.cols(); ++j)
            if (pattern.block(i, j) != -1) active.push_back(i * pattern.cols() + j);
    if (n_flips < 0 || n_flips > static_cast<int>(active.size()))
        throw config_error("n_flips exceeds active cell count");

    std::mt19937_64 rng(rng_seed);
    std::shuffle(active.begin(), active.end(), rng);
    SNPattern out = pattern;
    for (int k = 0; k < n_flips; ++k) {
        int i = active[static_cast<std::size_t>(k)] / pattern.cols();
        int j = active[static_cast<std::size_t>(k)] % pattern.cols();
        out.block(i, j) = 1 - out.block(i, j);
    }
    return out;
}

std::string SignatureRecord::to_json() const {
    json j;
    j["verifier"] = verifier;
    j["signature_b64"] = base64_encode(signature);
    j["public_key_b64"] = base64_encode(public_key);
    j["hash_algorithm"] = derivation.hash_algorithm;
    j["rows"] = derivation.rows;
    j["cols"] = derivation.cols;
    j["anchor_row"] = derivation.anchor_row;
    j["anchor_col"] = derivation.anchor_col;
    j["pattern_bits"] = pattern_bits;
    return j.dump(2);
}

SignatureRecord SignatureRecord::from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw format_error(std::string("certificate is not valid JSON: ") + e.what());
    }
    try {
        SignatureRecord r;
        r.verifier = j.at("verifier").get<std::string>();
        r.signature = base64_decode(j.at("signature_b64").get<std::string>());
        r.public_key = base64_decode(j.at("public_key_b64").get<std::string>());
        r.derivation.hash_algorithm = j.at("hash_algorithm").get<std::string>();
        r.derivation.rows = j.at("rows").get<int>();
        r.derivation.cols = j.at("cols").get<int>();
        r.derivation.anchor_row = j.at("anchor_row").get<int>();
        r.derivation.anchor_col = j.at("anchor_col").get<int>();
        r.pattern_bits = j.at("pattern_bits").get<std::string>();
        return r;
    } catch (const json::exception& e) {
        throw format_error(std::string("certificate missing field: ") + e.what());
    }
}

void SignatureRecord::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw missing_input_error("cannot write certificate: " + path);
    out << to_json() << "\n";
}

SignatureRecord SignatureRecord::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw missing_input_error("certificate not found: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return from_json(ss.str());
}

std::string SignatureRecord::content_hash() const {
    return sha256_hex(to_json());
}

}  // namespace dsn
