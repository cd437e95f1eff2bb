#include "fiberseg/manifest.hpp"

#include <fstream>
#include <vector>

#include <json.hpp>
#include <openssl/evp.h>

#include "fiberseg/errors.hpp"

namespace fiberseg {

std::string sha256_hex(const unsigned char* data, std::size_t len) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int digest_len = 0;
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1 ||
        EVP_DigestUpdate(ctx, data, len) != 1 ||
        EVP_DigestFinal_ex(ctx, digest, &digest_len) != 1) {
        EVP_MD_CTX_free(ctx);
        throw NumericalError("sha256 failed");
    }
    EVP_MD_CTX_free(ctx);

    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(2 * digest_len);
    for (unsigned int i = 0; i < digest_len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0xf]);
    }
    return out;
}

std::string sha256_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open for digest: " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
    return sha256_hex(bytes.data(), bytes.size());
}

std::string manifest_to_json_string(const RunManifest& m) {
    nlohmann::json j;
    j["command"] = m.command;
    j["argv"] = m.argv;
    j["config"] = m.config;
    j["seed"] = m.seed;
    nlohmann::json inputs = nlohmann::json::array();
    for (const auto& [path, digest] : m.inputs)
        inputs.push_back({{"path", path}, {"sha256", digest}});
    j["inputs"] = inputs;
    j["tool_version"] = m.tool_version;
    j["duration_seconds"] = m.duration_seconds;
    return j.dump(2) + "\n";
}

void write_manifest_file(const RunManifest& m, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write manifest: " + path);
    out << manifest_to_json_string(m);
}

}  // namespace fiberseg
