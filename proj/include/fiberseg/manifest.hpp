#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace fiberseg {

// Provenance record written by every file-producing CLI run; a run is
// reproducible from its manifest (command + resolved config + seed + input
// digests).
struct RunManifest {
    std::string command;
    std::vector<std::string> argv;
    std::map<std::string, std::string> config;
    std::uint64_t seed = 0;
    std::vector<std::pair<std::string, std::string>> inputs;  // path, sha256
    std::string tool_version;
    double duration_seconds = 0.0;
};

std::string sha256_hex(const unsigned char* data, std::size_t len);
std::string sha256_file(const std::string& path);

std::string manifest_to_json_string(const RunManifest& m);
void write_manifest_file(const RunManifest& m, const std::string& path);

}  // namespace fiberseg
