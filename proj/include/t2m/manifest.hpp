#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace t2m {

// Every CLI run writes a manifest next to its outputs: command, config
// snapshot, seed, content hash of the inputs, output paths.
struct RunManifest {
    std::string command;
    std::string config_json;
    uint64_t seed = 0;
    std::string input_hash;  // hex FNV-1a over input file bytes
    std::vector<std::string> outputs;
    std::vector<std::string> warnings;

    void save(const std::string& path) const;
};

uint64_t fnv1a64(const void* data, size_t size, uint64_t h = 0xcbf29ce484222325ULL);
// Combined content hash of a list of files (missing files hash their name only).
std::string hash_files(const std::vector<std::string>& paths);

}  // namespace t2m
