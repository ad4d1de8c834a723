#include "t2m/manifest.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace t2m {

using nlohmann::json;

void RunManifest::save(const std::string& path) const {
    json j;
    j["command"] = command;
    j["seed"] = seed;
    j["input_hash"] = input_hash;
    j["outputs"] = outputs;
    j["warnings"] = warnings;
    j["config"] = config_json.empty() ? json(nullptr) : json::parse(config_json);
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write manifest: " + path);
    out << j.dump(2) << "\n";
}

uint64_t fnv1a64(const void* data, size_t size, uint64_t h) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < size; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hash_files(const std::vector<std::string>& paths) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (const std::string& path : paths) {
        h = fnv1a64(path.data(), path.size(), h);
        std::ifstream in(path, std::ios::binary);
        if (!in) continue;
        char buf[65536];
        while (in.read(buf, sizeof(buf)) || in.gcount() > 0)
            h = fnv1a64(buf, static_cast<size_t>(in.gcount()), h);
    }
    std::ostringstream out;
    out << std::hex << h;
    return out.str();
}

}  // namespace t2m
