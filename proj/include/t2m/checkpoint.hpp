#pragma once

#include <map>
#include <string>
#include <vector>

#include "t2m/nn.hpp"

namespace t2m {

// Versioned binary container: JSON metadata blob plus name -> shape + f64
// values for every parameter and buffer. Layout in docs/formats.md.
struct Checkpoint {
    std::string meta_json;  // config snapshot, completed stage, seed
    std::map<std::string, std::pair<ad::Shape, std::vector<double>>> entries;

    static Checkpoint from_store(const nn::ParamStore& store, std::string meta_json);
    // Copies values into matching tensors; throws on missing names or shape
    // mismatches so a checkpoint never half-loads.
    void load_into(nn::ParamStore& store) const;
};

void write_checkpoint_file(const std::string& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint_file(const std::string& path);

}  // namespace t2m
