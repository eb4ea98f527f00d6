#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "exfilscope/model.hpp"
#include "exfilscope/train.hpp"

namespace exfilscope {

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Checkpoint {
    ModelConfig config;
    std::vector<std::string> class_names;
    NormStats norm;
    std::vector<double> params;
};

// Versioned text format; doubles are stored as hexfloats so a load is
// bit-exact.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace exfilscope
