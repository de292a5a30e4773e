#pragma once

#include <string>
#include <vector>

#include "loadcast/tensor.hpp"

namespace loadcast {

/// Serialized model snapshot: kind tag, free-form config string (JSON by
/// convention), and named parameter tensors. The binary format round-trips
/// 64-bit floats losslessly.
struct Checkpoint {
    std::string kind;
    std::string config_json;
    std::vector<ad::NamedTensor> params;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace loadcast
