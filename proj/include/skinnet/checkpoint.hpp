#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

#include "skinnet/network.hpp"

namespace skinnet {

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Binary layout, little-endian throughout:
///   "SKNT" | u32 version (1) | u32 tensor count |
///   per tensor: u32 name length | name bytes | u32 rank | u32 dims[rank] | f32 data[numel]
/// Tensors are written in parameter-name order.
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Sidecar path holding the ModelSpec as JSON: "<checkpoint>.json".
std::filesystem::path sidecar_path(const std::filesystem::path& checkpoint);

/// Writes the checkpoint and its sidecar. `extra` is merged into the sidecar
/// JSON object (e.g. the input normalization mode); it must be a JSON object
/// string or empty.
void save_checkpoint(const std::filesystem::path& path, const Model<float>& model, const std::string& extra = "");

/// Reads the sidecar, rebuilds the architecture and fills its parameters.
/// Names and shapes must match the architecture exactly.
Model<float> load_checkpoint(const std::filesystem::path& path);

/// The sidecar JSON as text.
std::string read_sidecar(const std::filesystem::path& checkpoint);

std::string model_spec_to_json(const ModelSpec& spec);
ModelSpec model_spec_from_json(const std::string& text);

}  // namespace skinnet
