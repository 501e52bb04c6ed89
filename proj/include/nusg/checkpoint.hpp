#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "nusg/model.hpp"

namespace nusg {

// Layout (little-endian): "NUSG", u32 version, u32 entry count, then per
// entry u16 name length, name bytes, u8 dtype (0 = f32), u8 rank, u32 dims,
// raw values.
inline constexpr uint32_t kCheckpointVersion = 1;

struct CheckpointEntry {
    std::string name;
    Shape shape;
    std::vector<float> values;
};

std::vector<CheckpointEntry> snapshot(const nn::StateList<float>& state);

std::string encode_checkpoint(const std::vector<CheckpointEntry>& entries);
std::vector<CheckpointEntry> decode_checkpoint(const std::string& bytes);

/// Writes to a sibling temporary file and renames it into place, so a reader
/// never observes a half-written checkpoint.
void save_checkpoint(const std::filesystem::path& path, const nn::StateList<float>& state);
std::vector<CheckpointEntry> load_checkpoint(const std::filesystem::path& path);

/// Copies values into `state`. Names and shapes must match entry for entry;
/// otherwise throws naming the first mismatching tensor.
void apply_checkpoint(const std::vector<CheckpointEntry>& entries, nn::StateList<float>& state);

/// Infers the architecture from the tensor names and shapes.
Arch detect_arch(const std::vector<CheckpointEntry>& entries);

/// Loads a checkpoint into a freshly built model. With `arch` unset the
/// architecture is detected; when set, a mismatch is rejected.
Model<float> load_model(const std::filesystem::path& path, std::optional<Arch> arch = std::nullopt);

}  // namespace nusg
