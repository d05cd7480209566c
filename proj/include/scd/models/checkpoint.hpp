#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "scd/models/config.hpp"
#include "scd/models/student.hpp"

// On-disk layout: one line of JSON
//   {"format_version":1,"architecture":...,"config":{...},
//    "parameters":[{"name":...,"shape":[...],"byte_offset":...}, ...]}
// then '\n', then every parameter as little-endian float32, in header order.
// Byte offsets are relative to the first byte after the newline.
namespace scd::models {

inline constexpr int kCheckpointFormatVersion = 1;

struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::uint64_t byte_offset = 0;
};

struct CheckpointHeader {
  int format_version = kCheckpointFormatVersion;
  ModelConfig config;
  std::vector<CheckpointEntry> parameters;
};

template <typename T>
void save_checkpoint(const StudentModel<T>& model, const std::filesystem::path& path);

// Throws LoadError on unreadable, truncated or version-mismatched files.
CheckpointHeader read_checkpoint_header(const std::filesystem::path& path);

// Rebuilds the model from the stored config and checks that every stored
// name and shape matches the architecture (LoadError otherwise).
template <typename T>
StudentModel<T> load_checkpoint(const std::filesystem::path& path);

// Copies every "backbone.*" tensor of the checkpoint into `model` by name.
// Missing names or shape mismatches throw LoadError.
template <typename T>
void load_backbone_weights(StudentModel<T>& model, const std::filesystem::path& path);

}  // namespace scd::models
