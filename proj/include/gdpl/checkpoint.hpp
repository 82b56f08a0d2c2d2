#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "gdpl/tensor.hpp"

namespace gdpl {

/// Missing, unreadable or unwritable checkpoint files.
struct CheckpointIoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A readable checkpoint whose contents disagree with the model (names,
/// shapes or hashes).
struct CheckpointMismatch : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::uint64_t fnv1a(const void* data, std::size_t bytes);

/// Writes `dir/<group>.bin` (raw little-endian doubles, tensors back to back)
/// and records every tensor's name, shape, offset and hash under `group` in
/// `dir/manifest.json`. Other groups already in the manifest are kept.
void save_group(const std::filesystem::path& dir, const std::string& group, const std::vector<Tensor>& tensors,
                const std::string& note = "");

/// Loads values into `tensors` in place. Names and shapes must match the
/// manifest entry by entry and every payload must hash to the recorded value.
void load_group(const std::filesystem::path& dir, const std::string& group, const std::vector<Tensor>& tensors);

bool has_group(const std::filesystem::path& dir, const std::string& group);
/// The free-form note stored with a group ("" when absent).
std::string group_note(const std::filesystem::path& dir, const std::string& group);

}  // namespace gdpl
