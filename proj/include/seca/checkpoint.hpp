#pragma once

// Checkpoint container (little-endian):
//   "SECA-CKPT"       9 bytes
//   format_version    u32
//   section_count     u32
//   section_count x { name_len u32, name, payload_len u64, payload }
// Sections: config, registry, encoder, prompts, adapter, previous_adapter,
// pool, projectors, affinity, prototypes, centroids, linear, replay,
// optimizer, progress.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "seca/trainer.hpp"

namespace seca {

constexpr char kCheckpointMagic[9] = {'S', 'E', 'C', 'A', '-', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<unsigned char> serialize_state(const TrainState& state);
TrainState deserialize_state(const std::vector<unsigned char>& bytes);

/// Written to a temporary sibling, then renamed over `path`.
void save_checkpoint(const std::filesystem::path& path, const TrainState& state);
TrainState load_checkpoint(const std::filesystem::path& path);

/// Writes `bytes` to a temporary sibling of `path`, then renames it.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);

}  // namespace seca
