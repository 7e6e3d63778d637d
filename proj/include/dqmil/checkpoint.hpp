#pragma once

#include "dqmil/model.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace dqmil {

/// Checkpoint layout (all integers little-endian):
///
///   "DQML" | u16 version | u32 config length | config JSON
///   u32 tensor count
///   per tensor: u32 name length | name | u32 rank | u32 extent * rank | f32 * size
///
/// Values are always stored at 32-bit precision.
inline constexpr std::uint16_t kCheckpointVersion = 1;

template <typename T>
std::vector<std::uint8_t> serialize_checkpoint(const DQModel<T>& model);

/// Rebuilds the model from the embedded config, then loads every tensor.
template <typename T>
DQModel<T> deserialize_checkpoint(std::span<const std::uint8_t> bytes);

template <typename T>
void save_checkpoint(const DQModel<T>& model, const std::filesystem::path& path);

template <typename T>
DQModel<T> load_checkpoint(const std::filesystem::path& path);

} // namespace dqmil
