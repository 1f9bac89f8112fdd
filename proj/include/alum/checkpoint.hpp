// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint container. Layout, all integers little-endian:
//
//   "ALUMCKPT" u32 version
//   str  model config (JSON)
//   str  vocabulary (vocab file text)
//   u32  tensor count, then per tensor: str name, u32 rank, u64 dims[rank],
//        f32 data[numel]
//   u8   has_state; if 1: u64 step, u64 adam_t, tensor block m, tensor block v
//
// where str is u64 length + bytes. Tensors are written in name order, so the
// same model always produces the same bytes.
#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "alum/model.hpp"
#include "alum/optim.hpp"
#include "alum/vocab.hpp"

namespace alum {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Optimizer position needed to resume a run.
struct TrainState {
    std::uint64_t step = 0;
    AdamState adam;

    bool operator==(const TrainState&) const = default;
};

struct Checkpoint {
    ModelConfig model;
    Vocab vocab;
    Parameters params;
    std::optional<TrainState> state;
};

std::string model_config_json(const ModelConfig& cfg);
ModelConfig parse_model_config_json(const std::string& text);

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(const std::string& bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
/// Throws input-not-found for a missing file and invalid-input for a
/// malformed or inconsistent one.
Checkpoint load_checkpoint(const std::filesystem::path& path);

} // namespace alum
