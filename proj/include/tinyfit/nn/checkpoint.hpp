#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tinyfit/nn/model.hpp"
#include "tinyfit/signal.hpp"

namespace tinyfit::nn {

/// Float checkpoint handed from training to packaging. Layout (little-endian):
/// "TFLT", u16 format version, u16 class count, u8-prefixed class names,
/// every parameter as f32 in flatten() order, then 12 f32 of channel
/// statistics (6 means, 6 standard deviations).
inline constexpr std::uint16_t kCheckpointVersion = 1;

struct Checkpoint {
  CnnModel<double> model;
  ChannelStats stats;
};

std::vector<std::uint8_t> encode_checkpoint(const CnnModel<double>& model, const ChannelStats& stats);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::string& path, const CnnModel<double>& model, const ChannelStats& stats);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace tinyfit::nn
