#pragma once

#include <zlib.h>

#include <cstdint>
#include <span>
#include <vector>

#include "support.hpp"
#include "tinyfit/nn/model.hpp"
#include "tinyfit/quant.hpp"

namespace tinyfit::test {

/// A packaged random-init model; calibration windows are Gaussian noise.
inline quant::ModelBundle random_bundle(int classes, std::uint64_t seed, std::uint32_t version = 1) {
  auto m = nn::init_model<double>(class_names(classes), seed);
  Rng rng(seed + 99);
  for (auto& l : m.params.layers)
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias[i] = rng.uniform(-0.05, 0.05);
  std::vector<Window> calib(32);
  for (auto& w : calib)
    for (Eigen::Index i = 0; i < w.data.size(); ++i) w.data.data()[i] = static_cast<float>(rng.normal());
  ChannelStats st;
  for (int c = 0; c < kChannels; ++c) {
    st.mean[c] = static_cast<float>(rng.uniform(-1, 1));
    st.std[c] = static_cast<float>(rng.uniform(0.5, 2));
  }
  quant::PackageOptions po;
  po.version = version;
  po.seed = seed;
  return quant::package_model(m, st, calib, po);
}

/// IEEE CRC32 from zlib, independent of the library's own implementation.
inline std::uint32_t zlib_crc(std::span<const std::uint8_t> bytes) {
  return static_cast<std::uint32_t>(::crc32(0L, bytes.data(), static_cast<uInt>(bytes.size())));
}

/// Rewrites the footer so the CRC matches the (possibly edited) body.
inline void reseal(std::vector<std::uint8_t>& bytes) {
  const std::uint32_t crc = zlib_crc(std::span(bytes).first(bytes.size() - 4));
  for (int i = 0; i < 4; ++i) bytes[bytes.size() - 4 + static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(crc >> (8 * i));
}

}  // namespace tinyfit::test
