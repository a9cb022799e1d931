#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <string_view>

#include "tinyfit/quant.hpp"
#include "tinyfit/signal.hpp"

namespace tinyfit::runtime {

inline constexpr std::size_t kDefaultArenaBytes = 64 * 1024;
inline constexpr std::size_t kMaxArenaBytes = 320 * 1024;  // target MCU SRAM
inline constexpr std::size_t kMaxLayers = 8;

/// Fixed-capacity bump allocator. Storage is reserved once at construction;
/// nothing is returned to it except by reset().
class Arena {
 public:
  explicit Arena(std::size_t capacity = kDefaultArenaBytes);

  std::uint8_t* allocate(std::size_t bytes, std::size_t align = 16);
  void reset() noexcept { used_ = 0; }

  std::size_t capacity() const noexcept { return capacity_; }
  std::size_t used() const noexcept { return used_; }
  std::size_t high_water() const noexcept { return high_water_; }
  /// Bytes a sequence of allocations would take, including alignment padding.
  static std::size_t aligned(std::size_t bytes, std::size_t align = 16) noexcept {
    return (bytes + align - 1) / align * align;
  }

 private:
  std::size_t capacity_;
  std::unique_ptr<std::uint8_t[]> storage_;
  std::size_t used_ = 0;
  std::size_t high_water_ = 0;
};

/// Class label copied out of the arena, so results outlive model swaps
/// without heap allocation.
class ClassName {
 public:
  void assign(std::string_view s) noexcept;
  std::string_view view() const noexcept { return {buf_.data(), len_}; }
  std::string str() const { return std::string(view()); }

 private:
  std::array<char, 256> buf_{};
  std::size_t len_ = 0;
};

struct InferenceResult {
  int class_id = -1;
  ClassName class_name;
  float confidence = 0.0f;
  double latency_us = 0.0;
  std::uint32_t model_version = 0;
  std::uint64_t macs = 0;
};

struct ArenaReport {
  std::size_t model_bytes = 0;    // resident bundle payload
  std::size_t scratch_bytes = 0;  // activation buffers + logits
  std::size_t high_water = 0;
};

/// Integer-only interpreter for TBND bundles. load() and infer() are
/// mutually exclusive; a failed load leaves the previous model untouched.
class MicroEngine {
 public:
  explicit MicroEngine(std::size_t arena_capacity = kDefaultArenaBytes);

  void load(std::span<const std::uint8_t> bundle);
  InferenceResult infer(const WindowMatrix<float>& raw) const;

  bool loaded() const;
  std::uint32_t model_version() const;
  int class_count() const;
  std::uint64_t macs_per_inference() const;
  ArenaReport arena_report() const;

  /// Quantized input exactly as the first layer sees it (for tests/tools).
  void quantize_window(const WindowMatrix<float>& raw, std::span<std::int8_t, kWindowLength * kChannels> out) const;

 private:
  struct LayerView {
    quant::LayerKind kind = quant::LayerKind::dense;
    int in = 0, out = 0, kernel = 1;
    int in_length = 1, out_length = 1;  // time steps before / after the layer's conv (pre-pool)
    float weight_scale = 1.0f;
    float input_scale = 1.0f;
    std::int32_t input_zero_point = 0;
    std::int32_t output_zero_point = 0;
    quant::FixedPointMultiplier requant;
    const std::int8_t* weights = nullptr;
    const std::uint8_t* biases = nullptr;  // little-endian i32
    bool last = false;
  };

  struct Model {
    std::uint32_t version = 0;
    int classes = 0;
    std::array<std::pair<std::size_t, std::size_t>, 256> class_names{};  // (offset, length) in payload
    const std::uint8_t* payload = nullptr;
    std::array<float, kChannels> mean{}, std{};
    std::array<LayerView, kMaxLayers> layers{};
    int layer_count = 0;
    std::int8_t* buf_a = nullptr;
    std::int8_t* buf_b = nullptr;
    std::int32_t* logits = nullptr;
    std::size_t model_bytes = 0;
    std::size_t scratch_bytes = 0;
    std::uint64_t macs = 0;
  };

  void quantize_locked(const WindowMatrix<float>& raw, std::int8_t* out) const;

  mutable std::mutex mu_;
  Arena arena_;
  Model model_;
  bool loaded_ = false;
};

}  // namespace tinyfit::runtime
