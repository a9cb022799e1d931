#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tinyfit/nn/model.hpp"
#include "tinyfit/signal.hpp"

namespace tinyfit::quant {

inline constexpr std::uint16_t kBundleFormatVersion = 1;
inline constexpr std::size_t kBundleSizeBudget = 15360;  // 15 KiB
inline constexpr std::size_t kBundleHeaderBytes = 10;    // magic, format version, bundle version
inline constexpr std::size_t kBundleFooterBytes = 4;     // CRC32
inline constexpr double kDefaultSparsity = 0.3;
inline constexpr std::size_t kDefaultCalibrationWindows = 256;

/// Round half away from zero (2.5 -> 3, -2.5 -> -3).
std::int64_t round_half_away(double x) noexcept;

/// real ~= mantissa * 2^-shift with mantissa in [2^30, 2^31).
struct FixedPointMultiplier {
  std::int32_t mantissa = 0;
  std::uint8_t shift = 0;

  double value() const noexcept;
  bool operator==(const FixedPointMultiplier&) const = default;
};

FixedPointMultiplier quantize_multiplier(double real);

/// round_half_away(acc * mantissa / 2^shift), saturated to int32.
std::int32_t apply_multiplier(std::int32_t acc, FixedPointMultiplier m) noexcept;

/// Symmetric per-tensor int8: q = clamp(round(w / s), -127, 127), s = max|w| / 127.
/// An all-zero tensor gets s = 1.
struct SymmetricTensor {
  double scale = 1.0;
  std::vector<std::int8_t> values;
};

SymmetricTensor quantize_symmetric(std::span<const double> weights);

/// Asymmetric activation quantization: real = scale * (q - zero_point).
struct AffineParams {
  float scale = 1.0f;
  std::int32_t zero_point = 0;

  bool operator==(const AffineParams&) const = default;
};

/// Range widened to include 0 and mapped onto [-128, 127].
AffineParams choose_affine(double min, double max);

std::int8_t quantize_input(float x, AffineParams p) noexcept;

/// Zero the smallest-|w| fraction of Dense1 weights (ties by index order).
nn::CnnModel<double> prune_magnitude(const nn::CnnModel<double>& model, double sparsity);

// ---------------------------------------------------------------------------

enum class LayerKind : std::uint8_t { conv = 1, dense = 2 };

/// One integer layer. Conv layers are implicitly followed by ReLU and a
/// pool-2 max pool; dense layers by ReLU except the last, whose int32
/// accumulators are the logits (requant.mantissa == 0 marks that).
struct QuantizedLayer {
  LayerKind kind = LayerKind::dense;
  std::uint16_t in = 0;
  std::uint16_t out = 0;
  std::uint16_t kernel = 1;
  float weight_scale = 1.0f;
  float input_scale = 1.0f;
  std::int32_t input_zero_point = 0;
  FixedPointMultiplier requant;
  std::vector<std::int8_t> weights;  // (out, kernel * in) row-major, taps time-major
  std::vector<std::int32_t> biases;  // scale input_scale * weight_scale

  std::size_t weight_count() const noexcept { return std::size_t{out} * kernel * in; }
  bool operator==(const QuantizedLayer&) const = default;
};

struct ModelBundle {
  std::uint32_t version = 0;
  std::vector<std::string> classes;
  ChannelStats stats;
  std::vector<QuantizedLayer> layers;

  bool operator==(const ModelBundle&) const = default;
};

/// Observed [min, max] at the input and after each hidden ReLU.
struct ActivationRanges {
  std::array<std::pair<double, double>, 4> sites{};
};

/// Float reference forward over normalized windows.
ActivationRanges calibrate(const nn::CnnModel<float>& model, std::span<const Window> normalized);

/// Quantize weights/biases and derive the fixed-point requantization chain.
/// `calibration` holds raw (un-normalized) windows; they are normalized with
/// `stats`, which also ship in the bundle.
ModelBundle calibrate_and_quantize(const nn::CnnModel<double>& model, const ChannelStats& stats,
                                   std::span<const Window> calibration, std::uint32_t version);

/// Seeded subset of at most n windows.
std::vector<Window> sample_calibration(std::span<const Window> windows, std::size_t n, std::uint64_t seed);

struct PackageOptions {
  double sparsity = kDefaultSparsity;
  std::size_t calibration_windows = kDefaultCalibrationWindows;
  std::uint64_t seed = 7;
  std::uint32_t version = 1;
};

/// prune -> calibrate -> quantize.
ModelBundle package_model(const nn::CnnModel<double>& model, const ChannelStats& stats,
                          std::span<const Window> calibration_pool, const PackageOptions& options = {});

// ---------------------------------------------------------------------------
// TBND wire format, little-endian:
//   "TBND", u16 format version, u32 bundle version, u8 C, C x (u8 len, UTF-8),
//   12 x f32 (means, stds), u8 layer count, per layer: u8 type, u16 in,
//   u16 out, u16 kernel, f32 weight scale, f32 input scale, i32 input zero
//   point, i32 requant multiplier, u8 requant shift, i8 weights, i32 biases;
//   u32 CRC32 of everything before it.

std::vector<std::uint8_t> serialize(const ModelBundle& bundle);

/// Checks run in order: minimum length (Truncated), CRC (CrcMismatch), magic
/// (BadMagic), format version (BadVersion), structure (Truncated/Malformed).
ModelBundle deserialize(std::span<const std::uint8_t> bytes);

}  // namespace tinyfit::quant
