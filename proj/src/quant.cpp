#include "tinyfit/quant.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "tinyfit/byteio.hpp"
#include "tinyfit/error.hpp"
#include "tinyfit/nn/layers.hpp"
#include "tinyfit/random.hpp"

namespace tinyfit::quant {

std::int64_t round_half_away(double x) noexcept { return std::llround(x); }

double FixedPointMultiplier::value() const noexcept { return std::ldexp(static_cast<double>(mantissa), -shift); }

FixedPointMultiplier quantize_multiplier(double real) {
  if (!(real >= 0.0) || !std::isfinite(real)) throw Error(Errc::BadInput, "requantization multiplier must be finite and >= 0");
  FixedPointMultiplier m;
  if (real == 0.0) return m;
  int exponent = 0;
  const double q = std::frexp(real, &exponent);  // real = q * 2^exponent, q in [0.5, 1)
  auto mantissa = round_half_away(std::ldexp(q, 31));
  if (mantissa == (std::int64_t{1} << 31)) {
    mantissa >>= 1;
    ++exponent;
  }
  const int shift = 31 - exponent;
  if (shift < 0) throw Error(Errc::BadInput, "requantization multiplier too large");
  if (shift > 62) return m;  // below 2^-32: flushes every int32 accumulator to 0
  m.mantissa = static_cast<std::int32_t>(mantissa);
  m.shift = static_cast<std::uint8_t>(shift);
  return m;
}

std::int32_t apply_multiplier(std::int32_t acc, FixedPointMultiplier m) noexcept {
  const std::int64_t prod = static_cast<std::int64_t>(acc) * m.mantissa;
  std::int64_t r;
  if (m.shift == 0) {
    r = prod;
  } else {
    const std::uint64_t mag = prod < 0 ? static_cast<std::uint64_t>(-prod) : static_cast<std::uint64_t>(prod);
    const std::uint64_t rounded = (mag + (std::uint64_t{1} << (m.shift - 1))) >> m.shift;
    r = prod < 0 ? -static_cast<std::int64_t>(rounded) : static_cast<std::int64_t>(rounded);
  }
  return static_cast<std::int32_t>(
      std::clamp<std::int64_t>(r, std::numeric_limits<std::int32_t>::min(), std::numeric_limits<std::int32_t>::max()));
}

SymmetricTensor quantize_symmetric(std::span<const double> weights) {
  SymmetricTensor t;
  double max_abs = 0.0;
  for (double w : weights) max_abs = std::max(max_abs, std::abs(w));
  t.values.resize(weights.size(), 0);
  if (max_abs == 0.0) return t;  // scale 1 by convention
  t.scale = max_abs / 127.0;
  for (std::size_t i = 0; i < weights.size(); ++i)
    t.values[i] = static_cast<std::int8_t>(std::clamp<std::int64_t>(round_half_away(weights[i] / max_abs * 127.0), -127, 127));
  return t;
}

AffineParams choose_affine(double min, double max) {
  const double lo = std::min(min, 0.0);
  const double hi = std::max(max, 0.0);
  AffineParams p;
  if (!(hi - lo > 0.0)) {
    p.scale = 1.0f;
    p.zero_point = -128;
    return p;
  }
  p.scale = static_cast<float>((hi - lo) / 255.0);
  p.zero_point = static_cast<std::int32_t>(std::clamp<std::int64_t>(round_half_away(-128.0 - lo / p.scale), -128, 127));
  return p;
}

std::int8_t quantize_input(float x, AffineParams p) noexcept {
  const float q = std::round(x / p.scale);
  const float shifted = std::clamp(q + static_cast<float>(p.zero_point), -128.0f, 127.0f);
  return static_cast<std::int8_t>(shifted);
}

nn::CnnModel<double> prune_magnitude(const nn::CnnModel<double>& model, double sparsity) {
  if (!(sparsity >= 0.0 && sparsity < 1.0))
    throw Error(Errc::BadSparsity, "sparsity must lie in [0, 1)", {{"sparsity", std::to_string(sparsity)}});
  nn::CnnModel<double> out = model;
  auto& w = out.params[nn::LayerId::dense1].weight;
  const auto n = static_cast<std::size_t>(w.size());
  const auto k = static_cast<std::size_t>(std::floor(sparsity * static_cast<double>(n) + 1e-9));
  if (k == 0) return out;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return std::abs(w.data()[a]) < std::abs(w.data()[b]); });
  for (std::size_t i = 0; i < k; ++i) w.data()[order[i]] = 0.0;
  return out;
}

ActivationRanges calibrate(const nn::CnnModel<float>& model, std::span<const Window> normalized) {
  if (normalized.empty()) throw Error(Errc::EmptyCalibration, "calibration needs at least one window");
  ActivationRanges r;
  for (auto& s : r.sites) s = {std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
  auto observe = [](std::pair<double, double>& site, const auto& m) {
    site.first = std::min<double>(site.first, m.minCoeff());
    site.second = std::max<double>(site.second, m.maxCoeff());
  };
  constexpr std::size_t chunk = 128;
  nn::ForwardPass<float> fp;
  for (std::size_t start = 0; start < normalized.size(); start += chunk) {
    const auto part = normalized.subspan(start, std::min(chunk, normalized.size() - start));
    const nn::Matrix<float> x = nn::stack_windows<float>(part);
    nn::forward(model, x, static_cast<int>(part.size()), fp);
    observe(r.sites[0], x);
    observe(r.sites[1], fp.pre1.cwiseMax(0.0f));
    observe(r.sites[2], fp.pre2.cwiseMax(0.0f));
    observe(r.sites[3], fp.act3);
  }
  return r;
}

namespace {

std::vector<double> row_major(const nn::Matrix<double>& m) { return {m.data(), m.data() + m.size()}; }

}  // namespace

ModelBundle calibrate_and_quantize(const nn::CnnModel<double>& model, const ChannelStats& stats,
                                   std::span<const Window> calibration, std::uint32_t version) {
  if (calibration.empty()) throw Error(Errc::EmptyCalibration, "calibration needs at least one window");
  if (model.arch != nn::Architecture{}) throw Error(Errc::BadInput, "only the deployed architecture can be packaged");
  if (model.classes.size() > 255) throw Error(Errc::BadClassCount, "bundles hold at most 255 classes");

  std::vector<Window> normalized;
  normalized.reserve(calibration.size());
  for (const auto& w : calibration) normalized.push_back(normalize(w, stats));
  const auto ranges = calibrate(model.cast<float>(), normalized);

  std::array<AffineParams, 4> sites;
  for (std::size_t i = 0; i < sites.size(); ++i) sites[i] = choose_affine(ranges.sites[i].first, ranges.sites[i].second);

  const auto& a = model.arch;
  ModelBundle b;
  b.version = version;
  b.classes = model.classes;
  b.stats = stats;
  for (std::size_t i = 0; i < nn::kLayerIds.size(); ++i) {
    const auto id = nn::kLayerIds[i];
    const auto& layer = model.params[id];
    QuantizedLayer q;
    const bool conv = id == nn::LayerId::conv1 || id == nn::LayerId::conv2;
    q.kind = conv ? LayerKind::conv : LayerKind::dense;
    q.kernel = static_cast<std::uint16_t>(conv ? a.kernel : 1);
    q.out = static_cast<std::uint16_t>(layer.weight.rows());
    q.in = static_cast<std::uint16_t>(layer.weight.cols() / q.kernel);

    const auto w = row_major(layer.weight);
    auto sym = quantize_symmetric(w);
    q.weights = std::move(sym.values);
    q.weight_scale = static_cast<float>(sym.scale);
    q.input_scale = sites[i].scale;
    q.input_zero_point = sites[i].zero_point;

    const double acc_scale = static_cast<double>(q.input_scale) * static_cast<double>(q.weight_scale);
    for (Eigen::Index o = 0; o < layer.bias.size(); ++o)
      q.biases.push_back(static_cast<std::int32_t>(std::clamp<std::int64_t>(
          round_half_away(layer.bias(o) / acc_scale), std::numeric_limits<std::int32_t>::min(),
          std::numeric_limits<std::int32_t>::max())));
    if (i + 1 < nn::kLayerIds.size()) q.requant = quantize_multiplier(acc_scale / static_cast<double>(sites[i + 1].scale));
    b.layers.push_back(std::move(q));
  }
  return b;
}

std::vector<Window> sample_calibration(std::span<const Window> windows, std::size_t n, std::uint64_t seed) {
  if (windows.empty()) throw Error(Errc::EmptyCalibration, "no windows to draw calibration data from");
  Rng rng(seed ^ 0xCA11B8A7EULL);
  std::vector<Window> out;
  for (auto i : rng.sample(windows.size(), std::min(n, windows.size()))) out.push_back(windows[i]);
  return out;
}

ModelBundle package_model(const nn::CnnModel<double>& model, const ChannelStats& stats,
                          std::span<const Window> calibration_pool, const PackageOptions& options) {
  const auto pruned = prune_magnitude(model, options.sparsity);
  const auto calib = sample_calibration(calibration_pool, options.calibration_windows, options.seed);
  return calibrate_and_quantize(pruned, stats, calib, options.version);
}

// ---------------------------------------------------------------------------

std::vector<std::uint8_t> serialize(const ModelBundle& bundle) {
  if (bundle.classes.size() > 255) throw Error(Errc::BadClassCount, "bundles hold at most 255 classes");
  if (bundle.layers.size() > 255) throw Error(Errc::BadInput, "too many layers");
  ByteWriter out;
  out.raw("TBND");
  out.u16(kBundleFormatVersion);
  out.u32(bundle.version);
  out.u8(static_cast<std::uint8_t>(bundle.classes.size()));
  for (const auto& c : bundle.classes) out.short_string(c);
  for (int c = 0; c < kChannels; ++c) out.f32(bundle.stats.mean(c));
  for (int c = 0; c < kChannels; ++c) out.f32(bundle.stats.std(c));
  out.u8(static_cast<std::uint8_t>(bundle.layers.size()));
  for (const auto& l : bundle.layers) {
    if (l.weights.size() != l.weight_count() || l.biases.size() != l.out)
      throw Error(Errc::BadInput, "layer tensor sizes disagree with its dimensions");
    out.u8(static_cast<std::uint8_t>(l.kind));
    out.u16(l.in);
    out.u16(l.out);
    out.u16(l.kernel);
    out.f32(l.weight_scale);
    out.f32(l.input_scale);
    out.i32(l.input_zero_point);
    out.i32(l.requant.mantissa);
    out.u8(l.requant.shift);
    for (auto w : l.weights) out.u8(static_cast<std::uint8_t>(w));
    for (auto b : l.biases) out.i32(b);
  }
  const std::uint32_t crc = crc32(out.data());
  out.u32(crc);
  return std::move(out).take();
}

ModelBundle deserialize(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kBundleHeaderBytes + kBundleFooterBytes)
    throw Error(Errc::Truncated, "bundle shorter than its fixed header", {{"size", std::to_string(bytes.size())}});
  const auto body = bytes.first(bytes.size() - kBundleFooterBytes);
  ByteReader footer(bytes.last(kBundleFooterBytes));
  const std::uint32_t stored = footer.u32();
  const std::uint32_t actual = crc32(body);
  if (stored != actual)
    throw Error(Errc::CrcMismatch, "bundle CRC mismatch (corrupt or truncated)",
                {{"stored", std::to_string(stored)}, {"computed", std::to_string(actual)}});

  ByteReader in(body);
  const auto magic = in.bytes(4);
  if (!std::equal(magic.begin(), magic.end(), "TBND")) throw Error(Errc::BadMagic, "not a TBND bundle");
  const auto format = in.u16();
  if (format != kBundleFormatVersion)
    throw Error(Errc::BadVersion, "unsupported bundle format version", {{"format", std::to_string(format)}});

  ModelBundle b;
  b.version = in.u32();
  const std::size_t n_classes = in.u8();
  for (std::size_t i = 0; i < n_classes; ++i) b.classes.push_back(in.short_string());
  for (int c = 0; c < kChannels; ++c) b.stats.mean(c) = in.f32();
  for (int c = 0; c < kChannels; ++c) b.stats.std(c) = in.f32();
  const std::size_t n_layers = in.u8();
  for (std::size_t i = 0; i < n_layers; ++i) {
    QuantizedLayer l;
    const auto kind = in.u8();
    if (kind != static_cast<std::uint8_t>(LayerKind::conv) && kind != static_cast<std::uint8_t>(LayerKind::dense))
      throw Error(Errc::Malformed, "unknown layer type code", {{"type", std::to_string(kind)}});
    l.kind = static_cast<LayerKind>(kind);
    l.in = in.u16();
    l.out = in.u16();
    l.kernel = in.u16();
    if (l.in == 0 || l.out == 0 || l.kernel == 0) throw Error(Errc::Malformed, "zero layer dimension");
    l.weight_scale = in.f32();
    l.input_scale = in.f32();
    l.input_zero_point = in.i32();
    l.requant.mantissa = in.i32();
    l.requant.shift = in.u8();
    if (l.requant.shift > 62 || l.requant.mantissa < 0) throw Error(Errc::Malformed, "invalid requantization multiplier");
    const auto w = in.bytes(l.weight_count());
    l.weights.assign(w.begin(), w.end());
    l.biases.resize(l.out);
    for (auto& v : l.biases) v = in.i32();
    b.layers.push_back(std::move(l));
  }
  if (in.remaining() != 0) throw Error(Errc::Malformed, "trailing bytes before CRC footer");
  return b;
}

}  // namespace tinyfit::quant
