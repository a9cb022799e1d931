#include "tinyfit/runtime.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <limits>

#include "tinyfit/byteio.hpp"
#include "tinyfit/error.hpp"

namespace tinyfit::runtime {

Arena::Arena(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0 || capacity > kMaxArenaBytes)
    throw Error(Errc::BadConfig, "arena capacity must lie in (0, 320 KiB]", {{"capacity", std::to_string(capacity)}});
  storage_ = std::make_unique<std::uint8_t[]>(capacity);
}

std::uint8_t* Arena::allocate(std::size_t bytes, std::size_t align) {
  const auto base = reinterpret_cast<std::uintptr_t>(storage_.get());
  const std::size_t start = ((base + used_ + align - 1) / align * align) - base;
  if (start + bytes > capacity_)
    throw Error(Errc::ArenaOverflow, "arena exhausted",
                {{"needed", std::to_string(start + bytes)}, {"capacity", std::to_string(capacity_)}});
  used_ = start + bytes;
  high_water_ = std::max(high_water_, used_);
  return storage_.get() + start;
}

void ClassName::assign(std::string_view s) noexcept {
  len_ = std::min(s.size(), buf_.size());
  std::memcpy(buf_.data(), s.data(), len_);
}

MicroEngine::MicroEngine(std::size_t arena_capacity) : arena_(arena_capacity) {}

namespace {

constexpr std::int64_t kAccumulatorLimit = std::numeric_limits<std::int32_t>::max();

}  // namespace

void MicroEngine::load(std::span<const std::uint8_t> bytes) {
  // Full validation happens before the arena is touched.
  const quant::ModelBundle bundle = quant::deserialize(bytes);
  if (bundle.classes.size() < 2) throw Error(Errc::Malformed, "bundle needs at least 2 classes");
  if (bundle.layers.empty() || bundle.layers.size() > kMaxLayers) throw Error(Errc::Malformed, "unsupported layer count");

  Model plan;
  plan.version = bundle.version;
  plan.classes = static_cast<int>(bundle.classes.size());
  plan.layer_count = static_cast<int>(bundle.layers.size());
  for (int c = 0; c < kChannels; ++c) {
    plan.mean[c] = bundle.stats.mean(c);
    plan.std[c] = bundle.stats.std(c);
    if (!(plan.std[c] > 0.0f) || !std::isfinite(plan.mean[c])) throw Error(Errc::Malformed, "invalid channel statistics");
  }

  int length = kWindowLength;
  int channels = kChannels;
  bool seen_dense = false;
  std::size_t max_activation = kWindowLength * kChannels;
  for (int i = 0; i < plan.layer_count; ++i) {
    const auto& l = bundle.layers[static_cast<std::size_t>(i)];
    auto& v = plan.layers[static_cast<std::size_t>(i)];
    v.kind = l.kind;
    v.in = l.in;
    v.out = l.out;
    v.kernel = l.kernel;
    v.weight_scale = l.weight_scale;
    v.input_scale = l.input_scale;
    v.input_zero_point = l.input_zero_point;
    v.requant = l.requant;
    v.last = i + 1 == plan.layer_count;
    if (!(l.input_scale > 0.0f) || !(l.weight_scale > 0.0f)) throw Error(Errc::Malformed, "non-positive scale");
    if (l.input_zero_point < -128 || l.input_zero_point > 127) throw Error(Errc::Malformed, "zero point out of int8 range");
    if (l.kind == quant::LayerKind::conv) {
      if (seen_dense || v.last) throw Error(Errc::Malformed, "conv layers must precede dense layers");
      if (l.in != channels) throw Error(Errc::Malformed, "conv input channels do not chain");
      v.in_length = length;
      v.out_length = length - l.kernel + 1;
      if (v.out_length < 2) throw Error(Errc::Malformed, "conv kernel longer than its input");
      max_activation = std::max<std::size_t>(max_activation, static_cast<std::size_t>(v.out_length) * l.out);
      plan.macs += static_cast<std::uint64_t>(v.out_length) * l.out * l.kernel * l.in;
      length = v.out_length / 2;
      channels = l.out;
    } else {
      const int expected = seen_dense ? channels : length * channels;
      if (l.in != expected || l.kernel != 1) throw Error(Errc::Malformed, "dense input size does not chain");
      seen_dense = true;
      plan.macs += static_cast<std::uint64_t>(l.in) * l.out;
      if (!v.last) max_activation = std::max<std::size_t>(max_activation, l.out);
      length = 1;
      channels = l.out;
    }
    // Worst-case |sum (x - zp) * w| + |bias| must fit an int32 accumulator.
    std::int64_t max_bias = 0;
    for (auto b : l.biases) max_bias = std::max<std::int64_t>(max_bias, std::abs(static_cast<std::int64_t>(b)));
    const std::int64_t bound = static_cast<std::int64_t>(l.kernel) * l.in * 255 * 127 + max_bias;
    if (bound > kAccumulatorLimit) throw Error(Errc::Malformed, "layer could overflow an int32 accumulator");
  }
  if (!seen_dense || channels != plan.classes) throw Error(Errc::Malformed, "final layer width differs from class count");
  for (int i = 0; i + 1 < plan.layer_count; ++i)
    plan.layers[static_cast<std::size_t>(i)].output_zero_point = plan.layers[static_cast<std::size_t>(i) + 1].input_zero_point;

  const auto payload = bytes.subspan(quant::kBundleHeaderBytes,
                                     bytes.size() - quant::kBundleHeaderBytes - quant::kBundleFooterBytes);
  plan.model_bytes = payload.size();
  plan.scratch_bytes = 2 * Arena::aligned(max_activation) + Arena::aligned(sizeof(std::int32_t) * plan.classes);
  const std::size_t needed = Arena::aligned(plan.model_bytes) + plan.scratch_bytes;
  if (needed > arena_.capacity())
    throw Error(Errc::ArenaOverflow, "model does not fit the arena",
                {{"needed", std::to_string(needed)}, {"capacity", std::to_string(arena_.capacity())}});

  std::lock_guard lock(mu_);
  arena_.reset();
  auto* resident = arena_.allocate(plan.model_bytes);
  std::memcpy(resident, payload.data(), payload.size());
  plan.payload = resident;
  plan.buf_a = reinterpret_cast<std::int8_t*>(arena_.allocate(max_activation));
  plan.buf_b = reinterpret_cast<std::int8_t*>(arena_.allocate(max_activation));
  plan.logits = reinterpret_cast<std::int32_t*>(arena_.allocate(sizeof(std::int32_t) * plan.classes));

  // Point the layer views at the resident copy.
  ByteReader walk(std::span<const std::uint8_t>(resident, plan.model_bytes));
  walk.u8();
  for (int c = 0; c < plan.classes; ++c) {
    const std::size_t len = walk.u8();
    plan.class_names[static_cast<std::size_t>(c)] = {walk.position(), len};
    walk.bytes(len);
  }
  walk.bytes(4 * 2 * kChannels);
  walk.u8();
  for (int i = 0; i < plan.layer_count; ++i) {
    auto& v = plan.layers[static_cast<std::size_t>(i)];
    walk.bytes(1 + 2 * 3 + 4 * 4 + 1);
    v.weights = reinterpret_cast<const std::int8_t*>(walk.bytes(static_cast<std::size_t>(v.out) * v.kernel * v.in).data());
    v.biases = walk.bytes(sizeof(std::int32_t) * static_cast<std::size_t>(v.out)).data();
  }
  model_ = plan;
  loaded_ = true;
}

void MicroEngine::quantize_locked(const WindowMatrix<float>& raw, std::int8_t* out) const {
  const quant::AffineParams p{model_.layers[0].input_scale, model_.layers[0].input_zero_point};
  for (int r = 0; r < kWindowLength; ++r)
    for (int c = 0; c < kChannels; ++c) {
      const float x = (raw(r, c) - model_.mean[static_cast<std::size_t>(c)]) / model_.std[static_cast<std::size_t>(c)];
      out[r * kChannels + c] = quant::quantize_input(x, p);
    }
}

void MicroEngine::quantize_window(const WindowMatrix<float>& raw,
                                  std::span<std::int8_t, kWindowLength * kChannels> out) const {
  std::lock_guard lock(mu_);
  if (!loaded_) throw Error(Errc::NoModel, "no model loaded");
  quantize_locked(raw, out.data());
}

namespace {

inline std::int8_t saturate(std::int32_t v, std::int32_t lo) noexcept {
  return static_cast<std::int8_t>(std::clamp<std::int32_t>(v, lo, 127));
}

}  // namespace

InferenceResult MicroEngine::infer(const WindowMatrix<float>& raw) const {
  std::lock_guard lock(mu_);
  if (!loaded_) throw Error(Errc::NoModel, "no model loaded");
  const auto start = std::chrono::steady_clock::now();

  std::int8_t* cur = model_.buf_a;
  std::int8_t* nxt = model_.buf_b;
  quantize_locked(raw, cur);

  for (int li = 0; li < model_.layer_count; ++li) {
    const auto& l = model_.layers[static_cast<std::size_t>(li)];
    const std::int32_t zp_in = l.input_zero_point;
    const std::int32_t zp_out = l.output_zero_point;
    const std::int32_t relu_floor = std::clamp<std::int32_t>(zp_out, -128, 127);
    if (l.kind == quant::LayerKind::conv) {
      const int taps = l.kernel * l.in;
      for (int t = 0; t < l.out_length; ++t) {
        const std::int8_t* patch = cur + t * l.in;
        for (int o = 0; o < l.out; ++o) {
          const std::int8_t* w = l.weights + o * taps;
          std::int32_t acc = load_i32_le(l.biases + 4 * o);
          for (int j = 0; j < taps; ++j) acc += (static_cast<std::int32_t>(patch[j]) - zp_in) * w[j];
          nxt[t * l.out + o] = saturate(quant::apply_multiplier(acc, l.requant) + zp_out, relu_floor);
        }
      }
      const int pooled = l.out_length / 2;
      for (int t = 0; t < pooled; ++t)
        for (int o = 0; o < l.out; ++o)
          cur[t * l.out + o] = std::max(nxt[(2 * t) * l.out + o], nxt[(2 * t + 1) * l.out + o]);
    } else {
      for (int o = 0; o < l.out; ++o) {
        const std::int8_t* w = l.weights + o * l.in;
        std::int32_t acc = load_i32_le(l.biases + 4 * o);
        for (int j = 0; j < l.in; ++j) acc += (static_cast<std::int32_t>(cur[j]) - zp_in) * w[j];
        if (l.last)
          model_.logits[o] = acc;
        else
          nxt[o] = saturate(quant::apply_multiplier(acc, l.requant) + zp_out, relu_floor);
      }
      std::swap(cur, nxt);
    }
  }

  const auto& head = model_.layers[static_cast<std::size_t>(model_.layer_count - 1)];
  const float logit_scale = head.input_scale * head.weight_scale;
  int best = 0;
  for (int c = 1; c < model_.classes; ++c)
    if (model_.logits[c] > model_.logits[best]) best = c;
  const float top = static_cast<float>(model_.logits[best]) * logit_scale;
  float denom = 0.0f;
  for (int c = 0; c < model_.classes; ++c) denom += std::exp(static_cast<float>(model_.logits[c]) * logit_scale - top);

  InferenceResult r;
  r.class_id = best;
  const auto [offset, len] = model_.class_names[static_cast<std::size_t>(best)];
  r.class_name.assign(std::string_view(reinterpret_cast<const char*>(model_.payload) + offset, len));
  r.confidence = 1.0f / denom;
  r.model_version = model_.version;
  r.macs = model_.macs;
  const auto elapsed = std::chrono::duration<double, std::micro>(std::chrono::steady_clock::now() - start).count();
  r.latency_us = std::max(elapsed, 1e-3);
  return r;
}

bool MicroEngine::loaded() const {
  std::lock_guard lock(mu_);
  return loaded_;
}

std::uint32_t MicroEngine::model_version() const {
  std::lock_guard lock(mu_);
  return loaded_ ? model_.version : 0;
}

int MicroEngine::class_count() const {
  std::lock_guard lock(mu_);
  return loaded_ ? model_.classes : 0;
}

std::uint64_t MicroEngine::macs_per_inference() const {
  std::lock_guard lock(mu_);
  if (!loaded_) throw Error(Errc::NoModel, "no model loaded");
  return model_.macs;
}

ArenaReport MicroEngine::arena_report() const {
  std::lock_guard lock(mu_);
  if (!loaded_) throw Error(Errc::NoModel, "no model loaded");
  return {model_.model_bytes, model_.scratch_bytes, arena_.high_water()};
}

}  // namespace tinyfit::runtime
