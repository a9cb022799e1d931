#include "tinyfit/nn/checkpoint.hpp"

#include <algorithm>

#include "tinyfit/byteio.hpp"

namespace tinyfit::nn {

std::vector<std::uint8_t> encode_checkpoint(const CnnModel<double>& model, const ChannelStats& stats) {
  if (model.arch != Architecture{}) throw Error(Errc::BadInput, "checkpoints hold the deployed architecture only");
  ByteWriter out;
  out.raw("TFLT");
  out.u16(kCheckpointVersion);
  out.u16(static_cast<std::uint16_t>(model.classes.size()));
  for (const auto& c : model.classes) out.short_string(c);
  const Vector<double> flat = flatten(model.params);
  for (Eigen::Index i = 0; i < flat.size(); ++i) out.f32(static_cast<float>(flat(i)));
  for (int c = 0; c < kChannels; ++c) out.f32(stats.mean(c));
  for (int c = 0; c < kChannels; ++c) out.f32(stats.std(c));
  return std::move(out).take();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  ByteReader in(bytes);
  const auto magic = in.bytes(4);
  if (!std::equal(magic.begin(), magic.end(), "TFLT")) throw Error(Errc::BadMagic, "not a TFLT checkpoint");
  const auto version = in.u16();
  if (version != kCheckpointVersion)
    throw Error(Errc::BadVersion, "unsupported checkpoint version", {{"version", std::to_string(version)}});
  std::vector<std::string> classes(in.u16());
  for (auto& c : classes) c = in.short_string();

  Checkpoint ck;
  ck.model = init_model<double>(std::move(classes), 0);
  Vector<double> flat(static_cast<Eigen::Index>(ck.model.parameter_count()));
  for (Eigen::Index i = 0; i < flat.size(); ++i) flat(i) = in.f32();
  unflatten<double>(flat, ck.model.params);
  for (int c = 0; c < kChannels; ++c) ck.stats.mean(c) = in.f32();
  for (int c = 0; c < kChannels; ++c) ck.stats.std(c) = in.f32();
  if (in.remaining() != 0) throw Error(Errc::Malformed, "trailing bytes after checkpoint");
  if (!ck.model.params.all_finite()) throw Error(Errc::Malformed, "checkpoint holds non-finite parameters");
  return ck;
}

void save_checkpoint(const std::string& path, const CnnModel<double>& model, const ChannelStats& stats) {
  write_file(path, encode_checkpoint(model, stats));
}

Checkpoint load_checkpoint(const std::string& path) { return decode_checkpoint(read_file(path)); }

}  // namespace tinyfit::nn
