#include "tinyfit/signal.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "tinyfit/byteio.hpp"
#include "tinyfit/error.hpp"
#include "tinyfit/random.hpp"

namespace tinyfit {

Recording resample(const Recording& rec, double target_hz) {
  const auto& src = rec.samples;
  if (src.size() < 2) throw Error(Errc::EmptyRecording, "resample needs at least 2 samples");
  if (!(target_hz > 0.0) || !std::isfinite(target_hz)) throw Error(Errc::BadInput, "target rate must be positive");
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (!std::isfinite(src[i].t) || (i > 0 && src[i].t < src[i - 1].t))
      throw Error(Errc::BadTimestamps, "timestamps must be finite and non-decreasing",
                  {{"index", std::to_string(i)}});
    for (double v : src[i].channels)
      if (!std::isfinite(v)) throw Error(Errc::BadInput, "non-finite channel value", {{"index", std::to_string(i)}});
  }

  const double t0 = src.front().t;
  const double span = src.back().t - t0;
  const auto count = static_cast<std::size_t>(std::floor(span * target_hz + 1e-9)) + 1;

  Recording out;
  out.subject_id = rec.subject_id;
  out.class_label = rec.class_label;
  out.rate_hz = target_hz;
  out.samples.reserve(count);

  std::size_t j = 0;
  for (std::size_t k = 0; k < count; ++k) {
    const double t = t0 + static_cast<double>(k) / target_hz;
    while (j + 1 < src.size() && src[j + 1].t <= t) ++j;
    ImuSample s;
    s.t = t;
    if (src[j].t == t || j + 1 == src.size()) {
      s.channels = src[j].channels;
    } else {
      const auto& a = src[j];
      const auto& b = src[j + 1];
      const double f = (t - a.t) / (b.t - a.t);
      for (int c = 0; c < kChannels; ++c) {
        const double lo = std::min(a.channels[c], b.channels[c]);
        const double hi = std::max(a.channels[c], b.channels[c]);
        s.channels[c] = std::clamp(a.channels[c] + (b.channels[c] - a.channels[c]) * f, lo, hi);
      }
    }
    out.samples.push_back(s);
  }
  return out;
}

std::vector<Window> make_windows(const Recording& rec, std::uint32_t recording_index) {
  if (std::abs(rec.rate_hz - kTargetRateHz) > 1e-9)
    throw Error(Errc::BadInput, "make_windows expects a 20 Hz recording", {{"rate_hz", std::to_string(rec.rate_hz)}});
  const std::size_t n = window_count(rec.samples.size());
  std::vector<Window> out;
  out.reserve(n);
  for (std::size_t w = 0; w < n; ++w) {
    Window win;
    const std::size_t start = w * kWindowStride;
    for (int r = 0; r < kWindowLength; ++r)
      for (int c = 0; c < kChannels; ++c)
        win.data(r, c) = static_cast<float>(rec.samples[start + r].channels[c]);
    win.label = rec.class_label;
    win.subject_id = rec.subject_id;
    win.recording = recording_index;
    out.push_back(std::move(win));
  }
  return out;
}

ChannelStats fit_channel_stats(std::span<const Window> windows) {
  if (windows.empty()) throw Error(Errc::EmptyDataset, "cannot fit channel statistics on an empty set");
  ChannelVector<double> sum = ChannelVector<double>::Zero();
  for (const auto& w : windows) sum += w.data.cast<double>().colwise().sum().transpose();
  const double rows = static_cast<double>(windows.size()) * kWindowLength;
  const ChannelVector<double> mean = sum / rows;
  ChannelVector<double> sq = ChannelVector<double>::Zero();
  for (const auto& w : windows)
    sq += (w.data.cast<double>().rowwise() - mean.transpose()).array().square().colwise().sum().transpose().matrix();
  ChannelStats stats;
  stats.mean = mean.cast<float>();
  stats.std = (sq / rows).cwiseSqrt().cwiseMax(kEpsilonStd).cast<float>();
  return stats;
}

Window normalize(const Window& w, const ChannelStats& stats) {
  Window out = w;
  out.data = normalize_rows(w.data, stats);
  return out;
}

Window denormalize(const Window& w, const ChannelStats& stats) {
  Window out = w;
  out.data = (w.data.array().rowwise() * stats.std.transpose().array()).matrix().rowwise() + stats.mean.transpose();
  return out;
}

std::set<std::string> choose_personalized_subjects(const std::set<std::string>& subjects, std::uint64_t seed) {
  if (subjects.size() <= static_cast<std::size_t>(kPersonalizedSubjects))
    throw Error(Errc::TooFewSubjects, "need at least 5 subjects to hold out 4",
                {{"subjects", std::to_string(subjects.size())}});
  const std::vector<std::string> ordered(subjects.begin(), subjects.end());
  Rng rng(seed);
  std::set<std::string> chosen;
  for (std::size_t i : rng.sample(ordered.size(), kPersonalizedSubjects)) chosen.insert(ordered[i]);
  return chosen;
}

std::set<std::string> subjects_of(std::span<const Recording> recordings) {
  std::set<std::string> s;
  for (const auto& r : recordings) s.insert(r.subject_id);
  return s;
}

std::set<std::string> subjects_of(std::span<const Window> windows) {
  std::set<std::string> s;
  for (const auto& w : windows) s.insert(w.subject_id);
  return s;
}

std::vector<Window> windows_from_recordings(std::span<const Recording> recordings) {
  std::vector<Window> out;
  for (std::size_t i = 0; i < recordings.size(); ++i) {
    const auto& rec = recordings[i];
    if (rec.samples.size() < 2) continue;
    auto ws = make_windows(resample(rec, kTargetRateHz), static_cast<std::uint32_t>(i));
    std::move(ws.begin(), ws.end(), std::back_inserter(out));
  }
  return out;
}

DatasetSplit slice_windows(std::span<const Window> windows, std::uint64_t seed) {
  const auto held_out = choose_personalized_subjects(subjects_of(windows), seed);
  DatasetSplit split;
  for (const auto& s : held_out) split.personalized[s];
  for (const auto& w : windows) {
    if (held_out.contains(w.subject_id))
      split.personalized[w.subject_id].push_back(w);
    else
      split.generalized.push_back(w);
  }
  return split;
}

DatasetSplit slice_dataset(std::span<const Recording> recordings, std::uint64_t seed) {
  // Validate the subject count before paying for resampling.
  choose_personalized_subjects(subjects_of(recordings), seed);
  const auto windows = windows_from_recordings(recordings);
  return slice_windows(windows, seed);
}

// ---------------------------------------------------------------------------
// TWIN: "TWIN", u32 window count, u16 class count, class names (u8-prefixed),
// then per window u16 class id, u16 subject index, 360 f32 (time-major).
// Trailer: u16 subject count + subject names, u32 recording index per window.

namespace {
constexpr std::uint16_t kUnlabeled = 0xFFFF;
}

std::vector<std::uint8_t> encode_twin(const WindowedDataset& dataset) {
  if (dataset.classes.size() >= kUnlabeled) throw Error(Errc::BadInput, "too many classes for TWIN");
  std::unordered_map<std::string, std::uint16_t> class_ids;
  for (std::size_t i = 0; i < dataset.classes.size(); ++i)
    class_ids.emplace(dataset.classes[i], static_cast<std::uint16_t>(i));

  std::vector<std::string> subjects;
  std::unordered_map<std::string, std::uint16_t> subject_ids;
  for (const auto& w : dataset.windows) {
    if (subject_ids.emplace(w.subject_id, static_cast<std::uint16_t>(subjects.size())).second) {
      subjects.push_back(w.subject_id);
      if (subjects.size() > 0xFFFF) throw Error(Errc::BadInput, "too many subjects for TWIN");
    }
  }

  ByteWriter out;
  out.raw("TWIN");
  out.u32(static_cast<std::uint32_t>(dataset.windows.size()));
  out.u16(static_cast<std::uint16_t>(dataset.classes.size()));
  for (const auto& c : dataset.classes) out.short_string(c);
  for (const auto& w : dataset.windows) {
    std::uint16_t cls = kUnlabeled;
    if (w.label) {
      auto it = class_ids.find(*w.label);
      if (it == class_ids.end()) throw Error(Errc::BadLabel, "window label not in class table: " + *w.label);
      cls = it->second;
    }
    out.u16(cls);
    out.u16(subject_ids.at(w.subject_id));
    for (int r = 0; r < kWindowLength; ++r)
      for (int c = 0; c < kChannels; ++c) out.f32(w.data(r, c));
  }
  out.u16(static_cast<std::uint16_t>(subjects.size()));
  for (const auto& s : subjects) out.short_string(s);
  for (const auto& w : dataset.windows) out.u32(w.recording);
  return std::move(out).take();
}

WindowedDataset decode_twin(std::span<const std::uint8_t> bytes) {
  ByteReader in(bytes);
  auto magic = in.bytes(4);
  if (!std::equal(magic.begin(), magic.end(), "TWIN")) throw Error(Errc::BadMagic, "not a TWIN file");
  WindowedDataset ds;
  const std::uint32_t count = in.u32();
  const std::uint16_t classes = in.u16();
  for (std::uint16_t i = 0; i < classes; ++i) ds.classes.push_back(in.short_string());
  // Guard the reservation against a corrupt count.
  const std::size_t per_window = 4 + 4 * kWindowLength * kChannels;
  if (in.remaining() / per_window < count) throw Error(Errc::Truncated, "TWIN window section truncated");
  ds.windows.resize(count);
  std::vector<std::uint16_t> subject_index(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    auto& w = ds.windows[i];
    const std::uint16_t cls = in.u16();
    if (cls != kUnlabeled) {
      if (cls >= classes) throw Error(Errc::Malformed, "class id out of range in TWIN");
      w.label = ds.classes[cls];
    }
    subject_index[i] = in.u16();
    for (int r = 0; r < kWindowLength; ++r)
      for (int c = 0; c < kChannels; ++c) w.data(r, c) = in.f32();
  }
  std::vector<std::string> subjects;
  if (in.remaining() > 0) {
    const std::uint16_t n = in.u16();
    for (std::uint16_t i = 0; i < n; ++i) subjects.push_back(in.short_string());
    for (auto& w : ds.windows) w.recording = in.u32();
  }
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto s = subject_index[i];
    if (subjects.empty())
      ds.windows[i].subject_id = "s" + std::to_string(s);
    else if (s < subjects.size())
      ds.windows[i].subject_id = subjects[s];
    else
      throw Error(Errc::Malformed, "subject index out of range in TWIN");
  }
  return ds;
}

void write_twin(const std::string& path, const WindowedDataset& dataset) { write_file(path, encode_twin(dataset)); }

WindowedDataset read_twin(const std::string& path) { return decode_twin(read_file(path)); }

}  // namespace tinyfit
