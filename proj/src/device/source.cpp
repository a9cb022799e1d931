#include "tinyfit/device/source.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <numbers>
#include <sstream>

#include "tinyfit/error.hpp"

namespace tinyfit::device {

std::optional<Sample> VectorSource::next() {
  if (pos_ >= samples_.size()) return std::nullopt;
  return samples_[pos_++];
}

SyntheticSource::SyntheticSource(SyntheticConfig config, int subject, std::uint64_t seed, double segment_seconds)
    : gen_(std::move(config)), subject_(subject), rng_(seed), segment_seconds_(segment_seconds) {
  if (subject < 0 || subject >= gen_.config().subjects)
    throw Error(Errc::BadConfig, "synthetic subject out of range", {{"subject", std::to_string(subject)}});
  if (!(segment_seconds >= 3.0)) throw Error(Errc::BadConfig, "segment_seconds must be at least 3");
}

int SyntheticSource::class_index(const std::string& name) const {
  const auto& cls = gen_.config().classes;
  auto it = std::find(cls.begin(), cls.end(), name);
  if (it == cls.end()) throw Error(Errc::BadLabel, "unknown synthetic activity " + name, {{"class", name}});
  return static_cast<int>(it - cls.begin());
}

void SyntheticSource::set_activity(std::optional<int> cls) {
  if (cls && (*cls < 0 || *cls >= static_cast<int>(gen_.config().classes.size())))
    throw Error(Errc::BadLabel, "activity index out of range");
  if (cls != pinned_) buffer_.clear();
  pinned_ = cls;
}

void SyntheticSource::refill() {
  const int cls = pinned_ ? *pinned_ : static_cast<int>(rng_.below(gen_.config().classes.size()));
  const Recording rec = gen_.record(subject_, cls, segment_seconds_, rng_, rng_.uniform(0.0, 2.0 * std::numbers::pi));
  for (const auto& s : to_samples(resample(rec, kTargetRateHz))) buffer_.push_back(s);
}

std::optional<Sample> SyntheticSource::next() {
  if (buffer_.empty()) refill();
  const Sample s = buffer_.front();
  buffer_.pop_front();
  return s;
}

std::vector<Sample> to_samples(const Recording& rec20) {
  std::vector<Sample> out;
  out.reserve(rec20.samples.size());
  for (const auto& s : rec20.samples) {
    Sample x;
    for (int c = 0; c < kChannels; ++c) x[static_cast<std::size_t>(c)] = static_cast<float>(s.channels[static_cast<std::size_t>(c)]);
    out.push_back(x);
  }
  return out;
}

std::vector<Sample> stream_from_twin(const WindowedDataset& dataset, const std::optional<std::string>& subject) {
  std::vector<Sample> out;
  std::optional<std::uint32_t> prev;
  for (const auto& w : dataset.windows) {
    if (subject && w.subject_id != *subject) continue;
    // Consecutive windows of one recording overlap by 30 rows.
    const int first = prev && *prev == w.recording ? kWindowLength - kWindowStride : 0;
    for (int r = first; r < kWindowLength; ++r) {
      Sample x;
      for (int c = 0; c < kChannels; ++c) x[static_cast<std::size_t>(c)] = w.data(r, c);
      out.push_back(x);
    }
    prev = w.recording;
  }
  if (subject && out.empty()) throw Error(Errc::NotFound, "no windows for subject " + *subject, {{"subject", *subject}});
  return out;
}

std::vector<Sample> stream_from_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::Io, "cannot open " + path, {{"path", path}});
  Recording rec;
  rec.rate_hz = kTargetRateHz;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::array<double, 7> v{};
    std::size_t field = 0;
    const char* p = line.data();
    const char* end = p + line.size();
    bool ok = true;
    while (ok && field < v.size()) {
      while (p < end && (*p == ' ' || *p == '\t')) ++p;
      auto [next, ec] = std::from_chars(p, end, v[field]);
      ok = ec == std::errc() && std::isfinite(v[field]);
      p = next;
      while (p < end && (*p == ' ' || *p == '\t')) ++p;
      ++field;
      if (field < v.size()) ok = ok && p < end && *p++ == ',';
    }
    ok = ok && p == end;
    if (!ok) {
      if (line_no == 1) continue;  // header
      throw Error(Errc::BadInput, "malformed CSV row at line " + std::to_string(line_no),
                  {{"line", std::to_string(line_no)}, {"path", path}});
    }
    ImuSample s;
    s.t = v[0];
    std::copy(v.begin() + 1, v.end(), s.channels.begin());
    rec.samples.push_back(s);
  }
  return to_samples(resample(rec, kTargetRateHz));
}

}  // namespace tinyfit::device
