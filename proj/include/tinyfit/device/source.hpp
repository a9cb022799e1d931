#pragma once

#include <array>
#include <deque>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "tinyfit/random.hpp"
#include "tinyfit/signal.hpp"
#include "tinyfit/synthetic.hpp"

namespace tinyfit::device {

using Sample = std::array<float, kChannels>;

/// Endless or finite stream of 20 Hz samples.
class SampleSource {
 public:
  virtual ~SampleSource() = default;
  /// nullopt once a finite source is exhausted.
  virtual std::optional<Sample> next() = 0;
};

class VectorSource final : public SampleSource {
 public:
  explicit VectorSource(std::vector<Sample> samples) : samples_(std::move(samples)) {}
  std::optional<Sample> next() override;
  std::size_t remaining() const noexcept { return samples_.size() - pos_; }

 private:
  std::vector<Sample> samples_;
  std::size_t pos_ = 0;
};

/// A synthetic wearer: segments of randomly chosen activities, or one
/// pinned activity while recording labeled data.
class SyntheticSource final : public SampleSource {
 public:
  SyntheticSource(SyntheticConfig config, int subject, std::uint64_t seed, double segment_seconds = 30.0);
  std::optional<Sample> next() override;

  /// Pin the activity (class index) or release it; buffered samples of a
  /// different activity are discarded.
  void set_activity(std::optional<int> cls);
  int class_index(const std::string& name) const;
  const SyntheticGenerator& generator() const noexcept { return gen_; }

 private:
  void refill();

  SyntheticGenerator gen_;
  int subject_;
  Rng rng_;
  double segment_seconds_;
  std::optional<int> pinned_;
  std::deque<Sample> buffer_;
};

/// The 20 Hz stream reconstructed from a TWIN file's overlapping windows,
/// optionally restricted to one subject.
std::vector<Sample> stream_from_twin(const WindowedDataset& dataset, const std::optional<std::string>& subject = {});

/// Rows of "t,ax,ay,az,gx,gy,gz" (a non-numeric first line is a header),
/// resampled to 20 Hz.
std::vector<Sample> stream_from_csv(const std::string& path);

std::vector<Sample> to_samples(const Recording& rec20);

}  // namespace tinyfit::device
