#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <string>
#include <vector>

#include "tinyfit/random.hpp"
#include "tinyfit/signal.hpp"

namespace tinyfit {

/// Wrist-band activity generator standing in for data that cannot be
/// redistributed. Each class has a periodic signature (fundamental frequency,
/// per-channel harmonic amplitudes, gravity offset) drawn from disjoint
/// frequency/amplitude bands. Each subject wears the band at its own
/// orientation, moves at its own tempo and intensity, and performs each class
/// with a personal bias, which is what a generalized model fails to see.
struct SyntheticConfig {
  std::vector<std::string> classes = {"walking", "jogging", "cycling", "typing", "writing", "upstairs", "downstairs"};
  int subjects = 16;
  int recordings_per_class = 3;
  double seconds_per_recording = 30.0;
  double rate_hz = 25.0;  // native band rate, resampled downstream
  double noise = 0.15;
  double style = 0.9;      // spread of per-subject per-class bias
  double max_tilt_deg = 40.0;
  std::uint64_t seed = 2023;
};

class SyntheticGenerator {
 public:
  explicit SyntheticGenerator(SyntheticConfig config = {});

  const SyntheticConfig& config() const noexcept { return config_; }
  std::string subject_name(int subject) const;

  /// Noise-free signal of `subject` performing `cls` at time t (seconds).
  ChannelVector<double> clean(int subject, int cls, double t, double phase = 0.0) const;

  /// One recording at config().rate_hz with sensor noise from `noise`.
  Recording record(int subject, int cls, double seconds, Rng& noise, double phase = 0.0) const;

  /// Full inventory: subjects x classes x recordings_per_class, sorted by
  /// (subject, class).
  std::vector<Recording> dataset() const;

 private:
  struct ClassSignature {
    double frequency;
    ChannelVector<double> offset;
    Eigen::Matrix<double, kChannels, 3> amplitude;  // three harmonics
    Eigen::Matrix<double, kChannels, 3> phase;
  };
  struct SubjectStyle {
    Eigen::Matrix3d orientation;
    double tempo;
    double intensity;
    std::vector<ChannelVector<double>> bias;  // per class
    std::vector<double> class_tempo;          // per class
  };

  SyntheticConfig config_;
  std::vector<ClassSignature> classes_;
  std::vector<SubjectStyle> subjects_;
};

}  // namespace tinyfit
