#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace tinyfit {

inline constexpr int kChannels = 6;         // ax, ay, az, gx, gy, gz
inline constexpr int kWindowLength = 60;    // 3 s at 20 Hz
inline constexpr int kWindowStride = 30;    // 50 % overlap
inline constexpr double kTargetRateHz = 20.0;
inline constexpr int kPersonalizedSubjects = 4;
inline constexpr double kEpsilonStd = 1e-6;

template <class Scalar>
using WindowMatrix = Eigen::Matrix<Scalar, kWindowLength, kChannels, Eigen::RowMajor>;

template <class Scalar>
using ChannelVector = Eigen::Matrix<Scalar, kChannels, 1>;

struct ImuSample {
  double t = 0.0;  // seconds
  std::array<double, kChannels> channels{};
};

struct Recording {
  std::string subject_id;
  std::string class_label;
  double rate_hz = 0.0;
  std::vector<ImuSample> samples;
};

/// One model input: 60 time steps (rows) by 6 channels (columns).
struct Window {
  WindowMatrix<float> data = WindowMatrix<float>::Zero();
  std::optional<std::string> label;
  std::string subject_id;
  std::uint32_t recording = 0;  // index of the source recording within its dataset

  bool finite() const { return data.allFinite(); }
};

struct ChannelStats {
  ChannelVector<float> mean = ChannelVector<float>::Zero();
  ChannelVector<float> std = ChannelVector<float>::Ones();

  bool operator==(const ChannelStats& o) const { return mean == o.mean && std == o.std; }
};

struct DatasetSplit {
  std::vector<Window> generalized;
  std::map<std::string, std::vector<Window>> personalized;  // exactly kPersonalizedSubjects entries
};

/// Linear interpolation onto the uniform grid t_first + k / target_hz covering
/// [t_first, t_last]. Grid points that coincide with a source timestamp copy
/// that sample exactly.
Recording resample(const Recording& rec, double target_hz);

/// Windows of kWindowLength rows every kWindowStride rows; the trailing
/// remainder is dropped. Requires rec.rate_hz == kTargetRateHz.
std::vector<Window> make_windows(const Recording& rec, std::uint32_t recording_index = 0);

/// floor((L - 60) / 30) + 1 for L >= 60, otherwise 0.
constexpr std::size_t window_count(std::size_t length) noexcept {
  return length < kWindowLength ? 0 : (length - kWindowLength) / kWindowStride + 1;
}

/// Population mean / standard deviation over every row of every window; std
/// is floored at kEpsilonStd.
ChannelStats fit_channel_stats(std::span<const Window> windows);

Window normalize(const Window& w, const ChannelStats& stats);
Window denormalize(const Window& w, const ChannelStats& stats);

/// Scalar-generic z-score for callers holding their own matrix type.
template <class Derived>
auto normalize_rows(const Eigen::MatrixBase<Derived>& x, const ChannelStats& stats) {
  using S = typename Derived::Scalar;
  const auto mean = stats.mean.template cast<S>().transpose();
  const auto std = stats.std.template cast<S>().transpose();
  return ((x.rowwise() - mean).array().rowwise() / std.array()).matrix();
}

/// Seeded choice of the kPersonalizedSubjects held-out users; a pure function
/// of (subject set, seed).
std::set<std::string> choose_personalized_subjects(const std::set<std::string>& subjects, std::uint64_t seed);

/// Resample to 20 Hz, window, and partition by subject.
DatasetSplit slice_dataset(std::span<const Recording> recordings, std::uint64_t seed);

/// Same partition, starting from already windowed data.
DatasetSplit slice_windows(std::span<const Window> windows, std::uint64_t seed);

/// Resample every recording to 20 Hz and window it; window.recording is the
/// index of the recording in the input.
std::vector<Window> windows_from_recordings(std::span<const Recording> recordings);

std::set<std::string> subjects_of(std::span<const Recording> recordings);
std::set<std::string> subjects_of(std::span<const Window> windows);

// ---------------------------------------------------------------------------
// TWIN windowed-dataset file.

struct WindowedDataset {
  std::vector<std::string> classes;
  std::vector<Window> windows;
};

std::vector<std::uint8_t> encode_twin(const WindowedDataset& dataset);
WindowedDataset decode_twin(std::span<const std::uint8_t> bytes);
void write_twin(const std::string& path, const WindowedDataset& dataset);
WindowedDataset read_twin(const std::string& path);

}  // namespace tinyfit
