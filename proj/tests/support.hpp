#pragma once

#include <doctest.h>

#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "tinyfit/error.hpp"
#include "tinyfit/random.hpp"
#include "tinyfit/signal.hpp"

namespace tinyfit::test {

/// `n` samples at `rate_hz`, channel c of sample i = f(i, c).
inline Recording make_recording(std::size_t n, double rate_hz, const std::function<double(std::size_t, int)>& f,
                                std::string subject = "s0", std::string label = "walk") {
  Recording r;
  r.subject_id = std::move(subject);
  r.class_label = std::move(label);
  r.rate_hz = rate_hz;
  r.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    r.samples[i].t = static_cast<double>(i) / rate_hz;
    for (int c = 0; c < kChannels; ++c) r.samples[i].channels[static_cast<std::size_t>(c)] = f(i, c);
  }
  return r;
}

/// Windows whose channels carry a class-specific mean plus unit noise; the
/// means are far enough apart that the classes are linearly separable.
inline std::vector<Window> separable_windows(int classes, int per_class, std::uint64_t seed,
                                             const std::vector<std::string>& names, const std::string& subject = "s0",
                                             double spread = 3.0) {
  Rng rng(seed);
  std::vector<Window> out;
  for (int k = 0; k < classes; ++k)
    for (int i = 0; i < per_class; ++i) {
      Window w;
      for (int r = 0; r < kWindowLength; ++r)
        for (int c = 0; c < kChannels; ++c)
          w.data(r, c) = static_cast<float>((c % classes == k ? spread : 0.0) + 0.5 * rng.normal());
      w.label = names[static_cast<std::size_t>(k)];
      w.subject_id = subject;
      w.recording = static_cast<std::uint32_t>(k * 1000 + i / 10);
      out.push_back(std::move(w));
    }
  return out;
}

inline std::vector<std::string> class_names(int n) {
  std::vector<std::string> out;
  for (int i = 0; i < n; ++i) out.push_back("c" + std::to_string(i));
  return out;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("tinyfit_test_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const noexcept { return path_; }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

/// Runs `fn` and returns the Errc it raised; fails the test if none.
template <class F>
Errc error_code_of(F&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected a tinyfit::Error");
  return Errc::Io;
}

}  // namespace tinyfit::test
