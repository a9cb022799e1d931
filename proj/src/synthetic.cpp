#include "tinyfit/synthetic.hpp"

#include <Eigen/Geometry>

#include <cmath>
#include <numbers>

#include "tinyfit/error.hpp"

namespace tinyfit {

namespace {

Eigen::Matrix3d random_tilt(Rng& rng, double max_deg) {
  Eigen::Vector3d axis(rng.normal(), rng.normal(), rng.normal());
  axis.normalize();
  const double angle = rng.uniform(-max_deg, max_deg) * std::numbers::pi / 180.0;
  return Eigen::AngleAxisd(angle, axis).toRotationMatrix();
}

}  // namespace

SyntheticGenerator::SyntheticGenerator(SyntheticConfig config) : config_(std::move(config)) {
  const int n_classes = static_cast<int>(config_.classes.size());
  if (n_classes < 2) throw Error(Errc::BadClassCount, "synthetic generator needs at least 2 classes");
  if (config_.subjects < 1) throw Error(Errc::BadInput, "synthetic generator needs at least 1 subject");
  Rng rng(config_.seed);

  // Fundamentals spread over disjoint bands from 0.4 Hz to ~3.6 Hz.
  for (int c = 0; c < n_classes; ++c) {
    ClassSignature sig;
    const double band = 3.2 / n_classes;
    sig.frequency = 0.4 + band * (c + rng.uniform(0.2, 0.8));
    sig.offset.head<3>() = Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal()).normalized();
    sig.offset.tail<3>().setZero();
    for (int ch = 0; ch < kChannels; ++ch) {
      const double level = (c % 3 == 0 ? 1.2 : c % 3 == 1 ? 0.7 : 0.35) * rng.uniform(0.5, 1.5);
      for (int h = 0; h < 3; ++h) {
        sig.amplitude(ch, h) = level * rng.uniform(0.2, 1.0) / (h + 1);
        sig.phase(ch, h) = rng.uniform(0.0, 2.0 * std::numbers::pi);
      }
    }
    classes_.push_back(sig);
  }

  for (int s = 0; s < config_.subjects; ++s) {
    SubjectStyle st;
    st.orientation = random_tilt(rng, config_.max_tilt_deg);
    st.tempo = rng.uniform(0.85, 1.15);
    st.intensity = rng.uniform(0.75, 1.3);
    for (int c = 0; c < n_classes; ++c) {
      ChannelVector<double> b;
      for (int ch = 0; ch < kChannels; ++ch) b(ch) = rng.normal(0.0, config_.style);
      st.bias.push_back(b);
      st.class_tempo.push_back(rng.uniform(0.85, 1.15));
    }
    subjects_.push_back(std::move(st));
  }
}

std::string SyntheticGenerator::subject_name(int subject) const {
  char buf[16];
  std::snprintf(buf, sizeof buf, "u%02d", subject);
  return buf;
}

ChannelVector<double> SyntheticGenerator::clean(int subject, int cls, double t, double phase) const {
  const auto& sig = classes_.at(static_cast<std::size_t>(cls));
  const auto& st = subjects_.at(static_cast<std::size_t>(subject));
  const double f = sig.frequency * st.tempo * st.class_tempo[static_cast<std::size_t>(cls)];
  ChannelVector<double> body = sig.offset;
  for (int ch = 0; ch < kChannels; ++ch)
    for (int h = 0; h < 3; ++h)
      body(ch) += st.intensity * sig.amplitude(ch, h) *
                  std::sin(2.0 * std::numbers::pi * f * (h + 1) * t + sig.phase(ch, h) + phase * (h + 1));
  body += st.bias[static_cast<std::size_t>(cls)];
  ChannelVector<double> out;
  out.head<3>() = st.orientation * body.head<3>();
  out.tail<3>() = st.orientation * body.tail<3>();
  return out;
}

Recording SyntheticGenerator::record(int subject, int cls, double seconds, Rng& noise, double phase) const {
  Recording rec;
  rec.subject_id = subject_name(subject);
  rec.class_label = config_.classes.at(static_cast<std::size_t>(cls));
  rec.rate_hz = config_.rate_hz;
  const auto n = static_cast<std::size_t>(std::floor(seconds * config_.rate_hz + 1e-9));
  rec.samples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    ImuSample s;
    s.t = static_cast<double>(i) / config_.rate_hz;
    const auto x = clean(subject, cls, s.t, phase);
    for (int ch = 0; ch < kChannels; ++ch) s.channels[ch] = x(ch) + noise.normal(0.0, config_.noise);
    rec.samples.push_back(s);
  }
  return rec;
}

std::vector<Recording> SyntheticGenerator::dataset() const {
  std::vector<Recording> out;
  Rng noise(config_.seed ^ 0x5eedULL);
  const int n_classes = static_cast<int>(config_.classes.size());
  for (int s = 0; s < config_.subjects; ++s) {
    // Classes in name order so the inventory matches the loaders' sort.
    std::vector<int> order(n_classes);
    for (int c = 0; c < n_classes; ++c) order[c] = c;
    std::sort(order.begin(), order.end(), [&](int a, int b) { return config_.classes[a] < config_.classes[b]; });
    for (int c : order)
      for (int r = 0; r < config_.recordings_per_class; ++r)
        out.push_back(record(s, c, config_.seconds_per_recording, noise, noise.uniform(0.0, 2.0 * std::numbers::pi)));
  }
  return out;
}

}  // namespace tinyfit
