#pragma once

// Writers that lay out miniature datasets exactly like the published WISDM
// 2019 and PAMAP2 archives, so the loaders can be tested without the data.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "tinyfit/datasets.hpp"

namespace tinyfit::test {

struct WisdmFixture {
  std::vector<int> subjects;                 // e.g. 1600..1650
  std::vector<char> activities;              // codes A..S
  double seconds = 4.0;                      // per activity
  double rate_hz = 20.0;
  bool corrupt_rows = false;                 // sprinkle malformed lines
};

/// raw/watch/{accel,gyro}/data_<id>_<sensor>_watch.txt with lines
/// "<subject>,<code>,<timestamp ns>,x,y,z;". The gyro clock starts at an
/// unrelated epoch, as in the real archive.
inline void write_wisdm(const std::filesystem::path& root, const WisdmFixture& f) {
  for (const char* sensor : {"accel", "gyro"}) {
    const auto dir = root / "raw" / "watch" / sensor;
    std::filesystem::create_directories(dir);
    for (int s : f.subjects) {
      std::ofstream out(dir / ("data_" + std::to_string(s) + "_" + sensor + "_watch.txt"));
      long long ts = std::string(sensor) == "accel" ? 90426708196641LL : 174222060142568LL;
      int line = 0;
      for (char a : f.activities) {
        const int n = static_cast<int>(f.seconds * f.rate_hz);
        const double base = (a - 'A') * 0.7 + (s % 7) * 0.05;
        for (int i = 0; i < n; ++i) {
          ts += static_cast<long long>(1e9 / f.rate_hz);
          const double ph = 2.0 * 3.14159265358979 * (1.0 + 0.1 * (a - 'A')) * i / f.rate_hz;
          char buf[160];
          std::snprintf(buf, sizeof buf, "%d,%c,%lld,%.6f,%.6f,%.6f;\n", s, a, ts, base + std::sin(ph),
                        base - std::cos(ph), 9.81 + 0.1 * std::sin(2 * ph));
          out << buf;
          if (f.corrupt_rows && ++line % 97 == 0) out << s << "," << a << ",notanumber,1,2,3;\n";
        }
      }
      if (f.corrupt_rows) out << s << ",Z," << ts + 1 << ",0,0,0;\n";  // unknown activity code
    }
  }
}

struct Pamap2Fixture {
  std::vector<int> subjects;   // 101..109
  std::vector<int> activities; // protocol ids
  double seconds = 4.0;
  bool missing_values = false;  // NaN hand readings on some rows
};

/// Protocol/subject<id>.dat: 54 space-separated columns at 100 Hz; each
/// activity is preceded by transient (activity 0) rows.
inline void write_pamap2(const std::filesystem::path& root, const Pamap2Fixture& f) {
  const auto dir = root / "Protocol";
  std::filesystem::create_directories(dir);
  for (int s : f.subjects) {
    std::ofstream out(dir / ("subject" + std::to_string(s) + ".dat"));
    double t = 5.64;
    auto row = [&](int activity, int i) {
      std::vector<double> cols(54, 0.0);
      cols[0] = t;
      cols[1] = activity;
      cols[2] = i % 10 == 0 ? 100.0 : NAN;  // heart rate is sampled at ~9 Hz
      cols[3] = 30.0;                       // hand temperature
      const double ph = 2.0 * 3.14159265358979 * (0.5 + 0.05 * activity) * t;
      for (int c = 0; c < 3; ++c) {
        cols[4 + c] = activity * 0.3 + std::sin(ph + c);  // ±16 g accel
        cols[7 + c] = cols[4 + c] * 0.99;                  // ±6 g accel
        cols[10 + c] = std::cos(ph + c);                   // gyro
        cols[13 + c] = 20.0;                               // magnetometer
      }
      if (f.missing_values && i % 50 == 7) cols[5] = NAN;
      for (std::size_t c = 0; c < cols.size(); ++c) {
        if (c) out << ' ';
        if (c == 1) out << static_cast<int>(cols[c]);
        else if (std::isnan(cols[c])) out << "NaN";
        else out << cols[c];
      }
      out << '\n';
      t += 0.01;
    };
    for (int a : f.activities) {
      for (int i = 0; i < 150; ++i) row(0, i);
      const int n = static_cast<int>(f.seconds * 100);
      for (int i = 0; i < n; ++i) row(a, i);
    }
  }
}

}  // namespace tinyfit::test
