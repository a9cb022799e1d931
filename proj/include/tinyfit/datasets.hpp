#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tinyfit/signal.hpp"

namespace tinyfit {

struct LoadReport {
  std::size_t files = 0;
  std::size_t rows = 0;            // rows accepted
  std::size_t malformed_rows = 0;  // unparsable, non-finite, or out-of-order rows
  std::size_t dropped_rows = 0;    // well-formed rows outside the retained activity set
  std::vector<std::string> notes;  // first few malformed-row diagnostics
};

struct LoadedDataset {
  std::vector<Recording> recordings;  // sorted by (subject, class)
  LoadReport report;

  std::set<std::string> classes() const;
};

/// WISDM 2019 smartwatch streams: raw/watch/{accel,gyro}/data_<id>_<sensor>_watch.txt.
/// `path` may point at the dataset root, at raw/, or at raw/watch/.
LoadedDataset load_wisdm(const std::string& path);

/// PAMAP2 protocol files: Protocol/subject1NN.dat. `path` may point at the
/// dataset root or at Protocol/ itself. Only the wrist ("hand") IMU's ±16 g
/// accelerometer and gyroscope columns are kept; activity 0 rows are dropped.
LoadedDataset load_pamap2(const std::string& path);

/// Activity names for the WISDM activity codes A..S (N is unused).
const std::vector<std::pair<char, std::string>>& wisdm_activities();

/// Activity names for the 12 PAMAP2 protocol activities, keyed by id.
const std::vector<std::pair<int, std::string>>& pamap2_activities();

}  // namespace tinyfit
