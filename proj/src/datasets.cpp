#include "tinyfit/datasets.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <regex>

#include "tinyfit/error.hpp"

namespace fs = std::filesystem;

namespace tinyfit {

const std::vector<std::pair<char, std::string>>& wisdm_activities() {
  static const std::vector<std::pair<char, std::string>> table = {
      {'A', "walking"},  {'B', "jogging"},  {'C', "stairs"},   {'D', "sitting"},  {'E', "standing"},
      {'F', "typing"},   {'G', "teeth"},    {'H', "soup"},     {'I', "chips"},    {'J', "pasta"},
      {'K', "drinking"}, {'L', "sandwich"}, {'M', "kicking"},  {'O', "catch"},    {'P', "dribbling"},
      {'Q', "writing"},  {'R', "clapping"}, {'S', "folding"},
  };
  return table;
}

const std::vector<std::pair<int, std::string>>& pamap2_activities() {
  static const std::vector<std::pair<int, std::string>> table = {
      {1, "lying"},           {2, "sitting"},           {3, "standing"},          {4, "walking"},
      {5, "running"},         {6, "cycling"},           {7, "nordic_walking"},    {12, "ascending_stairs"},
      {13, "descending_stairs"}, {16, "vacuum_cleaning"}, {17, "ironing"},        {24, "rope_jumping"},
  };
  return table;
}

std::set<std::string> LoadedDataset::classes() const {
  std::set<std::string> out;
  for (const auto& r : recordings) out.insert(r.class_label);
  return out;
}

namespace {

constexpr std::size_t kMaxNotes = 20;

void note_malformed(LoadReport& report, const std::string& file, std::size_t line, const std::string& why) {
  ++report.malformed_rows;
  if (report.notes.size() < kMaxNotes) report.notes.push_back(file + ":" + std::to_string(line) + ": " + why);
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r' || s.back() == '\n' || s.back() == ';'))
    s.remove_suffix(1);
  return s;
}

template <class T>
bool parse_number(std::string_view s, T& out) {
  s = trim(s);
  if (s.empty()) return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

// NaN tokens are legal in PAMAP2; from_chars accepts "NaN" and "nan".
bool parse_double_field(std::string_view s, double& out) { return parse_number(s, out); }

struct TimedTriplet {
  double t;
  std::array<double, 3> v;
};

// WISDM ---------------------------------------------------------------------

fs::path resolve_wisdm_dir(const fs::path& root) {
  for (const auto& candidate : {root / "raw" / "watch", root / "watch", root}) {
    if (fs::is_directory(candidate / "accel") && fs::is_directory(candidate / "gyro")) return candidate;
  }
  throw Error(Errc::DatasetNotFound, "no WISDM watch accel/gyro directories under " + root.string());
}

std::map<std::string, fs::path> list_wisdm_files(const fs::path& dir, const std::string& sensor) {
  const std::regex pattern("data_([0-9]+)_" + sensor + "_watch\\.txt");
  std::map<std::string, fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    std::smatch m;
    const std::string name = entry.path().filename().string();
    if (entry.is_regular_file() && std::regex_match(name, m, pattern)) out.emplace(m[1].str(), entry.path());
  }
  return out;
}

// Activity code -> samples in file order with timestamps in seconds.
std::map<char, std::vector<TimedTriplet>> read_wisdm_stream(const fs::path& file, LoadReport& report) {
  std::ifstream in(file);
  if (!in) throw Error(Errc::DatasetNotFound, "cannot open " + file.string());
  ++report.files;
  std::map<char, std::vector<TimedTriplet>> out;
  std::set<char> known;
  for (const auto& [code, name] : wisdm_activities()) known.insert(code);

  std::string line;
  std::size_t line_no = 0;
  const std::string fname = file.filename().string();
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view sv = trim(line);
    if (sv.empty()) continue;
    std::array<std::string_view, 6> fields;
    std::size_t n = 0;
    while (n < fields.size()) {
      const auto comma = sv.find(',');
      fields[n++] = sv.substr(0, comma);
      if (comma == std::string_view::npos) {
        sv = {};
        break;
      }
      sv.remove_prefix(comma + 1);
    }
    if (n != 6 || !sv.empty()) {
      note_malformed(report, fname, line_no, "expected 6 comma-separated fields");
      continue;
    }
    const auto activity = trim(fields[1]);
    std::int64_t ts = 0;
    TimedTriplet s{};
    if (activity.size() != 1 || !parse_number(fields[2], ts) || !parse_double_field(fields[3], s.v[0]) ||
        !parse_double_field(fields[4], s.v[1]) || !parse_double_field(fields[5], s.v[2]) ||
        !std::isfinite(s.v[0]) || !std::isfinite(s.v[1]) || !std::isfinite(s.v[2])) {
      note_malformed(report, fname, line_no, "unparsable or non-finite field");
      continue;
    }
    if (!known.contains(activity[0])) {
      ++report.dropped_rows;
      continue;
    }
    s.t = static_cast<double>(ts) * 1e-9;  // nanoseconds
    auto& stream = out[activity[0]];
    if (!stream.empty() && s.t < stream.back().t) {
      note_malformed(report, fname, line_no, "timestamp goes backwards");
      continue;
    }
    stream.push_back(s);
    ++report.rows;
  }
  return out;
}

// The accel and gyro streams of one activity were started together but carry
// independent clocks; align them on time since each stream's first sample and
// interpolate the gyro onto the accel timestamps over the common duration.
std::vector<ImuSample> join_streams(const std::vector<TimedTriplet>& accel, const std::vector<TimedTriplet>& gyro) {
  std::vector<ImuSample> out;
  if (accel.size() < 2 || gyro.size() < 2) return out;
  const double a0 = accel.front().t;
  const double g0 = gyro.front().t;
  const double duration = std::min(accel.back().t - a0, gyro.back().t - g0);
  std::size_t j = 0;
  for (const auto& a : accel) {
    const double t = a.t - a0;
    if (t > duration) break;
    while (j + 1 < gyro.size() && gyro[j + 1].t - g0 <= t) ++j;
    ImuSample s;
    s.t = t;
    s.channels[0] = a.v[0];
    s.channels[1] = a.v[1];
    s.channels[2] = a.v[2];
    const auto& ga = gyro[j];
    if (j + 1 == gyro.size() || ga.t - g0 == t) {
      for (int c = 0; c < 3; ++c) s.channels[3 + c] = ga.v[c];
    } else {
      const auto& gb = gyro[j + 1];
      const double f = (t - (ga.t - g0)) / (gb.t - ga.t);
      for (int c = 0; c < 3; ++c) s.channels[3 + c] = ga.v[c] + (gb.v[c] - ga.v[c]) * f;
    }
    out.push_back(s);
  }
  return out;
}

// PAMAP2 --------------------------------------------------------------------

fs::path resolve_pamap2_dir(const fs::path& root) {
  for (const auto& candidate : {root / "Protocol", root / "PAMAP2_Dataset" / "Protocol", root}) {
    if (!fs::is_directory(candidate)) continue;
    for (const auto& entry : fs::directory_iterator(candidate))
      if (entry.path().extension() == ".dat") return candidate;
  }
  throw Error(Errc::DatasetNotFound, "no PAMAP2 Protocol/*.dat files under " + root.string());
}

constexpr double kPamapRateHz = 100.0;
constexpr double kMaxGapSeconds = 1.0;

void read_pamap2_file(const fs::path& file, const std::map<int, std::string>& activities, LoadReport& report,
                      std::vector<Recording>& out) {
  std::ifstream in(file);
  if (!in) throw Error(Errc::DatasetNotFound, "cannot open " + file.string());
  ++report.files;
  const std::string fname = file.filename().string();
  const std::string subject = file.stem().string();

  Recording current;
  int current_activity = -1;
  auto flush = [&] {
    if (current.samples.size() >= 2) out.push_back(std::move(current));
    current = Recording{};
    current_activity = -1;
  };

  // Columns used: 0 timestamp, 1 activity id, 4-6 hand acc ±16 g, 10-12 hand gyro.
  constexpr std::size_t kNeeded = 13;
  std::string line;
  std::size_t line_no = 0;
  std::array<std::string_view, kNeeded> fields;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view sv = trim(line);
    if (sv.empty()) continue;
    std::size_t n = 0;
    while (n < kNeeded && !sv.empty()) {
      while (!sv.empty() && (sv.front() == ' ' || sv.front() == '\t')) sv.remove_prefix(1);
      const auto end = sv.find_first_of(" \t");
      fields[n++] = sv.substr(0, end);
      sv = end == std::string_view::npos ? std::string_view{} : sv.substr(end);
    }
    double t = 0;
    int activity = 0;
    if (n < kNeeded || !parse_double_field(fields[0], t) || !parse_number(fields[1], activity) || !std::isfinite(t)) {
      note_malformed(report, fname, line_no, "expected timestamp, activity id and hand IMU columns");
      continue;
    }
    auto act = activities.find(activity);
    if (act == activities.end()) {
      ++report.dropped_rows;
      flush();
      continue;
    }
    ImuSample s;
    s.t = t;
    const std::array<std::size_t, kChannels> cols = {4, 5, 6, 10, 11, 12};
    bool ok = true;
    for (int c = 0; c < kChannels; ++c) ok = ok && parse_double_field(fields[cols[c]], s.channels[c]) && std::isfinite(s.channels[c]);
    if (!ok) {
      note_malformed(report, fname, line_no, "missing or non-finite hand IMU value");
      continue;
    }
    if (activity == current_activity && !current.samples.empty() && t < current.samples.back().t) {
      note_malformed(report, fname, line_no, "timestamp goes backwards");
      continue;
    }
    const bool contiguous = activity == current_activity && !current.samples.empty() &&
                            t - current.samples.back().t <= kMaxGapSeconds;
    if (!contiguous) {
      flush();
      current.subject_id = subject;
      current.class_label = act->second;
      current.rate_hz = kPamapRateHz;
      current_activity = activity;
    }
    current.samples.push_back(s);
    ++report.rows;
  }
  flush();
}

void sort_recordings(std::vector<Recording>& recs) {
  std::stable_sort(recs.begin(), recs.end(), [](const Recording& a, const Recording& b) {
    return std::tie(a.subject_id, a.class_label) < std::tie(b.subject_id, b.class_label);
  });
}

}  // namespace

LoadedDataset load_wisdm(const std::string& path) {
  const fs::path dir = resolve_wisdm_dir(path);
  const auto accel_files = list_wisdm_files(dir / "accel", "accel");
  const auto gyro_files = list_wisdm_files(dir / "gyro", "gyro");
  if (accel_files.empty()) throw Error(Errc::DatasetNotFound, "no WISDM accel files in " + (dir / "accel").string());

  std::map<char, std::string> names(wisdm_activities().begin(), wisdm_activities().end());
  LoadedDataset ds;
  for (const auto& [subject, accel_path] : accel_files) {
    auto gyro_it = gyro_files.find(subject);
    if (gyro_it == gyro_files.end()) {
      ds.report.notes.push_back("subject " + subject + " has no gyro file; skipped");
      continue;
    }
    const auto accel = read_wisdm_stream(accel_path, ds.report);
    const auto gyro = read_wisdm_stream(gyro_it->second, ds.report);
    for (const auto& [code, accel_stream] : accel) {
      auto g = gyro.find(code);
      if (g == gyro.end()) continue;
      Recording rec;
      rec.subject_id = subject;
      rec.class_label = names.at(code);
      rec.rate_hz = kTargetRateHz;
      rec.samples = join_streams(accel_stream, g->second);
      if (rec.samples.size() >= 2) ds.recordings.push_back(std::move(rec));
    }
  }
  sort_recordings(ds.recordings);
  return ds;
}

LoadedDataset load_pamap2(const std::string& path) {
  const fs::path dir = resolve_pamap2_dir(path);
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".dat") files.push_back(entry.path());
  std::sort(files.begin(), files.end());

  const std::map<int, std::string> activities(pamap2_activities().begin(), pamap2_activities().end());
  LoadedDataset ds;
  for (const auto& f : files) read_pamap2_file(f, activities, ds.report, ds.recordings);
  sort_recordings(ds.recordings);
  return ds;
}

}  // namespace tinyfit
