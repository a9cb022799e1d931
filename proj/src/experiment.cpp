#include "tinyfit/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include "tinyfit/json_config.hpp"
#include "tinyfit/random.hpp"

namespace tinyfit::experiment {

using nlohmann::json;

void read_train_config(const json& obj, nn::TrainConfig& t, const std::string& where) {
  reject_unknown_keys(obj,
                 {"learning_rate", "batch_size", "epochs", "seed", "beta1", "beta2", "epsilon", "shuffle",
                  "validation_fraction"},
                 where);
  read_config_key(obj, "learning_rate", t.learning_rate, where);
  read_config_key(obj, "batch_size", t.batch_size, where);
  read_config_key(obj, "epochs", t.epochs, where);
  read_config_key(obj, "seed", t.seed, where);
  read_config_key(obj, "beta1", t.beta1, where);
  read_config_key(obj, "beta2", t.beta2, where);
  read_config_key(obj, "epsilon", t.epsilon, where);
  read_config_key(obj, "shuffle", t.shuffle, where);
  read_config_key(obj, "validation_fraction", t.validation_fraction, where);
  t.validate();
}

namespace {

json train_json(const nn::TrainConfig& t) {
  return {{"learning_rate", t.learning_rate}, {"batch_size", t.batch_size}, {"epochs", t.epochs},
          {"seed", t.seed},                   {"beta1", t.beta1},           {"beta2", t.beta2},
          {"epsilon", t.epsilon},             {"shuffle", t.shuffle},       {"validation_fraction", t.validation_fraction}};
}

}  // namespace

ExperimentConfig parse_config(const std::string& text) {
  const json doc = parse_json_config(text);
  ExperimentConfig c;
  reject_unknown_keys(doc, {"slice_seed", "test_fraction", "train", "personalize"}, "");
  read_config_key(doc, "slice_seed", c.slice_seed, "");
  read_config_key(doc, "test_fraction", c.test_fraction, "");
  if (!(c.test_fraction > 0.0 && c.test_fraction < 1.0))
    throw Error(Errc::BadConfig, "test_fraction must lie in (0, 1)");
  if (doc.contains("train")) read_train_config(doc["train"], c.train, "train.");
  if (doc.contains("personalize")) {
    const auto& p = doc["personalize"];
    reject_unknown_keys(p, {"examples_per_class", "train"}, "personalize.");
    read_config_key(p, "examples_per_class", c.personalize.examples_per_class, "personalize.");
    if (c.personalize.examples_per_class < 1) throw Error(Errc::BadConfig, "examples_per_class must be at least 1");
    if (p.contains("train")) read_train_config(p["train"], c.personalize.train, "personalize.train.");
  }
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::Io, "cannot open config " + path, {{"path", path}});
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

json to_json(const ExperimentConfig& c) {
  return {{"slice_seed", c.slice_seed},
          {"test_fraction", c.test_fraction},
          {"train", train_json(c.train)},
          {"personalize",
           {{"examples_per_class", c.personalize.examples_per_class}, {"train", train_json(c.personalize.train)}}}};
}

double relative_change(double a, double b) {
  if (b == 0.0) throw Error(Errc::BadInput, "relative change against zero");
  return (a - b) / b;
}

RecordingSplit split_by_recording(std::span<const Window> windows, double test_fraction, std::uint64_t seed) {
  std::map<std::string, std::vector<std::uint32_t>> by_class;
  std::set<std::uint32_t> seen;
  for (const auto& w : windows) {
    if (!w.label) throw Error(Errc::BadLabel, "unlabeled window in generalized data");
    if (seen.insert(w.recording).second) by_class[*w.label].push_back(w.recording);
  }
  Rng rng(seed);
  std::set<std::uint32_t> test_ids;
  for (auto& [cls, ids] : by_class) {
    std::sort(ids.begin(), ids.end());
    rng.shuffle(std::span(ids));
    auto n = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(ids.size())));
    if (ids.size() >= 2) n = std::clamp<std::size_t>(n, 1, ids.size() - 1);
    else n = 0;
    test_ids.insert(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n));
  }
  RecordingSplit out;
  for (const auto& w : windows) (test_ids.count(w.recording) ? out.test : out.train).push_back(w);
  return out;
}

namespace {

std::vector<Window> normalized(std::span<const Window> windows, const ChannelStats& stats) {
  std::vector<Window> out;
  out.reserve(windows.size());
  for (const auto& w : windows) out.push_back(normalize(w, stats));
  return out;
}

std::vector<std::string> sorted_names(const std::set<std::string>& s) { return {s.begin(), s.end()}; }

}  // namespace

GeneralizedResult train_generalized(const WindowedDataset& dataset, const ExperimentConfig& config) {
  const DatasetSplit split = slice_windows(dataset.windows, config.slice_seed);
  const RecordingSplit rs = split_by_recording(split.generalized, config.test_fraction, config.slice_seed);
  if (rs.train.empty() || rs.test.empty()) throw Error(Errc::EmptyDataset, "generalized split left an empty side");

  GeneralizedResult out;
  out.stats = fit_channel_stats(rs.train);
  const auto train_w = normalized(rs.train, out.stats);
  const auto test_w = normalized(rs.test, out.stats);

  auto trained = nn::train(nn::init_model(dataset.classes, config.train.seed), train_w, config.train);
  out.model = std::move(trained.model);
  out.history = std::move(trained.history);
  out.gs_accuracy = nn::evaluate(out.model, test_w).accuracy;
  out.train_windows = train_w.size();
  out.test_windows = test_w.size();
  out.generalized_subjects = sorted_names(subjects_of(split.generalized));
  for (const auto& [s, _] : split.personalized) out.personalized_subjects.push_back(s);
  return out;
}

std::optional<double> ExperimentReport::gs_to_ps_gm_drop() const {
  if (!gs) return std::nullopt;
  return (*gs - ps_gm) / *gs;
}

ExperimentReport eval_personalized(const nn::Checkpoint& checkpoint, const WindowedDataset& dataset,
                                   const ExperimentConfig& config, const std::string& dataset_tag) {
  const auto& gm = checkpoint.model;
  if (gm.classes != dataset.classes)
    throw Error(Errc::BadClassCount, "checkpoint class map does not match the dataset");
  const DatasetSplit split = slice_windows(dataset.windows, config.slice_seed);
  const int per_class = config.personalize.examples_per_class;

  ExperimentReport report;
  report.dataset = dataset_tag;
  report.classes = dataset.classes;
  report.config = config;

  // Same recording split train_generalized used, so GS matches its report.
  const RecordingSplit rs = split_by_recording(split.generalized, config.test_fraction, config.slice_seed);
  if (!rs.test.empty()) report.gs = nn::evaluate(gm, normalized(rs.test, checkpoint.stats)).accuracy;

  for (const auto& [subject, raw] : split.personalized) {
    UserResult u;
    u.subject = subject;
    std::map<std::string, std::size_t> counts;
    for (const auto& w : raw) ++counts[*w.label];
    std::vector<std::string> kept;
    for (const auto& cls : gm.classes) {
      if (counts[cls] >= static_cast<std::size_t>(per_class)) kept.push_back(cls);
      else if (counts[cls] > 0) u.excluded_classes.push_back(cls);
    }
    if (kept.size() < 2)
      throw Error(Errc::InsufficientExamples, "user " + subject + " has fewer than 2 classes with enough windows",
                  {{"subject", subject}, {"need", std::to_string(per_class)}});

    std::vector<Window> user;
    for (const auto& w : raw)
      if (std::find(kept.begin(), kept.end(), *w.label) != kept.end()) user.push_back(normalize(w, checkpoint.stats));

    u.gm_windows = user.size();
    u.ps_gm = nn::evaluate(gm, user).accuracy;

    nn::PersonalizeOptions opts = config.personalize;
    opts.classes = kept;
    const auto pr = nn::personalize(gm, user, opts);
    const std::set<std::size_t> tuned(pr.fine_tune_indices.begin(), pr.fine_tune_indices.end());
    std::vector<Window> rest;
    std::vector<std::size_t> rest_ids;
    for (std::size_t i = 0; i < user.size(); ++i)
      if (!tuned.count(i)) {
        rest.push_back(user[i]);
        rest_ids.push_back(i);
      }
    u.leaked_windows = static_cast<std::size_t>(
        std::count_if(rest_ids.begin(), rest_ids.end(), [&](std::size_t i) { return tuned.count(i) > 0; }));
    u.fine_tune_windows = tuned.size();
    u.pm_windows = rest.size();
    if (rest.empty()) throw Error(Errc::InsufficientExamples, "no windows left to evaluate user " + subject);
    u.ps_pm = nn::evaluate(pr.model, rest).accuracy;
    report.users.push_back(std::move(u));
  }

  for (const auto& u : report.users) {
    report.ps_gm += u.ps_gm;
    report.ps_pm += u.ps_pm;
  }
  report.ps_gm /= static_cast<double>(report.users.size());
  report.ps_pm /= static_cast<double>(report.users.size());
  return report;
}

json to_json(const ExperimentReport& r) {
  json users = json::array();
  for (const auto& u : r.users)
    users.push_back({{"subject", u.subject},
                     {"ps_gm", u.ps_gm},
                     {"ps_pm", u.ps_pm},
                     {"gm_windows", u.gm_windows},
                     {"fine_tune_windows", u.fine_tune_windows},
                     {"pm_windows", u.pm_windows},
                     {"leaked_windows", u.leaked_windows},
                     {"excluded_classes", u.excluded_classes}});
  json j = {{"dataset", r.dataset},
            {"classes", r.classes},
            {"gs", r.gs ? json(*r.gs) : json(nullptr)},
            {"ps_gm", r.ps_gm},
            {"ps_pm", r.ps_pm},
            {"gs_to_ps_gm_drop", r.gs_to_ps_gm_drop() ? json(*r.gs_to_ps_gm_drop()) : json(nullptr)},
            {"ps_pm_gain", r.ps_gain()},
            {"users", users},
            {"seeds", {{"slice", r.config.slice_seed}, {"train", r.config.train.seed},
                       {"personalize", r.config.personalize.train.seed}}},
            {"config", to_json(r.config)}};
  return j;
}

std::string render_table(const ExperimentReport& r) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << "dataset: " << r.dataset << "  classes: " << r.classes.size() << "\n";
  os << "subject        PS-GM    PS-PM   gm_n  ft_n  pm_n  excluded\n";
  for (const auto& u : r.users) {
    os << std::left << std::setw(12) << u.subject << std::right << std::setw(9) << u.ps_gm << std::setw(9) << u.ps_pm
       << std::setw(7) << u.gm_windows << std::setw(6) << u.fine_tune_windows << std::setw(6) << u.pm_windows << "  ";
    for (std::size_t i = 0; i < u.excluded_classes.size(); ++i) os << (i ? "," : "") << u.excluded_classes[i];
    os << "\n";
  }
  os << "GS     " << (r.gs ? std::to_string(*r.gs) : std::string("n/a")) << "\n";
  os << "PS-GM  " << r.ps_gm << "\n";
  os << "PS-PM  " << r.ps_pm << "\n";
  if (auto d = r.gs_to_ps_gm_drop()) os << "GS -> PS-GM relative drop  " << std::setprecision(2) << 100 * *d << " %\n";
  os << "PS-GM -> PS-PM relative gain  " << std::setprecision(2) << 100 * r.ps_gain() << " %\n";
  return os.str();
}

}  // namespace tinyfit::experiment
