#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "tinyfit/nn/checkpoint.hpp"
#include "tinyfit/nn/train.hpp"
#include "tinyfit/signal.hpp"

namespace tinyfit::experiment {

inline constexpr std::uint64_t kDefaultSliceSeed = 42;
inline constexpr std::uint64_t kDefaultTrainSeed = 7;

struct ExperimentConfig {
  std::uint64_t slice_seed = kDefaultSliceSeed;
  double test_fraction = 0.2;  // of generalized recordings, per class
  nn::TrainConfig train{.seed = kDefaultTrainSeed};
  nn::PersonalizeOptions personalize{.examples_per_class = 15, .classes = {}, .train = {.epochs = 50, .seed = kDefaultTrainSeed}};
};

/// Overrides fields of `t` from a JSON object (keys named as the struct
/// fields); `where` prefixes key names in errors.
void read_train_config(const nlohmann::json& obj, nn::TrainConfig& t, const std::string& where = "");

/// Reads overrides from a JSON object; unknown keys are rejected. Parse
/// errors carry the line number in their details.
ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::string& path);
nlohmann::json to_json(const ExperimentConfig& config);

/// (a - b) / b.
double relative_change(double a, double b);

struct RecordingSplit {
  std::vector<Window> train;
  std::vector<Window> test;
};

/// Whole recordings go to one side; each class contributes round(fraction * n)
/// of its n recordings to the test side (at least one when n >= 2).
RecordingSplit split_by_recording(std::span<const Window> windows, double test_fraction, std::uint64_t seed);

struct GeneralizedResult {
  nn::CnnModel<double> model;
  ChannelStats stats;
  double gs_accuracy = 0;
  std::size_t train_windows = 0;
  std::size_t test_windows = 0;
  std::vector<std::string> generalized_subjects;
  std::vector<std::string> personalized_subjects;
  std::vector<nn::EpochStats> history;
};

/// Slice by subject, split the generalized section by recording, fit channel
/// statistics on the training part only, train, and score GS accuracy.
GeneralizedResult train_generalized(const WindowedDataset& dataset, const ExperimentConfig& config);

struct UserResult {
  std::string subject;
  double ps_gm = 0;
  double ps_pm = 0;
  std::size_t gm_windows = 0;
  std::size_t fine_tune_windows = 0;
  std::size_t pm_windows = 0;
  std::size_t leaked_windows = 0;  // fine-tune windows that also appear in the PM evaluation set
  std::vector<std::string> excluded_classes;
};

struct ExperimentReport {
  std::string dataset;
  std::vector<std::string> classes;
  std::optional<double> gs;
  double ps_gm = 0;
  double ps_pm = 0;
  std::vector<UserResult> users;
  ExperimentConfig config;

  std::optional<double> gs_to_ps_gm_drop() const;  // (GS - PS-GM) / GS
  double ps_gain() const { return relative_change(ps_pm, ps_gm); }
};

/// GS is re-scored on the generalized test split. For each held-out user: GM on all of their windows (PS-GM); then
/// 15 per class are drawn, the head is fine-tuned, and PM is scored on the
/// remaining windows (PS-PM). A class with fewer than examples_per_class
/// windows is excluded for that user and listed in the result.
ExperimentReport eval_personalized(const nn::Checkpoint& checkpoint, const WindowedDataset& dataset,
                                   const ExperimentConfig& config, const std::string& dataset_tag);

nlohmann::json to_json(const ExperimentReport& report);
std::string render_table(const ExperimentReport& report);

}  // namespace tinyfit::experiment
