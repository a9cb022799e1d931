#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tinyfit/nn/layers.hpp"
#include "tinyfit/nn/model.hpp"
#include "tinyfit/signal.hpp"

namespace tinyfit::nn {

struct TrainConfig {
  double learning_rate = 1e-3;
  int batch_size = 32;
  int epochs = 30;
  std::uint64_t seed = 7;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  bool shuffle = true;
  double validation_fraction = 0.0;  // 0 disables best-epoch selection

  void validate() const;
};

struct EpochStats {
  int epoch = 0;
  double loss = 0;
  double accuracy = 0;
  std::optional<double> validation_accuracy;
};

struct TrainResult {
  CnnModel<double> model;
  std::vector<EpochStats> history;
};

/// Adaptive-moment mini-batch descent over the trainable layers. Inputs are
/// expected to be normalized already. Deterministic in (model, data, config).
TrainResult train(CnnModel<double> model, std::span<const Window> windows, const TrainConfig& config);

/// Class ids for labeled windows; unknown or missing labels raise BadLabel.
std::vector<int> class_ids(const std::vector<std::string>& classes, std::span<const Window> windows);

struct PersonalizeOptions {
  int examples_per_class = 15;
  /// Target class map; empty means the pretrained model's classes.
  std::vector<std::string> classes;
  TrainConfig train{.epochs = 50};
};

struct PersonalizeResult {
  CnnModel<double> model;
  std::vector<std::size_t> fine_tune_indices;  // into user_windows
  std::vector<EpochStats> history;
};

/// Last-layer transfer: draw examples_per_class windows per class (seeded,
/// without replacement), freeze every layer but the head, and fine-tune. A
/// class map different from the pretrained one gets a freshly initialized
/// head of the new width.
PersonalizeResult personalize(const CnnModel<double>& pretrained, std::span<const Window> user_windows,
                              const PersonalizeOptions& options = {});

/// Per-class stratified draw used by personalize; exposed for callers that
/// need the same split (e.g. held-out evaluation).
std::vector<std::size_t> sample_per_class(std::span<const Window> windows, const std::vector<std::string>& classes,
                                          int per_class, std::uint64_t seed);

struct Evaluation {
  double accuracy = 0;
  Eigen::MatrixXi confusion;  // rows: true class, cols: predicted class
  std::size_t total = 0;
};

template <class S>
Evaluation evaluate(const CnnModel<S>& model, std::span<const Window> windows) {
  if (windows.empty()) throw Error(Errc::EmptyDataset, "evaluate needs at least one window");
  const auto truth = class_ids(model.classes, windows);
  const auto pred = predict_classes(model, windows);
  Evaluation e;
  e.confusion = Eigen::MatrixXi::Zero(model.class_count(), model.class_count());
  std::size_t correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    ++e.confusion(truth[i], pred[i]);
    if (truth[i] == pred[i]) ++correct;
  }
  e.total = truth.size();
  e.accuracy = static_cast<double>(correct) / static_cast<double>(e.total);
  return e;
}

}  // namespace tinyfit::nn
