#include "tinyfit/nn/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>

#include "tinyfit/random.hpp"

namespace tinyfit::nn {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw Error(Errc::BadConfig, "learning_rate must be positive");
  if (batch_size < 1) throw Error(Errc::BadConfig, "batch_size must be at least 1");
  if (epochs < 1) throw Error(Errc::BadConfig, "epochs must be at least 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw Error(Errc::BadConfig, "beta1 and beta2 must lie in [0, 1)");
  if (!(epsilon > 0.0)) throw Error(Errc::BadConfig, "epsilon must be positive");
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0))
    throw Error(Errc::BadConfig, "validation_fraction must lie in [0, 1)");
}

std::vector<int> class_ids(const std::vector<std::string>& classes, std::span<const Window> windows) {
  std::unordered_map<std::string, int> lookup;
  for (std::size_t i = 0; i < classes.size(); ++i) lookup.emplace(classes[i], static_cast<int>(i));
  std::vector<int> ids;
  ids.reserve(windows.size());
  for (const auto& w : windows) {
    if (!w.label) throw Error(Errc::BadLabel, "unlabeled window");
    auto it = lookup.find(*w.label);
    if (it == lookup.end()) throw Error(Errc::BadLabel, "label not in class map: " + *w.label, {{"class", *w.label}});
    ids.push_back(it->second);
  }
  return ids;
}

namespace {

struct Adam {
  Parameters<double> m, v;
  long step = 0;

  explicit Adam(const Parameters<double>& like) : m(like.zeros_like()), v(like.zeros_like()) {}

  void update(CnnModel<double>& model, const Gradients<double>& g, const TrainConfig& cfg) {
    ++step;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
    for (LayerId id : kLayerIds) {
      if (!model.is_trainable(id)) continue;
      auto apply = [&](auto& param, auto& mom, auto& vel, const auto& grad) {
        mom = cfg.beta1 * mom + (1.0 - cfg.beta1) * grad;
        vel = cfg.beta2 * vel + (1.0 - cfg.beta2) * grad.cwiseProduct(grad);
        param.array() -= cfg.learning_rate * (mom.array() / c1) / ((vel.array() / c2).sqrt() + cfg.epsilon);
      };
      apply(model.params[id].weight, m[id].weight, v[id].weight, g[id].weight);
      apply(model.params[id].bias, m[id].bias, v[id].bias, g[id].bias);
    }
  }
};

}  // namespace

TrainResult train(CnnModel<double> model, std::span<const Window> windows, const TrainConfig& config) {
  config.validate();
  if (windows.empty()) throw Error(Errc::EmptyDataset, "cannot train on an empty dataset");
  if (model.arch != Architecture{}) throw Error(Errc::BadInput, "train() operates on window-shaped models");
  const auto labels = class_ids(model.classes, windows);

  std::vector<std::size_t> train_idx(windows.size());
  std::iota(train_idx.begin(), train_idx.end(), 0);
  std::vector<Window> validation;
  if (config.validation_fraction > 0.0 && windows.size() > 1) {
    Rng split_rng(config.seed ^ 0xA5A5A5A5ULL);
    split_rng.shuffle(std::span(train_idx));
    auto n_val = static_cast<std::size_t>(std::round(config.validation_fraction * static_cast<double>(windows.size())));
    n_val = std::clamp<std::size_t>(n_val, 1, windows.size() - 1);
    for (std::size_t i = 0; i < n_val; ++i) validation.push_back(windows[train_idx[i]]);
    train_idx.erase(train_idx.begin(), train_idx.begin() + static_cast<std::ptrdiff_t>(n_val));
    std::sort(train_idx.begin(), train_idx.end());
  }

  Rng rng(config.seed);
  Adam adam(model.params);
  TrainResult result;
  std::optional<CnnModel<double>> best;
  double best_val = -1.0;

  std::vector<int> batch_labels;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    if (config.shuffle) rng.shuffle(std::span(train_idx));
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < train_idx.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const auto idx = std::span(train_idx).subspan(
          start, std::min<std::size_t>(static_cast<std::size_t>(config.batch_size), train_idx.size() - start));
      batch_labels.clear();
      for (auto i : idx) batch_labels.push_back(labels[i]);
      const Matrix<double> x = stack_windows<double>(windows, idx);
      const auto lg = loss_and_grads(model, x, batch_labels);
      loss_sum += lg.loss * static_cast<double>(idx.size());
      correct += lg.correct;
      adam.update(model, lg.grads, config);
    }
    EpochStats st;
    st.epoch = epoch;
    st.loss = loss_sum / static_cast<double>(train_idx.size());
    st.accuracy = static_cast<double>(correct) / static_cast<double>(train_idx.size());
    if (!validation.empty()) {
      st.validation_accuracy = evaluate(model, validation).accuracy;
      if (*st.validation_accuracy > best_val) {
        best_val = *st.validation_accuracy;
        best = model;
      }
    }
    result.history.push_back(st);
  }
  if (!model.params.all_finite()) throw Error(Errc::BadInput, "training diverged to non-finite parameters");
  result.model = best ? std::move(*best) : std::move(model);
  return result;
}

std::vector<std::size_t> sample_per_class(std::span<const Window> windows, const std::vector<std::string>& classes,
                                          int per_class, std::uint64_t seed) {
  if (per_class < 1) throw Error(Errc::BadConfig, "examples_per_class must be at least 1");
  std::unordered_map<std::string, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < windows.size(); ++i)
    if (windows[i].label) by_class[*windows[i].label].push_back(i);

  Rng rng(seed);
  std::vector<std::size_t> picked;
  for (const auto& cls : classes) {
    const auto& pool = by_class[cls];
    if (pool.size() < static_cast<std::size_t>(per_class))
      throw Error(Errc::InsufficientExamples, "not enough examples for class " + cls,
                  {{"class", cls}, {"have", std::to_string(pool.size())}, {"need", std::to_string(per_class)}});
    for (auto j : rng.sample(pool.size(), static_cast<std::size_t>(per_class))) picked.push_back(pool[j]);
  }
  return picked;
}

PersonalizeResult personalize(const CnnModel<double>& pretrained, std::span<const Window> user_windows,
                              const PersonalizeOptions& options) {
  const auto& classes = options.classes.empty() ? pretrained.classes : options.classes;
  if (classes.size() < 2) throw Error(Errc::BadClassCount, "personalization needs at least 2 classes");

  PersonalizeResult out;
  out.fine_tune_indices = sample_per_class(user_windows, classes, options.examples_per_class, options.train.seed);

  CnnModel<double> model = pretrained;
  if (classes != pretrained.classes) {
    model.classes = classes;
    Rng rng(options.train.seed * 0x9E3779B97F4A7C15ULL + 0x4EAD);
    model.params[LayerId::head] =
        init_layer<double>(static_cast<int>(classes.size()), model.arch.dense_units, rng);
  }
  model.trainable = {false, false, false, true};

  std::vector<Window> fine_tune;
  fine_tune.reserve(out.fine_tune_indices.size());
  for (auto i : out.fine_tune_indices) fine_tune.push_back(user_windows[i]);

  auto trained = train(std::move(model), fine_tune, options.train);
  out.model = std::move(trained.model);
  out.history = std::move(trained.history);
  return out;
}

}  // namespace tinyfit::nn
