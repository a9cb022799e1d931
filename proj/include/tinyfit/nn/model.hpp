#pragma once

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "tinyfit/error.hpp"
#include "tinyfit/random.hpp"
#include "tinyfit/signal.hpp"

namespace tinyfit::nn {

template <class S>
using Matrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using Vector = Eigen::Matrix<S, Eigen::Dynamic, 1>;
template <class S>
using RowVector = Eigen::Matrix<S, 1, Eigen::Dynamic>;

/// Layer sizes of the two-block 1D CNN. The defaults are the deployed
/// network; smaller instances exist for gradient checking.
///
///   input (L x Cin) -> conv k, Cin->c1, valid -> ReLU -> maxpool p
///                   -> conv k, c1->c2, valid  -> ReLU -> maxpool p
///                   -> flatten -> dense d -> ReLU -> head C -> softmax
struct Architecture {
  int input_length = kWindowLength;
  int input_channels = kChannels;
  int kernel = 5;
  int conv1_channels = 8;
  int conv2_channels = 16;
  int pool = 2;
  int dense_units = 32;

  int conv1_length() const { return input_length - kernel + 1; }
  int pool1_length() const { return conv1_length() / pool; }
  int conv2_length() const { return pool1_length() - kernel + 1; }
  int pool2_length() const { return conv2_length() / pool; }
  int flatten_size() const { return pool2_length() * conv2_channels; }

  std::size_t parameter_count(int classes) const {
    const auto conv1 = static_cast<std::size_t>(kernel * input_channels * conv1_channels + conv1_channels);
    const auto conv2 = static_cast<std::size_t>(kernel * conv1_channels * conv2_channels + conv2_channels);
    const auto dense = static_cast<std::size_t>(flatten_size() * dense_units + dense_units);
    return conv1 + conv2 + dense + static_cast<std::size_t>((dense_units + 1) * classes);
  }

  void validate() const {
    if (kernel < 1 || pool < 1 || input_channels < 1 || conv1_channels < 1 || conv2_channels < 1 || dense_units < 1 ||
        pool2_length() < 1)
      throw Error(Errc::BadConfig, "architecture leaves no features after the second pooling stage");
  }

  bool operator==(const Architecture&) const = default;
};

enum class LayerId : int { conv1 = 0, conv2 = 1, dense1 = 2, head = 3 };
inline constexpr std::array<LayerId, 4> kLayerIds = {LayerId::conv1, LayerId::conv2, LayerId::dense1, LayerId::head};

constexpr std::string_view layer_name(LayerId id) {
  switch (id) {
    case LayerId::conv1: return "conv1";
    case LayerId::conv2: return "conv2";
    case LayerId::dense1: return "dense1";
    case LayerId::head: return "head";
  }
  return "?";
}

/// Convolution weights are (out, kernel * in) with taps time-major, i.e.
/// weight(o, k * in + c) multiplies input row t + k, channel c. This is the
/// same layout as a row-major patch of k consecutive input rows.
template <class S>
struct Layer {
  Matrix<S> weight;
  Vector<S> bias;

  std::size_t size() const { return static_cast<std::size_t>(weight.size() + bias.size()); }
  bool operator==(const Layer& o) const {
    return weight.rows() == o.weight.rows() && weight.cols() == o.weight.cols() && bias.size() == o.bias.size() &&
           weight == o.weight && bias == o.bias;
  }
};

/// Parameter tree in fixed layer order; gradients share the same shape.
template <class S>
struct Parameters {
  std::array<Layer<S>, 4> layers;

  Layer<S>& operator[](LayerId id) { return layers[static_cast<std::size_t>(id)]; }
  const Layer<S>& operator[](LayerId id) const { return layers[static_cast<std::size_t>(id)]; }

  std::size_t size() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.size();
    return n;
  }

  bool all_finite() const {
    for (const auto& l : layers)
      if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
    return true;
  }

  Parameters zeros_like() const {
    Parameters z;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      z.layers[i].weight = Matrix<S>::Zero(layers[i].weight.rows(), layers[i].weight.cols());
      z.layers[i].bias = Vector<S>::Zero(layers[i].bias.size());
    }
    return z;
  }

  template <class T>
  Parameters<T> cast() const {
    Parameters<T> out;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      out.layers[i].weight = layers[i].weight.template cast<T>();
      out.layers[i].bias = layers[i].bias.template cast<T>();
    }
    return out;
  }

  bool operator==(const Parameters&) const = default;
};

template <class S>
using Gradients = Parameters<S>;

/// Fixed-order flattening: conv1 W, conv1 b, conv2 W, conv2 b, dense1 W,
/// dense1 b, head W, head b; weights row-major.
template <class S>
Vector<S> flatten(const Parameters<S>& p) {
  Vector<S> out(static_cast<Eigen::Index>(p.size()));
  Eigen::Index at = 0;
  for (const auto& l : p.layers) {
    out.segment(at, l.weight.size()) = Eigen::Map<const Vector<S>>(l.weight.data(), l.weight.size());
    at += l.weight.size();
    out.segment(at, l.bias.size()) = l.bias;
    at += l.bias.size();
  }
  return out;
}

template <class S>
void unflatten(const Eigen::Ref<const Vector<S>>& flat, Parameters<S>& p) {
  if (static_cast<std::size_t>(flat.size()) != p.size()) throw Error(Errc::BadInput, "parameter vector size mismatch");
  Eigen::Index at = 0;
  for (auto& l : p.layers) {
    Eigen::Map<Vector<S>>(l.weight.data(), l.weight.size()) = flat.segment(at, l.weight.size());
    at += l.weight.size();
    l.bias = flat.segment(at, l.bias.size());
    at += l.bias.size();
  }
}

template <class S>
struct CnnModel {
  Architecture arch;
  std::vector<std::string> classes;
  std::uint64_t seed = 0;
  Parameters<S> params;
  std::array<bool, 4> trainable{true, true, true, true};

  int class_count() const { return static_cast<int>(classes.size()); }
  std::size_t parameter_count() const { return params.size(); }
  bool is_trainable(LayerId id) const { return trainable[static_cast<std::size_t>(id)]; }
  void set_trainable(LayerId id, bool on) { trainable[static_cast<std::size_t>(id)] = on; }
  Layer<S>& layer(LayerId id) { return params[id]; }
  const Layer<S>& layer(LayerId id) const { return params[id]; }

  template <class T>
  CnnModel<T> cast() const {
    CnnModel<T> out;
    out.arch = arch;
    out.classes = classes;
    out.seed = seed;
    out.params = params.template cast<T>();
    out.trainable = trainable;
    return out;
  }

  bool operator==(const CnnModel&) const = default;
};

/// Uniform(-sqrt(6 / fan_in), +sqrt(6 / fan_in)) weights, zero biases.
template <class S>
Layer<S> init_layer(int out, int fan_in, Rng& rng) {
  Layer<S> l;
  l.weight.resize(out, fan_in);
  const double limit = std::sqrt(6.0 / fan_in);
  for (Eigen::Index i = 0; i < l.weight.size(); ++i) l.weight.data()[i] = static_cast<S>(rng.uniform(-limit, limit));
  l.bias = Vector<S>::Zero(out);
  return l;
}

/// Deterministic in (classes, seed, arch). Each layer draws from its own
/// stream so replacing one layer never perturbs the others.
template <class S = double>
CnnModel<S> init_model(std::vector<std::string> classes, std::uint64_t seed, const Architecture& arch = {}) {
  if (classes.size() < 2) throw Error(Errc::BadClassCount, "a classifier needs at least 2 classes");
  arch.validate();
  CnnModel<S> m;
  m.arch = arch;
  m.classes = std::move(classes);
  m.seed = seed;
  const std::array<std::pair<int, int>, 4> shapes = {{
      {arch.conv1_channels, arch.kernel * arch.input_channels},
      {arch.conv2_channels, arch.kernel * arch.conv1_channels},
      {arch.dense_units, arch.flatten_size()},
      {m.class_count(), arch.dense_units},
  }};
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    Rng rng(seed * 0x9E3779B97F4A7C15ULL + i + 1);
    m.params.layers[i] = init_layer<S>(shapes[i].first, shapes[i].second, rng);
  }
  return m;
}

}  // namespace tinyfit::nn
