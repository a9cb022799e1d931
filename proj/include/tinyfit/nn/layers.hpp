#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "tinyfit/nn/model.hpp"

namespace tinyfit::nn {

using ArgMatrix = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Batched activations are stacked along rows: sample b occupies rows
/// [b * length, (b + 1) * length) of a (batch * length) x channels matrix.

/// Each output row is k consecutive input rows of one sample, flattened.
template <class S>
Matrix<S> im2col(const Matrix<S>& x, int batch, int length, int kernel) {
  const int channels = static_cast<int>(x.cols());
  const int out_len = length - kernel + 1;
  Matrix<S> cols(static_cast<Eigen::Index>(batch) * out_len, kernel * channels);
  for (int b = 0; b < batch; ++b)
    for (int t = 0; t < out_len; ++t)
      cols.row(static_cast<Eigen::Index>(b) * out_len + t) =
          Eigen::Map<const RowVector<S>>(x.data() + (static_cast<Eigen::Index>(b) * length + t) * channels,
                                         kernel * channels);
  return cols;
}

/// Adjoint of im2col: scatter-adds patch gradients back onto input rows.
template <class S>
Matrix<S> col2im(const Matrix<S>& dcols, int batch, int length, int kernel, int channels) {
  const int out_len = length - kernel + 1;
  Matrix<S> dx = Matrix<S>::Zero(static_cast<Eigen::Index>(batch) * length, channels);
  for (int b = 0; b < batch; ++b)
    for (int t = 0; t < out_len; ++t)
      Eigen::Map<RowVector<S>>(dx.data() + (static_cast<Eigen::Index>(b) * length + t) * channels,
                               kernel * channels) += dcols.row(static_cast<Eigen::Index>(b) * out_len + t);
  return dx;
}

/// Non-overlapping max pool over time; trailing rows that do not fill a pool
/// are dropped. `arg` records the winning offset (first on ties).
template <class S>
Matrix<S> maxpool(const Matrix<S>& x, int batch, int length, int pool, ArgMatrix& arg) {
  const int out_len = length / pool;
  const auto channels = x.cols();
  Matrix<S> out(static_cast<Eigen::Index>(batch) * out_len, channels);
  arg.resize(out.rows(), channels);
  for (int b = 0; b < batch; ++b)
    for (int t = 0; t < out_len; ++t) {
      const Eigen::Index o = static_cast<Eigen::Index>(b) * out_len + t;
      const Eigen::Index base = static_cast<Eigen::Index>(b) * length + static_cast<Eigen::Index>(t) * pool;
      for (Eigen::Index c = 0; c < channels; ++c) {
        S best = x(base, c);
        std::uint8_t at = 0;
        for (int k = 1; k < pool; ++k)
          if (x(base + k, c) > best) {
            best = x(base + k, c);
            at = static_cast<std::uint8_t>(k);
          }
        out(o, c) = best;
        arg(o, c) = at;
      }
    }
  return out;
}

template <class S>
Matrix<S> maxpool_backward(const Matrix<S>& dout, const ArgMatrix& arg, int batch, int length, int pool) {
  const int out_len = length / pool;
  Matrix<S> dx = Matrix<S>::Zero(static_cast<Eigen::Index>(batch) * length, dout.cols());
  for (int b = 0; b < batch; ++b)
    for (int t = 0; t < out_len; ++t) {
      const Eigen::Index o = static_cast<Eigen::Index>(b) * out_len + t;
      const Eigen::Index base = static_cast<Eigen::Index>(b) * length + static_cast<Eigen::Index>(t) * pool;
      for (Eigen::Index c = 0; c < dout.cols(); ++c) dx(base + arg(o, c), c) += dout(o, c);
    }
  return dx;
}

/// y = x W^T + b, row-wise.
template <class S>
Matrix<S> affine(const Matrix<S>& x, const Layer<S>& layer) {
  Matrix<S> y = x * layer.weight.transpose();
  y.rowwise() += layer.bias.transpose();
  return y;
}

template <class S>
Matrix<S> relu(const Matrix<S>& x) {
  return x.cwiseMax(S(0));
}

template <class S>
Matrix<S> softmax_rows(const Matrix<S>& logits) {
  Matrix<S> p = (logits.colwise() - logits.rowwise().maxCoeff()).array().exp().matrix();
  p.array().colwise() /= p.array().rowwise().sum();
  return p;
}

/// Everything the backward pass needs from one batched forward pass.
template <class S>
struct ForwardPass {
  int batch = 0;
  Matrix<S> cols1, pre1, pool1;
  Matrix<S> cols2, pre2, pool2;
  ArgMatrix arg1, arg2;
  Matrix<S> flat, pre3, act3;
  Matrix<S> logits, probs;
};

/// `inputs` stacks `batch` samples of arch.input_length x arch.input_channels.
template <class S>
void forward(const CnnModel<S>& m, const Matrix<S>& inputs, int batch, ForwardPass<S>& fp) {
  const auto& a = m.arch;
  if (inputs.cols() != a.input_channels || inputs.rows() != static_cast<Eigen::Index>(batch) * a.input_length)
    throw Error(Errc::BadInput, "input shape does not match the model architecture");
  fp.batch = batch;
  fp.cols1 = im2col(inputs, batch, a.input_length, a.kernel);
  fp.pre1 = affine(fp.cols1, m.params[LayerId::conv1]);
  fp.pool1 = maxpool<S>(relu(fp.pre1), batch, a.conv1_length(), a.pool, fp.arg1);
  fp.cols2 = im2col(fp.pool1, batch, a.pool1_length(), a.kernel);
  fp.pre2 = affine(fp.cols2, m.params[LayerId::conv2]);
  fp.pool2 = maxpool<S>(relu(fp.pre2), batch, a.conv2_length(), a.pool, fp.arg2);
  // Row-major storage makes each sample's (pool2_length x c2) block one
  // contiguous time-major feature row.
  fp.flat = Eigen::Map<const Matrix<S>>(fp.pool2.data(), batch, a.flatten_size());
  fp.pre3 = affine(fp.flat, m.params[LayerId::dense1]);
  fp.act3 = relu(fp.pre3);
  fp.logits = affine(fp.act3, m.params[LayerId::head]);
  fp.probs = softmax_rows(fp.logits);
}

template <class S>
Matrix<S> forward_probs(const CnnModel<S>& m, const Matrix<S>& inputs, int batch) {
  ForwardPass<S> fp;
  forward(m, inputs, batch, fp);
  return fp.probs;
}

/// Probability vector for one window-shaped input.
template <class S, class Derived>
Vector<S> forward(const CnnModel<S>& m, const Eigen::MatrixBase<Derived>& window) {
  if (window.rows() != m.arch.input_length || window.cols() != m.arch.input_channels)
    throw Error(Errc::BadInput, "window shape does not match the model architecture");
  const Matrix<S> x = window.template cast<S>();
  return forward_probs(m, x, 1).row(0).transpose();
}

template <class S>
Vector<S> forward(const CnnModel<S>& m, const Window& w) {
  return forward(m, w.data);
}

inline constexpr double kProbabilityClamp = 1e-7;

template <class S>
struct LossAndGrads {
  S loss = 0;
  Gradients<S> grads;
  std::size_t correct = 0;
};

/// Mean softmax cross-entropy and its gradient. Frozen layers get zero
/// gradient, and backpropagation stops below the lowest trainable layer.
template <class S>
LossAndGrads<S> loss_and_grads(const CnnModel<S>& m, const Matrix<S>& inputs, std::span<const int> labels) {
  const int batch = static_cast<int>(labels.size());
  if (batch == 0) throw Error(Errc::EmptyDataset, "loss_and_grads needs a non-empty batch");
  for (int y : labels)
    if (y < 0 || y >= m.class_count())
      throw Error(Errc::BadLabel, "class id out of range", {{"class_id", std::to_string(y)}});

  ForwardPass<S> fp;
  forward(m, inputs, batch, fp);
  const auto& a = m.arch;

  LossAndGrads<S> out;
  out.grads = m.params.zeros_like();
  const S lo = std::log(S(kProbabilityClamp));
  const S hi = std::log1p(S(-kProbabilityClamp));
  Matrix<S> dlogits = fp.probs;
  for (int b = 0; b < batch; ++b) {
    const auto row = fp.logits.row(b);
    const S mx = row.maxCoeff();
    const S log_p = row(labels[b]) - mx - std::log((row.array() - mx).exp().sum());
    out.loss -= std::clamp(log_p, lo, hi);
    Eigen::Index best;
    fp.probs.row(b).maxCoeff(&best);
    if (best == labels[b]) ++out.correct;
    dlogits(b, labels[b]) -= S(1);
  }
  out.loss /= S(batch);
  dlogits /= S(batch);

  const bool need1 = m.is_trainable(LayerId::conv1);
  const bool need2 = need1 || m.is_trainable(LayerId::conv2);
  const bool need3 = need2 || m.is_trainable(LayerId::dense1);

  auto accumulate = [&](LayerId id, const Matrix<S>& dpre, const Matrix<S>& input) {
    if (!m.is_trainable(id)) return;
    out.grads[id].weight = dpre.transpose() * input;
    out.grads[id].bias = dpre.colwise().sum().transpose();
  };

  accumulate(LayerId::head, dlogits, fp.act3);
  if (!need3) return out;

  Matrix<S> dpre3 = (dlogits * m.params[LayerId::head].weight).cwiseProduct(
      (fp.pre3.array() > S(0)).template cast<S>().matrix());
  accumulate(LayerId::dense1, dpre3, fp.flat);
  if (!need2) return out;

  Matrix<S> dflat = dpre3 * m.params[LayerId::dense1].weight;
  const Matrix<S> dpool2 = Eigen::Map<const Matrix<S>>(dflat.data(), static_cast<Eigen::Index>(batch) * a.pool2_length(),
                                                       a.conv2_channels);
  Matrix<S> dpre2 = maxpool_backward(dpool2, fp.arg2, batch, a.conv2_length(), a.pool)
                        .cwiseProduct((fp.pre2.array() > S(0)).template cast<S>().matrix());
  accumulate(LayerId::conv2, dpre2, fp.cols2);
  if (!need1) return out;

  const Matrix<S> dcols2 = dpre2 * m.params[LayerId::conv2].weight;
  const Matrix<S> dpool1 = col2im(dcols2, batch, a.pool1_length(), a.kernel, a.conv1_channels);
  Matrix<S> dpre1 = maxpool_backward(dpool1, fp.arg1, batch, a.conv1_length(), a.pool)
                        .cwiseProduct((fp.pre1.array() > S(0)).template cast<S>().matrix());
  accumulate(LayerId::conv1, dpre1, fp.cols1);
  return out;
}

/// Scalar loss only (finite-difference oracles use this).
template <class S>
S loss_only(const CnnModel<S>& m, const Matrix<S>& inputs, std::span<const int> labels) {
  const int batch = static_cast<int>(labels.size());
  ForwardPass<S> fp;
  forward(m, inputs, batch, fp);
  const S lo = std::log(S(kProbabilityClamp));
  const S hi = std::log1p(S(-kProbabilityClamp));
  S loss = 0;
  for (int b = 0; b < batch; ++b) {
    const auto row = fp.logits.row(b);
    const S mx = row.maxCoeff();
    loss -= std::clamp(row(labels[b]) - mx - std::log((row.array() - mx).exp().sum()), lo, hi);
  }
  return loss / S(batch);
}

/// Stack windows (cast to S) into the batched input layout.
template <class S>
Matrix<S> stack_windows(std::span<const Window> windows, std::span<const std::size_t> indices) {
  Matrix<S> x(static_cast<Eigen::Index>(indices.size()) * kWindowLength, kChannels);
  for (std::size_t i = 0; i < indices.size(); ++i)
    x.middleRows(static_cast<Eigen::Index>(i) * kWindowLength, kWindowLength) =
        windows[indices[i]].data.template cast<S>();
  return x;
}

template <class S>
Matrix<S> stack_windows(std::span<const Window> windows) {
  Matrix<S> x(static_cast<Eigen::Index>(windows.size()) * kWindowLength, kChannels);
  for (std::size_t i = 0; i < windows.size(); ++i)
    x.middleRows(static_cast<Eigen::Index>(i) * kWindowLength, kWindowLength) = windows[i].data.template cast<S>();
  return x;
}

/// Argmax class per window, evaluated in chunks.
template <class S>
std::vector<int> predict_classes(const CnnModel<S>& m, std::span<const Window> windows, std::size_t chunk = 256) {
  std::vector<int> out;
  out.reserve(windows.size());
  for (std::size_t start = 0; start < windows.size(); start += chunk) {
    const auto part = windows.subspan(start, std::min(chunk, windows.size() - start));
    const Matrix<S> probs = forward_probs(m, stack_windows<S>(part), static_cast<int>(part.size()));
    for (Eigen::Index r = 0; r < probs.rows(); ++r) {
      Eigen::Index best;
      probs.row(r).maxCoeff(&best);
      out.push_back(static_cast<int>(best));
    }
  }
  return out;
}

}  // namespace tinyfit::nn
