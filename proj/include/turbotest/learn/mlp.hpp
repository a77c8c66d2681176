#pragma once

// Feed-forward stop classifier: ReLU hidden layers, sigmoid output, binary
// cross-entropy, Adam.
//
// Inputs pass through sign(x)*log1p(|x|) and per-column standardization
// fitted on the training set; the transform is part of the model. Mini-batch
// gradients are accumulated over fixed-size chunks in a fixed order, which
// keeps training deterministic for any thread count.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "turbotest/core.hpp"
#include "turbotest/learn/dataset.hpp"
#include "turbotest/util.hpp"

namespace turbotest::learn {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct MlpParams {
  std::vector<int> hidden{256, 64};
  double learning_rate = 1e-3;
  int batch_size = 128;
  int epochs = 20;
  double dropout = 0.0;
  double weight_decay = 0.0;
  /// Loss weight of positive samples; 1 trains unweighted.
  double pos_weight = 1.0;
  std::uint64_t seed = 1;

  void validate() const {
    for (int h : hidden) {
      if (h < 1) throw ModelError("mlp hidden widths must be >= 1");
    }
    if (!(learning_rate > 0.0)) throw ModelError("mlp learning_rate must be positive");
    if (batch_size < 1) throw ModelError("mlp batch_size must be >= 1");
    if (epochs < 0) throw ModelError("mlp epochs must be >= 0");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ModelError("mlp dropout must lie in [0, 1)");
    if (weight_decay < 0.0) throw ModelError("mlp weight_decay must be >= 0");
    if (!(pos_weight > 0.0)) throw ModelError("mlp pos_weight must be positive");
  }
};

inline double stable_sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

/// log(1 + e^z) without overflow.
inline double softplus(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

struct MlpModel {
  std::size_t n_inputs = 0;
  /// weights[l] is (out x in); biases[l] has out entries.
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;
  Eigen::VectorXd input_mean;
  Eigen::VectorXd input_scale;
  MlpParams params;
  std::vector<double> loss_curve;

  std::vector<int> widths() const {
    std::vector<int> w{static_cast<int>(n_inputs)};
    for (const auto& m : weights) w.push_back(static_cast<int>(m.rows()));
    return w;
  }

  static double squash(double x) { return x >= 0.0 ? std::log1p(x) : -std::log1p(-x); }

  /// Raw input row to network input.
  Eigen::VectorXd transform(std::span<const double> x) const {
    Eigen::VectorXd z(static_cast<Eigen::Index>(n_inputs));
    for (std::size_t j = 0; j < n_inputs; ++j) {
      const auto jj = static_cast<Eigen::Index>(j);
      z[jj] = (squash(x[j]) - input_mean[jj]) * input_scale[jj];
    }
    return z;
  }

  double logit_transformed(const Eigen::VectorXd& z0) const {
    Eigen::VectorXd a = z0;
    for (std::size_t l = 0; l < weights.size(); ++l) {
      Eigen::VectorXd z = weights[l] * a + biases[l];
      if (l + 1 < weights.size()) z = z.cwiseMax(0.0);
      a = std::move(z);
    }
    return a[0];
  }

  double predict_proba(std::span<const double> x) const {
    check_arity(n_inputs, x.size(), "mlp predict");
    return stable_sigmoid(logit_transformed(transform(x)));
  }
};

/// Network whose weights and biases are all zero (output exactly 0.5).
inline MlpModel zero_mlp(std::size_t n_inputs, const std::vector<int>& hidden) {
  MlpModel m;
  m.n_inputs = n_inputs;
  auto in = static_cast<Eigen::Index>(n_inputs);
  std::vector<int> outs = hidden;
  outs.push_back(1);
  for (int out : outs) {
    m.weights.push_back(Eigen::MatrixXd::Zero(out, in));
    m.biases.push_back(Eigen::VectorXd::Zero(out));
    in = out;
  }
  m.input_mean = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n_inputs));
  m.input_scale = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(n_inputs));
  m.params.hidden = hidden;
  return m;
}

/// He-normal hidden layers, Xavier-style output layer, zero biases.
inline MlpModel init_mlp(std::size_t n_inputs, const MlpParams& params) {
  MlpModel m = zero_mlp(n_inputs, params.hidden);
  m.params = params;
  Rng rng = Rng::derive({params.seed, 0x696e6974ULL});
  for (std::size_t l = 0; l < m.weights.size(); ++l) {
    auto& w = m.weights[l];
    const double fan_in = static_cast<double>(w.cols());
    const double sd = std::sqrt((l + 1 < m.weights.size() ? 2.0 : 1.0) / fan_in);
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = sd * rng.normal();
    }
  }
  return m;
}

struct MlpGradient {
  double loss = 0.0;
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;

  void zero_like(const MlpModel& m) {
    loss = 0.0;
    weights.clear();
    biases.clear();
    for (std::size_t l = 0; l < m.weights.size(); ++l) {
      weights.push_back(Eigen::MatrixXd::Zero(m.weights[l].rows(), m.weights[l].cols()));
      biases.push_back(Eigen::VectorXd::Zero(m.biases[l].size()));
    }
  }

  void add(const MlpGradient& o) {
    loss += o.loss;
    for (std::size_t l = 0; l < weights.size(); ++l) {
      weights[l] += o.weights[l];
      biases[l] += o.biases[l];
    }
  }
};

/// Summed (not averaged) weighted BCE and its gradient over transformed rows
/// [begin, end) of `z0`, scaled by 1/`denominator`. `drop_seed` != 0 enables
/// inverted dropout on hidden activations.
inline MlpGradient mlp_gradient(const MlpModel& m, const RowMatrix& z0, const std::vector<double>& y,
                                const std::vector<std::uint32_t>& rows, std::size_t begin, std::size_t end,
                                double denominator, std::uint64_t drop_seed = 0) {
  const auto n = static_cast<Eigen::Index>(end - begin);
  const std::size_t layers = m.weights.size();
  RowMatrix x(n, z0.cols());
  for (Eigen::Index r = 0; r < n; ++r) x.row(r) = z0.row(rows[begin + static_cast<std::size_t>(r)]);

  std::vector<Eigen::MatrixXd> acts{x};   // input to layer l
  std::vector<Eigen::MatrixXd> gates;     // relu'(z) * dropout scale per hidden layer
  Rng drop = Rng::derive({drop_seed, 0x64726f70ULL});
  const double keep = 1.0 - m.params.dropout;
  for (std::size_t l = 0; l < layers; ++l) {
    Eigen::MatrixXd z = acts.back() * m.weights[l].transpose();
    z.rowwise() += m.biases[l].transpose();
    if (l + 1 < layers) {
      Eigen::MatrixXd gate = (z.array() > 0.0).cast<double>();
      if (drop_seed != 0 && m.params.dropout > 0.0) {
        for (Eigen::Index r = 0; r < gate.rows(); ++r) {
          for (Eigen::Index c = 0; c < gate.cols(); ++c) gate(r, c) *= drop.uniform() < keep ? 1.0 / keep : 0.0;
        }
      }
      acts.push_back(z.cwiseProduct(gate));
      gates.push_back(std::move(gate));
    } else {
      acts.push_back(std::move(z));
    }
  }

  MlpGradient g;
  g.zero_like(m);
  Eigen::MatrixXd delta(n, 1);
  for (Eigen::Index r = 0; r < n; ++r) {
    const double label = y[rows[begin + static_cast<std::size_t>(r)]];
    const double w = label > 0.5 ? m.params.pos_weight : 1.0;
    const double z = acts.back()(r, 0);
    g.loss += w * (softplus(z) - label * z);
    delta(r, 0) = w * (stable_sigmoid(z) - label) / denominator;
  }
  g.loss /= denominator;
  for (std::size_t l = layers; l-- > 0;) {
    g.weights[l] = delta.transpose() * acts[l];
    g.biases[l] = delta.colwise().sum().transpose();
    if (l > 0) delta = (delta * m.weights[l]).cwiseProduct(gates[l - 1]);
  }
  return g;
}

namespace detail {

inline constexpr std::size_t kGradientChunk = 32;

inline void fit_transform(MlpModel& m, const Dataset& data, RowMatrix& z0) {
  const auto n = static_cast<Eigen::Index>(data.rows());
  const auto d = static_cast<Eigen::Index>(data.n_features);
  z0.resize(n, d);
  for (Eigen::Index r = 0; r < n; ++r) {
    const double* row = data.x.data() + static_cast<std::size_t>(r) * data.n_features;
    for (Eigen::Index c = 0; c < d; ++c) z0(r, c) = MlpModel::squash(row[c]);
  }
  m.input_mean = z0.colwise().mean().transpose();
  m.input_scale.resize(d);
  for (Eigen::Index c = 0; c < d; ++c) {
    const double var = (z0.col(c).array() - m.input_mean[c]).square().mean();
    const double sd = std::sqrt(var);
    m.input_scale[c] = sd > 1e-9 ? 1.0 / sd : 1.0;
  }
  for (Eigen::Index r = 0; r < n; ++r) {
    z0.row(r) = (z0.row(r) - m.input_mean.transpose()).cwiseProduct(m.input_scale.transpose());
  }
}

}  // namespace detail

/// Mean weighted BCE over all rows of a transformed matrix.
inline double mlp_loss(const MlpModel& m, const RowMatrix& z0, const std::vector<double>& y) {
  std::vector<std::uint32_t> rows(y.size());
  std::iota(rows.begin(), rows.end(), 0u);
  return mlp_gradient(m, z0, y, rows, 0, rows.size(), static_cast<double>(rows.size())).loss;
}

inline MlpModel train_mlp(const Dataset& data, const MlpParams& params, unsigned jobs = 1) {
  params.validate();
  data.validate("train_mlp");
  for (std::size_t i = 0; i < data.rows(); ++i) {
    if (data.y[i] != 0.0 && data.y[i] != 1.0) {
      throw ModelError("train_mlp: non-binary label " + format_double(data.y[i]) + " at row " + std::to_string(i));
    }
  }
  MlpModel m = init_mlp(data.n_features, params);
  RowMatrix z0;
  detail::fit_transform(m, data, z0);

  struct Moments {
    std::vector<Eigen::MatrixXd> mw, vw;
    std::vector<Eigen::VectorXd> mb, vb;
  } adam;
  for (std::size_t l = 0; l < m.weights.size(); ++l) {
    adam.mw.push_back(Eigen::MatrixXd::Zero(m.weights[l].rows(), m.weights[l].cols()));
    adam.vw.push_back(adam.mw.back());
    adam.mb.push_back(Eigen::VectorXd::Zero(m.biases[l].size()));
    adam.vb.push_back(adam.mb.back());
  }
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;

  const std::size_t n = data.rows();
  std::vector<std::uint32_t> rows(n);
  std::iota(rows.begin(), rows.end(), 0u);
  std::uint64_t step = 0;
  for (int epoch = 0; epoch < params.epochs; ++epoch) {
    Rng shuffler = Rng::derive({params.seed, static_cast<std::uint64_t>(epoch), 0x73687566ULL});
    shuffler.shuffle(rows);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(params.batch_size)) {
      const std::size_t stop = std::min(n, start + static_cast<std::size_t>(params.batch_size));
      const std::size_t chunks = (stop - start + detail::kGradientChunk - 1) / detail::kGradientChunk;
      std::vector<MlpGradient> parts(chunks);
      const double denom = static_cast<double>(stop - start);
      parallel_for(chunks, jobs, [&](std::size_t c) {
        const std::size_t b = start + c * detail::kGradientChunk;
        const std::size_t e = std::min(stop, b + detail::kGradientChunk);
        const std::uint64_t drop_seed = params.dropout > 0.0 ? Rng::derive({params.seed, step, c}).next() | 1ULL : 0;
        parts[c] = mlp_gradient(m, z0, data.y, rows, b, e, denom, drop_seed);
      });
      MlpGradient g = std::move(parts[0]);
      for (std::size_t c = 1; c < chunks; ++c) g.add(parts[c]);
      epoch_loss += g.loss * denom;

      ++step;
      const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(step));
      const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(step));
      const double lr = params.learning_rate;
      for (std::size_t l = 0; l < m.weights.size(); ++l) {
        if (params.weight_decay > 0.0) g.weights[l] += params.weight_decay * m.weights[l];
        adam.mw[l] = kBeta1 * adam.mw[l] + (1.0 - kBeta1) * g.weights[l];
        adam.vw[l] = kBeta2 * adam.vw[l] + (1.0 - kBeta2) * g.weights[l].cwiseAbs2();
        adam.mb[l] = kBeta1 * adam.mb[l] + (1.0 - kBeta1) * g.biases[l];
        adam.vb[l] = kBeta2 * adam.vb[l] + (1.0 - kBeta2) * g.biases[l].cwiseAbs2();
        m.weights[l].array() -= lr * (adam.mw[l].array() / bc1) / ((adam.vw[l].array() / bc2).sqrt() + kEps);
        m.biases[l].array() -= lr * (adam.mb[l].array() / bc1) / ((adam.vb[l].array() / bc2).sqrt() + kEps);
      }
    }
    m.loss_curve.push_back(epoch_loss / static_cast<double>(n));
  }
  return m;
}

}  // namespace turbotest::learn
