#pragma once

// Gradient-boosted regression trees with exact greedy splits.
//
// Features are presorted once; each tree grows level by level, scanning
// every feature in sorted order and keeping running left-side sums per open
// node. Split search is parallel over features and reduced in feature order,
// so the fitted model does not depend on the thread count.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "turbotest/core.hpp"
#include "turbotest/learn/dataset.hpp"
#include "turbotest/util.hpp"

namespace turbotest::learn {

enum class GbdtObjective {
  kSquaredError,
  /// Squared error weighted by 1/(|y| + gamma)^2, i.e. squared relative error.
  kRelativeError,
};

inline std::string_view objective_name(GbdtObjective o) {
  return o == GbdtObjective::kSquaredError ? "mse" : "rel";
}

inline GbdtObjective parse_objective(std::string_view s) {
  if (s == "mse") return GbdtObjective::kSquaredError;
  if (s == "rel") return GbdtObjective::kRelativeError;
  throw ModelError("unknown gbdt objective '" + std::string(s) + "' (expected mse or rel)");
}

struct GbdtParams {
  int max_depth = 6;
  int n_trees = 200;
  double learning_rate = 0.1;
  int min_samples_leaf = 10;
  double subsample = 1.0;
  double l2 = 0.0;
  GbdtObjective objective = GbdtObjective::kSquaredError;
  double rel_gamma = 1.0;
  std::uint64_t seed = 1;

  /// Large-corpus setting: depth 7, 1500 trees, learning rate 0.03.
  static GbdtParams large_scale() {
    GbdtParams p;
    p.max_depth = 7;
    p.n_trees = 1500;
    p.learning_rate = 0.03;
    return p;
  }

  void validate() const {
    if (max_depth < 1) throw ModelError("gbdt max_depth must be >= 1");
    if (n_trees < 0) throw ModelError("gbdt n_trees must be >= 0");
    if (!(learning_rate > 0.0 && learning_rate <= 1.0)) throw ModelError("gbdt learning_rate must lie in (0, 1]");
    if (min_samples_leaf < 1) throw ModelError("gbdt min_samples_leaf must be >= 1");
    if (!(subsample > 0.0 && subsample <= 1.0)) throw ModelError("gbdt subsample must lie in (0, 1]");
    if (l2 < 0.0) throw ModelError("gbdt l2 must be >= 0");
    if (!(rel_gamma > 0.0)) throw ModelError("gbdt rel_gamma must be positive");
  }
};

struct TreeNode {
  /// -1 marks a leaf.
  int feature = -1;
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double value = 0.0;

  friend bool operator==(const TreeNode&, const TreeNode&) = default;
};

using Tree = std::vector<TreeNode>;

struct GbdtModel {
  std::size_t n_features = 0;
  double base_prediction = 0.0;
  double learning_rate = 1.0;
  std::vector<Tree> trees;
  GbdtParams params;
  /// Training MSE before the first tree and after each tree.
  std::vector<double> train_mse;

  double predict(std::span<const double> x) const {
    check_arity(n_features, x.size(), "gbdt predict");
    double s = base_prediction;
    for (const Tree& tree : trees) {
      int node = 0;
      while (tree[static_cast<std::size_t>(node)].feature >= 0) {
        const TreeNode& n = tree[static_cast<std::size_t>(node)];
        node = x[static_cast<std::size_t>(n.feature)] < n.threshold ? n.left : n.right;
      }
      s += learning_rate * tree[static_cast<std::size_t>(node)].value;
    }
    return s;
  }
};

namespace detail {

struct SplitCandidate {
  double gain = 0.0;
  double threshold = 0.0;
  int feature = -1;
};

struct LeftSum {
  double g = 0.0;
  double h = 0.0;
  std::size_t n = 0;
  double last = 0.0;
};

inline double split_threshold(double a, double b) {
  const double mid = a + (b - a) * 0.5;
  return mid > a ? mid : b;
}

inline double sse(const Dataset& data, const std::vector<double>& pred) {
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double r = data.y[i] - pred[i];
    s += r * r;
  }
  return s / static_cast<double>(pred.size());
}

}  // namespace detail

inline GbdtModel train_gbdt(const Dataset& data, const GbdtParams& params, unsigned jobs = 1) {
  params.validate();
  data.validate("train_gbdt");
  const std::size_t n = data.rows();
  const std::size_t d = data.n_features;
  constexpr double kMinGain = 1e-12;

  std::vector<double> weight(n, 1.0);
  if (params.objective == GbdtObjective::kRelativeError) {
    for (std::size_t i = 0; i < n; ++i) {
      const double s = std::abs(data.y[i]) + params.rel_gamma;
      weight[i] = 1.0 / (s * s);
    }
  }

  GbdtModel model;
  model.n_features = d;
  model.learning_rate = params.learning_rate;
  model.params = params;
  {
    double wy = 0.0, w = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      wy += weight[i] * data.y[i];
      w += weight[i];
    }
    model.base_prediction = wy / w;
  }

  // Presorted order and values per feature; ties broken by row index.
  std::vector<std::vector<std::uint32_t>> order(d);
  std::vector<std::vector<double>> sorted(d);
  parallel_for(d, jobs, [&](std::size_t f) {
    auto& idx = order[f];
    idx.resize(n);
    std::iota(idx.begin(), idx.end(), 0u);
    std::stable_sort(idx.begin(), idx.end(), [&](std::uint32_t a, std::uint32_t b) {
      return data.x[a * d + f] < data.x[b * d + f];
    });
    sorted[f].resize(n);
    for (std::size_t j = 0; j < n; ++j) sorted[f][j] = data.x[idx[j] * d + f];
  });

  std::vector<double> pred(n, model.base_prediction);
  model.train_mse.push_back(detail::sse(data, pred));
  std::vector<double> grad(n), hess(n);
  std::vector<int> node_of(n);
  const auto min_leaf = static_cast<std::size_t>(params.min_samples_leaf);

  for (int t = 0; t < params.n_trees; ++t) {
    std::vector<bool> in_bag(n, true);
    if (params.subsample < 1.0) {
      Rng rng = Rng::derive({params.seed, static_cast<std::uint64_t>(t), 0x62616767ULL});
      bool any = false;
      for (std::size_t i = 0; i < n; ++i) {
        in_bag[i] = rng.uniform() < params.subsample;
        any = any || in_bag[i];
      }
      if (!any) in_bag[rng.below(n)] = true;
    }
    for (std::size_t i = 0; i < n; ++i) {
      grad[i] = weight[i] * (pred[i] - data.y[i]);
      hess[i] = weight[i];
      node_of[i] = in_bag[i] ? 0 : -1;
    }

    Tree tree(1);
    std::vector<int> level{0};
    for (int depth = 0; depth < params.max_depth && !level.empty(); ++depth) {
      // Per-node totals for the open level.
      std::vector<int> slot_of(tree.size(), -1);
      for (std::size_t s = 0; s < level.size(); ++s) slot_of[static_cast<std::size_t>(level[s])] = static_cast<int>(s);
      std::vector<double> tot_g(level.size(), 0.0), tot_h(level.size(), 0.0);
      std::vector<std::size_t> tot_n(level.size(), 0);
      for (std::size_t i = 0; i < n; ++i) {
        if (node_of[i] < 0) continue;
        const int s = slot_of[static_cast<std::size_t>(node_of[i])];
        if (s < 0) continue;
        tot_g[s] += grad[i];
        tot_h[s] += hess[i];
        ++tot_n[s];
      }

      std::vector<std::vector<detail::SplitCandidate>> best(d, std::vector<detail::SplitCandidate>(level.size()));
      parallel_for(d, jobs, [&](std::size_t f) {
        std::vector<detail::LeftSum> left(level.size());
        auto& out = best[f];
        const auto& idx = order[f];
        const auto& vals = sorted[f];
        for (std::size_t j = 0; j < n; ++j) {
          const std::uint32_t i = idx[j];
          const int node = node_of[i];
          if (node < 0) continue;
          const int s = slot_of[static_cast<std::size_t>(node)];
          if (s < 0) continue;
          detail::LeftSum& acc = left[s];
          const double v = vals[j];
          if (acc.n >= min_leaf && v != acc.last && tot_n[s] - acc.n >= min_leaf) {
            const double gr = tot_g[s] - acc.g;
            const double hr = tot_h[s] - acc.h;
            const double gain = acc.g * acc.g / (acc.h + params.l2) + gr * gr / (hr + params.l2) -
                                tot_g[s] * tot_g[s] / (tot_h[s] + params.l2);
            if (gain > out[s].gain) out[s] = {gain, detail::split_threshold(acc.last, v), static_cast<int>(f)};
          }
          acc.g += grad[i];
          acc.h += hess[i];
          ++acc.n;
          acc.last = v;
        }
      });

      std::vector<int> next;
      for (std::size_t s = 0; s < level.size(); ++s) {
        detail::SplitCandidate pick;
        for (std::size_t f = 0; f < d; ++f) {
          if (best[f][s].feature >= 0 && best[f][s].gain > pick.gain) pick = best[f][s];
        }
        if (pick.feature < 0 || pick.gain <= kMinGain) continue;
        const int id = level[s];
        const int l = static_cast<int>(tree.size());
        tree.emplace_back();
        tree.emplace_back();
        TreeNode& node = tree[static_cast<std::size_t>(id)];
        node.feature = pick.feature;
        node.threshold = pick.threshold;
        node.left = l;
        node.right = l + 1;
        next.push_back(l);
        next.push_back(l + 1);
      }
      for (std::size_t i = 0; i < n; ++i) {
        if (node_of[i] < 0) continue;
        const TreeNode& node = tree[static_cast<std::size_t>(node_of[i])];
        if (node.feature < 0) continue;
        node_of[i] = data.x[i * d + static_cast<std::size_t>(node.feature)] < node.threshold ? node.left : node.right;
      }
      level = std::move(next);
    }

    // Optimal leaf values -G / (H + l2) over in-bag rows.
    std::vector<double> leaf_g(tree.size(), 0.0), leaf_h(tree.size(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      if (node_of[i] < 0) continue;
      leaf_g[static_cast<std::size_t>(node_of[i])] += grad[i];
      leaf_h[static_cast<std::size_t>(node_of[i])] += hess[i];
    }
    for (std::size_t k = 0; k < tree.size(); ++k) {
      if (tree[k].feature < 0 && leaf_h[k] + params.l2 > 0.0) tree[k].value = -leaf_g[k] / (leaf_h[k] + params.l2);
    }
    const bool stump = tree.size() == 1;
    if (stump && params.subsample >= 1.0) break;  // nothing left to fit

    for (std::size_t i = 0; i < n; ++i) {
      int node = 0;
      while (tree[static_cast<std::size_t>(node)].feature >= 0) {
        const TreeNode& nd = tree[static_cast<std::size_t>(node)];
        node = data.x[i * d + static_cast<std::size_t>(nd.feature)] < nd.threshold ? nd.left : nd.right;
      }
      pred[i] += params.learning_rate * tree[static_cast<std::size_t>(node)].value;
    }
    model.trees.push_back(std::move(tree));
    model.train_mse.push_back(detail::sse(data, pred));
  }
  return model;
}

/// Model with no trees that always predicts `base`.
inline GbdtModel constant_gbdt(double base, std::size_t n_features) {
  GbdtModel m;
  m.n_features = n_features;
  m.base_prediction = base;
  return m;
}

}  // namespace turbotest::learn
