#pragma once

// Dense row-major sample matrix shared by both learners.

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "turbotest/core.hpp"

namespace turbotest::learn {

struct Dataset {
  std::size_t n_features = 0;
  std::vector<double> x;
  std::vector<double> y;

  Dataset() = default;
  explicit Dataset(std::size_t features) : n_features(features) {}

  std::size_t rows() const noexcept { return y.size(); }
  bool empty() const noexcept { return y.empty(); }

  std::span<const double> row(std::size_t i) const { return {x.data() + i * n_features, n_features}; }

  void add(std::span<const double> features, double target) {
    if (n_features == 0 && rows() == 0) n_features = features.size();
    if (features.size() != n_features) {
      throw ModelError("sample arity " + std::to_string(features.size()) + " does not match dataset arity " +
                       std::to_string(n_features));
    }
    x.insert(x.end(), features.begin(), features.end());
    y.push_back(target);
  }

  void reserve(std::size_t n) {
    x.reserve(n * n_features);
    y.reserve(n);
  }

  /// Throws ModelError on empty data or non-finite values.
  void validate(const char* what) const {
    if (empty()) throw ModelError(std::string(what) + ": empty dataset");
    if (x.size() != rows() * n_features) throw ModelError(std::string(what) + ": ragged feature matrix");
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (!std::isfinite(x[i])) {
        throw ModelError(std::string(what) + ": non-finite feature at row " + std::to_string(i / n_features) +
                         ", column " + std::to_string(i % n_features));
      }
    }
    for (std::size_t i = 0; i < y.size(); ++i) {
      if (!std::isfinite(y[i])) throw ModelError(std::string(what) + ": non-finite target at row " + std::to_string(i));
    }
  }
};

inline void check_arity(std::size_t expected, std::size_t got, const char* what) {
  if (expected != got) {
    throw ModelError(std::string(what) + ": expected input arity " + std::to_string(expected) + ", got " +
                     std::to_string(got));
  }
}

}  // namespace turbotest::learn
