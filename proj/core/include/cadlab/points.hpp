#pragma once

#include <span>
#include <vector>

#include "cadlab/error.hpp"

namespace cadlab {

/// Row-major set of fixed-dimension points.
struct PointSet {
  std::size_t dim = 2;
  std::vector<double> coords;

  PointSet() = default;
  explicit PointSet(std::size_t dimension) : dim(dimension) {}
  PointSet(std::size_t dimension, std::vector<double> values) : dim(dimension), coords(std::move(values)) {
    require(dim > 0 && coords.size() % dim == 0, "PointSet: coordinate count is not a multiple of dim");
  }

  std::size_t size() const { return dim == 0 ? 0 : coords.size() / dim; }
  bool empty() const { return coords.empty(); }
  std::span<const double> operator[](std::size_t i) const { return {coords.data() + i * dim, dim}; }
  void push_back(std::span<const double> p) {
    require(p.size() == dim, "PointSet: point has the wrong dimension");
    coords.insert(coords.end(), p.begin(), p.end());
  }
};

}  // namespace cadlab
