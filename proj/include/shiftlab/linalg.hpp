#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "shiftlab/errors.hpp"

namespace shiftlab {

// Dense row-major matrix of doubles. All arithmetic in the library is double
// precision; loops are written out so evaluation order is fixed and results
// are bit-reproducible.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const {
    return {data.data() + r * cols, cols};
  }

  bool operator==(const Matrix&) const = default;
};

inline Matrix gather_rows(const Matrix& m, std::span<const std::size_t> indices) {
  Matrix out(indices.size(), m.cols);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= m.rows) throw InputError("gather_rows: index out of range");
    for (std::size_t c = 0; c < m.cols; ++c) out(r, c) = m(indices[r], c);
  }
  return out;
}

template <typename T>
inline std::vector<T> gather(const std::vector<T>& values,
                             std::span<const std::size_t> indices) {
  std::vector<T> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) {
    if (i >= values.size()) throw InputError("gather: index out of range");
    out.push_back(values[i]);
  }
  return out;
}

}  // namespace shiftlab
