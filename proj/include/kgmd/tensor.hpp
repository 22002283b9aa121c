#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace kgmd {

using Vec = std::vector<double>;

/// Row-major matrix of 64-bit floats. Embedding tables set `row_sparse` so that
/// gradients and optimizer updates are tracked per row.
struct Tensor {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  bool row_sparse = false;
  /// Position in Parameters::tensors(); stable across copies.
  std::size_t id = 0;
  std::vector<double> values;

  Tensor() = default;
  Tensor(std::string name_, std::size_t rows_, std::size_t cols_, bool sparse = false)
      : name(std::move(name_)), rows(rows_), cols(cols_), row_sparse(sparse),
        values(rows_ * cols_, 0.0) {}

  bool empty() const { return values.empty(); }
  std::size_t size() const { return values.size(); }
  std::span<double> row(std::size_t r) { return {values.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {values.data() + r * cols, cols}; }

  bool operator==(const Tensor& o) const {
    return name == o.name && rows == o.rows && cols == o.cols && values == o.values;
  }
};

double dot(std::span<const double> a, std::span<const double> b);

/// y = W x (+ b when b is non-empty). W is rows x cols.
void matvec(const Tensor& w, std::span<const double> x, std::span<const double> b, std::span<double> y);
/// y += W^T x.
void matvec_transposed_add(const Tensor& w, std::span<const double> x, std::span<double> y);
/// G += a b^T, G shaped like a rows x b cols.
void outer_add(std::span<double> g, std::span<const double> a, std::span<const double> b);
void axpy(double alpha, std::span<const double> x, std::span<double> y);

}  // namespace kgmd
