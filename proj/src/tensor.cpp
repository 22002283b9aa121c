#include "kgmd/tensor.hpp"

#include <cassert>

namespace kgmd {

double dot(std::span<const double> a, std::span<const double> b) {
  assert(a.size() == b.size());
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void matvec(const Tensor& w, std::span<const double> x, std::span<const double> b, std::span<double> y) {
  assert(x.size() == w.cols && y.size() == w.rows);
  const double* p = w.values.data();
  for (std::size_t r = 0; r < w.rows; ++r, p += w.cols) {
    double s = b.empty() ? 0.0 : b[r];
    for (std::size_t c = 0; c < w.cols; ++c) s += p[c] * x[c];
    y[r] = s;
  }
}

void matvec_transposed_add(const Tensor& w, std::span<const double> x, std::span<double> y) {
  assert(x.size() == w.rows && y.size() == w.cols);
  const double* p = w.values.data();
  for (std::size_t r = 0; r < w.rows; ++r, p += w.cols) {
    const double xr = x[r];
    if (xr == 0.0) continue;
    for (std::size_t c = 0; c < w.cols; ++c) y[c] += p[c] * xr;
  }
}

void outer_add(std::span<double> g, std::span<const double> a, std::span<const double> b) {
  assert(g.size() == a.size() * b.size());
  double* p = g.data();
  for (std::size_t r = 0; r < a.size(); ++r, p += b.size()) {
    const double ar = a[r];
    if (ar == 0.0) continue;
    for (std::size_t c = 0; c < b.size(); ++c) p[c] += ar * b[c];
  }
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  assert(x.size() == y.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

}  // namespace kgmd
