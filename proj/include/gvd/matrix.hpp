#pragma once

#include <cassert>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace gvd {

// Dense row-major matrix of doubles. Column vectors are n x 1.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(int r, int c, double fill = 0.0)
      : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, fill) {}

  static Matrix column(std::span<const double> v) {
    Matrix m(static_cast<int>(v.size()), 1);
    for (std::size_t i = 0; i < v.size(); ++i) m.data[i] = v[i];
    return m;
  }
  static Matrix column(std::initializer_list<double> v) {
    return column(std::span<const double>(v.begin(), v.size()));
  }
  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows_list) {
    Matrix m(static_cast<int>(rows_list.size()),
             rows_list.size() ? static_cast<int>(rows_list.begin()->size()) : 0);
    int r = 0;
    for (const auto& row : rows_list) {
      assert(static_cast<int>(row.size()) == m.cols);
      int c = 0;
      for (double v : row) m(r, c++) = v;
      ++r;
    }
    return m;
  }

  double& operator()(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  double operator()(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }

  std::size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }
  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }

  std::span<double> span() { return data; }
  std::span<const double> span() const { return data; }

  std::vector<double> col(int c) const {
    std::vector<double> out(rows);
    for (int r = 0; r < rows; ++r) out[r] = (*this)(r, c);
    return out;
  }
  std::vector<double> row(int r) const {
    return {data.begin() + static_cast<std::ptrdiff_t>(r) * cols,
            data.begin() + static_cast<std::ptrdiff_t>(r + 1) * cols};
  }
};

inline bool operator==(const Matrix& a, const Matrix& b) {
  return a.rows == b.rows && a.cols == b.cols && a.data == b.data;
}

}  // namespace gvd
