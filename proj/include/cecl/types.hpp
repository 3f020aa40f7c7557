#pragma once

#include <span>

#include <Eigen/Dense>

namespace cecl {

// Row-major so that one example (or one embedding) is one contiguous row.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

inline Matrix gather_rows(const Matrix& m, std::span<const int> rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
  return out;
}

// Geometry of flattened image features (channel-major, then rows, then
// columns). All zero for plain vector corpora.
struct ImageShape {
  int channels = 0;
  int height = 0;
  int width = 0;

  bool is_image() const { return channels > 0 && height > 0 && width > 0; }
  int size() const { return channels * height * width; }
  bool operator==(const ImageShape&) const = default;
};

}  // namespace cecl
