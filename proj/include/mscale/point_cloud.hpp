#pragma once

// Point clouds: synthetic manifold samplers with known intrinsic dimension and
// the CSV file format (one point per row, no header, shortest round-trip
// decimals).

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "mscale/errors.hpp"
#include "mscale/rng.hpp"
#include "mscale/text_io.hpp"

namespace mscale {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// An immutable set of n >= 2 points of common ambient dimension D >= 1,
/// stored one point per row.
class PointCloud {
 public:
  explicit PointCloud(RowMatrix points) : points_(std::move(points)) {
    if (points_.cols() < 1) throw ValidationError("point cloud needs ambient dimension >= 1");
    if (points_.rows() < 2) throw ValidationError("point cloud has fewer than 2 points");
  }

  std::size_t size() const noexcept { return static_cast<std::size_t>(points_.rows()); }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(points_.cols()); }
  const RowMatrix& points() const noexcept { return points_; }
  auto point(std::size_t i) const { return points_.row(static_cast<Eigen::Index>(i)); }

  /// Rows selected by index, in the given order.
  PointCloud subset(const std::vector<std::size_t>& rows) const {
    RowMatrix out(static_cast<Eigen::Index>(rows.size()), points_.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = point(rows[i]);
    return PointCloud(std::move(out));
  }

  bool operator==(const PointCloud& other) const {
    return points_.rows() == other.points_.rows() && points_.cols() == other.points_.cols() &&
           points_ == other.points_;
  }

 private:
  RowMatrix points_;
};

namespace detail {
inline void check_sampler_args(int d, std::size_t n) {
  if (d < 1) throw ValidationError("manifold dimension must be >= 1");
  if (n < 2) throw ValidationError("point count must be >= 2");
}
}  // namespace detail

/// n i.i.d. points uniform on [0,1]^d.
inline PointCloud sample_hypercube(int d, std::size_t n, std::uint64_t seed) {
  detail::check_sampler_args(d, n);
  Rng rng(seed);
  RowMatrix pts(static_cast<Eigen::Index>(n), d);
  for (Eigen::Index i = 0; i < pts.rows(); ++i)
    for (Eigen::Index j = 0; j < d; ++j) pts(i, j) = rng.uniform01();
  return PointCloud(std::move(pts));
}

/// n points on the flat d-torus, each unit-circle factor embedded as
/// (cos t, sin t) in its own coordinate pair. Ambient dimension 2d.
inline PointCloud sample_torus(int d, std::size_t n, std::uint64_t seed) {
  detail::check_sampler_args(d, n);
  Rng rng(seed);
  RowMatrix pts(static_cast<Eigen::Index>(n), 2 * d);
  for (Eigen::Index i = 0; i < pts.rows(); ++i) {
    for (Eigen::Index j = 0; j < d; ++j) {
      const double t = 2.0 * std::numbers::pi * rng.uniform01();
      pts(i, 2 * j) = std::cos(t);
      pts(i, 2 * j + 1) = std::sin(t);
    }
  }
  return PointCloud(std::move(pts));
}

inline std::string cloud_to_csv(const RowMatrix& pts) {
  std::string out;
  out.reserve(static_cast<std::size_t>(pts.size()) * 20);
  for (Eigen::Index i = 0; i < pts.rows(); ++i) {
    for (Eigen::Index j = 0; j < pts.cols(); ++j) {
      if (j) out += ',';
      out += format_double(pts(i, j));
    }
    out += '\n';
  }
  return out;
}

inline void save_cloud(const PointCloud& cloud, const std::filesystem::path& path) {
  write_file(path, cloud_to_csv(cloud.points()));
}

/// Parses CSV text. Blank lines are ignored; rows are numbered from 1 in
/// error messages.
inline PointCloud parse_cloud(std::string_view text) {
  std::vector<double> values;
  std::size_t cols = 0, rows = 0, line_no = 0;
  while (!text.empty()) {
    const auto eol = text.find('\n');
    std::string_view line = text.substr(0, eol);
    text = eol == std::string_view::npos ? std::string_view{} : text.substr(eol + 1);
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos) continue;

    std::size_t count = 0;
    while (true) {
      const auto comma = line.find(',');
      double v;
      if (!parse_double(line.substr(0, comma), v))
        throw ParseError("row " + std::to_string(line_no) + ": malformed value in column " + std::to_string(count + 1));
      if (!std::isfinite(v)) throw ParseError("row " + std::to_string(line_no) + ": non-finite value");
      values.push_back(v);
      ++count;
      if (comma == std::string_view::npos) break;
      line.remove_prefix(comma + 1);
    }
    if (rows == 0) {
      cols = count;
    } else if (count != cols) {
      throw ParseError("row " + std::to_string(line_no) + ": expected " + std::to_string(cols) + " columns, found " +
                       std::to_string(count));
    }
    ++rows;
  }
  if (rows < 2) throw ParseError("point cloud has fewer than 2 points");
  RowMatrix pts = Eigen::Map<RowMatrix>(values.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  return PointCloud(std::move(pts));
}

inline PointCloud load_cloud(const std::filesystem::path& path) { return parse_cloud(read_file(path)); }

}  // namespace mscale
