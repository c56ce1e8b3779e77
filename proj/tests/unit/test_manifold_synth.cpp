#include <cmath>
#include <filesystem>

#include <gtest/gtest.h>

#include "mscale/errors.hpp"
#include "mscale/id_estimation.hpp"
#include "mscale/point_cloud.hpp"
#include "mscale/text_io.hpp"

using namespace mscale;
namespace fs = std::filesystem;

TEST(Sampling, SmallestHypercubeHasTwoScalarsInUnitInterval) {
  const PointCloud c = sample_hypercube(1, 2, 7);
  ASSERT_EQ(c.size(), 2u);
  ASSERT_EQ(c.dim(), 1u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_GE(c.point(i)[0], 0.0);
    EXPECT_LE(c.point(i)[0], 1.0);
  }
}

TEST(Sampling, RejectsBadArguments) {
  EXPECT_THROW(sample_hypercube(0, 10, 1), ValidationError);
  EXPECT_THROW(sample_hypercube(2, 1, 1), ValidationError);
  EXPECT_THROW(sample_torus(0, 10, 1), ValidationError);
  EXPECT_THROW(sample_torus(2, 1, 1), ValidationError);
}

TEST(Sampling, SameSeedIsBitIdentical) {
  EXPECT_EQ(sample_hypercube(5, 300, 11), sample_hypercube(5, 300, 11));
  EXPECT_EQ(sample_torus(3, 300, 11), sample_torus(3, 300, 11));
  EXPECT_FALSE(sample_hypercube(5, 300, 11) == sample_hypercube(5, 300, 12));
}

TEST(Sampling, HypercubeCoordinateMeansWithinFiveSigma) {
  const std::size_t n = 20000;
  for (int d : {1, 3, 8}) {
    const PointCloud c = sample_hypercube(d, n, 100 + static_cast<std::uint64_t>(d));
    const double bound = 5.0 / std::sqrt(12.0 * static_cast<double>(n));
    for (int j = 0; j < d; ++j) EXPECT_NEAR(c.points().col(j).mean(), 0.5, bound);
  }
}

TEST(Sampling, TorusPairsLieOnUnitCircles) {
  const PointCloud one = sample_torus(1, 3, 5);
  EXPECT_EQ(one.dim(), 2u);
  const PointCloud c = sample_torus(4, 2000, 9);
  ASSERT_EQ(c.dim(), 8u);
  for (std::size_t i = 0; i < c.size(); ++i)
    for (int b = 0; b < 4; ++b) {
      const double x = c.point(i)[2 * b], y = c.point(i)[2 * b + 1];
      EXPECT_NEAR(x * x + y * y, 1.0, 1e-12);
    }
}

TEST(Sampling, LowDimensionalEstimatesNearTrueDimension) {
  const double cube = estimate_id_knn(sample_hypercube(2, 10000, 3), 2).d_hat;
  EXPECT_NEAR(cube, 2.0, 0.2);
  const double torus = estimate_id_knn(sample_torus(2, 10000, 3), 2).d_hat;
  EXPECT_GE(torus, 1.8);
  EXPECT_LE(torus, 2.4);
}

TEST(CloudIo, RoundTripIsBitExact) {
  RowMatrix m(3, 2);
  m << 0.1, -2.5e-300, 1.0 / 3.0, 123456789.123456789, -0.0, 5e-324;
  const PointCloud c(m);
  const fs::path p = fs::temp_directory_path() / "mscale_cloud_roundtrip.csv";
  save_cloud(c, p);
  const PointCloud back = load_cloud(p);
  fs::remove(p);
  ASSERT_EQ(back.size(), 3u);
  for (Eigen::Index i = 0; i < 3; ++i)
    for (Eigen::Index j = 0; j < 2; ++j) EXPECT_EQ(back.points()(i, j), m(i, j));

  const PointCloud big = sample_torus(3, 500, 4);
  EXPECT_EQ(parse_cloud(cloud_to_csv(big.points())), big);
}

TEST(CloudIo, WrongWidthRowIsNamed) {
  try {
    parse_cloud("1,2\n3,4\n5\n");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("row 3"), std::string::npos);
  }
}

TEST(CloudIo, EmptyAndNonFiniteInputsFail) {
  try {
    parse_cloud("");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("fewer than 2 points"), std::string::npos);
  }
  EXPECT_THROW(parse_cloud("1,2\nnan,4\n"), ParseError);
  EXPECT_THROW(parse_cloud("1,2\ninf,4\n"), ParseError);
  EXPECT_THROW(parse_cloud("1,x\n2,3\n"), ParseError);
}
