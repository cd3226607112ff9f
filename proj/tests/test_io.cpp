#include "femdiff/io.hpp"

#include <gtest/gtest.h>

#include <cstdio>
#include <cstring>
#include <functional>
#include <filesystem>
#include <limits>
#include <sstream>

using namespace femdiff;
using namespace femdiff::io;

namespace {

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorKind::InvalidArgument;
}

}  // namespace

TEST(FieldFile, RoundTripIsBitExact) {
  Matrix m(3, 2);
  m << 1.0, -0.0, std::numeric_limits<double>::denorm_min(), 1e300, -7.25, 0.1;
  std::stringstream buf;
  write_field(buf, Field(m));
  const Field back = read_field(buf);
  ASSERT_EQ(back.nodes(), 3);
  ASSERT_EQ(back.channels(), 2);
  for (Eigen::Index k = 0; k < m.size(); ++k) {
    EXPECT_EQ(std::memcmp(&m.data()[k], &back.values.data()[k], sizeof(double)), 0);
  }
}

TEST(FieldFile, LayoutIsLittleEndianRowMajor) {
  Matrix m(2, 2);
  m << 1, 2, 3, 4;
  std::stringstream buf;
  write_field(buf, Field(m));
  const std::string bytes = buf.str();
  ASSERT_EQ(bytes.size(), 4u + 8u + 4u + 4u * 8u);
  EXPECT_EQ(bytes.substr(0, 4), "FLD1");
  EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 2);
  EXPECT_EQ(static_cast<unsigned char>(bytes[12]), 2);
  double second = 0;
  std::memcpy(&second, bytes.data() + 16 + 8, 8);
  EXPECT_EQ(second, 2.0);  // row-major: (0, 1) follows (0, 0)
}

TEST(FieldFile, Errors) {
  std::stringstream bad("XXXX");
  EXPECT_EQ(kind_of([&] { read_field(bad); }), ErrorKind::ParseError);
  std::stringstream buf;
  write_field(buf, Field(Matrix::Ones(4, 1)));
  std::stringstream cut(buf.str().substr(0, buf.str().size() - 3));
  EXPECT_EQ(kind_of([&] { read_field(cut); }), ErrorKind::ParseError);
  EXPECT_EQ(kind_of([] { load_field("/nonexistent/dir/x.fld"); }), ErrorKind::IOError);
}

TEST(FieldFile, SaveAndLoadBindsGraph) {
  const auto path = (std::filesystem::temp_directory_path() / "femdiff_test_io.fld").string();
  save_field(path, Field(Matrix::Constant(5, 1, 2.5)));
  const Field f = load_field(path, 42);
  EXPECT_EQ(f.graph, 42u);
  EXPECT_EQ(f.values, Matrix::Constant(5, 1, 2.5));
  std::filesystem::remove(path);
}

TEST(FilterFile, RoundTrip) {
  FemConvFilter f(2, 3, 4, 0.25);
  for (std::size_t k = 0; k < f.weights.size(); ++k) f.weights[k] = 0.5 * static_cast<double>(k) - 3.0;
  std::stringstream buf;
  write_filter(buf, f);
  const auto back = read_filter(buf, 0.25);
  EXPECT_EQ(back.out_channels, 2);
  EXPECT_EQ(back.in_channels, 3);
  EXPECT_EQ(back.patch, 4);
  EXPECT_EQ(back.weights, f.weights);
  std::stringstream bad;
  bad.write("FCW1", 4);
  for (int k = 0; k < 3; ++k) {
    const std::uint32_t zero = 0;
    bad.write(reinterpret_cast<const char*>(&zero), 4);
  }
  EXPECT_EQ(kind_of([&] { read_filter(bad, 0.1); }), ErrorKind::ParseError);
}

TEST(ObservationFile, SensorRoundTrip) {
  SensorObservation obs{{3, 0, 7}, Vector(3)};
  obs.values << 0.1, -2.5, 1e-17;
  std::stringstream buf;
  write_observation(buf, obs);
  const auto back = std::get<SensorObservation>(read_observation(buf));
  EXPECT_EQ(back.sensors, obs.sensors);
  EXPECT_EQ(back.values, obs.values);
}

TEST(ObservationFile, CommentsAndPoissonPaths) {
  std::stringstream s("# header\nsensors 1  # one\n\n4 2.0\n");
  const auto a = std::get<SensorObservation>(read_observation(s));
  EXPECT_EQ(a.sensors, std::vector<int>{4});
  std::stringstream p("poisson\nsolution.fld\n");
  const auto b = std::get<PoissonObservation>(read_observation(p, "/data"));
  EXPECT_EQ(b.field_path, "/data/solution.fld");
  std::stringstream q("poisson\n/abs/u.fld\n");
  EXPECT_EQ(std::get<PoissonObservation>(read_observation(q, "/data")).field_path, "/abs/u.fld");
}

TEST(ObservationFile, Errors) {
  for (const char* text : {"", "sensors -1\n", "sensors 2\n0 1.0\n", "sensors 1\n0 nan\n", "sensors 1\n0 1\n5 5\n",
                           "gauges 1\n", "poisson\n"}) {
    std::stringstream s(text);
    EXPECT_EQ(kind_of([&] { read_observation(s); }), ErrorKind::ParseError) << text;
  }
  EXPECT_EQ(kind_of([] { load_observation("/nonexistent/obs.txt"); }), ErrorKind::IOError);
}
