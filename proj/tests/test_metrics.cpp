#include "femdiff/metrics.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace femdiff;

namespace {

Field f2(double a, double b) {
  Matrix m(2, 1);
  m << a, b;
  return Field(m);
}

Field f1(double a) { return Field(Matrix::Constant(1, 1, a)); }

}  // namespace

TEST(Rmse, Examples) {
  SampleEnsemble exact{{{f2(1, 2), f2(1, 2)}}, {f2(1, 2)}};
  EXPECT_EQ(rmse_posterior_mean(exact), 0.0);
  // Mean (3, 4) against a zero truth.
  SampleEnsemble five{{{f2(2, 4), f2(4, 4)}}, {f2(0, 0)}};
  EXPECT_DOUBLE_EQ(rmse_posterior_mean(five), 5.0);
  SampleEnsemble two{{{f2(1, 1)}, {f2(-1, 2)}}, {f2(0, 0), f2(0, 1)}};
  EXPECT_DOUBLE_EQ(rmse_posterior_mean(two), std::sqrt(2.0));
}

TEST(Rmse, Validation) {
  SampleEnsemble missing{{}, {f2(0, 0)}};
  EXPECT_THROW(rmse_posterior_mean(missing), Error);
  SampleEnsemble shapes{{{f1(0.0)}}, {f2(0, 0)}};
  EXPECT_THROW(rmse_posterior_mean(shapes), Error);
}

TEST(EnergyScore, Examples) {
  EXPECT_EQ(energy_score({f2(1, 1), f2(1, 1)}, f2(1, 1)), 0.0);
  EXPECT_DOUBLE_EQ(energy_score({f2(0, 0)}, f2(3, 4)), 5.0);
  EXPECT_DOUBLE_EQ(energy_score({f1(1.0), f1(1.0)}, f1(0.5)), 0.5);
  EXPECT_DOUBLE_EQ(energy_score({f1(0.0), f1(1.0)}, f1(0.5)), 0.25);
  EXPECT_THROW(energy_score(std::vector<Field>{}, f1(0.0)), Error);
}

TEST(EnergyScore, MatchesFullDoubleSum) {
  Rng rng(1);
  std::normal_distribution<double> g;
  std::vector<Field> s;
  for (int k = 0; k < 7; ++k) s.push_back(f2(g(rng), g(rng)));
  const Field y = f2(0.3, -0.2);
  double fit = 0, pair = 0;
  for (const auto& a : s) {
    fit += (a.values - y.values).norm();
    for (const auto& b : s) pair += (a.values - b.values).norm();
  }
  const double K = 7.0;
  EXPECT_NEAR(energy_score(s, y), fit / K - pair / (2 * K * K), 1e-14);
  SampleEnsemble ens{{s, s}, {y, f2(0, 0)}};
  EXPECT_NEAR(energy_score(ens), 0.5 * (energy_score(s, y) + energy_score(s, f2(0, 0))), 1e-14);
}

TEST(EnergyScore, PrefersTheTrueDistribution) {
  // Properness: for y ~ N(0, 1) the matching ensemble scores better on average than a shifted one.
  Rng rng(2);
  std::normal_distribution<double> g;
  double good = 0, bad = 0;
  for (int rep = 0; rep < 300; ++rep) {
    std::vector<Field> a, b;
    for (int k = 0; k < 20; ++k) {
      a.push_back(f1(g(rng)));
      b.push_back(f1(g(rng) + 1.5));
    }
    const Field y = f1(g(rng));
    good += energy_score(a, y);
    bad += energy_score(b, y);
  }
  EXPECT_LT(good, bad);
}

TEST(Mmd, HandExample) {
  const double c = std::sqrt(200.0 * std::log(2.0));
  const auto r = mmd_unbiased({f1(0.0), f1(0.0)}, {f1(c), f1(c)}, 10.0);
  EXPECT_NEAR(r.mmd2, 1.0, 1e-14);
  EXPECT_NEAR(r.signed_root, 1.0, 1e-14);
  EXPECT_NEAR(gaussian_kernel(f1(0.0), f1(c), 10.0), 0.5, 1e-15);
}

TEST(Mmd, SymmetricAndSignedRoot) {
  Rng rng(3);
  std::normal_distribution<double> g;
  std::vector<Field> xs, zs;
  for (int k = 0; k < 6; ++k) {
    xs.push_back(f2(g(rng), g(rng)));
    zs.push_back(f2(g(rng), g(rng)));
  }
  const auto a = mmd_unbiased(xs, zs, 1.0), b = mmd_unbiased(zs, xs, 1.0);
  EXPECT_NEAR(a.mmd2, b.mmd2, 1e-14);
  EXPECT_NEAR(a.signed_root * std::abs(a.signed_root), a.mmd2, 1e-14);
  EXPECT_THROW(mmd_unbiased({f1(0.0)}, zs), Error);
  EXPECT_THROW(mmd_unbiased(xs, zs, 0.0), Error);
}

TEST(Mmd, UnbiasedUnderTheNull) {
  Rng rng(4);
  std::normal_distribution<double> g;
  const int reps = 100;
  double sum = 0, sq = 0;
  for (int r = 0; r < reps; ++r) {
    std::vector<Field> xs, zs;
    for (int k = 0; k < 10; ++k) {
      xs.push_back(f1(g(rng)));
      zs.push_back(f1(g(rng)));
    }
    const double m = mmd_unbiased(xs, zs, 1.0).mmd2;
    sum += m;
    sq += m * m;
  }
  const double mean = sum / reps;
  const double se = std::sqrt((sq / reps - mean * mean) / reps);
  EXPECT_LT(std::abs(mean), 3.0 * se);
}

TEST(Mmd, DetectsAShift) {
  Rng rng(5);
  std::normal_distribution<double> g;
  std::vector<Field> xs, zs;
  for (int k = 0; k < 50; ++k) {
    xs.push_back(f1(g(rng)));
    zs.push_back(f1(g(rng) + 2.0));
  }
  EXPECT_GT(mmd_unbiased(xs, zs, 1.0).mmd2, 0.1);
}
