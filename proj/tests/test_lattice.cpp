#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>

#include "nlpf/geometry1d.hpp"
#include "nlpf/lattice.hpp"
#include "nlpf/rng.hpp"

using namespace nlpf;

namespace {

VoxelSet random_blob(int N, double L, std::uint64_t seed) {
  auto v = VoxelSet::make(2, N, L);
  Rng g(seed);
  // a few discs, so the set has curved boundary in every direction
  for (int k = 0; k < 5; ++k) {
    const double cx = L * uniform01(g), cy = L * uniform01(g), r = L * (0.08 + 0.12 * uniform01(g));
    for (int i = 0; i < N; ++i)
      for (int j = 0; j < N; ++j) {
        double dx = (i + 0.5) * L / N - cx, dy = (j + 0.5) * L / N - cy;
        dx -= L * std::round(dx / L);
        dy -= L * std::round(dy / L);
        if (dx * dx + dy * dy < r * r) v.bits[v.index(i, j)] = 1;
      }
  }
  return v;
}

}  // namespace

TEST(lattice, AutocorrelationMatchesDirectSum) {
  auto v = random_blob(16, 1.0, 3);
  const auto A = detail::autocorrelation(v);
  for (int a = 0; a < 16; a += 3)
    for (int b = 0; b < 16; b += 5) {
      std::int64_t s = 0;
      for (int i = 0; i < 16; ++i)
        for (int j = 0; j < 16; ++j) s += v.bits[v.index(i, j)] * v.bits[v.index(i + a, j + b)];
      EXPECT_EQ(A[v.index(a, b)], s);
    }
}

TEST(lattice, EmptyAndFullAreExactlyZero) {
  const auto k = KernelSpec::make(5, 2, 0.1);
  auto e = VoxelSet::make(2, 32, 2.0);
  EXPECT_EQ(lattice_energy(e, k).value, 0.0);
  EXPECT_EQ(lattice_energy(e.complement(), k).value, 0.0);
  auto e3 = VoxelSet::make(3, 8, 1.0);
  EXPECT_EQ(lattice_energy(e3, KernelSpec::make(6, 3, 0.2)).value, 0.0);
}

TEST(lattice, SymmetriesAreBitExact) {
  const auto k = KernelSpec::make(5, 2, 0.05);
  auto v = random_blob(48, 3.0, 7);
  const double e = lattice_energy(v, k).value;
  EXPECT_EQ(lattice_energy(shift(v, {5, 17, 0}), k).value, e);
  EXPECT_EQ(lattice_energy(quarter_turn(v), k).value, e);
  EXPECT_EQ(lattice_energy(reflect(v, 1), k).value, e);
  EXPECT_EQ(lattice_energy(v.complement(), k).value, e);
  EXPECT_EQ(lattice_perimeter(quarter_turn(reflect(v, 0))), lattice_perimeter(v));
}

TEST(lattice, ThreeDimensionalSymmetries) {
  const auto k = KernelSpec::make(6, 3, 0.2);
  auto v = VoxelSet::make(3, 12, 1.0);
  Rng g(5);
  for (auto& b : v.bits) b = uniform01(g) < 0.3;
  const auto lk = detail::lattice_kernel(k, 3, 12, 1.0);
  const double nl = detail::nonlocal_sum(v, *lk);
  EXPECT_EQ(detail::nonlocal_sum(quarter_turn(v, 1, 2), *lk), nl);
  EXPECT_EQ(detail::nonlocal_sum(shift(v, {1, 2, 3}), *lk), nl);
  EXPECT_EQ(detail::nonlocal_sum(v.complement(), *lk), nl);
}

TEST(lattice, AxisStripePerimeterIsExact) {
  auto v = rasterize(periodic(stripes(2, {1, 0}, 1.0), 4.0), 64, 4.0);
  EXPECT_NEAR(lattice_perimeter(v), 16.0, 1e-12);
  auto v1 = rasterize(periodic(stripes(1, {1}, 1.0), 4.0), 64, 4.0);
  EXPECT_EQ(lattice_perimeter(v1), 4.0);
}

TEST(lattice, DiskPerimeterNearCircumference) {
  for (int N : {64, 128}) {
    auto v = rasterize(periodic(ball(2, {0.5, 0.5}, 0.3), 1.0), N, 1.0);
    EXPECT_NEAR(lattice_perimeter(v), 2 * std::numbers::pi * 0.3, 0.02) << N;
  }
}

TEST(lattice, SpherePerimeterNearArea) {
  auto v = rasterize(periodic(ball(3, {0.5, 0.5, 0.5}, 0.3), 1.0), 24, 1.0);
  EXPECT_NEAR(lattice_perimeter(v), 4 * std::numbers::pi * 0.09, 0.03);
}

TEST(lattice, StripeEnergyConvergesUnderRefinement) {
  const auto k = KernelSpec::make(5, 2, 0.1);
  const double exact = stripe_energy(1.0, k);
  std::vector<double> err;
  for (int N : {64, 128, 256}) {
    auto v = rasterize(periodic(stripes(2, {1, 0}, 1.0), 4.0), N, 4.0);
    err.push_back(std::abs(lattice_energy(v, k).value - exact));
  }
  EXPECT_GE(err[0] / err[1], 1.5);
  EXPECT_GE(err[1] / err[2], 1.5);
  EXPECT_LT(err[2], 1e-2 * std::abs(exact));
}

TEST(lattice, ObliqueStripesNearProfileEnergy) {
  const auto k = KernelSpec::make(5, 2, 0.1);
  const double h = 4.0 / (2 * std::sqrt(5.0));
  auto v = rasterize(periodic(stripes(2, {2 / std::sqrt(5.0), 1 / std::sqrt(5.0)}, h), 4.0), 128, 4.0);
  const double exact = stripe_energy(h, k);
  const auto r = lattice_energy(v, k);
  EXPECT_NEAR(r.value, exact, r.bound + 0.01 * std::abs(exact));
}

TEST(lattice, TildeModeUsesCallerCoefficient) {
  const auto k = KernelSpec::make(5, 2, 0.1);
  auto v = rasterize(periodic(stripes(2, {1, 0}, 1.0), 4.0), 64, 4.0);
  const auto a = lattice_energy(v, k, LatticeMode::tilde, 2.0);
  const auto b = lattice_energy(v, k, LatticeMode::tilde, 3.0);
  EXPECT_NEAR(b.local - a.local, 16.0 / 16.0, 1e-12);
  EXPECT_EQ(a.nonlocal, b.nonlocal);
}

TEST(lattice, StripednessScores) {
  auto v = rasterize(periodic(stripes(2, {1, 0}, 0.5), 2.0), 64, 2.0);
  EXPECT_EQ(stripedness(v).score, 1.0);
  // cell-compatible stripes close to 30 degrees
  const double n = std::sqrt(65.0);
  auto w = rasterize(periodic(stripes(2, {7 / n, 4 / n}, 1.0 / (2 * n)), 1.0), 128, 1.0);
  const auto s = stripedness(w);
  EXPECT_GT(s.score, 0.9);
  EXPECT_NEAR(s.angle, std::numbers::pi / 6, 0.05);
  auto r = VoxelSet::make(2, 128, 1.0);
  Rng g(9);
  for (auto& b : r.bits) b = uniform01(g) < 0.5;
  EXPECT_LT(stripedness(r).score, 0.3);
  EXPECT_EQ(stripedness(VoxelSet::make(2, 16, 1.0)).score, 0.0);
}

TEST(lattice, FileRoundTrip) {
  auto v = random_blob(40, 2.5, 1);
  const auto path = (std::filesystem::temp_directory_path() / "nlpf_voxels.bin").string();
  write_voxels(v, path, "blob");
  EXPECT_EQ(std::filesystem::file_size(path), 32u + (40 * 40 + 7) / 8);
  EXPECT_EQ(read_voxels(path), v);
  EXPECT_TRUE(std::filesystem::exists(path + ".meta"));
}

TEST(lattice, RejectsBadGrids) {
  EXPECT_THROW(VoxelSet::make(4, 16, 1), ConfigError);
  EXPECT_THROW(VoxelSet::make(2, 4, 1), ConfigError);
  EXPECT_THROW(VoxelSet::make(2, 16, -1), ConfigError);
  EXPECT_THROW(lattice_energy(VoxelSet::make(2, 16, 1), KernelSpec::make(5, 2, 0)), ConfigError);
}

#include "nlpf/slicing.hpp"

TEST(lattice, AgreesWithSlicingOnCurvedShapes) {
  const auto k = KernelSpec::make(5, 2, 0.1);
  std::vector<AnalyticShape> shapes{
      periodic(stripes(2, {0.6, 0.8}, 0.1), 1.0),
      periodic(ball(2, {0.5, 0.5}, 0.3), 1.0),
      periodic(unite({ball(2, {0.3, 0.4}, 0.2), ball(2, {0.6, 0.55}, 0.18), ball(2, {0.75, 0.2}, 0.1)}), 1.0),
  };
  SliceQuadrature q;
  q.n_dirs = 96;
  q.n_offsets = 96;
  q.seed = 4;
  for (const auto& s : shapes) {
    const auto sl = energy_by_slicing(s, cube_window(2, 0, 1), k, q);
    const auto la = lattice_energy(rasterize(s, 256, 1.0), k);
    EXPECT_NEAR(la.value, sl.value, std::max(3 * sl.stderr_, la.bound));
  }
}

TEST(lattice, ObliqueEdgeBiasWithinDeclaredBound) {
  for (auto [a, b] : std::vector<std::pair<int, int>>{{4, 1}, {5, 1}, {3, 2}, {7, 4}, {8, 1}}) {
    const double n = std::hypot(a, b);
    auto v = rasterize(periodic(stripes(2, {a / n, b / n}, 1 / (2 * n)), 1.0), 256, 1.0);
    EXPECT_LT(std::abs(lattice_perimeter(v) / (2 * n) - 1), perimeter_bias(2)) << a << "," << b;
  }
}

TEST(lattice, EnergyDecreasesWithTauOnStripes) {
  auto v = rasterize(periodic(stripes(2, {1, 0}, 1.0), 4.0), 64, 4.0);
  double prev = INFINITY, prev_oracle = INFINITY;
  for (double tau : {0.4, 0.2, 0.1, 0.05}) {
    const auto k = KernelSpec::make(5, 2, tau);
    const double e = lattice_energy(v, k).value, o = stripe_energy(1.0, k);
    if (o < prev_oracle) {
      EXPECT_LT(e, prev) << tau;
    }
    prev = e;
    prev_oracle = o;
  }
}
