#include "spackle/neighborhood.hpp"

#include "doctest.h"
#include "spackle/errors.hpp"
#include "testutil.hpp"

using namespace spackle;

TEST_CASE("assembled neighborhood shapes") {
  Slide slide = testutil::make_hex_slide("s", 9, 9, 7);
  Rng rng(5);
  for (int i = 0; i < slide.n_spots(); ++i) {
    for (int j = 0; j < 7; ++j) {
      slide.expr(i, j) = static_cast<float>(rng.normal());
      slide.observed(i, j) = rng.uniform() > 0.3;
    }
  }
  int center = -1;
  for (int i = 0; i < slide.n_spots(); ++i) {
    if (slide.spots[i].array_row == 4 && slide.spots[i].array_col == 4) center = i;
  }

  SUBCASE("hops=2 interior spot -> g x 19") {
    NeighborIndex idx = build_neighbor_index(slide, 2);
    Neighborhood nb = assemble_neighborhood(slide, center, idx);
    CHECK(nb.expr.rows() == 7);
    CHECK(nb.expr.cols() == 19);
    CHECK_FALSE(nb.pad_cols(0));
    CHECK_FALSE(nb.pad_cols.any());
    CHECK((nb.expr.col(0).transpose().array() == slide.expr.row(center).array()).all());
  }
  SUBCASE("hops=0 -> center only") {
    NeighborIndex idx = build_neighbor_index(slide, 0);
    Neighborhood nb = assemble_neighborhood(slide, center, idx);
    CHECK(nb.expr.cols() == 1);
  }
  SUBCASE("border spot gets zeroed padded columns") {
    NeighborIndex idx = build_neighbor_index(slide, 2);
    Neighborhood nb = assemble_neighborhood(slide, 0, idx);  // corner
    REQUIRE(nb.pad_cols.count() > 0);
    for (Eigen::Index c = 0; c < nb.expr.cols(); ++c) {
      if (!nb.pad_cols(c)) continue;
      CHECK((nb.expr.col(c).array() == 0.0f).all());
      CHECK_FALSE(nb.observed.col(c).any());
    }
  }
}

TEST_CASE("mask density lands at rho for big masks") {
  BoolMatrix observed = BoolMatrix::Constant(100, 120, true);  // 12,000 cells
  const CounterRng rng(kDefaultSeed, "mask-test");
  MaskSet m = draw_mask(observed, 0.30, rng, 0);
  const double density =
      static_cast<double>(m.candidate.count()) / static_cast<double>(m.candidate.size());
  CHECK(density == doctest::Approx(0.30).epsilon(0.0667));  // 0.30 +- 0.02
  CHECK((m.hidden == m.candidate).all());                   // all-observed: hidden == candidate
}

TEST_CASE("all-missing mask annihilates hiding") {
  BoolMatrix observed = BoolMatrix::Constant(40, 25, false);
  const CounterRng rng(kDefaultSeed, "mask-test");
  MaskSet m = draw_mask(observed, 0.30, rng, 7);
  CHECK(m.candidate.count() > 0);
  CHECK(m.hidden.count() == 0);
}

TEST_CASE("fixed seed reproduces the mask, different counters do not") {
  BoolMatrix observed = BoolMatrix::Constant(30, 19, true);
  const CounterRng a(42, "mask");
  const CounterRng b(42, "mask");
  MaskSet m1 = draw_mask(observed, 0.3, a, 1000);
  MaskSet m2 = draw_mask(observed, 0.3, b, 1000);
  CHECK((m1.candidate == m2.candidate).all());
  MaskSet m3 = draw_mask(observed, 0.3, a, 2000);
  CHECK_FALSE((m1.candidate == m3.candidate).all());
}

TEST_CASE("context rows are never candidates") {
  BoolMatrix observed = BoolMatrix::Constant(64, 19, true);
  const CounterRng rng(7, "mask");
  MaskSet m = draw_mask(observed, 0.3, rng, 0, 16);
  CHECK(m.candidate.topRows(16).count() > 0);
  CHECK(m.candidate.bottomRows(48).count() == 0);
}

TEST_CASE("apply_mask basics") {
  Matrix e(2, 3);
  e << 1, 2, 3, 4, 5, 6;
  BoolMatrix none = BoolMatrix::Constant(2, 3, false);
  CHECK((apply_mask(e, none).array() == e.array()).all());

  BoolMatrix all = BoolMatrix::Constant(2, 3, true);
  CHECK((apply_mask(e, all).array() == 0.0f).all());

  BoolMatrix one = none;
  one(1, 2) = true;
  Matrix masked = apply_mask(e, one);
  CHECK(masked(1, 2) == 0.0f);
  masked(1, 2) = e(1, 2);
  CHECK((masked.array() == e.array()).all());

  // idempotent
  Matrix again = apply_mask(apply_mask(e, one), one);
  CHECK((again.array() == apply_mask(e, one).array()).all());

  BoolMatrix wrong = BoolMatrix::Constant(3, 3, false);
  CHECK_THROWS_AS(apply_mask(e, wrong), ConsistencyError);
}

TEST_CASE("hidden implies observed on random masks") {
  Rng rng(99);
  const CounterRng crng(11, "mask");
  for (int trial = 0; trial < 50; ++trial) {
    const int rows = 2 + static_cast<int>(rng.uniform_int(30));
    const int cols = 1 + static_cast<int>(rng.uniform_int(20));
    BoolMatrix observed(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
      for (Eigen::Index j = 0; j < cols; ++j) observed(i, j) = rng.uniform() < 0.6;
    }
    MaskSet m = draw_mask(observed, 0.3, crng, static_cast<std::uint64_t>(trial) << 32);
    CHECK((m.hidden && !observed).count() == 0);
    CHECK((m.hidden == (m.candidate && observed)).all());
  }
}
