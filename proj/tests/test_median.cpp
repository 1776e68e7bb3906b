#include "spackle/median.hpp"

#include <cmath>

#include "doctest.h"
#include "spackle/errors.hpp"
#include "testutil.hpp"

using namespace spackle;

namespace {

// Independent route: enumerate the full region by sorting all spots by
// distance (ties by index), clip to disc size and radius cutoff, pool the
// observed values, sort, take the median; fall back to the global median.
float median_oracle(const Slide& slide, int spot, int gene, const MedianConfig& cfg,
                    const Eigen::VectorXd& global_medians) {
  for (int h = 1; h <= cfg.max_hops; ++h) {
    auto region = testutil::disc_bruteforce(slide, h)[static_cast<std::size_t>(spot)];
    std::vector<double> vals;
    for (int nb : region) {
      if (slide.observed(nb, gene)) vals.push_back(static_cast<double>(slide.expr(nb, gene)));
    }
    if (static_cast<int>(vals.size()) >= cfg.min_observed) {
      return static_cast<float>(testutil::median_of(vals));
    }
  }
  return static_cast<float>(global_medians(gene));
}

Slide random_slide(const std::string& id, int rows, int cols, int genes, double missing,
                   std::uint64_t seed) {
  Slide slide = testutil::make_hex_slide(id, rows, cols, genes);
  Rng rng(seed);
  for (int i = 0; i < slide.n_spots(); ++i) {
    for (int j = 0; j < genes; ++j) {
      slide.expr(i, j) = static_cast<float>(rng.normal() * 2.0 + 5.0);
      slide.observed(i, j) = rng.uniform() >= missing;
      if (!slide.observed(i, j)) slide.expr(i, j) = 0.0f;
    }
  }
  return slide;
}

}  // namespace

TEST_CASE("median of three observed 1-hop values") {
  Slide slide = testutil::make_hex_slide("s", 5, 5, 1);
  slide.observed.setConstant(false);
  int center = -1;
  for (int i = 0; i < slide.n_spots(); ++i) {
    if (slide.spots[i].array_row == 2 && slide.spots[i].array_col == 2) center = i;
  }
  auto family = build_disc_family(slide, 4);
  const auto& ring1 = family[0];
  float vals[3] = {1.0f, 2.0f, 3.0f};
  for (int c = 0; c < 3; ++c) {
    const int nb = ring1.neighbors(center, c);
    slide.observed(nb, 0) = true;
    slide.expr(nb, 0) = vals[c];
  }
  Eigen::VectorXd global(1);
  global << 99.0;
  auto res = median_complete(slide, family, MedianConfig{}, global);
  CHECK(res.slide.expr(center, 0) == 2.0f);
  CHECK(res.fill_radius(center, 0) == 1);
}

TEST_CASE("even count averages the two middle values") {
  Slide slide = testutil::make_hex_slide("s", 5, 5, 1);
  slide.observed.setConstant(false);
  int center = 12;  // row 2, col 2
  auto family = build_disc_family(slide, 4);
  const auto& ring1 = family[0];
  float vals[2] = {1.0f, 3.0f};
  for (int c = 0; c < 2; ++c) {
    const int nb = ring1.neighbors(center, c);
    slide.observed(nb, 0) = true;
    slide.expr(nb, 0) = vals[c];
  }
  Eigen::VectorXd global(1);
  global << 99.0;
  auto res = median_complete(slide, family, MedianConfig{}, global);
  CHECK(res.slide.expr(center, 0) == 2.0f);
}

TEST_CASE("global median fallback when the whole region is missing") {
  Slide slide = testutil::make_hex_slide("s", 4, 4, 2);
  slide.observed.setConstant(false);  // nothing observed anywhere
  auto family = build_disc_family(slide, 4);
  Eigen::VectorXd global(2);
  global << 0.7, 1.3;
  auto res = median_complete(slide, family, MedianConfig{}, global);
  for (int i = 0; i < slide.n_spots(); ++i) {
    CHECK(res.slide.expr(i, 0) == 0.7f);
    CHECK(res.slide.expr(i, 1) == 1.3f);
    CHECK(res.fill_radius(i, 0) == -1);
  }
  CHECK(res.n_global == slide.n_spots() * 2);
  CHECK(res.n_local == 0);
}

TEST_CASE("global gene medians") {
  Slide a = testutil::make_hex_slide("a", 1, 3, 1);
  Slide b = testutil::make_hex_slide("b", 1, 3, 1);
  float av[3] = {9.0f, 1.0f, 0.0f};
  float bv[3] = {2.0f, 0.0f, 0.0f};
  for (int i = 0; i < 3; ++i) {
    a.expr(i, 0) = av[i];
    b.expr(i, 0) = bv[i];
  }
  a.observed << true, true, false;
  b.observed << true, false, false;
  // observed pool {9, 1, 2} -> 2
  CHECK(global_gene_medians({&a, &b})(0) == 2.0);

  SUBCASE("constant pool") {
    a.expr.setConstant(3.5f);
    b.expr.setConstant(3.5f);
    CHECK(global_gene_medians({&a, &b})(0) == 3.5);
  }
  SUBCASE("no observed value is an error") {
    a.observed.setConstant(false);
    b.observed.setConstant(false);
    CHECK_THROWS_AS(global_gene_medians({&a, &b}), DataError);
  }
  SUBCASE("pooled sort oracle on a random mixed fixture") {
    Slide ra = random_slide("ra", 4, 5, 3, 0.3, 8);
    Slide rb = random_slide("rb", 3, 6, 3, 0.5, 9);
    auto got = global_gene_medians({&ra, &rb});
    for (int j = 0; j < 3; ++j) {
      std::vector<double> pool;
      for (const Slide* s : {&ra, &rb}) {
        for (int i = 0; i < s->n_spots(); ++i) {
          if (s->observed(i, j)) pool.push_back(static_cast<double>(s->expr(i, j)));
        }
      }
      CHECK(got(j) == testutil::median_of(pool));
    }
  }
}

TEST_CASE("observed values are never modified and nothing stays missing") {
  Slide slide = random_slide("s", 8, 8, 5, 0.4, 13);
  auto family = build_disc_family(slide, 4);
  Eigen::VectorXd global = global_gene_medians({&slide});
  auto res = median_complete(slide, family, MedianConfig{}, global);
  for (int i = 0; i < slide.n_spots(); ++i) {
    for (int j = 0; j < 5; ++j) {
      if (slide.observed(i, j)) {
        CHECK(res.slide.expr(i, j) == slide.expr(i, j));
        CHECK_FALSE(res.filled(i, j));
      } else {
        CHECK(res.filled(i, j));
        CHECK(std::isfinite(res.slide.expr(i, j)));
      }
    }
  }
  CHECK((res.filled == !slide.observed).all());
}

TEST_CASE("exact equivalence with the brute-force region oracle") {
  MedianConfig cfg;
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    Slide slide = random_slide("s" + std::to_string(seed), 7, 9, 3, 0.45, seed);
    auto family = build_disc_family(slide, cfg.max_hops);
    Eigen::VectorXd global = global_gene_medians({&slide});
    auto res = median_complete(slide, family, cfg, global);
    for (int i = 0; i < slide.n_spots(); ++i) {
      for (int j = 0; j < 3; ++j) {
        if (slide.observed(i, j)) continue;
        CHECK(res.slide.expr(i, j) == median_oracle(slide, i, j, cfg, global));
      }
    }
  }
}

TEST_CASE("global-median share grows with the missing fraction") {
  std::int64_t prev_global = -1;
  for (double missing : {0.2, 0.5, 0.8, 0.95}) {
    Slide slide = random_slide("s", 10, 10, 4, missing, 77);
    auto family = build_disc_family(slide, 2);  // small region to force fallbacks
    Eigen::VectorXd global(4);
    global.setConstant(1.0);
    auto res = median_complete(slide, family, MedianConfig{.max_hops = 2}, global);
    CHECK(res.n_global >= prev_global);
    prev_global = res.n_global;
  }
  CHECK(prev_global > 0);
}
