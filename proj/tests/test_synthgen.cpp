#include "spackle/synthgen.hpp"

#include <cmath>

#include "doctest.h"
#include "spackle/errors.hpp"
#include "spackle/preprocess.hpp"
#include "testutil.hpp"

using namespace spackle;

namespace {

SynthConfig small_cfg() {
  SynthConfig cfg;
  cfg.n_slides = 2;
  cfg.grid_rows = 10;
  cfg.grid_cols = 10;
  cfg.n_genes = 8;
  cfg.correlation_length = 4.0;
  cfg.dropout_rate = 0.25;
  cfg.seed = 42;
  return cfg;
}

}  // namespace

TEST_CASE("zero dropout keeps every count") {
  SynthConfig cfg = small_cfg();
  cfg.dropout_rate = 0.0;
  SynthOutput out = generate(cfg);
  for (std::size_t s = 0; s < out.ds.slides.size(); ++s) {
    CHECK((*out.ds.slides[s].raw_counts - out.truth[s]).cwiseAbs().maxCoeff() == 0);
  }
}

TEST_CASE("same seed twice gives identical datasets") {
  SynthOutput a = generate(small_cfg());
  SynthOutput b = generate(small_cfg());
  for (std::size_t s = 0; s < a.ds.slides.size(); ++s) {
    CHECK((*a.ds.slides[s].raw_counts - *b.ds.slides[s].raw_counts).cwiseAbs().maxCoeff() == 0);
    CHECK((a.truth[s] - b.truth[s]).cwiseAbs().maxCoeff() == 0);
  }
  SynthConfig other = small_cfg();
  other.seed = 43;
  SynthOutput c = generate(other);
  CHECK((*a.ds.slides[0].raw_counts - *c.ds.slides[0].raw_counts).cwiseAbs().maxCoeff() > 0);
}

TEST_CASE("truth is retained for every dropped cell") {
  SynthOutput out = generate(small_cfg());
  std::int64_t dropped = 0;
  for (std::size_t s = 0; s < out.ds.slides.size(); ++s) {
    const CountMatrix& counts = *out.ds.slides[s].raw_counts;
    for (Eigen::Index i = 0; i < counts.rows(); ++i) {
      for (Eigen::Index j = 0; j < counts.cols(); ++j) {
        if (counts(i, j) == 0 && out.truth[s](i, j) > 0) {
          ++dropped;
        }
        if (counts(i, j) != 0) CHECK(counts(i, j) == out.truth[s](i, j));
      }
    }
  }
  CHECK(dropped > 0);
}

TEST_CASE("long correlation length yields high spatial autocorrelation") {
  SynthConfig cfg = small_cfg();
  cfg.grid_rows = 16;
  cfg.grid_cols = 16;
  cfg.correlation_length = 6.0;
  cfg.noise_sd = 0.05;
  cfg.dropout_rate = 0.0;
  SynthOutput out = generate(cfg);

  SlideDataset ds = out.ds;
  for (Slide& slide : ds.slides) {
    slide.expr = slide.raw_counts->cast<float>().unaryExpr(
        [](float v) { return std::log2(v + 1.0f); });
    slide.observed = BoolMatrix::Constant(slide.expr.rows(), slide.expr.cols(), true);
  }
  auto scores = moran_rank(ds, 6);
  // top genes must show strong structure
  CHECK(scores.front().mean_i > 0.5);
  double mean_of_means = 0;
  for (const auto& sc : scores) mean_of_means += sc.mean_i;
  CHECK(mean_of_means / static_cast<double>(scores.size()) > 0.3);
}

TEST_CASE("generated batch effects are removable by the corrector") {
  SynthConfig cfg = small_cfg();
  cfg.n_slides = 2;
  cfg.dropout_rate = 0.0;
  cfg.batch_shift = {0.0, 2.0};
  cfg.batch_scale = {1.0, 1.0};
  SynthOutput out = generate(cfg);

  SlideDataset ds = out.ds;
  for (Slide& slide : ds.slides) {
    slide.expr = slide.raw_counts->cast<float>().unaryExpr(
        [](float v) { return std::log2(v + 1.0f); });
    slide.observed = BoolMatrix::Constant(slide.expr.rows(), slide.expr.cols(), true);
  }
  auto gap = [&](const SlideDataset& d) {
    const MatrixD a = d.slides[0].expr.cast<double>();
    const MatrixD b = d.slides[1].expr.cast<double>();
    return (a.colwise().mean() - b.colwise().mean()).cwiseAbs().mean();
  };
  const double before = gap(ds);
  REQUIRE(before > 1.0);
  auto [corrected, params] = combat_correct(ds);
  CHECK(gap(corrected) <= 0.1 * before);  // >= 90% of the gap removed
}

TEST_CASE("corruption hides the exact rounded fraction of observed cells") {
  SynthOutput out = generate(small_cfg());
  SlideDataset ds = out.ds;
  for (Slide& slide : ds.slides) {
    slide.expr = slide.raw_counts->cast<float>();
    slide.observed = slide.raw_counts->array() > 0;
  }
  CorruptionResult res = inject_corruption(ds, 0.3, 7);
  for (std::size_t s = 0; s < ds.slides.size(); ++s) {
    const auto observed_before = ds.slides[s].observed.count();
    const auto hidden = res.hidden[s].count();
    CHECK(hidden == std::llround(0.3 * static_cast<double>(observed_before)));
    // hidden cells were observed; originally-missing cells are untouched
    CHECK((res.hidden[s] && !ds.slides[s].observed).count() == 0);
    CHECK((res.ds.slides[s].observed == (ds.slides[s].observed && !res.hidden[s])).all());
  }

  SUBCASE("excessive fraction is rejected") {
    CHECK_THROWS_AS(inject_corruption(ds, 0.9999, 7), Error);
  }
}

TEST_CASE("bad configurations are rejected") {
  SynthConfig cfg = small_cfg();
  cfg.correlation_length = 0.0;
  CHECK_THROWS_AS(generate(cfg), ConfigError);
  cfg = small_cfg();
  cfg.dropout_rate = 1.0;
  CHECK_THROWS_AS(generate(cfg), ConfigError);
  cfg = small_cfg();
  cfg.batch_scale = {1.0};  // wrong length
  CHECK_THROWS_AS(generate(cfg), ConfigError);
}
