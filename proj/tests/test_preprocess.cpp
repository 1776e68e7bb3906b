#include "spackle/preprocess.hpp"

#include <cmath>

#include "doctest.h"
#include "spackle/errors.hpp"
#include "testutil.hpp"

using namespace spackle;

namespace {

SlideDataset counts_fixture(int rows, int cols, int genes, int n_slides,
                            std::uint64_t seed, int max_count = 49) {
  Rng rng(seed);
  std::vector<Slide> slides;
  std::vector<Split> splits;
  for (int s = 0; s < n_slides; ++s) {
    Slide slide = testutil::make_hex_slide("s" + std::to_string(s), rows, cols, genes);
    CountMatrix counts(slide.n_spots(), genes);
    for (Eigen::Index i = 0; i < counts.rows(); ++i) {
      for (Eigen::Index j = 0; j < counts.cols(); ++j) {
        counts(i, j) = 1 + static_cast<std::int64_t>(rng.uniform_int(max_count));
      }
    }
    slide.raw_counts = counts;
    slide.expr.resize(0, 0);
    slide.observed.resize(0, 0);
    slides.push_back(std::move(slide));
    splits.push_back(s == 0 ? Split::kTrain : Split::kVal);
  }
  return testutil::make_dataset(std::move(slides), genes, splits);
}

}  // namespace

// ---------------------------------------------------------------------------
// tpm_log_normalize
// ---------------------------------------------------------------------------

TEST_CASE("tpm row [2,3,5] matches hand arithmetic") {
  MatrixD counts(1, 3);
  counts << 2, 3, 5;
  MatrixD out = tpm_log_normalize(counts);
  CHECK(out(0, 0) == doctest::Approx(std::log2(200001.0)).epsilon(1e-12));
  CHECK(out(0, 1) == doctest::Approx(std::log2(300001.0)).epsilon(1e-12));
  CHECK(out(0, 2) == doctest::Approx(std::log2(500001.0)).epsilon(1e-12));
  // the values quoted to two decimals
  CHECK(out(0, 0) == doctest::Approx(17.61).epsilon(1e-3));
  CHECK(out(0, 1) == doctest::Approx(18.19).epsilon(1e-3));
  CHECK(out(0, 2) == doctest::Approx(18.93).epsilon(1e-3));
}

TEST_CASE("single-gene row maps to log2(1e6 + 1)") {
  MatrixD counts(1, 1);
  counts << 7;
  MatrixD out = tpm_log_normalize(counts);
  CHECK(out(0, 0) == doctest::Approx(std::log2(1000001.0)).epsilon(1e-12));
  CHECK(out(0, 0) == doctest::Approx(19.93).epsilon(1e-3));
}

TEST_CASE("zero counts stay exactly zero") {
  MatrixD counts(2, 3);
  counts << 0, 4, 6, 5, 0, 5;
  MatrixD out = tpm_log_normalize(counts);
  CHECK(out(0, 0) == 0.0);
  CHECK(out(1, 1) == 0.0);
}

TEST_CASE("zero-sum row is rejected") {
  MatrixD counts = MatrixD::Zero(1, 3);
  CHECK_THROWS_AS(tpm_log_normalize(counts), DataError);
}

TEST_CASE("exp2(x)-1 row sums return to 1e6") {
  Rng rng(3);
  MatrixD counts(40, 23);
  for (Eigen::Index i = 0; i < counts.rows(); ++i) {
    for (Eigen::Index j = 0; j < counts.cols(); ++j) {
      counts(i, j) = static_cast<double>(rng.uniform_int(200));
    }
    if (counts.row(i).sum() == 0) counts(i, 0) = 1;
  }
  // through the float32 storage precision, as the pipeline stores it
  Matrix stored = tpm_log_normalize(counts).cast<float>();
  for (Eigen::Index i = 0; i < stored.rows(); ++i) {
    double total = 0;
    for (Eigen::Index j = 0; j < stored.cols(); ++j) {
      total += std::exp2(static_cast<double>(stored(i, j))) - 1.0;
    }
    CHECK(total == doctest::Approx(1e6).epsilon(1e-3));
  }
}

// ---------------------------------------------------------------------------
// filter_dataset
// ---------------------------------------------------------------------------

TEST_CASE("spot below the count floor is removed") {
  SlideDataset ds = counts_fixture(3, 3, 4, 1, 5);
  auto& counts = *ds.slides[0].raw_counts;
  counts.row(2).setZero();
  counts(2, 0) = 5;  // total 5 < 10
  FilterConfig cfg;
  cfg.min_expr_fraction_slide = 0;
  cfg.min_expr_fraction_global = 0;
  cfg.min_gene_counts = 0;
  SlideDataset out = filter_dataset(ds, cfg);
  CHECK(out.slides[0].n_spots() == ds.slides[0].n_spots() - 1);
  for (const Spot& s : out.slides[0].spots) CHECK(s.spot_id != ds.slides[0].spots[2].spot_id);
}

TEST_CASE("no-op thresholds keep everything") {
  SlideDataset ds = counts_fixture(3, 4, 5, 2, 6);
  FilterConfig cfg;
  cfg.min_counts = 0;
  cfg.min_expr_fraction_slide = 0;
  cfg.min_expr_fraction_global = 0;
  cfg.min_gene_counts = 0;
  SlideDataset out = filter_dataset(ds, cfg);
  CHECK(out.genes == ds.genes);
  for (std::size_t s = 0; s < ds.slides.size(); ++s) {
    CHECK(out.slides[s].n_spots() == ds.slides[s].n_spots());
    CHECK((*out.slides[s].raw_counts - *ds.slides[s].raw_counts).cwiseAbs().maxCoeff() == 0);
  }
}

TEST_CASE("gene expressed in 1/10 spots drops at slide threshold 0.2") {
  // 10 spots, 3 genes; gene B nonzero in exactly one spot.
  Slide slide = testutil::make_hex_slide("s0", 2, 5, 3);
  CountMatrix counts = CountMatrix::Constant(10, 3, 4);
  counts.col(1).setZero();
  counts(0, 1) = 4;
  slide.raw_counts = counts;
  slide.expr.resize(0, 0);
  slide.observed.resize(0, 0);
  SlideDataset ds = testutil::make_dataset({std::move(slide)}, 3, {Split::kTrain});

  FilterConfig cfg;
  cfg.min_counts = 0;
  cfg.min_expr_fraction_slide = 0.2;
  cfg.min_expr_fraction_global = 0.0;
  cfg.min_gene_counts = 0;
  SlideDataset out = filter_dataset(ds, cfg);
  REQUIRE(out.n_genes() == 2);
  CHECK(out.genes[0] == "G0");
  CHECK(out.genes[1] == "G2");
}

TEST_CASE("raising min_counts never increases retained spots") {
  SlideDataset ds = counts_fixture(5, 5, 6, 2, 9, 9);
  FilterConfig cfg;
  cfg.min_expr_fraction_slide = 0;
  cfg.min_expr_fraction_global = 0;
  cfg.min_gene_counts = 0;
  int prev = 1 << 30;
  for (std::int64_t floor : {0, 10, 60, 90, 120}) {
    cfg.min_counts = floor;
    int kept = 0;
    try {
      SlideDataset out = filter_dataset(ds, cfg);
      for (const Slide& s : out.slides) kept += s.n_spots();
    } catch (const Error&) {
      kept = 0;  // everything filtered
    }
    CHECK(kept <= prev);
    prev = kept;
  }
}

TEST_CASE("filtering out every gene is an error") {
  SlideDataset ds = counts_fixture(3, 3, 3, 1, 12);
  FilterConfig cfg;
  cfg.min_gene_counts = 1'000'000'000;
  cfg.max_gene_counts = 2'000'000'000;
  CHECK_THROWS_AS(filter_dataset(ds, cfg), DataError);
}

// ---------------------------------------------------------------------------
// moran_rank
// ---------------------------------------------------------------------------

TEST_CASE("checkerboard on a ring graph gives I = -1 exactly") {
  Slide slide = testutil::make_ring_slide("ring", 12, 1);
  for (int i = 0; i < 12; ++i) slide.expr(i, 0) = (i % 2 == 0) ? 1.0f : -1.0f;
  SlideDataset ds = testutil::make_dataset({std::move(slide)}, 1, {Split::kTrain});
  auto scores = moran_rank(ds, 2);
  REQUIRE(scores.size() == 1);
  CHECK(scores[0].mean_i == -1.0);

  // brute-force double-sum oracle agrees
  auto w = testutil::knn_weights_bruteforce(ds.slides[0], 2);
  std::vector<double> x(12);
  for (int i = 0; i < 12; ++i) x[i] = ds.slides[0].expr(i, 0);
  CHECK(testutil::moran_bruteforce(w, x) == -1.0);
}

TEST_CASE("smooth gradient scores above 0.5 and matches the oracle") {
  Slide slide = testutil::make_hex_slide("grid", 8, 8, 2);
  Rng rng(21);
  for (int i = 0; i < slide.n_spots(); ++i) {
    slide.expr(i, 0) = static_cast<float>(slide.spots[i].x + slide.spots[i].y);
    slide.expr(i, 1) = static_cast<float>(rng.normal());
  }
  SlideDataset ds = testutil::make_dataset({std::move(slide)}, 2, {Split::kTrain});
  auto scores = moran_rank(ds, 6);
  REQUIRE(scores.size() == 2);
  CHECK(scores[0].gene == "G0");
  CHECK(scores[0].mean_i > 0.5);

  auto w = testutil::knn_weights_bruteforce(ds.slides[0], 6);
  for (const auto& sc : scores) {
    const int j = sc.gene == "G0" ? 0 : 1;
    std::vector<double> x;
    for (int i = 0; i < ds.slides[0].n_spots(); ++i) {
      x.push_back(static_cast<double>(ds.slides[0].expr(i, j)));
    }
    CHECK(std::abs(sc.mean_i - testutil::moran_bruteforce(w, x)) < 1e-10);
  }
}

TEST_CASE("constant gene on one slide contributes no term") {
  Slide a = testutil::make_hex_slide("a", 4, 4, 1);
  Slide b = testutil::make_hex_slide("b", 4, 4, 1);
  for (int i = 0; i < a.n_spots(); ++i) {
    a.expr(i, 0) = 2.5f;  // zero variance
    b.expr(i, 0) = static_cast<float>(b.spots[i].x);
  }
  SlideDataset both = testutil::make_dataset({a, b}, 1, {Split::kTrain, Split::kVal});
  SlideDataset only_b = testutil::make_dataset({b}, 1, {Split::kTrain});
  auto both_scores = moran_rank(both, 3);
  auto b_scores = moran_rank(only_b, 3);
  CHECK(std::isnan(both_scores[0].per_slide_i[0]));
  CHECK(both_scores[0].mean_i == b_scores[0].mean_i);
}

TEST_CASE("shuffled gene concentrates near zero autocorrelation") {
  Slide base = testutil::make_hex_slide("grid", 15, 15, 1);  // N = 225
  const int n = base.n_spots();
  std::vector<double> values(n);
  Rng vr(100);
  for (int i = 0; i < n; ++i) values[i] = vr.normal();

  int ok = 0;
  const int trials = 100;
  Rng shuffler(200);
  std::vector<int> perm(n);
  for (int t = 0; t < trials; ++t) {
    std::iota(perm.begin(), perm.end(), 0);
    for (int i = n - 1; i > 0; --i) {
      std::swap(perm[i], perm[shuffler.uniform_int(static_cast<std::uint64_t>(i + 1))]);
    }
    Slide s = base;
    for (int i = 0; i < n; ++i) s.expr(i, 0) = static_cast<float>(values[perm[i]]);
    SlideDataset ds = testutil::make_dataset({std::move(s)}, 1, {Split::kTrain});
    if (std::abs(moran_rank(ds, 6)[0].mean_i) <= 0.1) ++ok;
  }
  CHECK(ok >= 95);
}

TEST_CASE("slide smaller than k+1 spots is rejected") {
  Slide tiny = testutil::make_hex_slide("tiny", 1, 3, 1);
  SlideDataset ds = testutil::make_dataset({std::move(tiny)}, 1, {Split::kTrain});
  CHECK_THROWS_AS(moran_rank(ds, 6), DataError);
}

// ---------------------------------------------------------------------------
// select_top_genes / pipeline
// ---------------------------------------------------------------------------

TEST_CASE("top-k selection takes the first k ranked genes") {
  std::vector<MoranScore> scores;
  for (int i = 0; i < 200; ++i) {
    MoranScore sc;
    sc.gene = "G" + std::to_string(i);
    sc.mean_i = 1.0 - static_cast<double>(i) * 0.005;
    scores.push_back(sc);
  }
  auto top = select_top_genes(scores, 128);
  REQUIRE(top.size() == 128);
  CHECK(top.front() == "G0");
  CHECK(top.back() == "G127");
  CHECK(select_top_genes(scores, 200).size() == 200);
  CHECK_THROWS_AS(select_top_genes(scores, 201), ConfigError);
}

TEST_CASE("pipeline output carries k genes and an observed mask from raw zeros") {
  SlideDataset ds = counts_fixture(6, 6, 10, 2, 33);
  // plant dropout zeros
  Rng rng(4);
  for (Slide& s : ds.slides) {
    auto& counts = *s.raw_counts;
    for (Eigen::Index i = 0; i < counts.rows(); ++i) {
      for (Eigen::Index j = 0; j < counts.cols(); ++j) {
        if (rng.uniform() < 0.2) counts(i, j) = 0;
      }
    }
  }
  PipelineConfig cfg;
  cfg.filter.min_counts = 1;
  cfg.filter.min_expr_fraction_slide = 0;
  cfg.filter.min_expr_fraction_global = 0;
  cfg.filter.min_gene_counts = 1;
  cfg.k_genes = 6;
  cfg.moran_k = 6;
  cfg.combat_enabled = true;
  auto [out, report] = preprocess_pipeline(ds, cfg);

  CHECK(out.n_genes() == 6);
  CHECK(report.genes_after == 6);
  CHECK(report.genes_before == 10);
  CHECK(report.missing_data_after > 0.0);
  CHECK(report.corrupt_spots > 0.0);
  for (const Slide& s : out.slides) {
    REQUIRE(s.has_expr());
    REQUIRE(s.has_counts());
    CHECK((s.observed == (s.raw_counts->array() > 0)).all());
  }
}

TEST_CASE("disabling combat isolates the last stage") {
  SlideDataset ds = counts_fixture(5, 5, 8, 2, 55);
  PipelineConfig cfg;
  cfg.filter.min_counts = 1;
  cfg.filter.min_expr_fraction_slide = 0;
  cfg.filter.min_expr_fraction_global = 0;
  cfg.filter.min_gene_counts = 1;
  cfg.k_genes = 8;

  cfg.combat_enabled = false;
  auto [plain, r1] = preprocess_pipeline(ds, cfg);
  cfg.combat_enabled = true;
  auto [corrected, r2] = preprocess_pipeline(ds, cfg);

  // same structure, genes, masks; only the last stage differs
  CHECK(plain.genes == corrected.genes);
  for (std::size_t s = 0; s < plain.slides.size(); ++s) {
    CHECK((plain.slides[s].observed == corrected.slides[s].observed).all());
  }
  auto [recheck, params] = combat_correct(plain);
  for (std::size_t s = 0; s < plain.slides.size(); ++s) {
    CHECK((recheck.slides[s].expr - corrected.slides[s].expr).cwiseAbs().maxCoeff() == 0.0f);
  }
}
