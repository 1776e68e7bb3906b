#include "spackle/dataset_io.hpp"

#include <fstream>

#include "doctest.h"
#include "spackle/errors.hpp"
#include "spackle/rng.hpp"
#include "testutil.hpp"

using namespace spackle;
namespace fs = std::filesystem;

namespace {

SlideDataset two_slide_fixture() {
  const int g = 4;
  Rng rng(7);
  std::vector<Slide> slides;
  for (int s = 0; s < 2; ++s) {
    Slide slide = testutil::make_hex_slide("s" + std::to_string(s), 3, 3, g);
    for (Eigen::Index i = 0; i < slide.expr.rows(); ++i) {
      for (Eigen::Index j = 0; j < slide.expr.cols(); ++j) {
        slide.expr(i, j) = static_cast<float>(rng.normal());
        slide.observed(i, j) = rng.uniform() > 0.25;
      }
    }
    CountMatrix counts(slide.n_spots(), g);
    for (Eigen::Index i = 0; i < counts.rows(); ++i) {
      for (Eigen::Index j = 0; j < counts.cols(); ++j) {
        counts(i, j) = static_cast<std::int64_t>(rng.uniform_int(50));
      }
    }
    slide.raw_counts = counts;
    slides.push_back(std::move(slide));
  }
  return testutil::make_dataset(std::move(slides), g, {Split::kTrain, Split::kTest});
}

}  // namespace

TEST_CASE("save/load round trip is bit exact") {
  auto dir = testutil::scratch_dir("io_roundtrip");
  SlideDataset ds = two_slide_fixture();
  save_dataset(ds, dir / "ds");
  SlideDataset back = load_dataset(dir / "ds");

  CHECK(back.name == ds.name);
  CHECK(back.genes == ds.genes);
  REQUIRE(back.slides.size() == ds.slides.size());
  for (std::size_t s = 0; s < ds.slides.size(); ++s) {
    const Slide& a = ds.slides[s];
    const Slide& b = back.slides[s];
    CHECK(b.slide_id == a.slide_id);
    REQUIRE(b.n_spots() == a.n_spots());
    for (int i = 0; i < a.n_spots(); ++i) {
      CHECK(b.spots[i].spot_id == a.spots[i].spot_id);
      CHECK(b.spots[i].x == a.spots[i].x);  // exact: shortest round-trip formatting
      CHECK(b.spots[i].y == a.spots[i].y);
      CHECK(b.spots[i].array_row == a.spots[i].array_row);
      CHECK(b.spots[i].array_col == a.spots[i].array_col);
    }
    CHECK((b.expr.array() == a.expr.array()).all());
    CHECK((b.observed == a.observed).all());
    REQUIRE(b.raw_counts.has_value());
    CHECK((*b.raw_counts - *a.raw_counts).cwiseAbs().maxCoeff() == 0);
    CHECK(back.split_of(b.slide_id) == ds.split_of(a.slide_id));
  }
  fs::remove_all(dir);
}

TEST_CASE("second save produces byte-identical files") {
  auto dir = testutil::scratch_dir("io_bytes");
  SlideDataset ds = two_slide_fixture();
  save_dataset(ds, dir / "a");
  save_dataset(ds, dir / "b");
  for (const char* rel : {"manifest.json", "s0/expr.tsv", "s0/observed.tsv", "s0/spots.tsv",
                          "s1/counts.tsv"}) {
    std::ifstream fa(dir / "a" / rel, std::ios::binary);
    std::ifstream fb(dir / "b" / rel, std::ios::binary);
    std::string sa((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
    std::string sb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
    CHECK(sa == sb);
    CHECK(!sa.empty());
  }
  fs::remove_all(dir);
}

TEST_CASE("gene list mismatch across slides is a consistency error") {
  auto dir = testutil::scratch_dir("io_mismatch");
  SlideDataset ds = two_slide_fixture();
  save_dataset(ds, dir / "ds");

  // Rewrite slide s1's expr with one gene column dropped.
  {
    std::vector<std::string> header;
    Matrix m = read_float_tsv(dir / "ds" / "s1" / "expr.tsv", &header);
    header.pop_back();
    write_float_tsv(dir / "ds" / "s1" / "expr.tsv", header, m.leftCols(m.cols() - 1));
  }
  CHECK_THROWS_AS(load_dataset(dir / "ds"), ConsistencyError);
  fs::remove_all(dir);
}

TEST_CASE("NaN in expr.tsv is a data error") {
  auto dir = testutil::scratch_dir("io_nan");
  SlideDataset ds = two_slide_fixture();
  save_dataset(ds, dir / "ds");
  {
    std::ifstream in(dir / "ds" / "s0" / "expr.tsv");
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    auto pos = text.find('\n');             // end of header
    pos = text.find('\t', pos);             // first tab of first data row
    auto start = text.rfind('\n', pos) + 1; // first value of first data row
    text.replace(start, pos - start, "nan");
    std::ofstream out(dir / "ds" / "s0" / "expr.tsv", std::ios::trunc);
    out << text;
  }
  CHECK_THROWS_AS(load_dataset(dir / "ds"), DataError);
  fs::remove_all(dir);
}

TEST_CASE("missing manifest is a format error") {
  auto dir = testutil::scratch_dir("io_missing");
  CHECK_THROWS_AS(load_dataset(dir / "nowhere"), FormatError);
  fs::remove_all(dir);
}

TEST_CASE("zero-spot slide is rejected on save") {
  SlideDataset ds = two_slide_fixture();
  ds.slides[0].spots.clear();
  ds.slides[0].expr.resize(0, ds.n_genes());
  ds.slides[0].observed.resize(0, ds.n_genes());
  ds.slides[0].raw_counts->resize(0, ds.n_genes());
  auto dir = testutil::scratch_dir("io_empty");
  CHECK_THROWS_AS(save_dataset(ds, dir / "ds"), ConsistencyError);
  fs::remove_all(dir);
}

TEST_CASE("unwritable destination raises an io error") {
  SlideDataset ds = two_slide_fixture();
  CHECK_THROWS_AS(save_dataset(ds, "/proc/spackle_cannot_write_here/ds"), IoError);
}
