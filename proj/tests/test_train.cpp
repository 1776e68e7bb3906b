#include "spackle/train.hpp"

#include <cmath>

#include "doctest.h"
#include "spackle/errors.hpp"
#include "spackle/median.hpp"
#include "testutil.hpp"

using namespace spackle;

namespace {

TrainConfig small_config() {
  TrainConfig cfg;
  cfg.batch_size = 32;
  cfg.lr = 1e-3;
  cfg.max_iters = 150;
  cfg.eval_interval = 50;
  cfg.hops = 1;
  cfg.dim = 16;
  cfg.layers = 1;
  cfg.heads = 2;
  return cfg;
}

SlideDataset completed_fixture(std::uint64_t seed = 3) {
  SlideDataset ds = testutil::smooth_dataset(2, 8, 8, 5, 0.25, seed);
  return median_complete_dataset(ds, MedianConfig{});
}

}  // namespace

TEST_CASE("training lowers the validation mse on a spatial fixture") {
  SlideDataset ds = completed_fixture();
  TrainResult r = train(ds, small_config());
  REQUIRE(r.history.val_points.size() >= 2);
  CHECK(r.history.val_points.front().iteration == 0);
  CHECK(r.history.best_val_mse < r.history.val_points.front().val_mse);
  CHECK(static_cast<int>(r.history.train_loss.size()) == small_config().max_iters);
}

TEST_CASE("identical seeds reproduce the run bit for bit") {
  SlideDataset ds = completed_fixture();
  TrainConfig cfg = small_config();
  cfg.max_iters = 60;
  TrainResult a = train(ds, cfg);
  TrainResult b = train(ds, cfg);
  REQUIRE(a.history.train_loss.size() == b.history.train_loss.size());
  for (std::size_t i = 0; i < a.history.train_loss.size(); ++i) {
    CHECK(a.history.train_loss[i] == b.history.train_loss[i]);
  }
  auto va = a.model.parameter_views();
  auto vb = b.model.parameter_views();
  for (std::size_t k = 0; k < va.size(); ++k) {
    for (std::ptrdiff_t i = 0; i < va[k].second; ++i) {
      CHECK(va[k].first[i] == vb[k].first[i]);
    }
  }
}

TEST_CASE("divergence aborts with a train error") {
  SlideDataset ds = completed_fixture();
  TrainConfig cfg = small_config();
  cfg.lr = 1e12;
  cfg.max_iters = 50;
  CHECK_THROWS_AS(train(ds, cfg), TrainError);
}

TEST_CASE("empty training split is rejected") {
  SlideDataset ds = completed_fixture();
  ds.split_map["s0"] = Split::kVal;  // no train slide left
  CHECK_THROWS_AS(train(ds, small_config()), TrainError);
}

TEST_CASE("lr grid spans 1e-5 to 1e-2 with ten points") {
  auto grid = lr_grid();
  REQUIRE(grid.size() == 10);
  CHECK(grid.front() == doctest::Approx(1e-5).epsilon(1e-12));
  CHECK(grid.back() == doctest::Approx(1e-2).epsilon(1e-12));
  for (std::size_t i = 1; i < grid.size(); ++i) {
    CHECK(grid[i] / grid[i - 1] == doctest::Approx(grid[1] / grid[0]).epsilon(1e-9));
  }
}

TEST_CASE("checkpoint round trip preserves parameters and outputs") {
  SlideDataset ds = completed_fixture();
  TrainConfig cfg = small_config();
  cfg.max_iters = 30;
  TrainResult r = train(ds, cfg);

  auto dir = testutil::scratch_dir("ckpt");
  save_checkpoint(dir / "m.ckpt", r.model, ds.genes, cfg.seed);
  Checkpoint back = load_checkpoint(dir / "m.ckpt");
  CHECK(back.genes == ds.genes);
  CHECK(back.seed == cfg.seed);

  auto va = r.model.parameter_views();
  auto vb = back.model.parameter_views();
  REQUIRE(va.size() == vb.size());
  for (std::size_t k = 0; k < va.size(); ++k) {
    REQUIRE(va[k].second == vb[k].second);
    for (std::ptrdiff_t i = 0; i < va[k].second; ++i) CHECK(va[k].first[i] == vb[k].first[i]);
  }

  const NeighborIndex idx = build_neighbor_index(ds.slides[0], cfg.hops);
  const Neighborhood nb = assemble_neighborhood(ds.slides[0], 10, idx);
  const CompletionOutput a = infer_complete_spot(r.model, nb);
  const CompletionOutput b = infer_complete_spot(back.model, nb);
  CHECK((a.completed - b.completed).cwiseAbs().maxCoeff() == 0.0f);
  std::filesystem::remove_all(dir);
}

TEST_CASE("corrupted checkpoints are rejected") {
  auto dir = testutil::scratch_dir("ckpt_bad");
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), FormatError);

  SlideDataset ds = completed_fixture();
  TrainConfig cfg = small_config();
  cfg.max_iters = 5;
  TrainResult r = train(ds, cfg);
  save_checkpoint(dir / "m.ckpt", r.model, ds.genes, cfg.seed);
  // truncate
  std::filesystem::resize_file(dir / "m.ckpt", std::filesystem::file_size(dir / "m.ckpt") - 64);
  CHECK_THROWS_AS(load_checkpoint(dir / "m.ckpt"), FormatError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("inference follows the completion rule") {
  SlideDataset raw = testutil::smooth_dataset(2, 7, 7, 4, 0.3, 9);
  SlideDataset ds = median_complete_dataset(raw, MedianConfig{});
  TrainConfig cfg = small_config();
  cfg.max_iters = 40;
  TrainResult r = train(ds, cfg);

  const Slide& slide = ds.slides[1];
  const NeighborIndex idx = build_neighbor_index(slide, cfg.hops);
  Slide completed = infer_complete(r.model, slide, idx);

  REQUIRE(completed.n_spots() == slide.n_spots());
  for (int i = 0; i < slide.n_spots(); ++i) {
    const Neighborhood nb = assemble_neighborhood(slide, i, idx);
    const CompletionOutput out = infer_complete_spot(r.model, nb);
    // replaced = exactly the originally-missing entries
    for (int j = 0; j < 4; ++j) {
      CHECK(out.replaced(j) == !slide.observed(i, j));
      if (slide.observed(i, j)) {
        CHECK(completed.expr(i, j) == slide.expr(i, j));
      }
    }
    CHECK(out.reconstructed.rows() == 4);
    CHECK(out.reconstructed.cols() == idx.target_count + 1);
  }

  SUBCASE("spot with nothing missing is untouched") {
    Slide all_obs = slide;
    all_obs.observed.setConstant(true);
    const NeighborIndex idx2 = build_neighbor_index(all_obs, cfg.hops);
    const Neighborhood nb = assemble_neighborhood(all_obs, 3, idx2);
    const CompletionOutput out = infer_complete_spot(r.model, nb);
    CHECK_FALSE(out.replaced.any());
    CHECK((out.completed.transpose().array() == all_obs.expr.row(3).array()).all());
  }
  SUBCASE("spot with everything missing is fully replaced") {
    Slide none_obs = slide;
    none_obs.observed.row(5).setConstant(false);
    const NeighborIndex idx2 = build_neighbor_index(none_obs, cfg.hops);
    const Neighborhood nb = assemble_neighborhood(none_obs, 5, idx2);
    const CompletionOutput out = infer_complete_spot(r.model, nb);
    CHECK(out.replaced.all());
    for (int j = 0; j < 4; ++j) CHECK(out.completed(j) == out.reconstructed(j, 0));
  }
}

TEST_CASE("gene panel mismatch at inference is a model error") {
  SlideDataset ds = completed_fixture();
  TrainConfig cfg = small_config();
  cfg.max_iters = 5;
  TrainResult r = train(ds, cfg);
  Slide narrow = ds.slides[0];
  narrow.expr = narrow.expr.leftCols(3).eval();
  narrow.observed = narrow.observed.leftCols(3).eval();
  const NeighborIndex idx = build_neighbor_index(narrow, cfg.hops);
  CHECK_THROWS_AS(infer_complete(r.model, narrow, idx), ModelMismatchError);
}

TEST_CASE("context-gene variant masks only the scored prefix") {
  SlideDataset ds = completed_fixture(11);  // 5 genes; first 3 scored
  TrainConfig cfg = small_config();
  cfg.max_iters = 30;
  std::vector<std::string> panel = {ds.genes[0], ds.genes[1], ds.genes[2]};
  TrainResult r = train_context_variant(ds, panel, cfg);
  CHECK(r.model.cfg.scored_genes == 3);
  CHECK(r.model.cfg.genes == 5);

  // completion never replaces context rows
  const NeighborIndex idx = build_neighbor_index(ds.slides[0], cfg.hops);
  Slide s = ds.slides[0];
  s.observed.row(2).setConstant(false);
  const Neighborhood nb = assemble_neighborhood(s, 2, idx);
  const CompletionOutput out = infer_complete_spot(r.model, nb);
  CHECK(out.replaced(0));
  CHECK(out.replaced(2));
  CHECK_FALSE(out.replaced(3));
  CHECK_FALSE(out.replaced(4));

  SUBCASE("panel must be a prefix") {
    std::vector<std::string> wrong = {ds.genes[1], ds.genes[0]};
    CHECK_THROWS_AS(train_context_variant(ds, wrong, cfg), ModelMismatchError);
  }
}
