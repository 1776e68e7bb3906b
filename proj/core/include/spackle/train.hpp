#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "spackle/dataset.hpp"
#include "spackle/model.hpp"
#include "spackle/neighborhood.hpp"

namespace spackle {

struct TrainConfig {
  int batch_size = 256;
  double lr = 1e-3;
  int max_iters = 10000;
  int eval_interval = 100;
  std::uint64_t seed = kDefaultSeed;
  double mask_rho = 0.30;
  int hops = 2;

  // model shape
  int dim = 128;
  int layers = 2;
  int heads = 4;
  int ffn_width = 0;     // 0 -> 4 * dim
  int scored_genes = 0;  // 0 -> every gene; context-gene variant sets fewer

  // Adam, conventional defaults
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
};

// Ten learning rates, log-spaced over [1e-5, 1e-2] inclusive.
std::vector<double> lr_grid();

struct EvalPoint {
  int iteration = 0;
  double val_mse = 0.0;
};

struct TrainHistory {
  std::vector<double> train_loss;     // one entry per iteration
  std::vector<EvalPoint> val_points;  // iteration 0, every eval_interval, final
  int best_iteration = 0;
  double best_val_mse = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  SpackleModel model;
  TrainHistory history;
};

// Minibatch masked-reconstruction training. `ds` must be median pre-completed
// with the original observed mask intact; train and val splits must be
// non-empty. Hiding is redrawn per sample per step from a counter-based
// stream, so results do not depend on evaluation order. Validation MSE is
// computed on hidden center-column cells under a fixed seed-derived mask, and
// the parameter snapshot with the lowest value is returned. Non-finite loss
// aborts with TrainError.
TrainResult train(const SlideDataset& ds, const TrainConfig& cfg);

// Runs `train` once per grid learning rate and keeps the best validation MSE.
// `runs` (when given) receives every per-rate history.
TrainResult train_lr_sweep(const SlideDataset& ds, TrainConfig cfg,
                           std::vector<TrainHistory>* runs = nullptr);

// Completion of one assembled neighborhood: the input is zeroed wherever
// observed is false (no random mask at inference), and exactly the
// originally-missing center entries of scored genes are replaced.
struct CompletionOutput {
  Eigen::VectorXf completed;            // length genes
  Eigen::Array<bool, Eigen::Dynamic, 1> replaced;
  Matrix reconstructed;                 // full [g x (n+1)] model output
};
CompletionOutput infer_complete_spot(const SpackleModel& model, const Neighborhood& nb);

// Whole-slide completion; observed flags stay untouched.
Slide infer_complete(const SpackleModel& model, const Slide& completed_slide,
                     const NeighborIndex& idx);

// Checkpoint: one JSON header line (shape, gene panel, seed, format version)
// followed by raw little-endian float32 tensors in declared parameter order.
struct Checkpoint {
  SpackleModel model;
  std::vector<std::string> genes;
  std::uint64_t seed = 0;
};

void save_checkpoint(const std::filesystem::path& file, const SpackleModel& model,
                     const std::vector<std::string>& genes, std::uint64_t seed);
Checkpoint load_checkpoint(const std::filesystem::path& file);

// Context-gene variant: trains on the extended panel but masks and scores
// only the first `scored` genes, which must be a prefix of `extended.genes`
// matching the original panel.
TrainResult train_context_variant(const SlideDataset& extended,
                                  const std::vector<std::string>& scored_panel, TrainConfig cfg);

}  // namespace spackle
