#pragma once

#include <vector>

#include "spackle/dataset.hpp"

namespace spackle {

// Synthetic hex-grid datasets with controllable spatial correlation, batch
// effects, and dropout, so the full pipeline can be exercised without real
// data. Per-gene latent fields approximate a squared-exponential Gaussian
// process through a deterministic random-Fourier-feature expansion; counts
// are exp(latent) rounded; dropout zeroes a Bernoulli subset while the
// pre-dropout counts are retained for oracle scoring.
struct SynthConfig {
  int n_slides = 3;
  int grid_rows = 24;
  int grid_cols = 25;
  int n_genes = 32;
  double correlation_length = 4.0;  // in lattice pitches
  double noise_sd = 0.3;            // iid noise on the latent log scale
  double dropout_rate = 0.3;
  std::vector<double> batch_shift;  // per slide, additive on the latent scale
  std::vector<double> batch_scale;  // per slide, multiplicative (> 0)
  std::uint64_t seed = 42;
};

struct SynthOutput {
  SlideDataset ds;                 // counts with dropout zeros
  std::vector<CountMatrix> truth;  // pre-dropout counts, one per slide
};

SynthOutput generate(const SynthConfig& cfg);

// Hides `fraction` of the observed cells of every slide, uniformly at random
// without replacement (exact count up to rounding). Returns the corrupted
// dataset and the hidden mask for scoring.
struct CorruptionResult {
  SlideDataset ds;
  std::vector<BoolMatrix> hidden;
};

CorruptionResult inject_corruption(const SlideDataset& ds, double fraction, std::uint64_t seed);

}  // namespace spackle
