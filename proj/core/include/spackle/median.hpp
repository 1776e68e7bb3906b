#pragma once

#include <span>
#include <vector>

#include "spackle/dataset.hpp"
#include "spackle/neighbors.hpp"

namespace spackle {

// Reference-free median pre-completion: missing entries are filled with the
// median of observed values of the same gene in an expanding disc around the
// spot, falling back to the per-gene global median when the whole region
// lacks data.

struct MedianConfig {
  int max_hops = 4;
  int min_observed = 1;
};

// Per-gene median over observed entries pooled across the given slides.
// Throws if any gene has no observed value at all.
Eigen::VectorXd global_gene_medians(const std::vector<const Slide*>& train_slides);

// How a cell was filled. kUntouched marks originally-observed entries.
enum class FillSource : std::int8_t { kUntouched = 0, kLocal = 1, kGlobal = 2 };

struct MedianResult {
  Slide slide;       // expr filled everywhere; observed flags unchanged
  BoolMatrix filled;  // true exactly where a value was completed
  // radius used per filled cell (1..max_hops), 0 untouched, -1 global fallback
  Eigen::Matrix<std::int8_t, Eigen::Dynamic, Eigen::Dynamic> fill_radius;
  std::int64_t n_local = 0;
  std::int64_t n_global = 0;
};

// `disc_family[r-1]` must hold the radius-r disc index for r = 1..max_hops
// (see build_disc_family). Even-sized medians are the mean of the two middle
// values. Deterministic and independent of evaluation order.
MedianResult median_complete(const Slide& slide, std::span<const NeighborIndex> disc_family,
                             const MedianConfig& cfg, const Eigen::VectorXd& global_medians);

// Convenience: median-complete every slide of a dataset in place, using
// global medians from the training split.
SlideDataset median_complete_dataset(const SlideDataset& ds, const MedianConfig& cfg);

}  // namespace spackle
