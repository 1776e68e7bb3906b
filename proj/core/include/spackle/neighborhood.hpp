#pragma once

#include "spackle/dataset.hpp"
#include "spackle/neighbors.hpp"
#include "spackle/rng.hpp"

namespace spackle {

// Expression neighborhood of one spot: column 0 is the center profile, the
// remaining columns the neighbors in index order. Padded columns are zero in
// both `expr` and `observed` and flagged in `pad_cols`; column 0 is never
// padded.
struct Neighborhood {
  Matrix expr;      // [g x (n+1)]
  BoolMatrix observed;
  Eigen::Array<bool, Eigen::Dynamic, 1> pad_cols;  // [n+1]

  Eigen::Index genes() const { return expr.rows(); }
  Eigen::Index tokens() const { return expr.cols(); }
};

// The slide must be pre-completed (observed flags may be anything; expression
// values must be finite everywhere).
Neighborhood assemble_neighborhood(const Slide& slide, int spot, const NeighborIndex& idx);

// Candidate mask and the effective hidden mask: hidden = observed AND
// candidate, so hiding never lands on pre-completed cells.
struct MaskSet {
  BoolMatrix candidate;  // iid Bernoulli(rho), zero on context-gene rows
  double rho = 0.0;
  BoolMatrix hidden;
};

// Draws the candidate mask cell by cell from a counter-based stream:
// cell (i, j) uses counter counter_base + j * rows + i, so any evaluation
// order yields the same mask. Rows >= scored_rows never become candidates
// (scored_rows < 0 means every row is scored).
MaskSet draw_mask(const BoolMatrix& observed, double rho, const CounterRng& rng,
                  std::uint64_t counter_base, int scored_rows = -1);

// E ⊙ (1 - hidden): hidden entries zeroed, everything else bit-identical.
Matrix apply_mask(const Matrix& expr, const BoolMatrix& hidden);

}  // namespace spackle
