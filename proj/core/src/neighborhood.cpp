#include "spackle/neighborhood.hpp"

#include "spackle/errors.hpp"

namespace spackle {

Neighborhood assemble_neighborhood(const Slide& slide, int spot, const NeighborIndex& idx) {
  if (!slide.has_expr()) throw DataError("assemble_neighborhood: slide lacks expression");
  if (idx.neighbors.rows() != slide.expr.rows()) {
    throw ConsistencyError("assemble_neighborhood: index does not match the slide");
  }
  if (spot < 0 || spot >= slide.n_spots()) {
    throw ConsistencyError("assemble_neighborhood: spot out of range");
  }
  const Eigen::Index g = slide.expr.cols();
  const int n = idx.target_count;

  Neighborhood nb;
  nb.expr = Matrix::Zero(g, n + 1);
  nb.observed = BoolMatrix::Constant(g, n + 1, false);
  nb.pad_cols = Eigen::Array<bool, Eigen::Dynamic, 1>::Constant(n + 1, false);

  nb.expr.col(0) = slide.expr.row(spot).transpose();
  nb.observed.col(0) = slide.observed.row(spot).transpose();
  for (int c = 0; c < n; ++c) {
    if (idx.pad(spot, c)) {
      nb.pad_cols(c + 1) = true;
      continue;
    }
    const int j = idx.neighbors(spot, c);
    nb.expr.col(c + 1) = slide.expr.row(j).transpose();
    nb.observed.col(c + 1) = slide.observed.row(j).transpose();
  }
  return nb;
}

MaskSet draw_mask(const BoolMatrix& observed, double rho, const CounterRng& rng,
                  std::uint64_t counter_base, int scored_rows) {
  if (rho <= 0.0 || rho >= 1.0) throw ConfigError("draw_mask: rho must lie in (0, 1)");
  const Eigen::Index rows = observed.rows();
  const Eigen::Index cols = observed.cols();
  MaskSet m;
  m.rho = rho;
  m.candidate = BoolMatrix::Constant(rows, cols, false);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) {
      if (scored_rows >= 0 && i >= scored_rows) continue;
      const std::uint64_t counter =
          counter_base + static_cast<std::uint64_t>(j) * static_cast<std::uint64_t>(rows) +
          static_cast<std::uint64_t>(i);
      m.candidate(i, j) = rng.bernoulli(rho, counter);
    }
  }
  m.hidden = m.candidate && observed;
  return m;
}

Matrix apply_mask(const Matrix& expr, const BoolMatrix& hidden) {
  if (expr.rows() != hidden.rows() || expr.cols() != hidden.cols()) {
    throw ConsistencyError("apply_mask: shape mismatch");
  }
  return hidden.select(0.0f, expr.array()).matrix();
}

}  // namespace spackle
