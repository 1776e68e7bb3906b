#include <cmath>

#include "spackle/errors.hpp"
#include "spackle/preprocess.hpp"

namespace spackle {

namespace {

constexpr double kVarFloor = 1e-12;

double relative_change(double next, double prev) {
  const double denom = std::abs(prev);
  if (denom < 1e-12) return std::abs(next - prev);
  return std::abs(next - prev) / denom;
}

}  // namespace

std::pair<SlideDataset, CombatParams> combat_correct(const SlideDataset& ds,
                                                     const CombatOptions& opts) {
  const int n_batches = static_cast<int>(ds.slides.size());
  if (n_batches < 2) throw DataError("combat_correct: needs at least two slides");
  const int g = ds.n_genes();

  std::vector<Eigen::Index> batch_rows(static_cast<std::size_t>(n_batches));
  Eigen::Index total = 0;
  for (int b = 0; b < n_batches; ++b) {
    if (!ds.slides[static_cast<std::size_t>(b)].has_expr()) {
      throw DataError("combat_correct: slide '" + ds.slides[static_cast<std::size_t>(b)].slide_id +
                      "' lacks expression");
    }
    batch_rows[static_cast<std::size_t>(b)] = ds.slides[static_cast<std::size_t>(b)].expr.rows();
    total += batch_rows[static_cast<std::size_t>(b)];
  }

  // pooled data, double precision
  MatrixD data(total, g);
  {
    Eigen::Index row = 0;
    for (const Slide& s : ds.slides) {
      data.middleRows(row, s.expr.rows()) = s.expr.cast<double>();
      row += s.expr.rows();
    }
  }

  CombatParams params;
  for (const Slide& s : ds.slides) params.batches.push_back(s.slide_id);

  // standardization: weighted grand mean, pooled residual variance (MLE)
  MatrixD batch_mean(n_batches, g);
  {
    Eigen::Index row = 0;
    for (int b = 0; b < n_batches; ++b) {
      const auto n = batch_rows[static_cast<std::size_t>(b)];
      batch_mean.row(b) = data.middleRows(row, n).colwise().sum() / static_cast<double>(n);
      row += n;
    }
  }
  Eigen::VectorXd alpha = Eigen::VectorXd::Zero(g);
  for (int b = 0; b < n_batches; ++b) {
    alpha += (static_cast<double>(batch_rows[static_cast<std::size_t>(b)]) /
              static_cast<double>(total)) *
             batch_mean.row(b).transpose();
  }
  Eigen::VectorXd sigma2 = Eigen::VectorXd::Zero(g);
  {
    Eigen::Index row = 0;
    for (int b = 0; b < n_batches; ++b) {
      const auto n = batch_rows[static_cast<std::size_t>(b)];
      MatrixD centered = data.middleRows(row, n).rowwise() - batch_mean.row(b);
      sigma2 += centered.array().square().colwise().sum().matrix().transpose();
      row += n;
    }
    sigma2 /= static_cast<double>(total);
  }
  for (int j = 0; j < g; ++j) {
    if (sigma2(j) <= kVarFloor) {
      throw DataError("combat_correct: gene '" + ds.genes[static_cast<std::size_t>(j)] +
                      "' has zero pooled variance");
    }
  }
  const Eigen::ArrayXd inv_sd = sigma2.array().sqrt().inverse();

  MatrixD z(total, g);
  for (Eigen::Index i = 0; i < total; ++i) {
    z.row(i) = ((data.row(i).transpose().array() - alpha.array()) * inv_sd).transpose();
  }

  // per-batch location/scale estimates
  MatrixD gamma_hat(n_batches, g), delta2_hat(n_batches, g);
  {
    Eigen::Index row = 0;
    for (int b = 0; b < n_batches; ++b) {
      const auto n = batch_rows[static_cast<std::size_t>(b)];
      auto block = z.middleRows(row, n);
      gamma_hat.row(b) = block.colwise().sum() / static_cast<double>(n);
      MatrixD centered = block.rowwise() - gamma_hat.row(b);
      delta2_hat.row(b) =
          (centered.array().square().colwise().sum() / static_cast<double>(n)).matrix();
      row += n;
    }
  }
  delta2_hat = delta2_hat.cwiseMax(1e-8);  // guard against batch-constant genes

  // empirical-Bayes shrinkage: normal prior on gamma, inverse-gamma on delta^2,
  // hyperparameters by moment matching, solved by fixed-point iteration
  MatrixD gamma_star = gamma_hat;
  MatrixD delta2_star = delta2_hat;
  params.eb_iterations.assign(static_cast<std::size_t>(n_batches), 0);
  {
    Eigen::Index row = 0;
    for (int b = 0; b < n_batches; ++b) {
      const auto n = batch_rows[static_cast<std::size_t>(b)];
      const double nd = static_cast<double>(n);
      auto block = z.middleRows(row, n);

      const double gamma_bar = gamma_hat.row(b).mean();
      const double t2 =
          g > 1 ? (gamma_hat.row(b).array() - gamma_bar).square().sum() / static_cast<double>(g - 1)
                : 0.0;
      const double m = delta2_hat.row(b).mean();
      const double s2 =
          g > 1 ? (delta2_hat.row(b).array() - m).square().sum() / static_cast<double>(g - 1)
                : 0.0;
      const bool degenerate_delta_prior = s2 <= kVarFloor;
      const double aprior = degenerate_delta_prior ? 0.0 : (2.0 * s2 + m * m) / s2;
      const double bprior = degenerate_delta_prior ? 0.0 : (m * s2 + m * m * m) / s2;

      Eigen::RowVectorXd g_old = gamma_hat.row(b);
      Eigen::RowVectorXd d_old = delta2_hat.row(b);
      Eigen::RowVectorXd g_new(g), d_new(g);
      int it = 0;
      for (; it < opts.eb_max_iterations; ++it) {
        for (int j = 0; j < g; ++j) {
          const double denom = nd * t2 + d_old(j);
          g_new(j) = denom > 0.0
                         ? (nd * t2 * gamma_hat(b, j) + d_old(j) * gamma_bar) / denom
                         : gamma_bar;
        }
        for (int j = 0; j < g; ++j) {
          if (degenerate_delta_prior) {
            d_new(j) = m;
            continue;
          }
          const double sum2 = (block.col(j).array() - g_new(j)).square().sum();
          d_new(j) = (0.5 * sum2 + bprior) / (nd / 2.0 + aprior - 1.0);
        }
        double change = 0.0;
        for (int j = 0; j < g; ++j) {
          change = std::max(change, relative_change(g_new(j), g_old(j)));
          change = std::max(change, relative_change(d_new(j), d_old(j)));
        }
        g_old = g_new;
        d_old = d_new;
        if (change < opts.eb_tolerance) {
          ++it;
          break;
        }
      }
      gamma_star.row(b) = g_old;
      delta2_star.row(b) = d_old.cwiseMax(kVarFloor);
      params.eb_iterations[static_cast<std::size_t>(b)] = it;
      row += n;
    }
  }

  // adjust and de-standardize
  const MatrixD& gamma_adj = opts.use_shrunk_adjustment ? gamma_star : gamma_hat;
  const MatrixD& delta2_adj = opts.use_shrunk_adjustment ? delta2_star : delta2_hat;

  SlideDataset out = ds;
  {
    Eigen::Index row = 0;
    for (int b = 0; b < n_batches; ++b) {
      const auto n = batch_rows[static_cast<std::size_t>(b)];
      const Eigen::ArrayXd inv_delta = delta2_adj.row(b).transpose().array().sqrt().inverse();
      MatrixD adjusted(n, g);
      for (Eigen::Index i = 0; i < n; ++i) {
        adjusted.row(i) =
            (((z.row(row + i).transpose().array() - gamma_adj.row(b).transpose().array()) *
              inv_delta) /
             inv_sd +
             alpha.array())
                .transpose();
      }
      out.slides[static_cast<std::size_t>(b)].expr = adjusted.cast<float>();
      row += n;
    }
  }

  params.alpha = std::move(alpha);
  params.sigma2 = std::move(sigma2);
  params.gamma_hat = std::move(gamma_hat);
  params.delta2_hat = std::move(delta2_hat);
  params.gamma_star = std::move(gamma_star);
  params.delta2_star = std::move(delta2_star);
  return {std::move(out), std::move(params)};
}

}  // namespace spackle
