#include "spackle/median.hpp"

#include <algorithm>
#include <cmath>

#include "spackle/errors.hpp"

namespace spackle {

namespace {

double median_inplace(std::vector<double>& v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  if (n % 2 == 1) return v[n / 2];
  return 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

Eigen::VectorXd global_gene_medians(const std::vector<const Slide*>& train_slides) {
  if (train_slides.empty()) throw DataError("global_gene_medians: no slides given");
  const Eigen::Index g = train_slides.front()->expr.cols();
  Eigen::VectorXd medians(g);
  std::vector<double> values;
  for (Eigen::Index j = 0; j < g; ++j) {
    values.clear();
    for (const Slide* slide : train_slides) {
      if (!slide->has_expr() || slide->expr.cols() != g) {
        throw ConsistencyError("global_gene_medians: slide without matching expression");
      }
      for (Eigen::Index i = 0; i < slide->expr.rows(); ++i) {
        if (slide->observed(i, j)) values.push_back(static_cast<double>(slide->expr(i, j)));
      }
    }
    if (values.empty()) {
      throw DataError("global_gene_medians: gene column " + std::to_string(j) +
                      " has no observed value in the training slides");
    }
    medians(j) = median_inplace(values);
  }
  return medians;
}

MedianResult median_complete(const Slide& slide, std::span<const NeighborIndex> disc_family,
                             const MedianConfig& cfg, const Eigen::VectorXd& global_medians) {
  if (cfg.max_hops < 1 || cfg.min_observed < 1) {
    throw ConfigError("median_complete: max_hops and min_observed must be >= 1");
  }
  if (static_cast<int>(disc_family.size()) < cfg.max_hops) {
    throw ConfigError("median_complete: disc family smaller than max_hops");
  }
  if (!slide.has_expr()) throw DataError("median_complete: slide lacks expression");
  const Eigen::Index n = slide.expr.rows();
  const Eigen::Index g = slide.expr.cols();
  if (global_medians.size() != g) {
    throw ConsistencyError("median_complete: global medians length mismatch");
  }
  for (const NeighborIndex& idx : disc_family) {
    if (idx.neighbors.rows() != n) {
      throw ConsistencyError("median_complete: neighbor index does not match the slide");
    }
  }

  MedianResult res;
  res.slide = slide;
  res.filled = BoolMatrix::Constant(n, g, false);
  res.fill_radius.setZero(n, g);

  std::vector<double> region;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < g; ++j) {
      if (slide.observed(i, j)) continue;

      double fill = std::nan("");
      std::int8_t radius = -1;
      for (int h = 1; h <= cfg.max_hops; ++h) {
        const NeighborIndex& idx = disc_family[static_cast<std::size_t>(h - 1)];
        region.clear();
        for (int c = 0; c < idx.target_count; ++c) {
          if (idx.pad(i, c)) continue;
          const int nb = idx.neighbors(i, c);
          if (slide.observed(nb, j)) region.push_back(static_cast<double>(slide.expr(nb, j)));
        }
        if (static_cast<int>(region.size()) >= cfg.min_observed) {
          fill = median_inplace(region);
          radius = static_cast<std::int8_t>(h);
          break;
        }
      }
      if (radius < 0) {
        fill = global_medians(j);
        ++res.n_global;
      } else {
        ++res.n_local;
      }
      res.slide.expr(i, j) = static_cast<float>(fill);
      res.filled(i, j) = true;
      res.fill_radius(i, j) = radius;
    }
  }
  return res;
}

SlideDataset median_complete_dataset(const SlideDataset& ds, const MedianConfig& cfg) {
  const auto medians = global_gene_medians(ds.slides_in(Split::kTrain));
  SlideDataset out = ds;
  for (Slide& slide : out.slides) {
    const auto family = build_disc_family(slide, cfg.max_hops);
    slide = median_complete(slide, family, cfg, medians).slide;
  }
  return out;
}

}  // namespace spackle
