#include "spackle/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include <nlohmann/json.hpp>

#include "spackle/errors.hpp"

namespace spackle {

namespace {

Slide take_spots(const Slide& slide, const std::vector<int>& keep) {
  Slide out;
  out.slide_id = slide.slide_id;
  out.spots.reserve(keep.size());
  for (int i : keep) out.spots.push_back(slide.spots[static_cast<std::size_t>(i)]);
  const auto n = static_cast<Eigen::Index>(keep.size());
  if (slide.has_expr()) {
    out.expr.resize(n, slide.expr.cols());
    out.observed.resize(n, slide.observed.cols());
    for (Eigen::Index r = 0; r < n; ++r) {
      out.expr.row(r) = slide.expr.row(keep[static_cast<std::size_t>(r)]);
      out.observed.row(r) = slide.observed.row(keep[static_cast<std::size_t>(r)]);
    }
  }
  if (slide.has_counts()) {
    CountMatrix counts(n, slide.raw_counts->cols());
    for (Eigen::Index r = 0; r < n; ++r) {
      counts.row(r) = slide.raw_counts->row(keep[static_cast<std::size_t>(r)]);
    }
    out.raw_counts = std::move(counts);
  }
  return out;
}

void require_counts(const SlideDataset& ds, const char* who) {
  for (const Slide& s : ds.slides) {
    if (!s.has_counts()) {
      throw DataError(std::string(who) + ": slide '" + s.slide_id + "' carries no raw counts");
    }
  }
}

}  // namespace

SlideDataset filter_dataset(const SlideDataset& raw, const FilterConfig& cfg) {
  if (cfg.min_counts > cfg.max_counts || cfg.min_gene_counts > cfg.max_gene_counts) {
    throw ConfigError("filter thresholds: min exceeds max");
  }
  if (cfg.min_expr_fraction_slide < 0 || cfg.min_expr_fraction_slide > 1 ||
      cfg.min_expr_fraction_global < 0 || cfg.min_expr_fraction_global > 1) {
    throw ConfigError("expression fractions must lie in [0, 1]");
  }
  require_counts(raw, "filter_dataset");

  const int g = raw.n_genes();

  // 1. spot total-count range
  SlideDataset ds = raw;
  for (std::size_t s = 0; s < ds.slides.size(); ++s) {
    const CountMatrix& counts = *ds.slides[s].raw_counts;
    std::vector<int> keep;
    for (Eigen::Index i = 0; i < counts.rows(); ++i) {
      const std::int64_t total = counts.row(i).sum();
      if (total >= cfg.min_counts && total <= cfg.max_counts) {
        keep.push_back(static_cast<int>(i));
      }
    }
    ds.slides[s] = take_spots(ds.slides[s], keep);
  }

  // 2. gene filters: per-slide and global expression fraction, then total
  //    counts, evaluated on the surviving spots
  std::vector<bool> keep_gene(static_cast<std::size_t>(g), true);
  std::vector<std::int64_t> gene_totals(static_cast<std::size_t>(g), 0);
  std::vector<std::int64_t> gene_nonzero_global(static_cast<std::size_t>(g), 0);
  std::int64_t total_spots = 0;
  for (const Slide& slide : ds.slides) {
    const CountMatrix& counts = *slide.raw_counts;
    total_spots += counts.rows();
    for (Eigen::Index j = 0; j < g; ++j) {
      std::int64_t nonzero = 0;
      for (Eigen::Index i = 0; i < counts.rows(); ++i) {
        gene_totals[static_cast<std::size_t>(j)] += counts(i, j);
        if (counts(i, j) > 0) ++nonzero;
      }
      gene_nonzero_global[static_cast<std::size_t>(j)] += nonzero;
      const double frac = counts.rows() > 0
                              ? static_cast<double>(nonzero) / static_cast<double>(counts.rows())
                              : 0.0;
      if (frac < cfg.min_expr_fraction_slide) keep_gene[static_cast<std::size_t>(j)] = false;
    }
  }
  for (Eigen::Index j = 0; j < g; ++j) {
    const double frac = total_spots > 0 ? static_cast<double>(gene_nonzero_global[j]) /
                                              static_cast<double>(total_spots)
                                        : 0.0;
    if (frac < cfg.min_expr_fraction_global) keep_gene[static_cast<std::size_t>(j)] = false;
    if (gene_totals[static_cast<std::size_t>(j)] < cfg.min_gene_counts ||
        gene_totals[static_cast<std::size_t>(j)] > cfg.max_gene_counts) {
      keep_gene[static_cast<std::size_t>(j)] = false;
    }
  }

  std::vector<std::string> kept;
  for (int j = 0; j < g; ++j) {
    if (keep_gene[static_cast<std::size_t>(j)]) kept.push_back(ds.genes[static_cast<std::size_t>(j)]);
  }
  if (kept.empty()) throw DataError("filtering removed every gene");
  ds = project_genes(ds, kept);

  // 3. drop spots left with zero total over the retained genes
  for (std::size_t s = 0; s < ds.slides.size(); ++s) {
    if (!ds.slides[s].raw_counts.has_value()) {
      throw DataError("filter_dataset: slide lost its counts mid-pipeline");
    }
    const CountMatrix& counts = *ds.slides[s].raw_counts;
    std::vector<int> keep;
    for (Eigen::Index i = 0; i < counts.rows(); ++i) {
      if (counts.row(i).sum() > 0) keep.push_back(static_cast<int>(i));
    }
    ds.slides[s] = take_spots(ds.slides[s], keep);
  }

  validate(ds);
  return ds;
}

MatrixD tpm_log_normalize(const MatrixD& counts) {
  if ((counts.array() < 0).any()) throw DataError("tpm_log_normalize: negative count");
  MatrixD out(counts.rows(), counts.cols());
  for (Eigen::Index i = 0; i < counts.rows(); ++i) {
    const double total = counts.row(i).sum();
    if (total <= 0.0) {
      throw DataError("tpm_log_normalize: zero-sum spot row " + std::to_string(i));
    }
    const double scale = 1e6 / total;
    for (Eigen::Index j = 0; j < counts.cols(); ++j) {
      out(i, j) = std::log2(counts(i, j) * scale + 1.0);
    }
  }
  return out;
}

std::vector<MoranScore> moran_rank(const SlideDataset& ds, int k_weights) {
  if (k_weights < 1) throw ConfigError("moran_rank: k_weights must be >= 1");
  const int g = ds.n_genes();
  std::vector<MoranScore> scores(static_cast<std::size_t>(g));
  for (int j = 0; j < g; ++j) scores[static_cast<std::size_t>(j)].gene = ds.genes[static_cast<std::size_t>(j)];

  for (const Slide& slide : ds.slides) {
    if (!slide.has_expr()) throw DataError("moran_rank: slide '" + slide.slide_id + "' lacks expression");
    const int n = slide.n_spots();
    if (n < k_weights + 1) {
      throw DataError("moran_rank: slide '" + slide.slide_id + "' has fewer than k+1 spots");
    }

    // binary symmetric k-NN graph
    std::set<std::pair<int, int>> edges;  // i < j
    for (int i = 0; i < n; ++i) {
      std::vector<std::pair<double, int>> cand;
      cand.reserve(static_cast<std::size_t>(n - 1));
      const double xi = slide.spots[static_cast<std::size_t>(i)].x;
      const double yi = slide.spots[static_cast<std::size_t>(i)].y;
      for (int jj = 0; jj < n; ++jj) {
        if (jj == i) continue;
        const double dx = slide.spots[static_cast<std::size_t>(jj)].x - xi;
        const double dy = slide.spots[static_cast<std::size_t>(jj)].y - yi;
        cand.emplace_back(dx * dx + dy * dy, jj);
      }
      std::nth_element(cand.begin(), cand.begin() + k_weights, cand.end());
      std::sort(cand.begin(), cand.begin() + k_weights);
      for (int c = 0; c < k_weights; ++c) {
        const int jj = cand[static_cast<std::size_t>(c)].second;
        edges.insert({std::min(i, jj), std::max(i, jj)});
      }
    }
    const double w_total = 2.0 * static_cast<double>(edges.size());

    const MatrixD expr = slide.expr.cast<double>();
    const Eigen::RowVectorXd mean = expr.colwise().sum() / static_cast<double>(n);
    const MatrixD centered = expr.rowwise() - mean;
    Eigen::VectorXd denom = centered.array().square().colwise().sum();
    Eigen::VectorXd num = Eigen::VectorXd::Zero(g);
    for (const auto& [a, b] : edges) {
      num += (centered.row(a).array() * centered.row(b).array()).matrix().transpose();
    }

    for (int j = 0; j < g; ++j) {
      double value = std::nan("");
      if (denom(j) > 0.0) {
        value = (static_cast<double>(n) / w_total) * (2.0 * num(j)) / denom(j);
      }
      scores[static_cast<std::size_t>(j)].per_slide_i.push_back(value);
    }
  }

  for (MoranScore& sc : scores) {
    double sum = 0.0;
    int finite = 0;
    for (double v : sc.per_slide_i) {
      if (std::isfinite(v)) {
        sum += v;
        ++finite;
      }
    }
    sc.mean_i = finite > 0 ? sum / static_cast<double>(finite) : std::nan("");
  }

  std::sort(scores.begin(), scores.end(), [](const MoranScore& a, const MoranScore& b) {
    const bool fa = std::isfinite(a.mean_i), fb = std::isfinite(b.mean_i);
    if (fa != fb) return fa;  // all-NaN genes rank last
    if (fa && a.mean_i != b.mean_i) return a.mean_i > b.mean_i;
    return a.gene < b.gene;
  });
  return scores;
}

std::vector<std::string> select_top_genes(const std::vector<MoranScore>& scores, int k) {
  if (k < 1 || k > static_cast<int>(scores.size())) {
    throw ConfigError("select_top_genes: k=" + std::to_string(k) + " outside 1.." +
                      std::to_string(scores.size()));
  }
  std::vector<std::string> out;
  out.reserve(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) out.push_back(scores[static_cast<std::size_t>(i)].gene);
  return out;
}

SlideDataset project_genes(const SlideDataset& ds, const std::vector<std::string>& keep) {
  std::vector<Eigen::Index> cols;
  cols.reserve(keep.size());
  for (const std::string& gene : keep) {
    auto it = std::find(ds.genes.begin(), ds.genes.end(), gene);
    if (it == ds.genes.end()) {
      throw ConsistencyError("project_genes: unknown gene '" + gene + "'");
    }
    cols.push_back(std::distance(ds.genes.begin(), it));
  }

  SlideDataset out;
  out.name = ds.name;
  out.organism = ds.organism;
  out.tissue = ds.tissue;
  out.genes = keep;
  out.split_map = ds.split_map;
  out.slides.reserve(ds.slides.size());
  for (const Slide& slide : ds.slides) {
    Slide ns;
    ns.slide_id = slide.slide_id;
    ns.spots = slide.spots;
    const auto n = static_cast<Eigen::Index>(slide.spots.size());
    const auto k = static_cast<Eigen::Index>(cols.size());
    if (slide.has_expr()) {
      ns.expr.resize(n, k);
      ns.observed.resize(n, k);
      for (Eigen::Index c = 0; c < k; ++c) {
        ns.expr.col(c) = slide.expr.col(cols[static_cast<std::size_t>(c)]);
        ns.observed.col(c) = slide.observed.col(cols[static_cast<std::size_t>(c)]);
      }
    }
    if (slide.has_counts()) {
      CountMatrix counts(n, k);
      for (Eigen::Index c = 0; c < k; ++c) {
        counts.col(c) = slide.raw_counts->col(cols[static_cast<std::size_t>(c)]);
      }
      ns.raw_counts = std::move(counts);
    }
    out.slides.push_back(std::move(ns));
  }
  return out;
}

void write_qc_report(const std::filesystem::path& file, const QcReport& report) {
  nlohmann::json j;
  j["dataset"] = report.dataset;
  j["slides"] = report.slides;
  j["spots_before"] = report.spots_before;
  j["spots_after"] = report.spots_after;
  j["genes_before"] = report.genes_before;
  j["genes_after"] = report.genes_after;
  j["corrupt_spots"] = report.corrupt_spots;
  j["missing_data_before"] = report.missing_data_before;
  j["missing_data_after"] = report.missing_data_after;
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + file.string());
  out << j.dump(2) << "\n";
}

std::pair<SlideDataset, QcReport> preprocess_pipeline(const SlideDataset& raw,
                                                      const PipelineConfig& cfg) {
  require_counts(raw, "preprocess_pipeline");

  QcReport report;
  report.dataset = raw.name;
  report.slides = static_cast<int>(raw.slides.size());
  report.genes_before = raw.n_genes();
  std::int64_t cells = 0, zero_cells = 0;
  for (const Slide& s : raw.slides) {
    report.spots_before += s.n_spots();
    cells += s.raw_counts->size();
    zero_cells += (s.raw_counts->array() == 0).count();
  }
  report.missing_data_before = cells > 0 ? static_cast<double>(zero_cells) / static_cast<double>(cells) : 0.0;

  SlideDataset ds = filter_dataset(raw, cfg.filter);

  // normalization; the observed mask marks retained genes with nonzero raw count
  for (Slide& slide : ds.slides) {
    const MatrixD logexpr = tpm_log_normalize(slide.raw_counts->cast<double>());
    slide.expr = logexpr.cast<float>();
    slide.observed = slide.raw_counts->array() > 0;
  }

  const auto scores = moran_rank(ds, cfg.moran_k);
  const auto keep = select_top_genes(scores, cfg.k_genes);
  ds = project_genes(ds, keep);

  if (cfg.combat_enabled) {
    CombatOptions opts;
    opts.use_shrunk_adjustment = cfg.combat_shrinkage;
    ds = combat_correct(ds, opts).first;
  }

  report.genes_after = ds.n_genes();
  std::int64_t cells_after = 0, missing_after = 0, corrupt = 0;
  for (const Slide& s : ds.slides) {
    report.spots_after += s.n_spots();
    cells_after += s.observed.size();
    missing_after += (!s.observed).count();
    for (Eigen::Index i = 0; i < s.observed.rows(); ++i) {
      if (!s.observed.row(i).all()) ++corrupt;
    }
  }
  report.missing_data_after =
      cells_after > 0 ? static_cast<double>(missing_after) / static_cast<double>(cells_after) : 0.0;
  report.corrupt_spots =
      report.spots_after > 0 ? static_cast<double>(corrupt) / static_cast<double>(report.spots_after) : 0.0;

  validate(ds);
  return {std::move(ds), report};
}

}  // namespace spackle
