#pragma once

#include <filesystem>
#include <utility>
#include <vector>

#include "spackle/dataset.hpp"

namespace spackle {

// Curation pipeline: count filtering, TPM + log2(x+1) normalization, Moran's I
// gene ranking with top-k retention, and per-slide ComBat batch correction.

struct FilterConfig {
  std::int64_t min_counts = 10;
  std::int64_t max_counts = 1'000'000;
  double min_expr_fraction_slide = 0.2;
  double min_expr_fraction_global = 0.6;
  std::int64_t min_gene_counts = 10;
  std::int64_t max_gene_counts = 1'000'000;
};

struct MoranScore {
  std::string gene;
  std::vector<double> per_slide_i;  // NaN where the gene had zero variance on that slide
  double mean_i = 0.0;              // mean over the finite per-slide values
};

// Raw and shrunk per-batch location/scale estimates, batch = slide.
struct CombatParams {
  std::vector<std::string> batches;
  Eigen::VectorXd alpha;        // pooled gene means
  Eigen::VectorXd sigma2;       // standardization variances (pooled, MLE)
  MatrixD gamma_hat;            // [batch x gene] location estimates
  MatrixD delta2_hat;           // [batch x gene] scale estimates (MLE)
  MatrixD gamma_star;           // empirical-Bayes shrunk location effects
  MatrixD delta2_star;          // empirical-Bayes shrunk scale effects
  std::vector<int> eb_iterations;
};

struct CombatOptions {
  // When true the adjustment removes the EB-shrunk effects (classic
  // empirical-Bayes behavior). The default removes the raw per-batch
  // estimates, which equalizes batch moments exactly and makes the
  // correction idempotent; the shrunk parameters are estimated and reported
  // either way.
  bool use_shrunk_adjustment = false;
  double eb_tolerance = 1e-4;
  int eb_max_iterations = 100;
};

// Order of application: spot count range, gene expression-fraction and count
// filters, all-zero spot removal.
SlideDataset filter_dataset(const SlideDataset& raw, const FilterConfig& cfg);

// Scales each row to one million, then log2(x + 1). Zeros map to zeros.
MatrixD tpm_log_normalize(const MatrixD& counts);

// Per-gene Moran's I on a binary symmetric k-NN spatial weight graph,
// averaged over slides, sorted descending (ties by gene id). Genes with zero
// variance on a slide contribute no term for that slide.
std::vector<MoranScore> moran_rank(const SlideDataset& ds, int k_weights = 6);

std::vector<std::string> select_top_genes(const std::vector<MoranScore>& scores, int k);

// Projects the dataset onto `keep` in the given order (expr, counts, observed).
SlideDataset project_genes(const SlideDataset& ds, const std::vector<std::string>& keep);

std::pair<SlideDataset, CombatParams> combat_correct(const SlideDataset& ds,
                                                     const CombatOptions& opts = {});

struct QcReport {
  std::string dataset;
  int slides = 0;
  int spots_before = 0;
  int spots_after = 0;
  int genes_before = 0;
  int genes_after = 0;
  double corrupt_spots = 0.0;        // fraction of retained spots with >= 1 missing gene
  double missing_data_before = 0.0;  // zero fraction of the raw count matrix
  double missing_data_after = 0.0;   // missing fraction on the retained panel
};

void write_qc_report(const std::filesystem::path& file, const QcReport& report);

struct PipelineConfig {
  FilterConfig filter;
  int k_genes = 128;
  int moran_k = 6;
  bool combat_enabled = true;
  bool combat_shrinkage = false;
};

// filter -> TPM/log -> Moran ranking -> top-k projection -> ComBat. The
// observed mask marks retained genes with a nonzero raw count; retained genes
// end up ordered by descending Moran score.
std::pair<SlideDataset, QcReport> preprocess_pipeline(const SlideDataset& raw,
                                                      const PipelineConfig& cfg);

}  // namespace spackle
