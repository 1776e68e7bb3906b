#pragma once

#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "spackle/dataset.hpp"
#include "spackle/median.hpp"
#include "spackle/train.hpp"

namespace spackle {

// Masked-evaluation harness: per assay a fresh Bernoulli(rho) candidate mask
// hides originally-observed cells of the evaluation slides, a completion
// method fills them back, and metrics are computed on exactly the hidden
// cells. Ten assays with seeds base_seed + i are averaged.

double mse_metric(std::span<const double> pred, std::span<const double> truth);

// Pearson correlation per gene over its evaluated cells, averaged across
// genes with at least two cells and nonzero variance on both sides. Genes
// failing that are skipped; no qualifying gene is an error.
struct GenePairs {
  std::vector<double> pred;
  std::vector<double> truth;
};
double pcc_metric(const std::vector<GenePairs>& by_gene, int* genes_skipped = nullptr);

struct AssayResult {
  std::uint64_t assay_seed = 0;
  double mse = 0.0;
  double pcc = 0.0;       // per-gene PCC averaged over qualifying genes
  double pcc_flat = 0.0;  // secondary: Pearson over all cells pooled
  std::int64_t n_evaluated_cells = 0;
  int genes_skipped = 0;
};

struct EvalReport {
  std::string method;
  std::string dataset;
  double masking_fraction = 0.0;
  std::uint64_t base_seed = 0;
  std::vector<AssayResult> per_assay;
  double mean_mse = 0.0;
  double mean_pcc = 0.0;
  double mean_pcc_flat = 0.0;
  double pooled_mse = 0.0;  // cell-weighted across assays
  std::int64_t cells_audited = 0;
  std::int64_t leaked_cells = 0;  // scored cells that were not originally observed; always 0
};

// A completion method fills every missing cell of a corrupted slide. The
// corrupted slide's `observed` mask reflects both original dropout and the
// assay's hidden cells; `slide_index` addresses ds.slides.
class CompletionMethod {
 public:
  virtual ~CompletionMethod() = default;
  virtual std::string name() const = 0;
  virtual Matrix complete(const Slide& corrupted, int slide_index) = 0;
};

// Adaptive local median with global fallback.
class MedianMethod : public CompletionMethod {
 public:
  MedianMethod(const SlideDataset& ds, MedianConfig cfg);
  std::string name() const override { return "median"; }
  Matrix complete(const Slide& corrupted, int slide_index) override;

 private:
  MedianConfig cfg_;
  Eigen::VectorXd global_medians_;
};

// Per-gene global median only; the degenerate baseline.
class GlobalMedianMethod : public CompletionMethod {
 public:
  explicit GlobalMedianMethod(const SlideDataset& ds);
  std::string name() const override { return "global-median"; }
  Matrix complete(const Slide& corrupted, int slide_index) override;

 private:
  Eigen::VectorXd global_medians_;
};

// Median pre-completion followed by transformer inference.
class SpackleMethod : public CompletionMethod {
 public:
  SpackleMethod(const SlideDataset& ds, SpackleModel model, MedianConfig median_cfg);
  std::string name() const override { return "spackle"; }
  Matrix complete(const Slide& corrupted, int slide_index) override;

 private:
  SpackleModel model_;
  MedianConfig median_cfg_;
  Eigen::VectorXd global_medians_;
};

std::unique_ptr<CompletionMethod> make_method(const std::string& name, const SlideDataset& ds,
                                              const SpackleModel* model,
                                              const MedianConfig& median_cfg);

EvalReport masked_evaluation(CompletionMethod& method, const SlideDataset& ds, Split split,
                             double rho, int n_assays, std::uint64_t base_seed);

struct SweepRow {
  double fraction;
  std::string method;
  int assay;
  double mse;
  double pcc;
};

std::vector<SweepRow> corruption_sweep(const SlideDataset& ds, Split split,
                                       const std::vector<double>& fractions,
                                       std::span<CompletionMethod* const> methods, int n_assays,
                                       std::uint64_t base_seed);

// report.json + report.tsv (one row per assay plus a mean row)
void write_report(const EvalReport& report, const std::filesystem::path& dir);
void write_sweep_tsv(const std::vector<SweepRow>& rows, const std::filesystem::path& file);

// One assay's (truth, prediction, gene, method) rows for every hidden cell.
void scatter_export(CompletionMethod& method, const SlideDataset& ds, Split split, double rho,
                    std::uint64_t seed, const std::filesystem::path& file);

// Per-spot (x, y, value, flag) tables for one gene: truth, masked, and one
// table per completion method.
void expression_map_export(const SlideDataset& ds, int slide_index, const std::string& gene,
                           std::span<CompletionMethod* const> methods, double rho,
                           std::uint64_t seed, const std::filesystem::path& dir);

}  // namespace spackle
