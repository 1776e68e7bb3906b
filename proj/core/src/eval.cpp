#include "spackle/eval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>

#include <nlohmann/json.hpp>

#include "spackle/errors.hpp"
#include "spackle/neighbors.hpp"
#include "spackle/rng.hpp"

namespace spackle {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void append_num(std::string& out, double v) {
  char buf[40];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw IoError("number formatting failed");
  out.append(buf, ptr);
}

void write_text(const fs::path& file, const std::string& content) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + file.string());
  out << content;
}

// fresh hidden mask for one assay on one slide
BoolMatrix assay_hidden_mask(const Slide& slide, int slide_index, double rho,
                             std::uint64_t assay_seed) {
  const CounterRng rng(assay_seed, hash_combine(stream_id("assay"),
                                                static_cast<std::uint64_t>(slide_index)));
  const Eigen::Index rows = slide.observed.rows();
  const Eigen::Index cols = slide.observed.cols();
  BoolMatrix hidden(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) {
      const std::uint64_t counter = static_cast<std::uint64_t>(j) *
                                        static_cast<std::uint64_t>(rows) +
                                    static_cast<std::uint64_t>(i);
      hidden(i, j) = slide.observed(i, j) && rng.bernoulli(rho, counter);
    }
  }
  return hidden;
}

Slide corrupt_slide(const Slide& slide, const BoolMatrix& hidden) {
  Slide out = slide;
  out.expr = hidden.select(0.0f, slide.expr.array()).matrix();
  out.observed = slide.observed && !hidden;
  return out;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const auto n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa <= 0.0 || sbb <= 0.0) return std::nan("");
  return sab / std::sqrt(saa * sbb);
}

}  // namespace

double mse_metric(std::span<const double> pred, std::span<const double> truth) {
  if (pred.size() != truth.size()) throw ConsistencyError("mse_metric: length mismatch");
  if (pred.empty()) throw DataError("mse_metric: empty input");
  double total = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!std::isfinite(pred[i]) || !std::isfinite(truth[i])) {
      throw DataError("mse_metric: non-finite value");
    }
    const double d = pred[i] - truth[i];
    total += d * d;
  }
  return total / static_cast<double>(pred.size());
}

double pcc_metric(const std::vector<GenePairs>& by_gene, int* genes_skipped) {
  double total = 0.0;
  int used = 0, skipped = 0;
  for (const GenePairs& gp : by_gene) {
    if (gp.pred.size() != gp.truth.size()) throw ConsistencyError("pcc_metric: length mismatch");
    if (gp.pred.size() < 2) {
      ++skipped;
      continue;
    }
    const double r = pearson(gp.pred, gp.truth);
    if (!std::isfinite(r)) {
      ++skipped;  // zero variance on either side
      continue;
    }
    total += r;
    ++used;
  }
  if (genes_skipped) *genes_skipped = skipped;
  if (used == 0) throw DataError("pcc_metric: no gene qualifies");
  return total / static_cast<double>(used);
}

// ---------------------------------------------------------------------------
// methods
// ---------------------------------------------------------------------------

MedianMethod::MedianMethod(const SlideDataset& ds, MedianConfig cfg)
    : cfg_(cfg), global_medians_(global_gene_medians(ds.slides_in(Split::kTrain))) {}

Matrix MedianMethod::complete(const Slide& corrupted, int slide_index) {
  (void)slide_index;
  const auto family = build_disc_family(corrupted, cfg_.max_hops);
  return median_complete(corrupted, family, cfg_, global_medians_).slide.expr;
}

GlobalMedianMethod::GlobalMedianMethod(const SlideDataset& ds)
    : global_medians_(global_gene_medians(ds.slides_in(Split::kTrain))) {}

Matrix GlobalMedianMethod::complete(const Slide& corrupted, int slide_index) {
  (void)slide_index;
  Matrix out = corrupted.expr;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    for (Eigen::Index j = 0; j < out.cols(); ++j) {
      if (!corrupted.observed(i, j)) out(i, j) = static_cast<float>(global_medians_(j));
    }
  }
  return out;
}

SpackleMethod::SpackleMethod(const SlideDataset& ds, SpackleModel model, MedianConfig median_cfg)
    : model_(std::move(model)),
      median_cfg_(median_cfg),
      global_medians_(global_gene_medians(ds.slides_in(Split::kTrain))) {
  if (model_.cfg.genes != ds.n_genes()) {
    throw ModelMismatchError("spackle method: model gene panel does not match the dataset");
  }
}

Matrix SpackleMethod::complete(const Slide& corrupted, int slide_index) {
  (void)slide_index;
  const auto family = build_disc_family(corrupted, median_cfg_.max_hops);
  Slide precompleted = median_complete(corrupted, family, median_cfg_, global_medians_).slide;
  const NeighborIndex idx = build_neighbor_index(precompleted, model_.cfg.hops);
  return infer_complete(model_, precompleted, idx).expr;
}

std::unique_ptr<CompletionMethod> make_method(const std::string& name, const SlideDataset& ds,
                                              const SpackleModel* model,
                                              const MedianConfig& median_cfg) {
  if (name == "median") return std::make_unique<MedianMethod>(ds, median_cfg);
  if (name == "global-median") return std::make_unique<GlobalMedianMethod>(ds);
  if (name == "spackle") {
    if (!model) throw ConfigError("method 'spackle' needs a model checkpoint");
    return std::make_unique<SpackleMethod>(ds, *model, median_cfg);
  }
  throw ConfigError("unknown completion method '" + name + "'");
}

// ---------------------------------------------------------------------------
// harness
// ---------------------------------------------------------------------------

EvalReport masked_evaluation(CompletionMethod& method, const SlideDataset& ds, Split split,
                             double rho, int n_assays, std::uint64_t base_seed) {
  if (rho <= 0.0 || rho >= 1.0) throw ConfigError("masked_evaluation: rho must be in (0,1)");
  if (n_assays < 1) throw ConfigError("masked_evaluation: need at least one assay");
  const auto slide_indices = ds.slide_indices_in(split);
  if (slide_indices.empty()) {
    throw DataError(std::string("masked_evaluation: no slides in split '") + to_string(split) +
                    "'");
  }

  EvalReport report;
  report.method = method.name();
  report.dataset = ds.name;
  report.masking_fraction = rho;
  report.base_seed = base_seed;

  const int g = ds.n_genes();
  for (int a = 0; a < n_assays; ++a) {
    const std::uint64_t assay_seed = base_seed + static_cast<std::uint64_t>(a);
    std::vector<double> pred_all, truth_all;
    std::vector<GenePairs> by_gene(static_cast<std::size_t>(g));

    for (int si : slide_indices) {
      const Slide& slide = ds.slides[static_cast<std::size_t>(si)];
      const BoolMatrix hidden = assay_hidden_mask(slide, si, rho, assay_seed);
      const Slide corrupted = corrupt_slide(slide, hidden);
      const Matrix completed = method.complete(corrupted, si);
      if (completed.rows() != slide.expr.rows() || completed.cols() != slide.expr.cols()) {
        throw ConsistencyError("masked_evaluation: method returned a wrong-shaped matrix");
      }

      for (Eigen::Index j = 0; j < g; ++j) {
        for (Eigen::Index i = 0; i < slide.expr.rows(); ++i) {
          if (!hidden(i, j)) continue;
          ++report.cells_audited;
          if (!slide.observed(i, j)) {
            // real-data-only scoring; by construction this cannot happen
            ++report.leaked_cells;
            continue;
          }
          const double p = static_cast<double>(completed(i, j));
          const double t = static_cast<double>(slide.expr(i, j));
          pred_all.push_back(p);
          truth_all.push_back(t);
          by_gene[static_cast<std::size_t>(j)].pred.push_back(p);
          by_gene[static_cast<std::size_t>(j)].truth.push_back(t);
        }
      }
    }
    if (pred_all.empty()) throw DataError("masked_evaluation: the assay hid zero cells");

    AssayResult res;
    res.assay_seed = assay_seed;
    res.mse = mse_metric(pred_all, truth_all);
    try {
      res.pcc = pcc_metric(by_gene, &res.genes_skipped);
    } catch (const DataError&) {
      // constant-per-gene predictors (the global-median baseline) have no
      // qualifying gene; record zero association instead of failing the run
      res.pcc = 0.0;
      res.genes_skipped = g;
    }
    const double flat = pearson(pred_all, truth_all);
    res.pcc_flat = std::isfinite(flat) ? flat : 0.0;
    res.n_evaluated_cells = static_cast<std::int64_t>(pred_all.size());
    report.per_assay.push_back(res);
  }
  if (report.leaked_cells != 0) {
    throw Error("masked_evaluation: leakage audit failed");  // unreachable by construction
  }

  double mse_sum = 0, pcc_sum = 0, flat_sum = 0, pooled_num = 0;
  std::int64_t pooled_den = 0;
  for (const AssayResult& r : report.per_assay) {
    mse_sum += r.mse;
    pcc_sum += r.pcc;
    flat_sum += r.pcc_flat;
    pooled_num += r.mse * static_cast<double>(r.n_evaluated_cells);
    pooled_den += r.n_evaluated_cells;
  }
  const auto n = static_cast<double>(report.per_assay.size());
  report.mean_mse = mse_sum / n;
  report.mean_pcc = pcc_sum / n;
  report.mean_pcc_flat = flat_sum / n;
  report.pooled_mse = pooled_num / static_cast<double>(pooled_den);
  return report;
}

std::vector<SweepRow> corruption_sweep(const SlideDataset& ds, Split split,
                                       const std::vector<double>& fractions,
                                       std::span<CompletionMethod* const> methods, int n_assays,
                                       std::uint64_t base_seed) {
  if (fractions.empty()) throw ConfigError("corruption_sweep: no fractions given");
  for (double f : fractions) {
    if (f <= 0.0 || f >= 1.0) throw ConfigError("corruption_sweep: fractions must be in (0,1)");
  }
  std::vector<SweepRow> rows;
  for (double f : fractions) {
    for (CompletionMethod* m : methods) {
      const EvalReport report = masked_evaluation(*m, ds, split, f, n_assays, base_seed);
      for (std::size_t a = 0; a < report.per_assay.size(); ++a) {
        rows.push_back({f, m->name(), static_cast<int>(a), report.per_assay[a].mse,
                        report.per_assay[a].pcc});
      }
    }
  }
  return rows;
}

// ---------------------------------------------------------------------------
// emitters
// ---------------------------------------------------------------------------

void write_report(const EvalReport& report, const fs::path& dir) {
  json j;
  j["method"] = report.method;
  j["dataset"] = report.dataset;
  j["masking_fraction"] = report.masking_fraction;
  j["base_seed"] = report.base_seed;
  j["mean_mse"] = report.mean_mse;
  j["mean_pcc"] = report.mean_pcc;
  j["mean_pcc_flat"] = report.mean_pcc_flat;
  j["pooled_mse"] = report.pooled_mse;
  j["cells_audited"] = report.cells_audited;
  j["leaked_cells"] = report.leaked_cells;
  j["per_assay"] = json::array();
  for (const AssayResult& r : report.per_assay) {
    json e;
    e["assay_seed"] = r.assay_seed;
    e["mse"] = r.mse;
    e["pcc"] = r.pcc;
    e["pcc_flat"] = r.pcc_flat;
    e["n_evaluated_cells"] = r.n_evaluated_cells;
    e["genes_skipped"] = r.genes_skipped;
    j["per_assay"].push_back(e);
  }
  write_text(dir / "report.json", j.dump(2) + "\n");

  std::string tsv = "assay\tseed\tmse\tpcc\tpcc_flat\tn_cells\tgenes_skipped\n";
  for (std::size_t a = 0; a < report.per_assay.size(); ++a) {
    const AssayResult& r = report.per_assay[a];
    tsv += std::to_string(a);
    tsv += '\t';
    tsv += std::to_string(r.assay_seed);
    tsv += '\t';
    append_num(tsv, r.mse);
    tsv += '\t';
    append_num(tsv, r.pcc);
    tsv += '\t';
    append_num(tsv, r.pcc_flat);
    tsv += '\t';
    tsv += std::to_string(r.n_evaluated_cells);
    tsv += '\t';
    tsv += std::to_string(r.genes_skipped);
    tsv += '\n';
  }
  tsv += "mean\t-\t";
  append_num(tsv, report.mean_mse);
  tsv += '\t';
  append_num(tsv, report.mean_pcc);
  tsv += '\t';
  append_num(tsv, report.mean_pcc_flat);
  tsv += '\t';
  tsv += std::to_string(report.cells_audited);
  tsv += "\t-\n";
  write_text(dir / "report.tsv", tsv);
}

void write_sweep_tsv(const std::vector<SweepRow>& rows, const fs::path& file) {
  std::string tsv = "fraction\tmethod\tassay\tmse\tpcc\n";
  for (const SweepRow& r : rows) {
    append_num(tsv, r.fraction);
    tsv += '\t';
    tsv += r.method;
    tsv += '\t';
    tsv += std::to_string(r.assay);
    tsv += '\t';
    append_num(tsv, r.mse);
    tsv += '\t';
    append_num(tsv, r.pcc);
    tsv += '\n';
  }
  write_text(file, tsv);
}

void scatter_export(CompletionMethod& method, const SlideDataset& ds, Split split, double rho,
                    std::uint64_t seed, const fs::path& file) {
  const auto slide_indices = ds.slide_indices_in(split);
  if (slide_indices.empty()) throw DataError("scatter_export: empty split");
  std::string tsv = "truth\tprediction\tgene\tmethod\n";
  for (int si : slide_indices) {
    const Slide& slide = ds.slides[static_cast<std::size_t>(si)];
    const BoolMatrix hidden = assay_hidden_mask(slide, si, rho, seed);
    const Slide corrupted = corrupt_slide(slide, hidden);
    const Matrix completed = method.complete(corrupted, si);
    for (Eigen::Index j = 0; j < slide.expr.cols(); ++j) {
      for (Eigen::Index i = 0; i < slide.expr.rows(); ++i) {
        if (!hidden(i, j)) continue;
        append_num(tsv, static_cast<double>(slide.expr(i, j)));
        tsv += '\t';
        append_num(tsv, static_cast<double>(completed(i, j)));
        tsv += '\t';
        tsv += ds.genes[static_cast<std::size_t>(j)];
        tsv += '\t';
        tsv += method.name();
        tsv += '\n';
      }
    }
  }
  write_text(file, tsv);
}

void expression_map_export(const SlideDataset& ds, int slide_index, const std::string& gene,
                           std::span<CompletionMethod* const> methods, double rho,
                           std::uint64_t seed, const fs::path& dir) {
  const auto it = std::find(ds.genes.begin(), ds.genes.end(), gene);
  if (it == ds.genes.end()) throw ConfigError("expression_map_export: unknown gene '" + gene + "'");
  const auto j = static_cast<Eigen::Index>(std::distance(ds.genes.begin(), it));
  if (slide_index < 0 || slide_index >= static_cast<int>(ds.slides.size())) {
    throw ConfigError("expression_map_export: slide index out of range");
  }
  const Slide& slide = ds.slides[static_cast<std::size_t>(slide_index)];
  const BoolMatrix hidden = assay_hidden_mask(slide, slide_index, rho, seed);
  const Slide corrupted = corrupt_slide(slide, hidden);

  auto emit = [&](const std::string& variant, const char* flag_name, auto value_fn,
                  auto flag_fn) {
    std::string tsv = std::string("x\ty\tvalue\t") + flag_name + "\n";
    for (int i = 0; i < slide.n_spots(); ++i) {
      append_num(tsv, slide.spots[static_cast<std::size_t>(i)].x);
      tsv += '\t';
      append_num(tsv, slide.spots[static_cast<std::size_t>(i)].y);
      tsv += '\t';
      append_num(tsv, value_fn(i));
      tsv += '\t';
      tsv += flag_fn(i) ? '1' : '0';
      tsv += '\n';
    }
    write_text(dir / ("map_" + gene + "_" + variant + ".tsv"), tsv);
  };

  emit("truth", "observed",
       [&](int i) { return static_cast<double>(slide.expr(i, j)); },
       [&](int i) { return slide.observed(i, j); });
  emit("masked", "hidden",
       [&](int i) { return static_cast<double>(corrupted.expr(i, j)); },
       [&](int i) { return hidden(i, j); });
  for (CompletionMethod* m : methods) {
    const Matrix completed = m->complete(corrupted, slide_index);
    emit(m->name(), "completed",
         [&](int i) { return static_cast<double>(completed(i, j)); },
         [&](int i) { return !corrupted.observed(i, j); });
  }
}

}  // namespace spackle
