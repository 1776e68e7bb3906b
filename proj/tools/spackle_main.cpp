// Command-line front end: synth, preprocess, train, complete, evaluate,
// sweep, export-maps. Every run resolves its configuration from built-in
// defaults, the SPACKLE_SEED environment variable, an optional --config file,
// and --key value overrides (in that precedence order), rejects unknown keys,
// and writes the resolved snapshot next to its outputs so the run can be
// replayed from the snapshot alone.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "spackle/config.hpp"
#include "spackle/dataset_io.hpp"
#include "spackle/errors.hpp"
#include "spackle/eval.hpp"
#include "spackle/median.hpp"
#include "spackle/preprocess.hpp"
#include "spackle/synthgen.hpp"
#include "spackle/train.hpp"

namespace fs = std::filesystem;
using namespace spackle;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInput = 2;
constexpr int kExitTraining = 3;
constexpr int kExitModelMismatch = 4;
constexpr int kExitInternal = 5;

struct OptionSpec {
  const char* key;
  const char* def;  // nullptr = required
  const char* help;
};

// One subcommand's resolved configuration.
class Resolved {
 public:
  Resolved(std::string command, const std::vector<OptionSpec>& specs,
           const std::vector<std::string>& args)
      : command_(std::move(command)) {
    for (const OptionSpec& spec : specs) specs_[spec.key] = spec;

    // defaults
    for (const OptionSpec& spec : specs) {
      if (spec.def) values_[spec.key] = spec.def;
    }
    // environment: SPACKLE_SEED replaces the default of seed-carrying keys
    if (const char* env = std::getenv("SPACKLE_SEED")) {
      for (const char* key : {"seed", "base_seed"}) {
        if (specs_.count(key)) values_[key] = env;
      }
    }
    // --config file, then --key value overrides
    KeyValues file_kv;
    std::vector<std::pair<std::string, std::string>> overrides;
    for (std::size_t i = 0; i < args.size(); ++i) {
      std::string arg = args[i];
      if (arg.rfind("--", 0) != 0) {
        throw ConfigError("expected --key, got '" + arg + "'");
      }
      std::string key = arg.substr(2);
      for (char& c : key) {
        if (c == '-') c = '_';
      }
      std::string value;
      const auto eq = key.find('=');
      if (eq != std::string::npos) {
        value = key.substr(eq + 1);
        key = key.substr(0, eq);
      } else {
        if (i + 1 >= args.size()) throw ConfigError("missing value for --" + key);
        value = args[++i];
      }
      if (key == "config") {
        file_kv = parse_config_file(value);
      } else {
        overrides.emplace_back(key, value);
      }
    }
    for (const auto& [key, value] : file_kv) {
      if (key == "command") {
        if (value != command_) {
          throw ConfigError("config snapshot was written for command '" + value + "'");
        }
        continue;
      }
      set_checked(key, value);
    }
    for (const auto& [key, value] : overrides) set_checked(key, value);

    for (const OptionSpec& spec : specs) {
      if (!spec.def && !values_.count(spec.key)) {
        throw ConfigError("missing required option --" + std::string(spec.key));
      }
    }
  }

  const KeyValues& values() const { return values_; }
  std::string str(const std::string& key) const { return get_string(values_, key); }
  std::int64_t integer(const std::string& key) const { return get_int(values_, key); }
  double number(const std::string& key) const { return get_double(values_, key); }
  bool boolean(const std::string& key) const { return get_bool(values_, key); }
  std::uint64_t seed(const std::string& key) const { return get_seed(values_, key); }

  void snapshot(const fs::path& out_dir) const {
    write_config_snapshot(out_dir / "resolved_config.txt", command_, values_);
  }

 private:
  void set_checked(const std::string& key, const std::string& value) {
    if (!specs_.count(key)) {
      throw ConfigError("unknown option '" + key + "' for command '" + command_ + "'");
    }
    values_[key] = value;
  }

  std::string command_;
  std::map<std::string, OptionSpec> specs_;
  KeyValues values_;
};

fs::path make_out_dir(const Resolved& cfg) {
  const fs::path dir = cfg.str("out");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory: " + dir.string());
  return dir;
}

MedianConfig median_config(const Resolved& cfg) {
  MedianConfig mc;
  mc.max_hops = static_cast<int>(cfg.integer("max_hops"));
  mc.min_observed = static_cast<int>(cfg.integer("min_observed"));
  return mc;
}

Split parse_eval_split(const Resolved& cfg, const SlideDataset& ds) {
  const std::string name = cfg.str("split");
  if (name == "auto") {
    if (!ds.slide_indices_in(Split::kTest).empty()) return Split::kTest;
    if (!ds.slide_indices_in(Split::kVal).empty()) return Split::kVal;
    throw DataError("dataset has neither test nor val slides to evaluate");
  }
  return split_from_string(name);
}

std::optional<SpackleModel> load_model_if_needed(const Resolved& cfg, const SlideDataset& ds,
                                                 bool needed) {
  if (!needed) return std::nullopt;
  const std::string path = cfg.str("model");
  if (path.empty()) throw ConfigError("this method requires --model <checkpoint>");
  Checkpoint ckpt = load_checkpoint(path);
  if (ckpt.genes != ds.genes) {
    throw ModelMismatchError("checkpoint gene panel does not match the dataset");
  }
  return std::move(ckpt.model);
}

// ---------------------------------------------------------------------------
// subcommands
// ---------------------------------------------------------------------------

const std::vector<OptionSpec> kSynthSpecs = {
    {"out", nullptr, "output dataset directory"},
    {"n_slides", "3", "number of slides"},
    {"grid_rows", "24", "hex grid rows"},
    {"grid_cols", "25", "hex grid columns"},
    {"n_genes", "32", "genes"},
    {"correlation_length", "4.0", "latent field correlation length (pitches)"},
    {"noise_sd", "0.3", "iid latent noise"},
    {"dropout_rate", "0.3", "dropout probability"},
    {"batch_shift", "", "per-slide additive latent shift, comma list"},
    {"batch_scale", "", "per-slide multiplicative latent scale, comma list"},
    {"seed", "42", "random seed"},
};

int cmd_synth(const Resolved& cfg) {
  SynthConfig sc;
  sc.n_slides = static_cast<int>(cfg.integer("n_slides"));
  sc.grid_rows = static_cast<int>(cfg.integer("grid_rows"));
  sc.grid_cols = static_cast<int>(cfg.integer("grid_cols"));
  sc.n_genes = static_cast<int>(cfg.integer("n_genes"));
  sc.correlation_length = cfg.number("correlation_length");
  sc.noise_sd = cfg.number("noise_sd");
  sc.dropout_rate = cfg.number("dropout_rate");
  if (!cfg.str("batch_shift").empty()) sc.batch_shift = get_double_list(cfg.values(), "batch_shift");
  if (!cfg.str("batch_scale").empty()) sc.batch_scale = get_double_list(cfg.values(), "batch_scale");
  sc.seed = cfg.seed("seed");

  const fs::path dir = make_out_dir(cfg);
  SynthOutput out = generate(sc);
  save_dataset(out.ds, dir);
  for (std::size_t s = 0; s < out.ds.slides.size(); ++s) {
    write_count_tsv(dir / out.ds.slides[s].slide_id / "truth.tsv", out.ds.genes, out.truth[s]);
  }
  cfg.snapshot(dir);
  std::cout << "wrote synthetic dataset: " << out.ds.slides.size() << " slides, "
            << out.ds.n_genes() << " genes -> " << dir.string() << "\n";
  return kExitOk;
}

const std::vector<OptionSpec> kPreprocessSpecs = {
    {"dataset", nullptr, "raw dataset directory (counts)"},
    {"out", nullptr, "output directory"},
    {"min_counts", "10", "spot total count floor"},
    {"max_counts", "1000000", "spot total count ceiling"},
    {"frac_slide", "0.2", "per-slide expression fraction floor"},
    {"frac_global", "0.6", "global expression fraction floor"},
    {"min_gene_counts", "10", "gene total count floor"},
    {"max_gene_counts", "1000000", "gene total count ceiling"},
    {"k_genes", "128", "genes retained by spatial autocorrelation rank"},
    {"moran_k", "6", "spatial weight graph neighbors"},
    {"combat_enabled", "true", "apply batch correction"},
    {"combat_shrinkage", "false", "adjust with EB-shrunk effects"},
};

int cmd_preprocess(const Resolved& cfg) {
  SlideDataset raw = load_dataset(cfg.str("dataset"));
  PipelineConfig pc;
  pc.filter.min_counts = cfg.integer("min_counts");
  pc.filter.max_counts = cfg.integer("max_counts");
  pc.filter.min_expr_fraction_slide = cfg.number("frac_slide");
  pc.filter.min_expr_fraction_global = cfg.number("frac_global");
  pc.filter.min_gene_counts = cfg.integer("min_gene_counts");
  pc.filter.max_gene_counts = cfg.integer("max_gene_counts");
  pc.k_genes = static_cast<int>(cfg.integer("k_genes"));
  pc.moran_k = static_cast<int>(cfg.integer("moran_k"));
  pc.combat_enabled = cfg.boolean("combat_enabled");
  pc.combat_shrinkage = cfg.boolean("combat_shrinkage");

  const fs::path dir = make_out_dir(cfg);
  auto [processed, report] = preprocess_pipeline(raw, pc);
  save_dataset(processed, dir);
  write_qc_report(dir / "qc_report.json", report);
  cfg.snapshot(dir);
  std::cout << "preprocessed: " << report.spots_before << " -> " << report.spots_after
            << " spots, " << report.genes_before << " -> " << report.genes_after << " genes\n";
  return kExitOk;
}

const std::vector<OptionSpec> kTrainSpecs = {
    {"dataset", nullptr, "processed dataset directory"},
    {"out", nullptr, "output directory"},
    {"lr", "0.001", "learning rate (ignored with --lr-sweep)"},
    {"lr_sweep", "false", "sweep ten log-spaced rates in [1e-5, 1e-2]"},
    {"max_iters", "10000", "training iterations"},
    {"batch_size", "256", "minibatch size"},
    {"eval_interval", "100", "validation cadence"},
    {"hops", "2", "neighborhood radius (0..3)"},
    {"mask_rho", "0.3", "random hiding fraction"},
    {"dim", "128", "transformer width"},
    {"layers", "2", "encoder blocks"},
    {"heads", "4", "attention heads"},
    {"ffn_width", "0", "feed-forward width (0 = 4*dim)"},
    {"scored_genes", "0", "maskable gene prefix (0 = all; context variant)"},
    {"max_hops", "4", "median pre-completion radius"},
    {"min_observed", "1", "median region sufficiency threshold"},
    {"seed", "42", "random seed"},
};

void write_history(const fs::path& file, const TrainHistory& history) {
  std::string out = "iteration\ttrain_loss\tval_mse\n";
  std::map<int, double> val;
  for (const EvalPoint& p : history.val_points) val[p.iteration] = p.val_mse;
  if (val.count(0)) {
    out += "0\t-\t" + std::to_string(val[0]) + "\n";
  }
  for (std::size_t i = 0; i < history.train_loss.size(); ++i) {
    const int iter = static_cast<int>(i) + 1;
    out += std::to_string(iter);
    out += '\t';
    out += std::to_string(history.train_loss[i]);
    out += '\t';
    out += val.count(iter) ? std::to_string(val[iter]) : "-";
    out += '\n';
  }
  std::ofstream f(file, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + file.string());
  f << out;
}

int cmd_train(const Resolved& cfg) {
  SlideDataset ds = load_dataset(cfg.str("dataset"));
  SlideDataset completed = median_complete_dataset(ds, median_config(cfg));

  TrainConfig tc;
  tc.lr = cfg.number("lr");
  tc.max_iters = static_cast<int>(cfg.integer("max_iters"));
  tc.batch_size = static_cast<int>(cfg.integer("batch_size"));
  tc.eval_interval = static_cast<int>(cfg.integer("eval_interval"));
  tc.hops = static_cast<int>(cfg.integer("hops"));
  tc.mask_rho = cfg.number("mask_rho");
  tc.dim = static_cast<int>(cfg.integer("dim"));
  tc.layers = static_cast<int>(cfg.integer("layers"));
  tc.heads = static_cast<int>(cfg.integer("heads"));
  tc.ffn_width = static_cast<int>(cfg.integer("ffn_width"));
  tc.scored_genes = static_cast<int>(cfg.integer("scored_genes"));
  tc.seed = cfg.seed("seed");

  const fs::path dir = make_out_dir(cfg);
  TrainResult result;
  if (cfg.boolean("lr_sweep")) {
    std::vector<TrainHistory> runs;
    result = train_lr_sweep(completed, tc, &runs);
    std::string tsv = "lr\tbest_iteration\tbest_val_mse\n";
    for (const TrainHistory& h : runs) {
      tsv += std::to_string(h.lr) + "\t" + std::to_string(h.best_iteration) + "\t" +
             std::to_string(h.best_val_mse) + "\n";
    }
    std::ofstream f(dir / "sweep_runs.tsv", std::ios::binary | std::ios::trunc);
    f << tsv;
  } else {
    result = train(completed, tc);
  }

  save_checkpoint(dir / "model.ckpt", result.model, ds.genes, tc.seed);
  write_history(dir / "history.tsv", result.history);
  cfg.snapshot(dir);
  std::cout << "trained: lr " << result.history.lr << ", best val mse "
            << result.history.best_val_mse << " at iteration " << result.history.best_iteration
            << "\n";
  return kExitOk;
}

const std::vector<OptionSpec> kCompleteSpecs = {
    {"dataset", nullptr, "processed dataset directory"},
    {"out", nullptr, "output directory"},
    {"method", "median", "median | spackle"},
    {"model", "", "checkpoint (for --method spackle)"},
    {"max_hops", "4", "median radius"},
    {"min_observed", "1", "median sufficiency threshold"},
    {"seed", "42", "random seed"},
};

int cmd_complete(const Resolved& cfg) {
  SlideDataset ds = load_dataset(cfg.str("dataset"));
  const std::string method = cfg.str("method");
  const fs::path dir = make_out_dir(cfg);
  const MedianConfig mc = median_config(cfg);

  SlideDataset out = ds;
  if (method == "median") {
    const auto medians = global_gene_medians(ds.slides_in(Split::kTrain));
    for (std::size_t s = 0; s < ds.slides.size(); ++s) {
      const auto family = build_disc_family(ds.slides[s], mc.max_hops);
      MedianResult res = median_complete(ds.slides[s], family, mc, medians);
      out.slides[s] = res.slide;
      Matrix mask = res.filled.cast<float>().matrix();
      write_float_tsv(dir / (ds.slides[s].slide_id + "_completed_by_median.tsv"), ds.genes,
                      mask);
    }
  } else if (method == "spackle") {
    auto model = load_model_if_needed(cfg, ds, true);
    SlideDataset pre = median_complete_dataset(ds, mc);
    for (std::size_t s = 0; s < pre.slides.size(); ++s) {
      const NeighborIndex idx = build_neighbor_index(pre.slides[s], model->cfg.hops);
      out.slides[s] = infer_complete(*model, pre.slides[s], idx);
    }
  } else {
    throw ConfigError("complete: method must be 'median' or 'spackle'");
  }

  save_dataset(out, dir / "completed");
  cfg.snapshot(dir);
  std::cout << "completed dataset written with method '" << method << "'\n";
  return kExitOk;
}

const std::vector<OptionSpec> kEvaluateSpecs = {
    {"dataset", nullptr, "processed dataset with observed ground truth"},
    {"out", nullptr, "output directory"},
    {"method", "spackle", "spackle | median | global-median"},
    {"model", "", "checkpoint (for spackle)"},
    {"rho", "0.3", "masking fraction"},
    {"assays", "10", "assays per evaluation"},
    {"base_seed", "42", "assay i uses base_seed + i"},
    {"split", "auto", "evaluation split: auto | train | val | test"},
    {"scatter", "false", "also write scatter.tsv"},
    {"max_hops", "4", "median radius"},
    {"min_observed", "1", "median sufficiency threshold"},
};

int cmd_evaluate(const Resolved& cfg) {
  SlideDataset ds = load_dataset(cfg.str("dataset"));
  const Split split = parse_eval_split(cfg, ds);
  const std::string method_name = cfg.str("method");
  auto model = load_model_if_needed(cfg, ds, method_name == "spackle");
  auto method = make_method(method_name, ds, model ? &*model : nullptr, median_config(cfg));

  const fs::path dir = make_out_dir(cfg);
  EvalReport report = masked_evaluation(*method, ds, split, cfg.number("rho"),
                                        static_cast<int>(cfg.integer("assays")),
                                        cfg.seed("base_seed"));
  write_report(report, dir);
  if (cfg.boolean("scatter")) {
    scatter_export(*method, ds, split, cfg.number("rho"), cfg.seed("base_seed"),
                   dir / "scatter.tsv");
  }
  cfg.snapshot(dir);
  std::cout << "evaluated " << method_name << ": mean mse " << report.mean_mse << ", mean pcc "
            << report.mean_pcc << " over " << report.per_assay.size() << " assays\n";
  return kExitOk;
}

const std::vector<OptionSpec> kSweepSpecs = {
    {"dataset", nullptr, "processed dataset with observed ground truth"},
    {"out", nullptr, "output directory"},
    {"methods", "median,spackle", "comma list: spackle | median | global-median"},
    {"model", "", "checkpoint (for spackle)"},
    {"fractions", "0.1,0.2,0.3,0.4,0.5,0.6,0.7", "masking fractions"},
    {"assays", "10", "assays per (fraction, method)"},
    {"base_seed", "42", "assay seed base"},
    {"split", "auto", "evaluation split"},
    {"max_hops", "4", "median radius"},
    {"min_observed", "1", "median sufficiency threshold"},
};

int cmd_sweep(const Resolved& cfg) {
  SlideDataset ds = load_dataset(cfg.str("dataset"));
  const Split split = parse_eval_split(cfg, ds);
  const auto names = get_string_list(cfg.values(), "methods");
  const bool needs_model =
      std::find(names.begin(), names.end(), "spackle") != names.end();
  auto model = load_model_if_needed(cfg, ds, needs_model);

  std::vector<std::unique_ptr<CompletionMethod>> owned;
  std::vector<CompletionMethod*> methods;
  for (const std::string& name : names) {
    owned.push_back(make_method(name, ds, model ? &*model : nullptr, median_config(cfg)));
    methods.push_back(owned.back().get());
  }

  const fs::path dir = make_out_dir(cfg);
  const auto rows = corruption_sweep(ds, split, get_double_list(cfg.values(), "fractions"),
                                     methods, static_cast<int>(cfg.integer("assays")),
                                     cfg.seed("base_seed"));
  write_sweep_tsv(rows, dir / "sweep.tsv");
  cfg.snapshot(dir);
  std::cout << "sweep written: " << rows.size() << " rows\n";
  return kExitOk;
}

const std::vector<OptionSpec> kExportMapsSpecs = {
    {"dataset", nullptr, "processed dataset"},
    {"out", nullptr, "output directory"},
    {"gene", nullptr, "gene id to render"},
    {"slide", "", "slide id (default: first evaluation slide)"},
    {"methods", "median", "comma list of methods to render"},
    {"model", "", "checkpoint (for spackle)"},
    {"rho", "0.3", "masking fraction"},
    {"seed", "42", "assay seed"},
    {"split", "auto", "used when --slide is empty"},
    {"max_hops", "4", "median radius"},
    {"min_observed", "1", "median sufficiency threshold"},
};

int cmd_export_maps(const Resolved& cfg) {
  SlideDataset ds = load_dataset(cfg.str("dataset"));
  int slide_index = -1;
  if (cfg.str("slide").empty()) {
    const Split split = parse_eval_split(cfg, ds);
    slide_index = ds.slide_indices_in(split)[0];
  } else {
    for (std::size_t s = 0; s < ds.slides.size(); ++s) {
      if (ds.slides[s].slide_id == cfg.str("slide")) slide_index = static_cast<int>(s);
    }
    if (slide_index < 0) throw ConfigError("unknown slide '" + cfg.str("slide") + "'");
  }

  const auto names = get_string_list(cfg.values(), "methods");
  const bool needs_model = std::find(names.begin(), names.end(), "spackle") != names.end();
  auto model = load_model_if_needed(cfg, ds, needs_model);
  std::vector<std::unique_ptr<CompletionMethod>> owned;
  std::vector<CompletionMethod*> methods;
  for (const std::string& name : names) {
    owned.push_back(make_method(name, ds, model ? &*model : nullptr, median_config(cfg)));
    methods.push_back(owned.back().get());
  }

  const fs::path dir = make_out_dir(cfg);
  expression_map_export(ds, slide_index, cfg.str("gene"), methods, cfg.number("rho"),
                        cfg.seed("seed"), dir);
  cfg.snapshot(dir);
  std::cout << "expression maps written for gene " << cfg.str("gene") << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

void print_usage() {
  std::cout <<
      "usage: spackle <command> [--config file] [--key value ...]\n"
      "\n"
      "commands:\n"
      "  synth        generate a synthetic hex-grid dataset with dropout\n"
      "  preprocess   filter, normalize, rank genes, batch-correct\n"
      "  train        train a completion model (optionally --lr-sweep)\n"
      "  complete     fill missing values (--method median | spackle)\n"
      "  evaluate     masked evaluation with averaged assays\n"
      "  sweep        corruption-robustness sweep over masking fractions\n"
      "  export-maps  per-spot expression tables for one gene\n"
      "\n"
      "Every run writes resolved_config.txt; rerunning a command with\n"
      "--config <that file> reproduces it. SPACKLE_SEED overrides the\n"
      "default seed.\n";
}

const std::map<std::string, std::pair<const std::vector<OptionSpec>*, int (*)(const Resolved&)>>
    kCommands = {
        {"synth", {&kSynthSpecs, cmd_synth}},
        {"preprocess", {&kPreprocessSpecs, cmd_preprocess}},
        {"train", {&kTrainSpecs, cmd_train}},
        {"complete", {&kCompleteSpecs, cmd_complete}},
        {"evaluate", {&kEvaluateSpecs, cmd_evaluate}},
        {"sweep", {&kSweepSpecs, cmd_sweep}},
        {"export-maps", {&kExportMapsSpecs, cmd_export_maps}},
};

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2 || std::string(argv[1]) == "--help" || std::string(argv[1]) == "-h") {
    print_usage();
    return argc < 2 ? kExitInput : kExitOk;
  }
  const std::string command = argv[1];
  const auto it = kCommands.find(command);
  if (it == kCommands.end()) {
    std::cerr << "error: unknown command '" << command << "'\n";
    print_usage();
    return kExitInput;
  }

  try {
    std::vector<std::string> args(argv + 2, argv + argc);
    Resolved cfg(command, *it->second.first, args);
    return it->second.second(cfg);
  } catch (const TrainError& e) {
    std::cerr << "error (training): " << e.what() << "\n";
    return kExitTraining;
  } catch (const ModelMismatchError& e) {
    std::cerr << "error (model mismatch): " << e.what() << "\n";
    return kExitModelMismatch;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kExitInternal;
  }
}
