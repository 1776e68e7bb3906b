#include "spackle/train.hpp"

#include <algorithm>
#include <cmath>

#include "spackle/errors.hpp"
#include "spackle/neighbors.hpp"

namespace spackle {

namespace {

struct SamplePool {
  // flattened (slide, spot) pairs plus per-slide neighbor indices
  std::vector<std::pair<int, int>> pairs;
  std::vector<NeighborIndex> index;  // one per slide in ds order, empty if unused
};

SamplePool build_pool(const SlideDataset& ds, Split split, int hops,
                      std::vector<NeighborIndex>& shared_index) {
  SamplePool pool;
  if (shared_index.empty()) {
    shared_index.reserve(ds.slides.size());
    for (const Slide& s : ds.slides) shared_index.push_back(build_neighbor_index(s, hops));
  }
  for (int si = 0; si < static_cast<int>(ds.slides.size()); ++si) {
    if (ds.split_of(ds.slides[static_cast<std::size_t>(si)].slide_id) != split) continue;
    for (int i = 0; i < ds.slides[static_cast<std::size_t>(si)].n_spots(); ++i) {
      pool.pairs.emplace_back(si, i);
    }
  }
  return pool;
}

// Token rows for one sample: center first, neighbors in index order, padded
// slots zero. Writes g-wide rows into x/target starting at `row0` and fills
// pad flags and the per-token observed mask.
void emit_sample(const SlideDataset& ds, const std::vector<NeighborIndex>& index, int slide_idx,
                 int spot, Eigen::Index row0, Eigen::MatrixXf& x, BoolMatrix& observed,
                 std::vector<std::uint8_t>& pad) {
  const Slide& slide = ds.slides[static_cast<std::size_t>(slide_idx)];
  const NeighborIndex& idx = index[static_cast<std::size_t>(slide_idx)];
  const int T = idx.target_count + 1;

  x.row(row0) = slide.expr.row(spot);
  observed.row(row0) = slide.observed.row(spot);
  pad[static_cast<std::size_t>(row0)] = 0;
  for (int c = 0; c < idx.target_count; ++c) {
    const Eigen::Index r = row0 + 1 + c;
    if (idx.pad(spot, c)) {
      x.row(r).setZero();
      observed.row(r).setConstant(false);
      pad[static_cast<std::size_t>(r)] = 1;
    } else {
      const int nb = idx.neighbors(spot, c);
      x.row(r) = slide.expr.row(nb);
      observed.row(r) = slide.observed.row(nb);
      pad[static_cast<std::size_t>(r)] = 0;
    }
  }
  (void)T;
}

struct AdamState {
  SpackleModel m;
  SpackleModel v;
};

void adam_step(SpackleModel& model, const SpackleModel& grads, AdamState& state, int t,
               const TrainConfig& cfg) {
  const auto gviews = grads.parameter_views();
  auto pviews = model.parameter_views();
  auto mviews = state.m.parameter_views();
  auto vviews = state.v.parameter_views();
  const float b1 = static_cast<float>(cfg.beta1);
  const float b2 = static_cast<float>(cfg.beta2);
  const float eps = static_cast<float>(cfg.adam_eps);
  const float bias1 = 1.0f - std::pow(b1, static_cast<float>(t));
  const float bias2 = 1.0f - std::pow(b2, static_cast<float>(t));
  const float lr = static_cast<float>(cfg.lr);
  for (std::size_t k = 0; k < pviews.size(); ++k) {
    float* p = pviews[k].first;
    const float* g = gviews[k].first;
    float* m = mviews[k].first;
    float* v = vviews[k].first;
    const std::ptrdiff_t n = pviews[k].second;
    for (std::ptrdiff_t i = 0; i < n; ++i) {
      m[i] = b1 * m[i] + (1.0f - b1) * g[i];
      v[i] = b2 * v[i] + (1.0f - b2) * g[i] * g[i];
      const float mhat = m[i] / bias1;
      const float vhat = v[i] / bias2;
      p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

void zero_params(SpackleModel& m) {
  for (auto [p, n] : m.parameter_views()) std::fill(p, p + n, 0.0f);
}

// Validation MSE on hidden center-column cells under a fixed mask stream.
double validation_mse(const SpackleModel& model, const SlideDataset& ds,
                      const std::vector<NeighborIndex>& index, const SamplePool& val,
                      const TrainConfig& cfg) {
  if (val.pairs.empty()) throw TrainError("validation split is empty");
  const int g = static_cast<int>(ds.genes.size());
  const int scored = cfg.scored_genes > 0 ? cfg.scored_genes : g;
  const int T = hop_target_count(cfg.hops) + 1;
  const CounterRng mask_rng(cfg.seed, "val-mask");

  double total = 0.0;
  std::int64_t cells = 0;
  const int chunk = cfg.batch_size;
  Eigen::MatrixXf x, target;
  BoolMatrix observed;
  std::vector<std::uint8_t> pad;
  for (std::size_t start = 0; start < val.pairs.size(); start += static_cast<std::size_t>(chunk)) {
    const int b = static_cast<int>(
        std::min<std::size_t>(static_cast<std::size_t>(chunk), val.pairs.size() - start));
    x.resize(static_cast<Eigen::Index>(b) * T, g);
    observed.resize(static_cast<Eigen::Index>(b) * T, g);
    pad.assign(static_cast<std::size_t>(b) * static_cast<std::size_t>(T), 0);
    for (int s = 0; s < b; ++s) {
      auto [si, spot] = val.pairs[start + static_cast<std::size_t>(s)];
      emit_sample(ds, index, si, spot, static_cast<Eigen::Index>(s) * T, x, observed, pad);
    }
    target = x;

    // fixed mask per (sample identity, token, gene)
    BoolMatrix hidden(static_cast<Eigen::Index>(b) * T, g);
    hidden.setConstant(false);
    for (int s = 0; s < b; ++s) {
      auto [si, spot] = val.pairs[start + static_cast<std::size_t>(s)];
      const std::uint64_t sample_key =
          hash_combine(static_cast<std::uint64_t>(si) << 32 | static_cast<std::uint64_t>(spot),
                       stream_id("val-sample"));
      for (int t = 0; t < T; ++t) {
        const Eigen::Index r = static_cast<Eigen::Index>(s) * T + t;
        if (pad[static_cast<std::size_t>(r)]) continue;
        for (int j = 0; j < scored; ++j) {
          const std::uint64_t counter =
              sample_key + static_cast<std::uint64_t>(t) * static_cast<std::uint64_t>(g) +
              static_cast<std::uint64_t>(j);
          if (observed(r, j) && mask_rng.bernoulli(cfg.mask_rho, counter)) {
            hidden(r, j) = true;
            x(r, j) = 0.0f;
          }
        }
      }
    }

    Eigen::MatrixXf pred = forward_tokens<float>(model, x, T, pad);
    for (int s = 0; s < b; ++s) {
      const Eigen::Index center = static_cast<Eigen::Index>(s) * T;
      for (int j = 0; j < scored; ++j) {
        if (!hidden(center, j)) continue;
        const double diff =
            static_cast<double>(pred(center, j)) - static_cast<double>(target(center, j));
        total += diff * diff;
        ++cells;
      }
    }
  }
  if (cells == 0) throw TrainError("validation mask hid no center cells");
  return total / static_cast<double>(cells);
}

}  // namespace

std::vector<double> lr_grid() {
  std::vector<double> grid;
  for (int k = 0; k < 10; ++k) {
    grid.push_back(std::pow(10.0, -5.0 + 3.0 * static_cast<double>(k) / 9.0));
  }
  return grid;
}

TrainResult train(const SlideDataset& ds, const TrainConfig& cfg) {
  if (cfg.batch_size <= 0 || cfg.max_iters <= 0) throw ConfigError("train: bad batch/iterations");
  if (cfg.mask_rho <= 0.0 || cfg.mask_rho >= 1.0) throw ConfigError("train: rho must be in (0,1)");
  if (cfg.hops < 0 || cfg.hops > 3) throw ConfigError("train: hops must be in {0,1,2,3}");

  const int g = static_cast<int>(ds.genes.size());
  ModelConfig mc;
  mc.genes = g;
  mc.dim = cfg.dim;
  mc.layers = cfg.layers;
  mc.heads = cfg.heads;
  mc.ffn_width = cfg.ffn_width;
  mc.scored_genes = cfg.scored_genes;
  mc.hops = cfg.hops;
  mc.check();

  std::vector<NeighborIndex> index;
  SamplePool train_pool = build_pool(ds, Split::kTrain, cfg.hops, index);
  SamplePool val_pool = build_pool(ds, Split::kVal, cfg.hops, index);
  if (train_pool.pairs.empty()) throw TrainError("training split is empty");
  if (val_pool.pairs.empty()) throw TrainError("validation split is empty");

  SpackleModel model = SpackleModel::init(mc, cfg.seed);
  SpackleModel grads = SpackleModel::zeros(mc);
  AdamState adam{SpackleModel::zeros(mc), SpackleModel::zeros(mc)};

  const int T = hop_target_count(cfg.hops) + 1;
  const int B = cfg.batch_size;
  const int scored = mc.effective_scored();
  const CounterRng batch_rng(cfg.seed, "batch");
  const CounterRng mask_rng(cfg.seed, "train-mask");

  TrainHistory history;
  history.lr = cfg.lr;
  history.val_points.push_back({0, validation_mse(model, ds, index, val_pool, cfg)});
  SpackleModel best = model;
  history.best_iteration = 0;
  history.best_val_mse = history.val_points[0].val_mse;

  Eigen::MatrixXf x(static_cast<Eigen::Index>(B) * T, g), target;
  BoolMatrix observed(static_cast<Eigen::Index>(B) * T, g);
  std::vector<std::uint8_t> pad(static_cast<std::size_t>(B) * static_cast<std::size_t>(T));
  ForwardWorkspace<float> ws;

  for (int iter = 0; iter < cfg.max_iters; ++iter) {
    for (int s = 0; s < B; ++s) {
      const std::uint64_t draw = static_cast<std::uint64_t>(iter) * static_cast<std::uint64_t>(B) +
                                 static_cast<std::uint64_t>(s);
      const auto pick = batch_rng.uniform_int(train_pool.pairs.size(), draw);
      auto [si, spot] = train_pool.pairs[static_cast<std::size_t>(pick)];
      emit_sample(ds, index, si, spot, static_cast<Eigen::Index>(s) * T, x, observed, pad);
    }
    target = x;

    // fresh candidate mask per sample per step (Bernoulli rho), restricted to
    // observed cells
    for (int s = 0; s < B; ++s) {
      const std::uint64_t draw = static_cast<std::uint64_t>(iter) * static_cast<std::uint64_t>(B) +
                                 static_cast<std::uint64_t>(s);
      const std::uint64_t base =
          draw * static_cast<std::uint64_t>(T) * static_cast<std::uint64_t>(g);
      for (int t = 0; t < T; ++t) {
        const Eigen::Index r = static_cast<Eigen::Index>(s) * T + t;
        if (pad[static_cast<std::size_t>(r)]) continue;
        for (int j = 0; j < scored; ++j) {
          const std::uint64_t counter = base + static_cast<std::uint64_t>(t) *
                                                   static_cast<std::uint64_t>(g) +
                                        static_cast<std::uint64_t>(j);
          if (observed(r, j) && mask_rng.bernoulli(cfg.mask_rho, counter)) x(r, j) = 0.0f;
        }
      }
    }

    Eigen::MatrixXf pred = forward_tokens<float>(model, x, T, pad, &ws);
    Eigen::MatrixXf d_out;
    const double loss = token_mse<float>(pred, target, pad, &d_out);
    if (!std::isfinite(loss)) {
      throw TrainError("training diverged: non-finite loss at iteration " +
                       std::to_string(iter));
    }
    history.train_loss.push_back(loss);

    zero_params(grads);
    backward_tokens<float>(model, ws, d_out, grads);
    adam_step(model, grads, adam, iter + 1, cfg);

    const int done = iter + 1;
    if (done % cfg.eval_interval == 0 || done == cfg.max_iters) {
      const double val = validation_mse(model, ds, index, val_pool, cfg);
      history.val_points.push_back({done, val});
      if (val < history.best_val_mse) {
        history.best_val_mse = val;
        history.best_iteration = done;
        best = model;
      }
    }
  }

  return {std::move(best), std::move(history)};
}

TrainResult train_lr_sweep(const SlideDataset& ds, TrainConfig cfg,
                           std::vector<TrainHistory>* runs) {
  std::optional<TrainResult> best;
  for (double lr : lr_grid()) {
    cfg.lr = lr;
    TrainResult result = train(ds, cfg);
    if (runs) runs->push_back(result.history);
    if (!best || result.history.best_val_mse < best->history.best_val_mse) {
      best = std::move(result);
    }
  }
  return std::move(*best);
}

TrainResult train_context_variant(const SlideDataset& extended,
                                  const std::vector<std::string>& scored_panel, TrainConfig cfg) {
  if (scored_panel.size() > extended.genes.size()) {
    throw ModelMismatchError("context variant: scored panel larger than the extended panel");
  }
  for (std::size_t i = 0; i < scored_panel.size(); ++i) {
    if (extended.genes[i] != scored_panel[i]) {
      throw ModelMismatchError(
          "context variant: extended panel must start with the scored panel (mismatch at '" +
          scored_panel[i] + "')");
    }
  }
  cfg.scored_genes = static_cast<int>(scored_panel.size());
  return train(extended, cfg);
}

CompletionOutput infer_complete_spot(const SpackleModel& model, const Neighborhood& nb) {
  if (nb.genes() != model.cfg.genes) {
    throw ModelMismatchError("infer: neighborhood gene dimension does not match the model");
  }
  const auto T = static_cast<int>(nb.tokens());
  const Eigen::Index g = nb.genes();
  const int scored = model.cfg.effective_scored();

  // tokens as rows; zero originally-missing entries (no random mask)
  Eigen::MatrixXf x(T, g);
  std::vector<std::uint8_t> pad(static_cast<std::size_t>(T));
  for (int t = 0; t < T; ++t) {
    x.row(t) = nb.observed.col(t).select(nb.expr.col(t), Matrix::Zero(g, 1)).transpose();
    pad[static_cast<std::size_t>(t)] = nb.pad_cols(t) ? 1 : 0;
  }
  Eigen::MatrixXf pred = forward_tokens<float>(model, x, T, pad);

  CompletionOutput out;
  out.reconstructed = pred.transpose();
  out.completed = nb.expr.col(0);
  out.replaced = Eigen::Array<bool, Eigen::Dynamic, 1>::Constant(g, false);
  for (Eigen::Index j = 0; j < g; ++j) {
    if (!nb.observed(j, 0) && j < scored) {
      out.completed(j) = pred(0, j);
      out.replaced(j) = true;
    }
  }
  return out;
}

Slide infer_complete(const SpackleModel& model, const Slide& completed_slide,
                     const NeighborIndex& idx) {
  if (completed_slide.expr.cols() != model.cfg.genes) {
    throw ModelMismatchError("infer: slide gene dimension does not match the model");
  }
  if (idx.neighbors.rows() != completed_slide.expr.rows()) {
    throw ConsistencyError("infer: neighbor index does not match the slide");
  }
  const int n = completed_slide.n_spots();
  const int T = idx.target_count + 1;
  const int g = model.cfg.genes;
  const int scored = model.cfg.effective_scored();
  const int chunk = 256;

  Slide out = completed_slide;
  Eigen::MatrixXf x;
  std::vector<std::uint8_t> pad;
  for (int start = 0; start < n; start += chunk) {
    const int b = std::min(chunk, n - start);
    x.resize(static_cast<Eigen::Index>(b) * T, g);
    pad.assign(static_cast<std::size_t>(b) * static_cast<std::size_t>(T), 0);
    for (int s = 0; s < b; ++s) {
      const int spot = start + s;
      const Eigen::Index row0 = static_cast<Eigen::Index>(s) * T;
      // token rows with originally-missing entries zeroed (no random mask)
      x.row(row0) = completed_slide.observed.row(spot)
                        .transpose()
                        .select(completed_slide.expr.row(spot).transpose(),
                                Matrix::Zero(g, 1))
                        .transpose();
      for (int c = 0; c < idx.target_count; ++c) {
        const Eigen::Index r = row0 + 1 + c;
        if (idx.pad(spot, c)) {
          x.row(r).setZero();
          pad[static_cast<std::size_t>(r)] = 1;
        } else {
          const int nb = idx.neighbors(spot, c);
          x.row(r) = completed_slide.observed.row(nb)
                         .transpose()
                         .select(completed_slide.expr.row(nb).transpose(), Matrix::Zero(g, 1))
                         .transpose();
        }
      }
    }
    const Eigen::MatrixXf pred = forward_tokens<float>(model, x, T, pad);
    for (int s = 0; s < b; ++s) {
      const int spot = start + s;
      for (int j = 0; j < scored; ++j) {
        if (!completed_slide.observed(spot, j)) {
          out.expr(spot, j) = pred(static_cast<Eigen::Index>(s) * T, j);
        }
      }
    }
  }
  return out;
}

}  // namespace spackle
