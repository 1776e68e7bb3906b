#include "spackle/synthgen.hpp"

#include <cmath>
#include <numbers>

#include "spackle/errors.hpp"
#include "spackle/rng.hpp"

namespace spackle {

namespace {

constexpr double kHexRowStep = 0.8660254037844386;  // sqrt(3)/2
constexpr int kFourierFeatures = 64;
constexpr double kBaseLogMean = 3.0;
constexpr double kFieldSd = 1.0;

}  // namespace

SynthOutput generate(const SynthConfig& cfg) {
  if (cfg.n_slides < 1 || cfg.grid_rows < 2 || cfg.grid_cols < 2 || cfg.n_genes < 1) {
    throw ConfigError("synth: grid must be at least 2x2 with >= 1 slide and gene");
  }
  if (cfg.correlation_length <= 0.0) throw ConfigError("synth: correlation_length must be > 0");
  if (cfg.dropout_rate < 0.0 || cfg.dropout_rate >= 1.0) {
    throw ConfigError("synth: dropout_rate must lie in [0, 1)");
  }
  if (!cfg.batch_shift.empty() && static_cast<int>(cfg.batch_shift.size()) != cfg.n_slides) {
    throw ConfigError("synth: batch_shift must have one entry per slide");
  }
  if (!cfg.batch_scale.empty() && static_cast<int>(cfg.batch_scale.size()) != cfg.n_slides) {
    throw ConfigError("synth: batch_scale must have one entry per slide");
  }
  for (double s : cfg.batch_scale) {
    if (s <= 0.0) throw ConfigError("synth: batch_scale must be positive");
  }

  SynthOutput out;
  out.ds.name = "synthetic";
  out.ds.organism = "synthetic";
  out.ds.tissue = "synthetic";
  for (int j = 0; j < cfg.n_genes; ++j) out.ds.genes.push_back("G" + std::to_string(j));

  // gene-level parameters shared across slides
  Rng gene_rng(hash_combine(cfg.seed, stream_id("synth-genes")));
  std::vector<double> gene_mean(static_cast<std::size_t>(cfg.n_genes));
  for (double& m : gene_mean) m = kBaseLogMean + 0.5 * gene_rng.normal();

  for (int s = 0; s < cfg.n_slides; ++s) {
    Slide slide;
    slide.slide_id = "s" + std::to_string(s);
    for (int r = 0; r < cfg.grid_rows; ++r) {
      for (int c = 0; c < cfg.grid_cols; ++c) {
        Spot sp;
        sp.spot_id = slide.slide_id + ":" + std::to_string(r) + "_" + std::to_string(c);
        sp.array_row = r;
        sp.array_col = c;
        sp.x = static_cast<double>(c) + ((r % 2) ? 0.5 : 0.0);
        sp.y = static_cast<double>(r) * kHexRowStep;
        slide.spots.push_back(std::move(sp));
      }
    }
    const int n = slide.n_spots();
    const double shift = cfg.batch_shift.empty() ? 0.0 : cfg.batch_shift[static_cast<std::size_t>(s)];
    const double scale = cfg.batch_scale.empty() ? 1.0 : cfg.batch_scale[static_cast<std::size_t>(s)];

    CountMatrix counts(n, cfg.n_genes);
    CountMatrix truth(n, cfg.n_genes);
    Rng slide_rng(hash_combine(cfg.seed, hash_combine(stream_id("synth-slide"),
                                                      static_cast<std::uint64_t>(s))));
    const CounterRng drop_rng(cfg.seed,
                              hash_combine(stream_id("synth-dropout"),
                                           static_cast<std::uint64_t>(s)));

    // random Fourier features of the squared-exponential kernel:
    // field(p) = sd * sqrt(2/M) * sum_m alpha_m cos(w_m . p + b_m),
    // w ~ N(0, I / ell^2), b ~ U[0, 2pi)
    const double inv_ell = 1.0 / cfg.correlation_length;
    std::vector<double> wx(kFourierFeatures), wy(kFourierFeatures), wb(kFourierFeatures),
        alpha(kFourierFeatures);
    const double amp = kFieldSd * std::sqrt(2.0 / static_cast<double>(kFourierFeatures));

    for (int j = 0; j < cfg.n_genes; ++j) {
      for (int m = 0; m < kFourierFeatures; ++m) {
        wx[static_cast<std::size_t>(m)] = slide_rng.normal() * inv_ell;
        wy[static_cast<std::size_t>(m)] = slide_rng.normal() * inv_ell;
        wb[static_cast<std::size_t>(m)] = 2.0 * std::numbers::pi * slide_rng.uniform();
        alpha[static_cast<std::size_t>(m)] = slide_rng.normal();
      }
      for (int i = 0; i < n; ++i) {
        double field = 0.0;
        for (int m = 0; m < kFourierFeatures; ++m) {
          field += alpha[static_cast<std::size_t>(m)] *
                   std::cos(wx[static_cast<std::size_t>(m)] * slide.spots[static_cast<std::size_t>(i)].x +
                            wy[static_cast<std::size_t>(m)] * slide.spots[static_cast<std::size_t>(i)].y +
                            wb[static_cast<std::size_t>(m)]);
        }
        double latent = gene_mean[static_cast<std::size_t>(j)] + amp * field +
                        cfg.noise_sd * slide_rng.normal();
        latent = shift + scale * latent;
        if (!std::isfinite(latent)) throw DataError("synth: non-finite latent value");
        const double value = std::round(std::exp(std::min(latent, 20.0)));
        const auto count = static_cast<std::int64_t>(value);
        truth(i, j) = count;
        const std::uint64_t cell = static_cast<std::uint64_t>(j) * static_cast<std::uint64_t>(n) +
                                   static_cast<std::uint64_t>(i);
        counts(i, j) =
            (cfg.dropout_rate > 0.0 && drop_rng.bernoulli(cfg.dropout_rate, cell)) ? 0 : count;
      }
    }
    slide.raw_counts = std::move(counts);
    out.ds.slides.push_back(std::move(slide));
    out.truth.push_back(std::move(truth));
    // split assignment: first slide trains, second validates, rest test
    out.ds.split_map[out.ds.slides.back().slide_id] =
        s == 0 ? Split::kTrain : (s == 1 ? Split::kVal : Split::kTest);
  }

  validate(out.ds);
  return out;
}

CorruptionResult inject_corruption(const SlideDataset& ds, double fraction, std::uint64_t seed) {
  if (fraction <= 0.0 || fraction >= 1.0) {
    throw ConfigError("inject_corruption: fraction must lie in (0, 1)");
  }
  CorruptionResult out;
  out.ds = ds;
  for (std::size_t s = 0; s < ds.slides.size(); ++s) {
    Slide& slide = out.ds.slides[s];
    if (!slide.has_expr()) throw DataError("inject_corruption: slide lacks expression");
    const Eigen::Index rows = slide.expr.rows();
    const Eigen::Index cols = slide.expr.cols();

    std::vector<std::pair<Eigen::Index, Eigen::Index>> observed_cells;
    for (Eigen::Index j = 0; j < cols; ++j) {
      for (Eigen::Index i = 0; i < rows; ++i) {
        if (slide.observed(i, j)) observed_cells.emplace_back(i, j);
      }
    }
    const auto n_obs = static_cast<std::int64_t>(observed_cells.size());
    const auto n_hide = static_cast<std::int64_t>(
        std::llround(fraction * static_cast<double>(n_obs)));
    if (n_obs - n_hide <= 0) {
      throw DataError("inject_corruption: fraction leaves zero observed cells on slide '" +
                      slide.slide_id + "'");
    }

    // partial Fisher-Yates over the observed-cell list
    Rng rng(hash_combine(seed, hash_combine(stream_id("inject"), static_cast<std::uint64_t>(s))));
    BoolMatrix hidden = BoolMatrix::Constant(rows, cols, false);
    for (std::int64_t k = 0; k < n_hide; ++k) {
      const auto pick = k + static_cast<std::int64_t>(rng.uniform_int(
                                static_cast<std::uint64_t>(n_obs - k)));
      std::swap(observed_cells[static_cast<std::size_t>(k)],
                observed_cells[static_cast<std::size_t>(pick)]);
      const auto [i, j] = observed_cells[static_cast<std::size_t>(k)];
      hidden(i, j) = true;
      slide.expr(i, j) = 0.0f;
      slide.observed(i, j) = false;
    }
    out.hidden.push_back(std::move(hidden));
  }
  return out;
}

}  // namespace spackle
