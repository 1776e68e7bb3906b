#pragma once

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <unsupported/Eigen/SpecialFunctions>

#include "spackle/errors.hpp"
#include "spackle/rng.hpp"

namespace spackle {

// Masked-completion transformer. Tokens are spot profiles: each column of a
// neighborhood matrix is mapped genes -> dim by an input adapter, runs
// through a pre-norm encoder stack (self-attention + feed-forward, residual
// connections, layer norm), and is mapped back dim -> genes by the output
// adapter. There is no positional encoding: token identity is carried purely
// by content, so permuting neighbor tokens permutes outputs identically.
//
// Batches are processed as row-stacked tokens: an [N x genes] matrix whose
// rows are groups of `tokens_per_sample` consecutive tokens, column 0's token
// first. Attention never attends to padded tokens, and padded rows are
// excluded from the loss.

struct ModelConfig {
  int genes = 0;
  int dim = 128;
  int layers = 2;
  int heads = 4;
  int ffn_width = 0;      // 0 -> 4 * dim
  int scored_genes = 0;   // 0 -> all genes maskable/scored; context variant sets fewer
  int hops = 2;           // neighborhood radius the model expects

  int effective_ffn() const { return ffn_width > 0 ? ffn_width : 4 * dim; }
  int effective_scored() const { return scored_genes > 0 ? scored_genes : genes; }
  void check() const {
    if (genes <= 0) throw ConfigError("model: genes must be positive");
    if (dim <= 0 || layers <= 0 || heads <= 0) throw ConfigError("model: bad shape");
    if (dim % heads != 0) throw ConfigError("model: dim must be divisible by heads");
    if (scored_genes < 0 || scored_genes > genes) throw ConfigError("model: bad scored_genes");
  }
};

inline constexpr double kLayerNormEps = 1e-5;

namespace detail {

template <typename Scalar>
Scalar gelu(Scalar x) {
  return Scalar(0.5) * x * (Scalar(1) + std::erf(x * Scalar(M_SQRT1_2)));
}

template <typename Scalar>
Scalar gelu_grad(Scalar x) {
  const Scalar cdf = Scalar(0.5) * (Scalar(1) + std::erf(x * Scalar(M_SQRT1_2)));
  const Scalar pdf = std::exp(Scalar(-0.5) * x * x) * Scalar(0.3989422804014327);
  return cdf + x * pdf;
}

// Matrix forms, SIMD-vectorized through Eigen's packet erf/exp.
template <typename Mat>
void gelu_matrix(const Mat& u, Mat& g) {
  using Scalar = typename Mat::Scalar;
  g = Scalar(0.5) * u.array() *
      (Scalar(1) + (u.array() * Scalar(M_SQRT1_2)).erf());
}

template <typename Mat>
void gelu_grad_matrix(const Mat& u, Mat& dg_inout) {
  using Scalar = typename Mat::Scalar;
  dg_inout.array() *= Scalar(0.5) * (Scalar(1) + (u.array() * Scalar(M_SQRT1_2)).erf()) +
                      u.array() * (Scalar(-0.5) * u.array().square()).exp() *
                          Scalar(0.3989422804014327);
}

}  // namespace detail

template <typename Scalar>
struct TransformerModelT {
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  struct Block {
    Vec ln1_gamma, ln1_beta;
    Mat wq, wk, wv, wo;  // [dim x dim]
    Vec bq, bk, bv, bo;
    Vec ln2_gamma, ln2_beta;
    Mat w1;  // [ffn x dim]
    Vec b1;
    Mat w2;  // [dim x ffn]
    Vec b2;
  };

  ModelConfig cfg;
  Mat w_in;  // [dim x genes]
  Vec b_in;
  std::vector<Block> blocks;
  Vec lnf_gamma, lnf_beta;
  Mat w_out;  // [genes x dim]
  Vec b_out;

  static TransformerModelT zeros(const ModelConfig& cfg) {
    cfg.check();
    TransformerModelT m;
    m.cfg = cfg;
    const int d = cfg.dim, g = cfg.genes, f = cfg.effective_ffn();
    m.w_in = Mat::Zero(d, g);
    m.b_in = Vec::Zero(d);
    m.blocks.resize(static_cast<std::size_t>(cfg.layers));
    for (Block& b : m.blocks) {
      b.ln1_gamma = Vec::Zero(d);
      b.ln1_beta = Vec::Zero(d);
      b.wq = Mat::Zero(d, d);
      b.wk = Mat::Zero(d, d);
      b.wv = Mat::Zero(d, d);
      b.wo = Mat::Zero(d, d);
      b.bq = Vec::Zero(d);
      b.bk = Vec::Zero(d);
      b.bv = Vec::Zero(d);
      b.bo = Vec::Zero(d);
      b.ln2_gamma = Vec::Zero(d);
      b.ln2_beta = Vec::Zero(d);
      b.w1 = Mat::Zero(f, d);
      b.b1 = Vec::Zero(f);
      b.w2 = Mat::Zero(d, f);
      b.b2 = Vec::Zero(d);
    }
    m.lnf_gamma = Vec::Zero(d);
    m.lnf_beta = Vec::Zero(d);
    m.w_out = Mat::Zero(g, d);
    m.b_out = Vec::Zero(g);
    return m;
  }

  // Xavier-normal weights, zero biases, unit layer-norm gains. The draw
  // order (declared parameter order, column-major within each tensor) is
  // part of the reproducibility contract.
  static TransformerModelT init(const ModelConfig& cfg, std::uint64_t seed) {
    TransformerModelT m = zeros(cfg);
    Rng rng(hash_combine(seed, stream_id("model-init")));
    auto fill = [&rng](Mat& w) {
      const double std = std::sqrt(2.0 / static_cast<double>(w.rows() + w.cols()));
      Scalar* p = w.data();
      for (Eigen::Index i = 0; i < w.size(); ++i) {
        p[i] = static_cast<Scalar>(rng.normal() * std);
      }
    };
    fill(m.w_in);
    for (Block& b : m.blocks) {
      b.ln1_gamma.setOnes();
      b.ln2_gamma.setOnes();
      fill(b.wq);
      fill(b.wk);
      fill(b.wv);
      fill(b.wo);
      fill(b.w1);
      fill(b.w2);
    }
    m.lnf_gamma.setOnes();
    fill(m.w_out);
    return m;
  }

  // Declared parameter order; also the checkpoint tensor order.
  template <typename Self, typename Fn>
  static void visit(Self& self, Fn&& fn) {
    fn("w_in", self.w_in);
    fn("b_in", self.b_in);
    for (std::size_t l = 0; l < self.blocks.size(); ++l) {
      auto& b = self.blocks[l];
      fn("ln1_gamma", b.ln1_gamma);
      fn("ln1_beta", b.ln1_beta);
      fn("wq", b.wq);
      fn("bq", b.bq);
      fn("wk", b.wk);
      fn("bk", b.bk);
      fn("wv", b.wv);
      fn("bv", b.bv);
      fn("wo", b.wo);
      fn("bo", b.bo);
      fn("ln2_gamma", b.ln2_gamma);
      fn("ln2_beta", b.ln2_beta);
      fn("w1", b.w1);
      fn("b1", b.b1);
      fn("w2", b.w2);
      fn("b2", b.b2);
    }
    fn("lnf_gamma", self.lnf_gamma);
    fn("lnf_beta", self.lnf_beta);
    fn("w_out", self.w_out);
    fn("b_out", self.b_out);
  }

  std::vector<std::pair<Scalar*, std::ptrdiff_t>> parameter_views() {
    std::vector<std::pair<Scalar*, std::ptrdiff_t>> views;
    visit(*this, [&](const char*, auto& t) { views.emplace_back(t.data(), t.size()); });
    return views;
  }
  std::vector<std::pair<const Scalar*, std::ptrdiff_t>> parameter_views() const {
    std::vector<std::pair<const Scalar*, std::ptrdiff_t>> views;
    visit(*this, [&](const char*, const auto& t) { views.emplace_back(t.data(), t.size()); });
    return views;
  }
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (auto [p, sz] : parameter_views()) {
      (void)p;
      n += static_cast<std::size_t>(sz);
    }
    return n;
  }
};

// Saved activations for one forward pass.
template <typename Scalar>
struct ForwardWorkspace {
  using Mat = typename TransformerModelT<Scalar>::Mat;
  using Vec = typename TransformerModelT<Scalar>::Vec;

  struct BlockWs {
    Mat a_hat;     // LN1 normalized input
    Mat a;         // LN1 output (gamma * a_hat + beta)
    Vec inv_std1;  // per token
    Mat q, k, v;
    // per sample: [heads*T x T] stacked key-major softmax blocks, where
    // column t holds the attention weights of query t (softmax over keys)
    std::vector<Mat> attn;
    Mat attn_out;  // concatenated heads, pre-projection
    Mat b_hat;     // LN2 normalized
    Mat b;         // LN2 output
    Vec inv_std2;
    Mat u;  // FFN pre-activation
    Mat g;  // gelu(u)
  };

  Mat x;  // input tokens [N x genes]
  int tokens_per_sample = 0;
  std::vector<std::uint8_t> pad;  // per token row
  std::vector<BlockWs> block_ws;
  Mat h;      // residual stream (forward scratch)
  Mat z_hat;  // final LN normalized
  Mat z;      // final LN output
  Vec inv_stdf;

  // backward scratch, persistent across iterations
  struct Scratch {
    Mat dh, dtmp, du, dattn, dq, dkm, dv, da;
  } scratch;
};

// Optional per-layer attention capture for diagnostics/tests:
// attn[layer][sample] is a row-stack of `heads` [T x T] softmax matrices.
template <typename Scalar>
struct AttentionTrace {
  std::vector<std::vector<typename TransformerModelT<Scalar>::Mat>> attn;
};

namespace detail {

// Row-wise (per token) layer norm, evaluated matrix-at-a-time. Stores x_hat
// and inv_std for backward.
template <typename Scalar>
void layernorm_forward(const typename TransformerModelT<Scalar>::Mat& x,
                       const typename TransformerModelT<Scalar>::Vec& gamma,
                       const typename TransformerModelT<Scalar>::Vec& beta,
                       typename TransformerModelT<Scalar>::Mat& x_hat,
                       typename TransformerModelT<Scalar>::Vec& inv_std,
                       typename TransformerModelT<Scalar>::Mat& y) {
  using Vec = typename TransformerModelT<Scalar>::Vec;
  const Eigen::Index d = x.cols();
  const Vec mean = x.rowwise().mean();
  x_hat = x.colwise() - mean;
  inv_std = (x_hat.array().square().rowwise().sum() / static_cast<Scalar>(d) +
             static_cast<Scalar>(kLayerNormEps))
                .sqrt()
                .inverse();
  x_hat.array().colwise() *= inv_std.array();
  y = x_hat.array().rowwise() * gamma.transpose().array();
  y.rowwise() += beta.transpose();
}

// dy -> dx; accumulates dgamma/dbeta.
template <typename Scalar>
void layernorm_backward(const typename TransformerModelT<Scalar>::Mat& dy,
                        const typename TransformerModelT<Scalar>::Mat& x_hat,
                        const typename TransformerModelT<Scalar>::Vec& inv_std,
                        const typename TransformerModelT<Scalar>::Vec& gamma,
                        typename TransformerModelT<Scalar>::Vec& dgamma,
                        typename TransformerModelT<Scalar>::Vec& dbeta,
                        typename TransformerModelT<Scalar>::Mat& dx) {
  using Vec = typename TransformerModelT<Scalar>::Vec;
  const Eigen::Index d = dy.cols();
  dgamma += (dy.array() * x_hat.array()).colwise().sum().matrix().transpose();
  dbeta += dy.colwise().sum().transpose();
  dx = dy.array().rowwise() * gamma.transpose().array();  // dx holds dxhat
  const Vec m1 = dx.rowwise().mean();
  const Vec m2 = (dx.array() * x_hat.array()).rowwise().mean();
  dx.colwise() -= m1;
  dx.array() -= x_hat.array().colwise() * m2.array();
  dx.array().colwise() *= inv_std.array();
  (void)d;
}

// acc += a^T * b with the inner (row) dimension split into a fixed number of
// chunks evaluated in parallel and summed in chunk order. Fixed chunking
// keeps results independent of the thread count; these tall-thin products
// are too small for Eigen's own GEMM threading.
template <typename Mat>
void accumulate_gemm_tn(Mat& acc, const Mat& a, const Mat& b) {
  constexpr int kChunks = 4;
  const Eigen::Index n = a.rows();
  if (n < 1024) {
    acc.noalias() += a.transpose() * b;
    return;
  }
  Mat parts[kChunks];
  const Eigen::Index step = (n + kChunks - 1) / kChunks;
#pragma omp parallel for schedule(static)
  for (int c = 0; c < kChunks; ++c) {
    const Eigen::Index lo = std::min<Eigen::Index>(static_cast<Eigen::Index>(c) * step, n);
    const Eigen::Index hi = std::min<Eigen::Index>(lo + step, n);
    if (hi > lo) {
      parts[c].noalias() = a.middleRows(lo, hi - lo).transpose() * b.middleRows(lo, hi - lo);
    }
  }
  for (int c = 0; c < kChunks; ++c) {
    if (parts[c].size() > 0) acc.noalias() += parts[c];
  }
}

}  // namespace detail

// Forward pass over row-stacked tokens. `pad[t]` marks padded tokens; they
// flow through the residual stream but receive zero attention weight from
// every query and are excluded from the loss by the callers.
template <typename Scalar>
typename TransformerModelT<Scalar>::Mat forward_tokens(
    const TransformerModelT<Scalar>& model, const typename TransformerModelT<Scalar>::Mat& x,
    int tokens_per_sample, const std::vector<std::uint8_t>& pad,
    ForwardWorkspace<Scalar>* ws = nullptr, AttentionTrace<Scalar>* trace = nullptr) {
  using Mat = typename TransformerModelT<Scalar>::Mat;
  using Vec = typename TransformerModelT<Scalar>::Vec;

  const Eigen::Index n_rows = x.rows();
  const int T = tokens_per_sample;
  if (T <= 0 || n_rows % T != 0) throw ConsistencyError("forward: rows not a multiple of tokens");
  if (x.cols() != model.cfg.genes) {
    throw ModelMismatchError("forward: input gene dimension " + std::to_string(x.cols()) +
                             " does not match the model adapter (" +
                             std::to_string(model.cfg.genes) + ")");
  }
  if (static_cast<Eigen::Index>(pad.size()) != n_rows) {
    throw ConsistencyError("forward: pad flags do not match token rows");
  }
  const auto n_samples = static_cast<int>(n_rows / T);
  const int d = model.cfg.dim;
  const int heads = model.cfg.heads;
  const int dk = d / heads;
  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dk));
  const Scalar neg_inf = -std::numeric_limits<Scalar>::infinity();

  ForwardWorkspace<Scalar> local_ws;
  ForwardWorkspace<Scalar>& w = ws ? *ws : local_ws;
  w.x = x;
  w.tokens_per_sample = T;
  w.pad = pad;
  if (w.block_ws.size() != model.blocks.size()) {
    w.block_ws.clear();
    w.block_ws.resize(model.blocks.size());
  }
  if (trace) {
    trace->attn.assign(model.blocks.size(), {});
  }

  Mat& h = w.h;
  h.resize(n_rows, d);
  h.noalias() = x * model.w_in.transpose();
  h.rowwise() += model.b_in.transpose();

  for (std::size_t l = 0; l < model.blocks.size(); ++l) {
    const auto& blk = model.blocks[l];
    auto& bw = w.block_ws[l];

    detail::layernorm_forward<Scalar>(h, blk.ln1_gamma, blk.ln1_beta, bw.a_hat, bw.inv_std1,
                                      bw.a);
    bw.q.noalias() = bw.a * blk.wq.transpose();
    bw.q.rowwise() += blk.bq.transpose();
    bw.k.noalias() = bw.a * blk.wk.transpose();
    bw.k.rowwise() += blk.bk.transpose();
    bw.v.noalias() = bw.a * blk.wv.transpose();
    bw.v.rowwise() += blk.bv.transpose();

    if (bw.attn.size() != static_cast<std::size_t>(n_samples)) {
      bw.attn.assign(static_cast<std::size_t>(n_samples), Mat());
    }
    bw.attn_out.resize(n_rows, d);
    if (trace) trace->attn[l].assign(static_cast<std::size_t>(n_samples), Mat());

#pragma omp parallel for schedule(static)
    for (int s = 0; s < n_samples; ++s) {
      const Eigen::Index row0 = static_cast<Eigen::Index>(s) * T;
      Mat& probs = bw.attn[static_cast<std::size_t>(s)];
      probs.resize(static_cast<Eigen::Index>(heads) * T, T);
      for (int hd = 0; hd < heads; ++hd) {
        auto qh = bw.q.block(row0, static_cast<Eigen::Index>(hd) * dk, T, dk);
        auto kh = bw.k.block(row0, static_cast<Eigen::Index>(hd) * dk, T, dk);
        auto vh = bw.v.block(row0, static_cast<Eigen::Index>(hd) * dk, T, dk);
        // key-major scores: column t = key scores of query t (contiguous)
        auto ph = probs.middleRows(static_cast<Eigen::Index>(hd) * T, T);
        ph.noalias() = kh * qh.transpose();
        ph *= scale;
        for (int t = 0; t < T; ++t) {
          if (pad[static_cast<std::size_t>(row0) + static_cast<std::size_t>(t)]) {
            ph.row(t).setConstant(neg_inf);
          }
        }
        for (int t = 0; t < T; ++t) {
          auto col = ph.col(t);
          const Scalar mx = col.maxCoeff();
          col = (col.array() - mx).exp();
          col /= col.sum();
        }
        bw.attn_out.block(row0, static_cast<Eigen::Index>(hd) * dk, T, dk).noalias() =
            ph.transpose() * vh;
      }
      if (trace) {
        Mat row_major(static_cast<Eigen::Index>(heads) * T, T);
        for (int hd = 0; hd < heads; ++hd) {
          row_major.middleRows(static_cast<Eigen::Index>(hd) * T, T) =
              probs.middleRows(static_cast<Eigen::Index>(hd) * T, T).transpose();
        }
        trace->attn[l][static_cast<std::size_t>(s)] = std::move(row_major);
      }
    }

    h.noalias() += bw.attn_out * blk.wo.transpose();
    h.rowwise() += blk.bo.transpose();

    detail::layernorm_forward<Scalar>(h, blk.ln2_gamma, blk.ln2_beta, bw.b_hat, bw.inv_std2,
                                      bw.b);
    bw.u.noalias() = bw.b * blk.w1.transpose();
    bw.u.rowwise() += blk.b1.transpose();
    detail::gelu_matrix(bw.u, bw.g);
    h.noalias() += bw.g * blk.w2.transpose();
    h.rowwise() += blk.b2.transpose();
  }

  detail::layernorm_forward<Scalar>(h, model.lnf_gamma, model.lnf_beta, w.z_hat, w.inv_stdf,
                                    w.z);
  Mat out(n_rows, model.cfg.genes);
  out.noalias() = w.z * model.w_out.transpose();
  out.rowwise() += model.b_out.transpose();
  return out;
}

// Backward pass. `d_out` is dLoss/dOutput for the same token layout used in
// the forward call; gradients accumulate into `grads` (zeros() shaped). The
// workspace provides both saved activations and reusable scratch.
template <typename Scalar>
void backward_tokens(const TransformerModelT<Scalar>& model, ForwardWorkspace<Scalar>& w,
                     const typename TransformerModelT<Scalar>::Mat& d_out,
                     TransformerModelT<Scalar>& grads) {
  using Mat = typename TransformerModelT<Scalar>::Mat;

  const Eigen::Index n_rows = w.x.rows();
  const int T = w.tokens_per_sample;
  const auto n_samples = static_cast<int>(n_rows / T);
  const int d = model.cfg.dim;
  const int heads = model.cfg.heads;
  const int dk = d / heads;
  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dk));
  auto& scr = w.scratch;

  // readout
  detail::accumulate_gemm_tn(grads.w_out, d_out, w.z);
  grads.b_out.noalias() += d_out.colwise().sum().transpose();
  scr.dtmp.noalias() = d_out * model.w_out;
  detail::layernorm_backward<Scalar>(scr.dtmp, w.z_hat, w.inv_stdf, model.lnf_gamma,
                                     grads.lnf_gamma, grads.lnf_beta, scr.dh);

  for (int l = static_cast<int>(model.blocks.size()) - 1; l >= 0; --l) {
    const auto& blk = model.blocks[static_cast<std::size_t>(l)];
    auto& gb = grads.blocks[static_cast<std::size_t>(l)];
    const auto& bw = w.block_ws[static_cast<std::size_t>(l)];

    // FFN sublayer: h2 = h1 + gelu(LN2(h1) W1^T + b1) W2^T + b2
    detail::accumulate_gemm_tn(gb.w2, scr.dh, bw.g);
    gb.b2.noalias() += scr.dh.colwise().sum().transpose();
    scr.du.noalias() = scr.dh * blk.w2;
    detail::gelu_grad_matrix(bw.u, scr.du);
    detail::accumulate_gemm_tn(gb.w1, scr.du, bw.b);
    gb.b1.noalias() += scr.du.colwise().sum().transpose();
    scr.dtmp.noalias() = scr.du * blk.w1;
    scr.da.resize(n_rows, d);
    detail::layernorm_backward<Scalar>(scr.dtmp, bw.b_hat, bw.inv_std2, blk.ln2_gamma,
                                       gb.ln2_gamma, gb.ln2_beta, scr.da);
    scr.dh += scr.da;  // dh now holds dL/dh1

    // attention sublayer: h1 = h0 + AttnOut Wo^T + bo
    detail::accumulate_gemm_tn(gb.wo, scr.dh, bw.attn_out);
    gb.bo.noalias() += scr.dh.colwise().sum().transpose();
    scr.dattn.noalias() = scr.dh * blk.wo;

    scr.dq.resize(n_rows, d);
    scr.dkm.resize(n_rows, d);
    scr.dv.resize(n_rows, d);
#pragma omp parallel for schedule(static)
    for (int smp = 0; smp < n_samples; ++smp) {
      const Eigen::Index row0 = static_cast<Eigen::Index>(smp) * T;
      const Mat& probs = bw.attn[static_cast<std::size_t>(smp)];
      Mat dp(T, T), ds(T, T);
      for (int hd = 0; hd < heads; ++hd) {
        auto ph = probs.middleRows(static_cast<Eigen::Index>(hd) * T, T);  // key-major
        auto qh = bw.q.block(row0, static_cast<Eigen::Index>(hd) * dk, T, dk);
        auto kh = bw.k.block(row0, static_cast<Eigen::Index>(hd) * dk, T, dk);
        auto vh = bw.v.block(row0, static_cast<Eigen::Index>(hd) * dk, T, dk);
        auto doh = scr.dattn.block(row0, static_cast<Eigen::Index>(hd) * dk, T, dk);

        dp.noalias() = vh * doh.transpose();  // key-major like ph
        scr.dv.block(row0, static_cast<Eigen::Index>(hd) * dk, T, dk).noalias() = ph * doh;
        // softmax backward over each key column
        for (int t = 0; t < T; ++t) {
          const Scalar dot = (dp.col(t).array() * ph.col(t).array()).sum();
          ds.col(t) = ph.col(t).array() * (dp.col(t).array() - dot);
        }
        scr.dq.block(row0, static_cast<Eigen::Index>(hd) * dk, T, dk).noalias() =
            ds.transpose() * kh * scale;
        scr.dkm.block(row0, static_cast<Eigen::Index>(hd) * dk, T, dk).noalias() =
            ds * qh * scale;
      }
    }

    detail::accumulate_gemm_tn(gb.wq, scr.dq, bw.a);
    gb.bq.noalias() += scr.dq.colwise().sum().transpose();
    detail::accumulate_gemm_tn(gb.wk, scr.dkm, bw.a);
    gb.bk.noalias() += scr.dkm.colwise().sum().transpose();
    detail::accumulate_gemm_tn(gb.wv, scr.dv, bw.a);
    gb.bv.noalias() += scr.dv.colwise().sum().transpose();

    scr.dtmp.noalias() = scr.dq * blk.wq;
    scr.dtmp.noalias() += scr.dkm * blk.wk;
    scr.dtmp.noalias() += scr.dv * blk.wv;
    detail::layernorm_backward<Scalar>(scr.dtmp, bw.a_hat, bw.inv_std1, blk.ln1_gamma,
                                       gb.ln1_gamma, gb.ln1_beta, scr.da);
    scr.dh += scr.da;  // dh now holds dL/dh0
  }

  detail::accumulate_gemm_tn(grads.w_in, scr.dh, w.x);
  grads.b_in.noalias() += scr.dh.colwise().sum().transpose();
}

// MSE over non-padded token rows (all gene entries). Also writes the matching
// gradient when `d_out` is given.
template <typename Scalar>
double token_mse(const typename TransformerModelT<Scalar>::Mat& pred,
                 const typename TransformerModelT<Scalar>::Mat& target,
                 const std::vector<std::uint8_t>& pad,
                 typename TransformerModelT<Scalar>::Mat* d_out = nullptr) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols()) {
    throw ConsistencyError("token_mse: shape mismatch");
  }
  Eigen::Index valid = 0;
  for (auto p : pad) {
    if (!p) ++valid;
  }
  if (valid == 0) throw ConsistencyError("token_mse: no valid tokens");
  const double denom = static_cast<double>(valid) * static_cast<double>(pred.cols());

  typename TransformerModelT<Scalar>::Mat diff = pred - target;
  for (Eigen::Index i = 0; i < diff.rows(); ++i) {
    if (pad[static_cast<std::size_t>(i)]) diff.row(i).setZero();
  }
  double total = 0.0;
  for (Eigen::Index i = 0; i < diff.rows(); ++i) {
    total += static_cast<double>(diff.row(i).squaredNorm());
  }
  if (d_out) {
    *d_out = diff * static_cast<Scalar>(2.0 / denom);
  }
  return total / denom;
}

using SpackleModel = TransformerModelT<float>;

}  // namespace spackle
