#pragma once

// Toy encoder-decoder transformer (pre-LN, learned positions, optional tied
// embeddings) with manual backprop in double precision, plus the loss heads:
// token cross-entropy, the binary multi-cluster prediction layer, and their
// weighted combination. Forward passes are const; activations live in a
// caller-owned workspace so inference is safe to run concurrently.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "xlgen/matrix.hpp"
#include "xlgen/rng.hpp"
#include "xlgen/vocab.hpp"

namespace xlgen {

enum class Mode { base, bcl, mcg };
enum class Pooling { mean, max };

inline const char* mode_name(Mode m) {
  switch (m) {
    case Mode::base: return "base";
    case Mode::bcl: return "bcl";
    case Mode::mcg: return "mcg";
  }
  return "?";
}

inline Mode parse_mode(const std::string& s) {
  if (s == "base") return Mode::base;
  if (s == "bcl") return Mode::bcl;
  if (s == "mcg") return Mode::mcg;
  throw std::invalid_argument("unknown mode: " + s);
}

struct ModelConfig {
  int d_model = 64;
  int n_layers = 2;
  int n_heads = 2;
  int ff_dim = 128;
  int max_input_len = 64;
  int max_output_len = 32;
  Mode mode = Mode::base;
  int k_clusters = 0;  // bcl/mcg only
  bool tie_embeddings = true;
  Pooling bcl_pooling = Pooling::mean;
  bool pos_invariant = false;  // decoder restarts positions after each <sep>

  void validate() const {
    if (d_model <= 0 || n_layers <= 0 || n_heads <= 0 || ff_dim <= 0)
      throw std::invalid_argument("ModelConfig: dimensions must be positive");
    if (d_model % n_heads != 0)
      throw std::invalid_argument("ModelConfig: d_model must be divisible by n_heads");
    if (max_input_len <= 0 || max_output_len <= 0)
      throw std::invalid_argument("ModelConfig: sequence length limits must be positive");
    if ((mode == Mode::bcl || mode == Mode::mcg) && k_clusters <= 0)
      throw std::invalid_argument("ModelConfig: bcl/mcg require k_clusters > 0");
  }
};

// ---------------------------------------------------------------------------
// Parameters and primitive layers
// ---------------------------------------------------------------------------

enum class Init { normal_embed, xavier, ones, zeros };

struct Param {
  std::string name;
  Mat w, g;
  bool decay = true;
  Init init = Init::xavier;

  Param() = default;
  Param(std::string n, std::size_t rows, std::size_t cols, Init ini, bool dec)
      : name(std::move(n)), w(rows, cols), g(rows, cols), decay(dec), init(ini) {}
};

struct LinearCache {
  Mat x;
};

struct Linear {
  Param W, b;  // y = x * W + b, W is (in, out)

  Linear() = default;
  Linear(const std::string& name, std::size_t in, std::size_t out)
      : W(name + ".w", in, out, Init::xavier, true),
        b(name + ".b", 1, out, Init::zeros, false) {}

  Mat forward(const Mat& x, LinearCache& c) const {
    c.x = x;
    Mat y = matmul(x, W.w);
    for (std::size_t i = 0; i < y.rows(); ++i) {
      double* yi = y.row(i);
      for (std::size_t j = 0; j < y.cols(); ++j) yi[j] += b.w(0, j);
    }
    return y;
  }

  Mat backward(const Mat& dy, const LinearCache& c) {
    W.g += matmul_at(c.x, dy);
    for (std::size_t i = 0; i < dy.rows(); ++i)
      for (std::size_t j = 0; j < dy.cols(); ++j) b.g(0, j) += dy(i, j);
    return matmul_bt(dy, W.w);
  }
};

struct LayerNormCache {
  Mat xhat;
  std::vector<double> rstd;
};

struct LayerNorm {
  Param gamma, beta;
  static constexpr double kEps = 1e-5;

  LayerNorm() = default;
  LayerNorm(const std::string& name, std::size_t dim)
      : gamma(name + ".gamma", 1, dim, Init::ones, false),
        beta(name + ".beta", 1, dim, Init::zeros, false) {}

  Mat forward(const Mat& x, LayerNormCache& c) const {
    const std::size_t n = x.rows(), d = x.cols();
    c.xhat = Mat(n, d);
    c.rstd.resize(n);
    Mat y(n, d);
    for (std::size_t i = 0; i < n; ++i) {
      const double* xi = x.row(i);
      double mean = 0.0;
      for (std::size_t j = 0; j < d; ++j) mean += xi[j];
      mean /= static_cast<double>(d);
      double var = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double v = xi[j] - mean;
        var += v * v;
      }
      var /= static_cast<double>(d);
      const double rstd = 1.0 / std::sqrt(var + kEps);
      c.rstd[i] = rstd;
      for (std::size_t j = 0; j < d; ++j) {
        const double xh = (xi[j] - mean) * rstd;
        c.xhat(i, j) = xh;
        y(i, j) = gamma.w(0, j) * xh + beta.w(0, j);
      }
    }
    return y;
  }

  Mat backward(const Mat& dy, const LayerNormCache& c) {
    const std::size_t n = dy.rows(), d = dy.cols();
    Mat dx(n, d);
    for (std::size_t i = 0; i < n; ++i) {
      double m1 = 0.0, m2 = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double dxh = dy(i, j) * gamma.w(0, j);
        gamma.g(0, j) += dy(i, j) * c.xhat(i, j);
        beta.g(0, j) += dy(i, j);
        m1 += dxh;
        m2 += dxh * c.xhat(i, j);
      }
      m1 /= static_cast<double>(d);
      m2 /= static_cast<double>(d);
      for (std::size_t j = 0; j < d; ++j) {
        const double dxh = dy(i, j) * gamma.w(0, j);
        dx(i, j) = c.rstd[i] * (dxh - m1 - c.xhat(i, j) * m2);
      }
    }
    return dx;
  }
};

struct AttentionCache {
  LinearCache qc, kc, vc, oc;
  Mat Q, K, V;
  std::vector<Mat> P;  // per-head (T x S) attention probabilities
};

struct Attention {
  Linear wq, wk, wv, wo;
  int n_heads = 1;

  Attention() = default;
  Attention(const std::string& name, int d_model, int heads)
      : wq(name + ".q", d_model, d_model),
        wk(name + ".k", d_model, d_model),
        wv(name + ".v", d_model, d_model),
        wo(name + ".o", d_model, d_model),
        n_heads(heads) {}

  // key_mask: nonzero = attendable key; empty means all keys valid.
  Mat forward(const Mat& q_in, const Mat& kv_in, const std::vector<char>& key_mask, bool causal,
              AttentionCache& c) const {
    const std::size_t T = q_in.rows(), S = kv_in.rows();
    const std::size_t d = q_in.cols();
    const std::size_t dh = d / static_cast<std::size_t>(n_heads);
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    c.Q = wq.forward(q_in, c.qc);
    c.K = wk.forward(kv_in, c.kc);
    c.V = wv.forward(kv_in, c.vc);
    c.P.assign(static_cast<std::size_t>(n_heads), Mat());

    Mat concat(T, d);
    for (int h = 0; h < n_heads; ++h) {
      const std::size_t ho = static_cast<std::size_t>(h) * dh;
      Mat& P = c.P[static_cast<std::size_t>(h)];
      P = Mat(T, S);
      for (std::size_t i = 0; i < T; ++i) {
        double row_max = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < S; ++j) {
          double score;
          const bool blocked = (causal && j > i) || (!key_mask.empty() && !key_mask[j]);
          if (blocked) {
            score = -std::numeric_limits<double>::infinity();
          } else {
            score = dot(c.Q.row(i) + ho, c.K.row(j) + ho, dh) * scale;
            row_max = std::max(row_max, score);
          }
          P(i, j) = score;
        }
        double denom = 0.0;
        for (std::size_t j = 0; j < S; ++j) {
          double& p = P(i, j);
          p = std::isinf(p) ? 0.0 : std::exp(p - row_max);
          denom += p;
        }
        if (denom <= 0.0) throw std::runtime_error("attention: query row with no valid keys");
        for (std::size_t j = 0; j < S; ++j) P(i, j) /= denom;
        double* out = concat.row(i) + ho;
        for (std::size_t j = 0; j < S; ++j) {
          const double p = P(i, j);
          if (p == 0.0) continue;
          const double* v = c.V.row(j) + ho;
          for (std::size_t t = 0; t < dh; ++t) out[t] += p * v[t];
        }
      }
    }
    return wo.forward(concat, c.oc);
  }

  struct Grads {
    Mat dq_in, dkv_in;
  };

  Grads backward(const Mat& dy, const AttentionCache& c) {
    const std::size_t T = c.Q.rows(), S = c.K.rows();
    const std::size_t d = c.Q.cols();
    const std::size_t dh = d / static_cast<std::size_t>(n_heads);
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    const Mat dconcat = wo.backward(dy, c.oc);
    Mat dQ(T, d), dK(S, d), dV(S, d);

    std::vector<double> dp(S);
    for (int h = 0; h < n_heads; ++h) {
      const std::size_t ho = static_cast<std::size_t>(h) * dh;
      const Mat& P = c.P[static_cast<std::size_t>(h)];
      for (std::size_t i = 0; i < T; ++i) {
        const double* doi = dconcat.row(i) + ho;
        double row_dot = 0.0;
        for (std::size_t j = 0; j < S; ++j) {
          dp[j] = dot(doi, c.V.row(j) + ho, dh);
          row_dot += dp[j] * P(i, j);
        }
        for (std::size_t j = 0; j < S; ++j) {
          const double p = P(i, j);
          if (p == 0.0) continue;
          const double ds = p * (dp[j] - row_dot) * scale;
          double* dqi = dQ.row(i) + ho;
          double* dkj = dK.row(j) + ho;
          double* dvj = dV.row(j) + ho;
          const double* kj = c.K.row(j) + ho;
          const double* qi = c.Q.row(i) + ho;
          const double* voi = doi;
          for (std::size_t t = 0; t < dh; ++t) {
            dqi[t] += ds * kj[t];
            dkj[t] += ds * qi[t];
            dvj[t] += p * voi[t];
          }
        }
      }
    }

    Grads g;
    g.dq_in = wq.backward(dQ, c.qc);
    g.dkv_in = wk.backward(dK, c.kc);
    g.dkv_in += wv.backward(dV, c.vc);
    return g;
  }
};

struct FFCache {
  LinearCache c1, c2;
  Mat z1;
};

struct FeedForward {
  Linear l1, l2;

  FeedForward() = default;
  FeedForward(const std::string& name, int d_model, int ff_dim)
      : l1(name + ".fc1", d_model, ff_dim), l2(name + ".fc2", ff_dim, d_model) {}

  Mat forward(const Mat& x, FFCache& c) const {
    c.z1 = l1.forward(x, c.c1);
    Mat a = c.z1;
    for (double& v : a.data()) v = v > 0.0 ? v : 0.0;
    return l2.forward(a, c.c2);
  }

  Mat backward(const Mat& dy, const FFCache& c) {
    Mat da = l2.backward(dy, c.c2);
    for (std::size_t i = 0; i < da.size(); ++i)
      if (c.z1.data()[i] <= 0.0) da.data()[i] = 0.0;
    return l1.backward(da, c.c1);
  }
};

struct EncLayerCache {
  LayerNormCache ln1, ln2;
  AttentionCache att;
  FFCache ff;
};

struct EncoderLayer {
  LayerNorm ln1, ln2;
  Attention att;
  FeedForward ff;

  EncoderLayer() = default;
  EncoderLayer(const std::string& name, const ModelConfig& cfg)
      : ln1(name + ".ln1", static_cast<std::size_t>(cfg.d_model)),
        ln2(name + ".ln2", static_cast<std::size_t>(cfg.d_model)),
        att(name + ".att", cfg.d_model, cfg.n_heads),
        ff(name + ".ff", cfg.d_model, cfg.ff_dim) {}

  Mat forward(const Mat& x, const std::vector<char>& key_mask, EncLayerCache& c) const {
    Mat ln1_out = ln1.forward(x, c.ln1);
    Mat a = x;
    a += att.forward(ln1_out, ln1_out, key_mask, false, c.att);
    Mat ln2_out = ln2.forward(a, c.ln2);
    Mat y = a;
    y += ff.forward(ln2_out, c.ff);
    return y;
  }

  Mat backward(const Mat& dy, const EncLayerCache& c) {
    Mat da = dy;
    da += ln2.backward(ff.backward(dy, c.ff), c.ln2);
    auto g = att.backward(da, c.att);
    g.dq_in += g.dkv_in;  // self-attention: same input feeds q and kv
    Mat dx = da;
    dx += ln1.backward(g.dq_in, c.ln1);
    return dx;
  }
};

struct DecLayerCache {
  LayerNormCache ln1, ln2, ln3;
  AttentionCache self_att, cross_att;
  FFCache ff;
};

struct DecoderLayer {
  LayerNorm ln1, ln2, ln3;
  Attention self_att, cross_att;
  FeedForward ff;

  DecoderLayer() = default;
  DecoderLayer(const std::string& name, const ModelConfig& cfg)
      : ln1(name + ".ln1", static_cast<std::size_t>(cfg.d_model)),
        ln2(name + ".ln2", static_cast<std::size_t>(cfg.d_model)),
        ln3(name + ".ln3", static_cast<std::size_t>(cfg.d_model)),
        self_att(name + ".self", cfg.d_model, cfg.n_heads),
        cross_att(name + ".cross", cfg.d_model, cfg.n_heads),
        ff(name + ".ff", cfg.d_model, cfg.ff_dim) {}

  Mat forward(const Mat& x, const Mat& enc_out, const std::vector<char>& enc_mask,
              DecLayerCache& c) const {
    Mat ln1_out = ln1.forward(x, c.ln1);
    Mat a = x;
    a += self_att.forward(ln1_out, ln1_out, {}, true, c.self_att);
    Mat ln2_out = ln2.forward(a, c.ln2);
    Mat b = a;
    b += cross_att.forward(ln2_out, enc_out, enc_mask, false, c.cross_att);
    Mat ln3_out = ln3.forward(b, c.ln3);
    Mat y = b;
    y += ff.forward(ln3_out, c.ff);
    return y;
  }

  Mat backward(const Mat& dy, const DecLayerCache& c, Mat& denc_accum) {
    Mat db = dy;
    db += ln3.backward(ff.backward(dy, c.ff), c.ln3);
    auto gc = cross_att.backward(db, c.cross_att);
    denc_accum += gc.dkv_in;
    Mat da = db;
    da += ln2.backward(gc.dq_in, c.ln2);
    auto gs = self_att.backward(da, c.self_att);
    gs.dq_in += gs.dkv_in;
    Mat dx = da;
    dx += ln1.backward(gs.dq_in, c.ln1);
    return dx;
  }
};

// ---------------------------------------------------------------------------
// Pooling over encoder states
// ---------------------------------------------------------------------------

// Mean over unmasked positions only. Empty mask means every position counts.
inline std::vector<double> mean_pool(const Mat& states, const std::vector<char>& mask) {
  std::size_t n_valid = 0;
  std::vector<double> out(states.cols(), 0.0);
  for (std::size_t i = 0; i < states.rows(); ++i) {
    if (!mask.empty() && !mask[i]) continue;
    ++n_valid;
    const double* row = states.row(i);
    for (std::size_t j = 0; j < states.cols(); ++j) out[j] += row[j];
  }
  if (n_valid == 0) throw std::invalid_argument("mean_pool: no unmasked positions");
  for (double& v : out) v /= static_cast<double>(n_valid);
  return out;
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

// Mean token-level NLL over non-pad targets. If dlogits is given it receives
// the gradient (softmax - onehot) / n_nonpad, zero rows for pad targets.
inline double loss_xent(const Mat& logits, const std::vector<int>& targets, int pad_id,
                        Mat* dlogits = nullptr) {
  if (logits.rows() != targets.size())
    throw std::invalid_argument("loss_xent: logits/targets length mismatch");
  std::size_t n = 0;
  for (int t : targets)
    if (t != pad_id) ++n;
  if (n == 0) throw std::invalid_argument("loss_xent: no non-pad targets");

  if (dlogits) *dlogits = Mat(logits.rows(), logits.cols());
  double total = 0.0;
  std::vector<double> p(logits.cols());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    if (targets[i] == pad_id) continue;
    const double* row = logits.row(i);
    double mx = row[0];
    for (std::size_t j = 1; j < logits.cols(); ++j) mx = std::max(mx, row[j]);
    double denom = 0.0;
    for (std::size_t j = 0; j < logits.cols(); ++j) denom += (p[j] = std::exp(row[j] - mx));
    const auto t = static_cast<std::size_t>(targets[i]);
    total += -(row[t] - mx - std::log(denom));
    if (dlogits) {
      double* drow = dlogits->row(i);
      const double inv_n = 1.0 / static_cast<double>(n);
      for (std::size_t j = 0; j < logits.cols(); ++j) drow[j] = (p[j] / denom) * inv_n;
      drow[t] -= inv_n;
    }
  }
  return total / static_cast<double>(n);
}

// Mean logistic BCE over the k cluster slots.
inline double loss_bce(const std::vector<double>& logits, const std::vector<double>& targets,
                       std::vector<double>* dlogits = nullptr) {
  if (logits.size() != targets.size())
    throw std::invalid_argument("loss_bce: logits/targets length mismatch");
  if (logits.empty()) throw std::invalid_argument("loss_bce: empty logits");
  const double inv_k = 1.0 / static_cast<double>(logits.size());
  if (dlogits) dlogits->assign(logits.size(), 0.0);
  double total = 0.0;
  for (std::size_t j = 0; j < logits.size(); ++j) {
    const double z = logits[j], t = targets[j];
    total += std::max(z, 0.0) - z * t + std::log1p(std::exp(-std::abs(z)));
    if (dlogits) {
      const double sig = 1.0 / (1.0 + std::exp(-z));
      (*dlogits)[j] = (sig - t) * inv_k;
    }
  }
  return total * inv_k;
}

inline double combined_loss(double xent, double bce, double lambda) {
  if (lambda < 0.0) throw std::invalid_argument("combined_loss: lambda must be >= 0");
  return xent + lambda * bce;
}

inline double lambda_at_epoch(double lambda_initial, int epoch) {
  if (epoch < 1) throw std::invalid_argument("lambda_at_epoch: epoch must be >= 1");
  return lambda_initial / static_cast<double>(epoch);
}

// ---------------------------------------------------------------------------
// The model
// ---------------------------------------------------------------------------

struct Activations {
  std::vector<int> enc_ids;
  std::vector<char> enc_mask;
  std::vector<EncLayerCache> enc_layers;
  LayerNormCache enc_ln;
  Mat enc_out;

  std::vector<int> dec_ids;
  std::vector<int> dec_pos;
  std::vector<DecLayerCache> dec_layers;
  LayerNormCache dec_ln;
  Mat dec_out;

  LinearCache lm;  // untied head only
  Mat logits;

  std::vector<double> pooled;
  std::vector<std::size_t> pool_rows;  // max pooling: argmax row per dimension
  LinearCache cls;
  std::vector<double> cls_logits;
};

class Seq2SeqModel {
 public:
  ModelConfig cfg;
  Vocab vocab;

  Param tok_emb;   // V x d, optionally doubles as the output projection
  Param pos_enc;   // max_input_len x d
  Param pos_dec;   // max_output_len x d
  std::vector<EncoderLayer> enc_layers;
  LayerNorm enc_ln;
  std::vector<DecoderLayer> dec_layers;
  LayerNorm dec_ln;
  Linear lm_head;       // only when !tie_embeddings
  Linear cluster_head;  // only in bcl mode

  Seq2SeqModel() = default;

  Seq2SeqModel(ModelConfig config, Vocab voc, std::uint64_t seed)
      : cfg(config), vocab(std::move(voc)) {
    cfg.validate();
    const auto d = static_cast<std::size_t>(cfg.d_model);
    tok_emb = Param("tok_emb", static_cast<std::size_t>(vocab.size()), d, Init::normal_embed, true);
    pos_enc = Param("pos_enc", static_cast<std::size_t>(cfg.max_input_len), d, Init::normal_embed, true);
    pos_dec = Param("pos_dec", static_cast<std::size_t>(cfg.max_output_len), d, Init::normal_embed, true);
    for (int l = 0; l < cfg.n_layers; ++l) {
      enc_layers.emplace_back("enc" + std::to_string(l), cfg);
      dec_layers.emplace_back("dec" + std::to_string(l), cfg);
    }
    enc_ln = LayerNorm("enc.ln_f", d);
    dec_ln = LayerNorm("dec.ln_f", d);
    if (!cfg.tie_embeddings) lm_head = Linear("lm_head", d, static_cast<std::size_t>(vocab.size()));
    if (cfg.mode == Mode::bcl)
      cluster_head = Linear("cluster_head", d, static_cast<std::size_t>(cfg.k_clusters));
    init_params(seed);
  }

  std::vector<Param*> params() {
    std::vector<Param*> ps;
    ps.push_back(&tok_emb);
    ps.push_back(&pos_enc);
    ps.push_back(&pos_dec);
    auto add_linear = [&](Linear& l) {
      ps.push_back(&l.W);
      ps.push_back(&l.b);
    };
    auto add_ln = [&](LayerNorm& ln) {
      ps.push_back(&ln.gamma);
      ps.push_back(&ln.beta);
    };
    auto add_att = [&](Attention& a) {
      add_linear(a.wq);
      add_linear(a.wk);
      add_linear(a.wv);
      add_linear(a.wo);
    };
    for (auto& l : enc_layers) {
      add_ln(l.ln1);
      add_att(l.att);
      add_ln(l.ln2);
      add_linear(l.ff.l1);
      add_linear(l.ff.l2);
    }
    add_ln(enc_ln);
    for (auto& l : dec_layers) {
      add_ln(l.ln1);
      add_att(l.self_att);
      add_ln(l.ln2);
      add_att(l.cross_att);
      add_ln(l.ln3);
      add_linear(l.ff.l1);
      add_linear(l.ff.l2);
    }
    add_ln(dec_ln);
    if (!cfg.tie_embeddings) add_linear(lm_head);
    if (cfg.mode == Mode::bcl) add_linear(cluster_head);
    return ps;
  }

  void zero_grads() {
    for (Param* p : params()) p->g.fill(0.0);
  }

  bool params_finite() {
    for (Param* p : params())
      if (!p->w.all_finite()) return false;
    return true;
  }

  std::size_t param_count() {
    std::size_t n = 0;
    for (Param* p : params()) n += p->w.size();
    return n;
  }

  // --- forward -------------------------------------------------------------

  // Standard transformer encoder over token ids; pad positions are kept but
  // masked out of attention and pooling. Truncates to max_input_len.
  const Mat& encode(std::vector<int> ids, Activations& a) const {
    if (ids.size() > static_cast<std::size_t>(cfg.max_input_len))
      ids.resize(static_cast<std::size_t>(cfg.max_input_len));
    a.enc_mask.clear();
    bool any_valid = false;
    for (int id : ids) {
      const bool valid = id != Vocab::pad;
      a.enc_mask.push_back(valid ? 1 : 0);
      any_valid |= valid;
    }
    if (ids.empty() || !any_valid) throw std::invalid_argument("encode: empty input");
    a.enc_ids = std::move(ids);

    const auto d = static_cast<std::size_t>(cfg.d_model);
    Mat x(a.enc_ids.size(), d);
    for (std::size_t i = 0; i < a.enc_ids.size(); ++i) {
      const double* e = tok_emb.w.row(static_cast<std::size_t>(a.enc_ids[i]));
      const double* p = pos_enc.w.row(i);
      double* xi = x.row(i);
      for (std::size_t j = 0; j < d; ++j) xi[j] = e[j] + p[j];
    }
    a.enc_layers.assign(enc_layers.size(), {});
    for (std::size_t l = 0; l < enc_layers.size(); ++l)
      x = enc_layers[l].forward(x, a.enc_mask, a.enc_layers[l]);
    a.enc_out = enc_ln.forward(x, a.enc_ln);
    return a.enc_out;
  }

  // Positions restart after each <sep> in pos_invariant mode so every label
  // span sees the same initial indices; intra-label offsets are kept.
  std::vector<int> decoder_positions(const std::vector<int>& dec_in) const {
    std::vector<int> pos(dec_in.size());
    if (!cfg.pos_invariant) {
      std::iota(pos.begin(), pos.end(), 0);
    } else {
      int p = 0;
      for (std::size_t i = 0; i < dec_in.size(); ++i) {
        pos[i] = p++;
        if (dec_in[i] == Vocab::sep) p = 1;
      }
    }
    for (int p : pos)
      if (p >= cfg.max_output_len)
        throw std::invalid_argument("decoder_positions: sequence exceeds max_output_len");
    return pos;
  }

  // Teacher-forced decoder pass; returns next-token logits per position.
  const Mat& decode_logits(const Mat& enc_out, const std::vector<char>& enc_mask,
                           const std::vector<int>& dec_in, Activations& a) const {
    if (dec_in.empty()) throw std::invalid_argument("decode_logits: empty decoder input");
    a.dec_ids = dec_in;
    a.dec_pos = decoder_positions(dec_in);

    const auto d = static_cast<std::size_t>(cfg.d_model);
    Mat x(dec_in.size(), d);
    for (std::size_t i = 0; i < dec_in.size(); ++i) {
      const double* e = tok_emb.w.row(static_cast<std::size_t>(dec_in[i]));
      const double* p = pos_dec.w.row(static_cast<std::size_t>(a.dec_pos[i]));
      double* xi = x.row(i);
      for (std::size_t j = 0; j < d; ++j) xi[j] = e[j] + p[j];
    }
    a.dec_layers.assign(dec_layers.size(), {});
    for (std::size_t l = 0; l < dec_layers.size(); ++l)
      x = dec_layers[l].forward(x, enc_out, enc_mask, a.dec_layers[l]);
    a.dec_out = dec_ln.forward(x, a.dec_ln);
    a.logits = cfg.tie_embeddings ? matmul_bt(a.dec_out, tok_emb.w)
                                  : lm_head.forward(a.dec_out, a.lm);
    return a.logits;
  }

  // Multi-cluster prediction layer on pooled encoder states (bcl only).
  const std::vector<double>& cluster_logits(const Mat& enc_out, const std::vector<char>& enc_mask,
                                            Activations& a) const {
    if (cfg.mode != Mode::bcl)
      throw std::logic_error("cluster_logits: model is not in bcl mode");
    const std::size_t d = enc_out.cols();
    a.pool_rows.clear();
    if (cfg.bcl_pooling == Pooling::mean) {
      a.pooled = mean_pool(enc_out, enc_mask);
    } else {
      a.pooled.assign(d, -std::numeric_limits<double>::infinity());
      a.pool_rows.assign(d, 0);
      bool any = false;
      for (std::size_t i = 0; i < enc_out.rows(); ++i) {
        if (!enc_mask.empty() && !enc_mask[i]) continue;
        any = true;
        for (std::size_t j = 0; j < d; ++j) {
          if (enc_out(i, j) > a.pooled[j]) {
            a.pooled[j] = enc_out(i, j);
            a.pool_rows[j] = i;
          }
        }
      }
      if (!any) throw std::invalid_argument("cluster_logits: no unmasked positions");
    }
    Mat pooled(1, d);
    for (std::size_t j = 0; j < d; ++j) pooled(0, j) = a.pooled[j];
    const Mat z = cluster_head.forward(pooled, a.cls);
    a.cls_logits.assign(z.row(0), z.row(0) + z.cols());
    return a.cls_logits;
  }

  // --- backward ------------------------------------------------------------

  // dlogits from loss_xent; dcls (already lambda-scaled) from loss_bce or null.
  void backward(const Activations& a, const Mat& dlogits, const std::vector<double>* dcls) {
    const auto d = static_cast<std::size_t>(cfg.d_model);

    Mat dh_dec;
    if (cfg.tie_embeddings) {
      dh_dec = matmul(dlogits, tok_emb.w);
      tok_emb.g += matmul_at(dlogits, a.dec_out);
    } else {
      dh_dec = lm_head.backward(dlogits, a.lm);
    }

    Mat dx = dec_ln.backward(dh_dec, a.dec_ln);
    Mat denc(a.enc_out.rows(), a.enc_out.cols());
    for (std::size_t l = dec_layers.size(); l-- > 0;)
      dx = dec_layers[l].backward(dx, a.dec_layers[l], denc);
    for (std::size_t i = 0; i < a.dec_ids.size(); ++i) {
      double* eg = tok_emb.g.row(static_cast<std::size_t>(a.dec_ids[i]));
      double* pg = pos_dec.g.row(static_cast<std::size_t>(a.dec_pos[i]));
      const double* dxi = dx.row(i);
      for (std::size_t j = 0; j < d; ++j) {
        eg[j] += dxi[j];
        pg[j] += dxi[j];
      }
    }

    if (dcls) {
      Mat dz(1, dcls->size());
      for (std::size_t j = 0; j < dcls->size(); ++j) dz(0, j) = (*dcls)[j];
      const Mat dpooled = cluster_head.backward(dz, a.cls);
      if (cfg.bcl_pooling == Pooling::mean) {
        std::size_t n_valid = 0;
        for (std::size_t i = 0; i < a.enc_mask.size(); ++i)
          if (a.enc_mask[i]) ++n_valid;
        const double inv = 1.0 / static_cast<double>(n_valid);
        for (std::size_t i = 0; i < denc.rows(); ++i) {
          if (!a.enc_mask[i]) continue;
          double* di = denc.row(i);
          for (std::size_t j = 0; j < d; ++j) di[j] += dpooled(0, j) * inv;
        }
      } else {
        for (std::size_t j = 0; j < d; ++j) denc(a.pool_rows[j], j) += dpooled(0, j);
      }
    }

    Mat dxe = enc_ln.backward(denc, a.enc_ln);
    for (std::size_t l = enc_layers.size(); l-- > 0;)
      dxe = enc_layers[l].backward(dxe, a.enc_layers[l]);
    for (std::size_t i = 0; i < a.enc_ids.size(); ++i) {
      double* eg = tok_emb.g.row(static_cast<std::size_t>(a.enc_ids[i]));
      double* pg = pos_enc.g.row(i);
      const double* dxi = dxe.row(i);
      for (std::size_t j = 0; j < d; ++j) {
        eg[j] += dxi[j];
        pg[j] += dxi[j];
      }
    }
  }

 private:
  void init_params(std::uint64_t seed) {
    Rng rng(seed);
    for (Param* p : params()) {
      switch (p->init) {
        case Init::normal_embed:
          for (double& v : p->w.data()) v = rng.normal(0.0, 0.02);
          break;
        case Init::xavier: {
          const double std = std::sqrt(2.0 / static_cast<double>(p->w.rows() + p->w.cols()));
          for (double& v : p->w.data()) v = rng.normal(0.0, std);
          break;
        }
        case Init::ones:
          p->w.fill(1.0);
          break;
        case Init::zeros:
          p->w.fill(0.0);
          break;
      }
    }
  }
};

// Decoder-derived label embedding: run the decoder over the label's word
// tokens (teacher-forced, conditioned on the bare task-prefix encoding) and
// average the last-layer states above those tokens.
inline std::vector<double> label_embedding(const Seq2SeqModel& model, const std::string& label) {
  const auto words = text::label_words(label);
  if (words.empty()) throw std::invalid_argument("label_embedding: empty label");
  Activations a;
  model.encode({Vocab::multilabel}, a);
  std::vector<int> dec_in{Vocab::bos};
  for (const auto& w : words) dec_in.push_back(model.vocab.encode_token(w));
  model.decode_logits(a.enc_out, a.enc_mask, dec_in, a);
  std::vector<double> out(a.dec_out.cols(), 0.0);
  const std::size_t n = dec_in.size() - 1;
  for (std::size_t i = 1; i < dec_in.size(); ++i) {
    const double* row = a.dec_out.row(i);
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += row[j];
  }
  for (double& v : out) v /= static_cast<double>(n);
  return out;
}

}  // namespace xlgen
