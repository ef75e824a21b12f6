#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "seqevade/rng.hpp"
#include "seqevade/sequence.hpp"
#include "seqevade/vocab.hpp"

namespace seqevade {

struct ModelError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct TrainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Encoding : int { plain = 0, triple = 1 };

inline const char* encoding_name(Encoding e) {
  return e == Encoding::plain ? "plain" : "triple";
}

// Gradient of the malware score with respect to the embedded window.
struct JacobianSlice {
  Eigen::MatrixXd values;  // (n positions) x (d embedding components)
};

namespace nn {

struct GruParams {
  Eigen::MatrixXd Wz, Wr, Wh;  // h x d
  Eigen::MatrixXd Uz, Ur, Uh;  // h x h
  Eigen::VectorXd bz, br, bh;  // h

  void resize(int h, int d) {
    Wz.setZero(h, d);
    Wr.setZero(h, d);
    Wh.setZero(h, d);
    Uz.setZero(h, h);
    Ur.setZero(h, h);
    Uh.setZero(h, h);
    bz.setZero(h);
    br.setZero(h);
    bh.setZero(h);
  }

  template <typename F>
  void visit(F&& f) {
    f(Wz); f(Wr); f(Wh); f(Uz); f(Ur); f(Uh); f(bz); f(br); f(bh);
  }
};

// The full trainable parameter set. The same struct doubles as gradient
// and momentum storage.
struct Params {
  Eigen::MatrixXd emb;                      // plain: (V+1) x d, row 0 = pad
  Eigen::MatrixXd emb_cat, emb_act, emb_obj;  // triple tables
  GruParams fwd, bwd;
  Eigen::VectorXd dense_w;  // 2h
  double dense_b = 0.0;

  template <typename F>
  void visit(F&& f) {
    f(emb); f(emb_cat); f(emb_act); f(emb_obj);
    fwd.visit(f);
    bwd.visit(f);
    f(dense_w);
  }

  void set_zero() {
    visit([](auto& m) { m.setZero(); });
    dense_b = 0.0;
  }

  std::size_t count() const {
    std::size_t n = 1;  // dense_b
    const_cast<Params*>(this)->visit(
        [&](auto& m) { n += static_cast<std::size_t>(m.size()); });
    return n;
  }

  // Flat scalar views, in a fixed order, for serialization, SGD and
  // finite-difference checks.
  std::vector<double*> flat() {
    std::vector<double*> out;
    visit([&](auto& m) {
      for (Eigen::Index i = 0; i < m.size(); ++i) out.push_back(m.data() + i);
    });
    out.push_back(&dense_b);
    return out;
  }

  bool all_finite() const {
    bool ok = std::isfinite(dense_b);
    const_cast<Params*>(this)->visit(
        [&](auto& m) { ok = ok && m.allFinite(); });
    return ok;
  }
};

inline double sigmoid(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x))
                : std::exp(x) / (1.0 + std::exp(x));
}

}  // namespace nn

struct Hyperparams {
  int epochs = 20;
  double lr = 0.1;
  int batch = 16;
  std::uint64_t seed = 0;
  double momentum = 0.9;
};

struct EpochMetrics {
  double accuracy = 0.0;
  double tpr = 0.0;
  double fpr = 0.0;
  double loss = 0.0;
};

struct ThresholdPoint {
  double threshold = 0.0;
  double tpr = 0.0;
  double fpr = 0.0;
};

// A small bidirectional gated-recurrent sequence classifier scoring a
// fixed-size window of API ids; sequences longer than the window are
// scored per window and pooled with max.
class OracleModel {
 public:
  OracleModel() = default;

  OracleModel(Encoding encoding, const ApiVocabulary& vocab, int window_size,
              int embed_dim, int hidden_dim, std::uint64_t seed)
      : encoding_(encoding),
        n_(window_size),
        d_(embed_dim),
        h_(hidden_dim),
        vocab_size_(vocab.size()),
        vocab_hash_(vocab.hash()) {
    if (n_ < 1 || d_ < 3 || h_ < 1) throw ModelError("bad model shape");
    attrs_.resize(static_cast<std::size_t>(vocab_size_) + 1, {0, 0, 0});
    for (const auto& e : vocab.entries())
      attrs_[static_cast<std::size_t>(e.id)] = {e.category, e.action,
                                                e.object};
    d_act_ = d_ / 3;
    d_obj_ = d_ / 3;
    d_cat_ = d_ - 2 * (d_ / 3);
    init_params(seed);
  }

  Encoding encoding() const { return encoding_; }
  int window_size() const { return n_; }
  int embed_dim() const { return d_; }
  int hidden_dim() const { return h_; }
  int vocab_size() const { return vocab_size_; }
  std::uint64_t vocab_hash() const { return vocab_hash_; }
  double threshold() const { return threshold_; }
  void set_threshold(double t) { threshold_ = t; }

  nn::Params& params() { return params_; }
  const nn::Params& params() const { return params_; }

  // Embeds a window of exactly n ids; padding (id 0) rows are all zero.
  Eigen::MatrixXd embed(const std::vector<ApiId>& window) const {
    if (static_cast<int>(window.size()) != n_)
      throw ModelError("window length must equal window_size");
    Eigen::MatrixXd x = Eigen::MatrixXd::Zero(n_, d_);
    for (int i = 0; i < n_; ++i) {
      ApiId id = window[static_cast<std::size_t>(i)];
      if (id == 0) continue;
      if (id < 1 || id > vocab_size_)
        throw VocabError("unknown api id " + std::to_string(id));
      if (encoding_ == Encoding::plain) {
        x.row(i) = params_.emb.row(id);
      } else {
        const auto& a = attrs_[static_cast<std::size_t>(id)];
        x.row(i).segment(0, d_cat_) = params_.emb_cat.row(a[0]);
        x.row(i).segment(d_cat_, d_act_) = params_.emb_act.row(a[1]);
        x.row(i).segment(d_cat_ + d_act_, d_obj_) = params_.emb_obj.row(a[2]);
      }
    }
    return x;
  }

  double forward_window(const std::vector<ApiId>& window) const {
    Cache cache;
    return run_forward(embed(window), pad_mask(window), cache);
  }

  // Scores an already-embedded window; `window` supplies the padding mask.
  double forward_embedded(const Eigen::MatrixXd& x,
                          const std::vector<ApiId>& window) const {
    Cache cache;
    return run_forward(x, pad_mask(window), cache);
  }

  // Score of a full sequence: max over consecutive windows (last padded).
  double forward_sequence(const std::vector<ApiId>& tokens) const {
    int ignored;
    return forward_sequence(tokens, ignored);
  }

  double forward_sequence(const std::vector<ApiId>& tokens,
                          int& argmax_window) const {
    double best = -1.0;
    argmax_window = 0;
    int nwin = num_windows(tokens);
    for (int w = 0; w < nwin; ++w) {
      double s = forward_window(window_at(tokens, w));
      if (s > best) {
        best = s;
        argmax_window = w;
      }
    }
    return best;
  }

  bool classifies_malicious(const std::vector<ApiId>& tokens) const {
    return forward_sequence(tokens) >= threshold_;
  }

  // Exact gradient of the window score w.r.t. the embedded window.
  JacobianSlice input_jacobian(const std::vector<ApiId>& window) const {
    Cache cache;
    Eigen::MatrixXd x = embed(window);
    double score = run_forward(x, pad_mask(window), cache);
    JacobianSlice js;
    js.values.setZero(n_, d_);
    double dlogit = score * (1.0 - score);  // d(sigmoid)/d(logit)
    run_backward(x, cache, dlogit, nullptr, nullptr, &js.values);
    return js;
  }

  int num_windows(const std::vector<ApiId>& tokens) const {
    if (tokens.empty()) return 1;
    return static_cast<int>((tokens.size() + static_cast<std::size_t>(n_) - 1) /
                            static_cast<std::size_t>(n_));
  }

  std::vector<ApiId> window_at(const std::vector<ApiId>& tokens,
                               int w) const {
    std::vector<ApiId> win(static_cast<std::size_t>(n_), 0);
    std::size_t start = static_cast<std::size_t>(w) * static_cast<std::size_t>(n_);
    for (int i = 0; i < n_; ++i) {
      std::size_t p = start + static_cast<std::size_t>(i);
      if (p < tokens.size()) win[static_cast<std::size_t>(i)] = tokens[p];
    }
    return win;
  }

  // Forward + full backward on one window; accumulates parameter (and
  // embedding-table) gradients into `grads` scaled by upstream dlogit.
  double backprop_window(const std::vector<ApiId>& window, double dlogit,
                         nn::Params& grads) const {
    Cache cache;
    Eigen::MatrixXd x = embed(window);
    double score = run_forward(x, pad_mask(window), cache);
    run_backward(x, cache, dlogit, &grads, &window, nullptr);
    return score;
  }

  friend void save_model(const OracleModel& m, const std::string& path);
  friend OracleModel load_model(const std::string& path);

 private:
  struct Cache {
    std::vector<int> mask;  // eligible pooling positions
    std::vector<Eigen::VectorXd> zf, rf, cf, hf;
    std::vector<Eigen::VectorXd> zb, rb, cb, hb;
    Eigen::VectorXd pooled;           // 2h
    std::vector<int> pool_argmax;     // per channel
    double logit = 0.0;
    double score = 0.0;
  };

  void init_params(std::uint64_t seed) {
    Rng rng(derive_seed(seed, "model-init"));
    params_.emb.setZero(vocab_size_ + 1, d_);
    params_.emb_cat.setZero(kNumCategories, d_cat_);
    params_.emb_act.setZero(kNumActions, d_act_);
    params_.emb_obj.setZero(kNumObjects, d_obj_);
    params_.fwd.resize(h_, d_);
    params_.bwd.resize(h_, d_);
    params_.dense_w.setZero(2 * h_);
    params_.dense_b = 0.0;

    auto fill = [&](Eigen::MatrixXd& m, double scale) {
      for (Eigen::Index i = 0; i < m.size(); ++i)
        m.data()[i] = rng.normal(0.0, scale);
    };
    if (encoding_ == Encoding::plain) {
      fill(params_.emb, 0.3);
      params_.emb.row(0).setZero();  // padding embeds to zero
    } else {
      fill(params_.emb_cat, 0.3);
      fill(params_.emb_act, 0.3);
      fill(params_.emb_obj, 0.3);
    }
    auto glorot = [&](Eigen::MatrixXd& m) {
      double a = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
      for (Eigen::Index i = 0; i < m.size(); ++i)
        m.data()[i] = rng.uniform_real(-a, a);
    };
    for (auto* g : {&params_.fwd, &params_.bwd}) {
      glorot(g->Wz); glorot(g->Wr); glorot(g->Wh);
      glorot(g->Uz); glorot(g->Ur); glorot(g->Uh);
    }
    // dense head starts at zero: an untrained model scores exactly 0.5
  }

  std::vector<int> pad_mask(const std::vector<ApiId>& window) const {
    std::vector<int> mask;
    for (int i = 0; i < n_; ++i)
      if (window[static_cast<std::size_t>(i)] != 0) mask.push_back(i);
    if (mask.empty())
      for (int i = 0; i < n_; ++i) mask.push_back(i);
    return mask;
  }

  void run_gru(const Eigen::MatrixXd& x, const nn::GruParams& g, bool reverse,
               std::vector<Eigen::VectorXd>& zs,
               std::vector<Eigen::VectorXd>& rs,
               std::vector<Eigen::VectorXd>& cs,
               std::vector<Eigen::VectorXd>& hs) const {
    zs.assign(static_cast<std::size_t>(n_), Eigen::VectorXd());
    rs.assign(static_cast<std::size_t>(n_), Eigen::VectorXd());
    cs.assign(static_cast<std::size_t>(n_), Eigen::VectorXd());
    hs.assign(static_cast<std::size_t>(n_), Eigen::VectorXd());
    Eigen::VectorXd h_prev = Eigen::VectorXd::Zero(h_);
    for (int k = 0; k < n_; ++k) {
      int t = reverse ? n_ - 1 - k : k;
      Eigen::VectorXd xt = x.row(t).transpose();
      Eigen::VectorXd z =
          (g.Wz * xt + g.Uz * h_prev + g.bz).unaryExpr([](double v) {
            return nn::sigmoid(v);
          });
      Eigen::VectorXd r =
          (g.Wr * xt + g.Ur * h_prev + g.br).unaryExpr([](double v) {
            return nn::sigmoid(v);
          });
      Eigen::VectorXd c =
          (g.Wh * xt + g.Uh * (r.cwiseProduct(h_prev)) + g.bh)
              .unaryExpr([](double v) { return std::tanh(v); });
      Eigen::VectorXd h = (Eigen::VectorXd::Ones(h_) - z).cwiseProduct(h_prev) +
                          z.cwiseProduct(c);
      std::size_t ti = static_cast<std::size_t>(t);
      zs[ti] = std::move(z);
      rs[ti] = std::move(r);
      cs[ti] = std::move(c);
      hs[ti] = std::move(h);
      h_prev = hs[ti];
    }
  }

  double run_forward(const Eigen::MatrixXd& x, std::vector<int> mask,
                     Cache& cache) const {
    cache.mask = std::move(mask);
    run_gru(x, params_.fwd, false, cache.zf, cache.rf, cache.cf, cache.hf);
    run_gru(x, params_.bwd, true, cache.zb, cache.rb, cache.cb, cache.hb);

    cache.pooled.setConstant(2 * h_, -std::numeric_limits<double>::infinity());
    cache.pool_argmax.assign(static_cast<std::size_t>(2 * h_), -1);
    for (int t : cache.mask) {
      std::size_t ti = static_cast<std::size_t>(t);
      for (int c = 0; c < h_; ++c) {
        if (cache.hf[ti](c) > cache.pooled(c)) {
          cache.pooled(c) = cache.hf[ti](c);
          cache.pool_argmax[static_cast<std::size_t>(c)] = t;
        }
        if (cache.hb[ti](c) > cache.pooled(h_ + c)) {
          cache.pooled(h_ + c) = cache.hb[ti](c);
          cache.pool_argmax[static_cast<std::size_t>(h_ + c)] = t;
        }
      }
    }
    cache.logit = params_.dense_w.dot(cache.pooled) + params_.dense_b;
    cache.score = nn::sigmoid(cache.logit);
    return cache.score;
  }

  void backward_gru(const Eigen::MatrixXd& x, const nn::GruParams& g,
                    bool reverse, const std::vector<Eigen::VectorXd>& zs,
                    const std::vector<Eigen::VectorXd>& rs,
                    const std::vector<Eigen::VectorXd>& cs,
                    const std::vector<Eigen::VectorXd>& hs,
                    const std::vector<Eigen::VectorXd>& dh_out,
                    nn::GruParams* dg, Eigen::MatrixXd* dx) const {
    Eigen::VectorXd dh_carry = Eigen::VectorXd::Zero(h_);
    for (int k = n_ - 1; k >= 0; --k) {
      int t = reverse ? n_ - 1 - k : k;
      std::size_t ti = static_cast<std::size_t>(t);
      // h_prev is the hidden state of the previously visited position
      int tprev = reverse ? t + 1 : t - 1;
      Eigen::VectorXd h_prev = (tprev >= 0 && tprev < n_)
                                   ? hs[static_cast<std::size_t>(tprev)]
                                   : Eigen::VectorXd::Zero(h_);
      Eigen::VectorXd dh = dh_out[ti] + dh_carry;
      const auto& z = zs[ti];
      const auto& r = rs[ti];
      const auto& c = cs[ti];
      Eigen::VectorXd dz = dh.cwiseProduct(c - h_prev)
                               .cwiseProduct(z)
                               .cwiseProduct(Eigen::VectorXd::Ones(h_) - z);
      Eigen::VectorXd dc =
          dh.cwiseProduct(z).cwiseProduct(
              Eigen::VectorXd::Ones(h_) - c.cwiseProduct(c));
      Eigen::VectorXd dh_prev =
          dh.cwiseProduct(Eigen::VectorXd::Ones(h_) - z);
      Eigen::VectorXd xt = x.row(t).transpose();
      Eigen::VectorXd drh = g.Uh.transpose() * dc;
      Eigen::VectorXd dr = drh.cwiseProduct(h_prev)
                               .cwiseProduct(r)
                               .cwiseProduct(Eigen::VectorXd::Ones(h_) - r);
      dh_prev += drh.cwiseProduct(r);
      dh_prev += g.Uz.transpose() * dz + g.Ur.transpose() * dr;
      if (dg) {
        dg->Wz.noalias() += dz * xt.transpose();
        dg->Wr.noalias() += dr * xt.transpose();
        dg->Wh.noalias() += dc * xt.transpose();
        dg->Uz.noalias() += dz * h_prev.transpose();
        dg->Ur.noalias() += dr * h_prev.transpose();
        dg->Uh.noalias() += dc * (r.cwiseProduct(h_prev)).transpose();
        dg->bz += dz;
        dg->br += dr;
        dg->bh += dc;
      }
      if (dx)
        dx->row(t) += (g.Wz.transpose() * dz + g.Wr.transpose() * dr +
                       g.Wh.transpose() * dc)
                          .transpose();
      dh_carry = std::move(dh_prev);
    }
  }

  // Backward pass from a given d(loss)/d(logit). Writes parameter grads
  // into `grads` (scattering embedding grads via `window` ids) and/or the
  // input gradient into `dx_out`.
  void run_backward(const Eigen::MatrixXd& x, const Cache& cache,
                    double dlogit, nn::Params* grads,
                    const std::vector<ApiId>* window,
                    Eigen::MatrixXd* dx_out) const {
    if (grads) {
      grads->dense_w += dlogit * cache.pooled;
      grads->dense_b += dlogit;
    }
    Eigen::VectorXd dpool = dlogit * params_.dense_w;
    std::vector<Eigen::VectorXd> dhf(static_cast<std::size_t>(n_),
                                     Eigen::VectorXd::Zero(h_));
    std::vector<Eigen::VectorXd> dhb(static_cast<std::size_t>(n_),
                                     Eigen::VectorXd::Zero(h_));
    for (int c = 0; c < 2 * h_; ++c) {
      int t = cache.pool_argmax[static_cast<std::size_t>(c)];
      if (t < 0) continue;
      if (c < h_)
        dhf[static_cast<std::size_t>(t)](c) += dpool(c);
      else
        dhb[static_cast<std::size_t>(t)](c - h_) += dpool(c);
    }
    Eigen::MatrixXd dx = Eigen::MatrixXd::Zero(n_, d_);
    backward_gru(x, params_.fwd, false, cache.zf, cache.rf, cache.cf,
                 cache.hf, dhf, grads ? &grads->fwd : nullptr, &dx);
    backward_gru(x, params_.bwd, true, cache.zb, cache.rb, cache.cb,
                 cache.hb, dhb, grads ? &grads->bwd : nullptr, &dx);
    if (grads && window) {
      for (int i = 0; i < n_; ++i) {
        ApiId id = (*window)[static_cast<std::size_t>(i)];
        if (id == 0) continue;
        if (encoding_ == Encoding::plain) {
          grads->emb.row(id) += dx.row(i);
        } else {
          const auto& a = attrs_[static_cast<std::size_t>(id)];
          grads->emb_cat.row(a[0]) += dx.row(i).segment(0, d_cat_);
          grads->emb_act.row(a[1]) += dx.row(i).segment(d_cat_, d_act_);
          grads->emb_obj.row(a[2]) +=
              dx.row(i).segment(d_cat_ + d_act_, d_obj_);
        }
      }
    }
    if (dx_out) *dx_out = std::move(dx);
  }

  Encoding encoding_ = Encoding::plain;
  int n_ = 64;
  int d_ = 16;
  int h_ = 32;
  int d_cat_ = 6, d_act_ = 5, d_obj_ = 5;
  int vocab_size_ = 0;
  std::uint64_t vocab_hash_ = 0;
  double threshold_ = 0.5;
  std::vector<std::array<int, 3>> attrs_;
  nn::Params params_;
};

// ---- training -------------------------------------------------------------

struct LabeledSample {
  std::vector<ApiId> tokens;
  Label label = Label::goodware;
};

struct EvalResult {
  double accuracy = 0.0;
  double tpr = 0.0;
  double fpr = 0.0;
};

inline EvalResult evaluate(const OracleModel& model,
                           const std::vector<LabeledSample>& data,
                           double threshold) {
  int tp = 0, fp = 0, tn = 0, fn = 0;
  for (const auto& s : data) {
    bool pred = model.forward_sequence(s.tokens) >= threshold;
    bool pos = s.label == Label::malware;
    if (pos && pred) ++tp;
    else if (pos) ++fn;
    else if (pred) ++fp;
    else ++tn;
  }
  EvalResult r;
  std::size_t n = data.size();
  r.accuracy = n ? static_cast<double>(tp + tn) / static_cast<double>(n) : 0.0;
  r.tpr = (tp + fn) ? static_cast<double>(tp) / (tp + fn) : 0.0;
  r.fpr = (fp + tn) ? static_cast<double>(fp) / (fp + tn) : 0.0;
  return r;
}

inline EvalResult evaluate(const OracleModel& model,
                           const std::vector<LabeledSample>& data) {
  return evaluate(model, data, model.threshold());
}

// Plain SGD with momentum on binary cross-entropy. Deterministic for a
// fixed seed; epoch metrics come from the validation set.
inline std::vector<EpochMetrics> train(
    OracleModel& model, const std::vector<LabeledSample>& train_set,
    const std::vector<LabeledSample>& val_set, const Hyperparams& hp) {
  if (train_set.empty()) throw TrainError("empty training set");
  bool has_pos = false, has_neg = false;
  for (const auto& s : train_set) {
    (s.label == Label::malware ? has_pos : has_neg) = true;
  }
  if (!has_pos || !has_neg)
    throw TrainError("training set must contain both labels");
  if (hp.batch < 1 || hp.epochs < 1) throw TrainError("bad hyperparams");

  nn::Params grads = model.params();
  nn::Params vel = model.params();
  grads.set_zero();
  vel.set_zero();

  Rng rng(derive_seed(hp.seed, "train"));
  std::vector<std::size_t> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  std::vector<EpochMetrics> history;
  for (int epoch = 0; epoch < hp.epochs; ++epoch) {
    rng.shuffle(order.begin(), order.end());
    double loss_sum = 0.0;
    std::size_t pos = 0;
    while (pos < order.size()) {
      std::size_t batch_end =
          std::min(order.size(), pos + static_cast<std::size_t>(hp.batch));
      grads.set_zero();
      for (std::size_t k = pos; k < batch_end; ++k) {
        const auto& s = train_set[order[k]];
        double y = s.label == Label::malware ? 1.0 : 0.0;
        // Sequence score is max over windows; the gradient flows through
        // the argmax window only.
        int wbest;
        double score = model.forward_sequence(s.tokens, wbest);
        double clamped = std::clamp(score, 1e-12, 1.0 - 1e-12);
        loss_sum += -(y * std::log(clamped) + (1 - y) * std::log(1 - clamped));
        double dlogit = score - y;  // BCE through the sigmoid
        model.backprop_window(model.window_at(s.tokens, wbest), dlogit, grads);
      }
      double inv = 1.0 / static_cast<double>(batch_end - pos);
      auto gp = grads.flat();
      auto vp = vel.flat();
      auto pp = model.params().flat();
      for (std::size_t i = 0; i < pp.size(); ++i) {
        *vp[i] = hp.momentum * *vp[i] - hp.lr * *gp[i] * inv;
        *pp[i] += *vp[i];
      }
      pos = batch_end;
    }
    // Padding embedding stays pinned at zero.
    if (model.encoding() == Encoding::plain) model.params().emb.row(0).setZero();
    if (!model.params().all_finite())
      throw TrainError("non-finite parameter after epoch " +
                       std::to_string(epoch));
    EpochMetrics m;
    EvalResult ev = evaluate(model, val_set.empty() ? train_set : val_set);
    m.accuracy = ev.accuracy;
    m.tpr = ev.tpr;
    m.fpr = ev.fpr;
    m.loss = loss_sum / static_cast<double>(train_set.size());
    history.push_back(m);
  }
  return history;
}

// Threshold sweep; raising the threshold never raises TPR or FPR.
inline std::vector<ThresholdPoint> sweep_threshold(
    const OracleModel& model, const std::vector<LabeledSample>& data,
    const std::vector<double>& thresholds) {
  std::vector<double> scores;
  std::vector<bool> pos;
  scores.reserve(data.size());
  for (const auto& s : data) {
    scores.push_back(model.forward_sequence(s.tokens));
    pos.push_back(s.label == Label::malware);
  }
  std::vector<ThresholdPoint> out;
  for (double th : thresholds) {
    int tp = 0, fp = 0, tn = 0, fn = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      bool pred = scores[i] >= th;
      if (pos[i] && pred) ++tp;
      else if (pos[i]) ++fn;
      else if (pred) ++fp;
      else ++tn;
    }
    ThresholdPoint p;
    p.threshold = th;
    p.tpr = (tp + fn) ? static_cast<double>(tp) / (tp + fn) : 0.0;
    p.fpr = (fp + tn) ? static_cast<double>(fp) / (fp + tn) : 0.0;
    out.push_back(p);
  }
  return out;
}

// ---- model files ----------------------------------------------------------

namespace detail {

inline constexpr std::uint32_t kModelMagic = 0x4d564553;  // "SEVM"
inline constexpr std::uint32_t kModelVersion = 1;

template <typename T>
void write_pod(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

template <typename T>
T read_pod(std::ifstream& in, const std::string& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!in) throw ModelError(path + ": truncated model file");
  return v;
}

}  // namespace detail

inline void save_model(const OracleModel& m, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ModelError("cannot open for writing: " + path);
  Fnv1a hash;
  auto emit = [&](const void* p, std::size_t len) {
    out.write(static_cast<const char*>(p), len);
    hash.update(p, len);
  };
  auto emit_u32 = [&](std::uint32_t v) { emit(&v, sizeof(v)); };
  auto emit_u64 = [&](std::uint64_t v) { emit(&v, sizeof(v)); };
  auto emit_f64 = [&](double v) { emit(&v, sizeof(v)); };

  emit_u32(detail::kModelMagic);
  emit_u32(detail::kModelVersion);
  emit_u32(static_cast<std::uint32_t>(m.encoding_));
  emit_u32(static_cast<std::uint32_t>(m.n_));
  emit_u32(static_cast<std::uint32_t>(m.d_));
  emit_u32(static_cast<std::uint32_t>(m.h_));
  emit_u32(static_cast<std::uint32_t>(m.vocab_size_));
  emit_u64(m.vocab_hash_);
  emit_f64(m.threshold_);
  for (const auto& a : m.attrs_)
    for (int v : a) emit_u32(static_cast<std::uint32_t>(v));
  auto flat = const_cast<OracleModel&>(m).params_.flat();
  emit_u64(flat.size());
  for (double* p : flat) emit_f64(*p);
  detail::write_pod(out, hash.digest());
  if (!out) throw ModelError("write failed: " + path);
}

inline OracleModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ModelError("cannot open for reading: " + path);
  Fnv1a hash;
  auto take = [&](void* p, std::size_t len) {
    in.read(static_cast<char*>(p), len);
    if (!in) throw ModelError(path + ": truncated model file");
    hash.update(p, len);
  };
  auto take_u32 = [&] {
    std::uint32_t v;
    take(&v, sizeof(v));
    return v;
  };
  auto take_u64 = [&] {
    std::uint64_t v;
    take(&v, sizeof(v));
    return v;
  };
  auto take_f64 = [&] {
    double v;
    take(&v, sizeof(v));
    return v;
  };

  if (take_u32() != detail::kModelMagic)
    throw ModelError(path + ": not a model file");
  if (take_u32() != detail::kModelVersion)
    throw ModelError(path + ": unsupported model version");
  OracleModel m;
  m.encoding_ = static_cast<Encoding>(take_u32());
  m.n_ = static_cast<int>(take_u32());
  m.d_ = static_cast<int>(take_u32());
  m.h_ = static_cast<int>(take_u32());
  m.vocab_size_ = static_cast<int>(take_u32());
  m.vocab_hash_ = take_u64();
  m.threshold_ = take_f64();
  m.d_act_ = m.d_ / 3;
  m.d_obj_ = m.d_ / 3;
  m.d_cat_ = m.d_ - 2 * (m.d_ / 3);
  m.attrs_.resize(static_cast<std::size_t>(m.vocab_size_) + 1);
  for (auto& a : m.attrs_)
    for (int& v : a) v = static_cast<int>(take_u32());
  m.params_.emb.setZero(m.vocab_size_ + 1, m.d_);
  m.params_.emb_cat.setZero(kNumCategories, m.d_cat_);
  m.params_.emb_act.setZero(kNumActions, m.d_act_);
  m.params_.emb_obj.setZero(kNumObjects, m.d_obj_);
  m.params_.fwd.resize(m.h_, m.d_);
  m.params_.bwd.resize(m.h_, m.d_);
  m.params_.dense_w.setZero(2 * m.h_);
  auto flat = m.params_.flat();
  std::uint64_t count = take_u64();
  if (count != flat.size())
    throw ModelError(path + ": parameter count mismatch");
  for (double* p : flat) *p = take_f64();
  std::uint64_t want = detail::read_pod<std::uint64_t>(in, path);
  if (want != hash.digest())
    throw ModelError(path + ": checksum mismatch (corrupted file)");
  return m;
}

}  // namespace seqevade
