#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mvfuse/csv.hpp"
#include "mvfuse/dataset.hpp"
#include "mvfuse/gaussian.hpp"
#include "mvfuse/mlp.hpp"
#include "mvfuse/rng.hpp"

namespace mvfuse {

struct MvvaeConfig {
  std::vector<std::string> view_names;
  std::vector<int> view_dims;
  int latent_dim = 8;
  std::vector<int> encoder_hidden;
  std::vector<int> decoder_hidden;
  Activation hidden_activation = Activation::kRelu;
  double kl_weight = 1.0;

  int n_views() const { return static_cast<int>(view_dims.size()); }

  void validate() const {
    if (view_dims.empty()) throw std::invalid_argument("MvvaeConfig: need at least one view");
    if (view_names.size() != view_dims.size()) {
      throw std::invalid_argument("MvvaeConfig: view_names/view_dims length mismatch");
    }
    for (int d : view_dims)
      if (d < 1) throw std::invalid_argument("MvvaeConfig: view dims must be positive");
    if (latent_dim < 1) throw std::invalid_argument("MvvaeConfig: latent_dim must be positive");
    for (int h : encoder_hidden)
      if (h < 1) throw std::invalid_argument("MvvaeConfig: hidden sizes must be positive");
    for (int h : decoder_hidden)
      if (h < 1) throw std::invalid_argument("MvvaeConfig: hidden sizes must be positive");
    if (kl_weight < 0.0) throw std::invalid_argument("MvvaeConfig: kl_weight must be >= 0");
  }

  MlpSpec encoder_spec(int view) const {
    MlpSpec s;
    s.layer_sizes.push_back(view_dims[view]);
    for (int h : encoder_hidden) s.layer_sizes.push_back(h);
    s.layer_sizes.push_back(latent_dim);
    s.hidden_activation = hidden_activation;
    s.output_activation = Activation::kIdentity;
    return s;
  }

  MlpSpec decoder_spec(int view) const {
    MlpSpec s;
    s.layer_sizes.push_back(latent_dim);
    for (int h : decoder_hidden) s.layer_sizes.push_back(h);
    s.layer_sizes.push_back(view_dims[view]);
    s.hidden_activation = hidden_activation;
    s.output_activation = Activation::kSigmoid;
    return s;
  }
};

// Per view m: an encoder-mean net, an encoder-logvar net (no shared
// parameters) and a sigmoid-output decoder net.
struct MvvaeModel {
  MvvaeConfig config;
  std::vector<MlpParams> enc_mean;
  std::vector<MlpParams> enc_logvar;
  std::vector<MlpParams> dec;

  static MvvaeModel init(const MvvaeConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    MvvaeModel m;
    m.config = cfg;
    for (int v = 0; v < cfg.n_views(); ++v) {
      m.enc_mean.push_back(init_params(cfg.encoder_spec(v),
                                       derive_seed(seed, "enc_mean." + std::to_string(v))));
      m.enc_logvar.push_back(init_params(cfg.encoder_spec(v),
                                         derive_seed(seed, "enc_logvar." + std::to_string(v))));
      m.dec.push_back(init_params(cfg.decoder_spec(v),
                                  derive_seed(seed, "dec." + std::to_string(v))));
    }
    return m;
  }
};

// One training batch: per-view feature matrices (rows of absent views hold
// zeros) plus the view-presence mask.
struct MultiViewBatch {
  std::vector<Eigen::MatrixXd> views;
  BoolArray mask;  // B x M

  long rows() const { return mask.rows(); }
};

inline MultiViewBatch batch_from_dataset(const MultiViewDataset& ds,
                                         const std::vector<long>& idx) {
  MultiViewBatch b;
  b.views.reserve(ds.views.size());
  for (const auto& v : ds.views) {
    Eigen::MatrixXd sub(static_cast<long>(idx.size()), v.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) sub.row(static_cast<long>(i)) = v.row(idx[i]);
    b.views.push_back(std::move(sub));
  }
  b.mask.resize(static_cast<long>(idx.size()), ds.presence.cols());
  for (std::size_t i = 0; i < idx.size(); ++i)
    b.mask.row(static_cast<long>(i)) = ds.presence.row(idx[i]);
  return b;
}

inline void check_unit_interval(const Eigen::MatrixXd& x, const std::string& what) {
  for (long j = 0; j < x.cols(); ++j) {
    for (long i = 0; i < x.rows(); ++i) {
      const double v = x(i, j);
      if (!(v >= 0.0 && v <= 1.0)) {
        throw std::invalid_argument(what + ": column " + std::to_string(j) +
                                    " has value " + std::to_string(v) +
                                    " outside [0,1]; min-max scale the features first");
      }
    }
  }
}

// Per-subject approximate posteriors of one view: mean = MLP_mu(x),
// log-variance = MLP_logvar(x) clamped into the DiagGaussian range.
inline std::vector<DiagGaussian> encode_view(const MvvaeModel& model, int view,
                                             const Eigen::MatrixXd& x) {
  if (view < 0 || view >= model.config.n_views()) {
    throw std::invalid_argument("encode_view: view index out of range");
  }
  check_unit_interval(x, "encode_view");
  const Eigen::MatrixXd mu = forward(model.enc_mean[view], x).output();
  const Eigen::MatrixXd lv = forward(model.enc_logvar[view], x).output();
  std::vector<DiagGaussian> out;
  out.reserve(static_cast<std::size_t>(x.rows()));
  for (long i = 0; i < x.rows(); ++i) {
    Vector m = mu.row(i).transpose();
    Vector l = lv.row(i).transpose();
    for (long d = 0; d < l.size(); ++d) l[d] = std::clamp(l[d], kLogVarMin, kLogVarMax);
    out.push_back(DiagGaussian::unchecked(std::move(m), std::move(l)));
  }
  return out;
}

// Product-of-experts posterior over exactly the available views. With one
// available view the result is that view's Gaussian, bit-equal.
inline DiagGaussian fuse_posterior(
    const std::vector<std::pair<int, DiagGaussian>>& per_view,
    const std::vector<bool>& available) {
  std::vector<DiagGaussian> experts;
  for (const auto& [view, g] : per_view) {
    if (view < 0 || view >= static_cast<int>(available.size())) {
      throw std::invalid_argument("fuse_posterior: view index out of range");
    }
    if (available[static_cast<std::size_t>(view)]) experts.push_back(g);
  }
  if (experts.empty()) {
    throw std::invalid_argument("fuse_posterior: all views missing");
  }
  return poe_fuse(experts);
}

inline Eigen::MatrixXd decode_view(const MvvaeModel& model, int view,
                                   const Eigen::MatrixXd& z) {
  if (view < 0 || view >= model.config.n_views()) {
    throw std::invalid_argument("decode_view: view index out of range");
  }
  return forward(model.dec[view], z).output();
}

namespace detail {

constexpr double kBceFloor = 1e-7;

// -[x log(xhat) + (1-x) log(1-xhat)] with both log arguments floored at
// kBceFloor; the gradient below is the exact derivative of this expression.
inline double bernoulli_ce(double x, double xhat) {
  return -(x * std::log(std::max(xhat, kBceFloor)) +
           (1.0 - x) * std::log(std::max(1.0 - xhat, kBceFloor)));
}

inline double bernoulli_ce_grad(double x, double xhat) {
  double g = 0.0;
  if (xhat > kBceFloor) g -= x / xhat;
  if (1.0 - xhat > kBceFloor) g += (1.0 - x) / (1.0 - xhat);
  return g;
}

// Fused posterior parameters for a batch, with the per-view precisions kept
// for the backward pass. Rows with a single available view copy that view's
// parameters so the single-view model is bit-identical to a plain VAE.
struct FusedBatch {
  Eigen::MatrixXd mu;        // B x D
  Eigen::MatrixXd lv;        // B x D
  std::vector<std::vector<int>> avail;  // per subject, available view indices
  std::vector<Eigen::MatrixXd> prec;    // per view, B x D (valid on multi-view rows)
  Eigen::MatrixXd prec_sum;             // B x D
};

inline FusedBatch fuse_batch(const std::vector<Eigen::MatrixXd>& mu_m,
                             const std::vector<Eigen::MatrixXd>& lv_m,
                             const BoolArray& mask) {
  const long B = mask.rows();
  const int M = static_cast<int>(mu_m.size());
  const long D = mu_m.empty() ? 0 : mu_m[0].cols();
  FusedBatch f;
  f.mu.resize(B, D);
  f.lv.resize(B, D);
  f.prec.assign(static_cast<std::size_t>(M), Eigen::MatrixXd::Zero(B, D));
  f.prec_sum = Eigen::MatrixXd::Zero(B, D);
  f.avail.resize(static_cast<std::size_t>(B));
  for (long i = 0; i < B; ++i) {
    auto& avail = f.avail[static_cast<std::size_t>(i)];
    for (int m = 0; m < M; ++m)
      if (mask(i, m)) avail.push_back(m);
    if (avail.empty()) {
      throw std::invalid_argument("fuse_batch: subject " + std::to_string(i) +
                                  " has no available view");
    }
    if (avail.size() == 1) {
      const int m = avail[0];
      f.mu.row(i) = mu_m[static_cast<std::size_t>(m)].row(i);
      f.lv.row(i) = lv_m[static_cast<std::size_t>(m)].row(i);
      continue;
    }
    for (long d = 0; d < D; ++d) {
      double total_prec = 0.0;
      double weighted = 0.0;
      for (int m : avail) {
        const double p = std::exp(-lv_m[static_cast<std::size_t>(m)](i, d));
        f.prec[static_cast<std::size_t>(m)](i, d) = p;
        total_prec += p;
        weighted += mu_m[static_cast<std::size_t>(m)](i, d) * p;
      }
      f.prec_sum(i, d) = total_prec;
      f.mu(i, d) = weighted / total_prec;
      f.lv(i, d) = -std::log(total_prec);
    }
  }
  return f;
}

}  // namespace detail

struct ElboTerms {
  double total = 0.0;
  double recon = 0.0;
  double kl = 0.0;
};

// Loss terms from already-computed fused posterior parameters and per-view
// reconstructions; elbo_loss calls this after the model forward pass.
// recon and kl are per-subject (batch-summed then divided by batch size).
inline ElboTerms elbo_terms_from(const Eigen::MatrixXd& mu_z,
                                 const Eigen::MatrixXd& lv_z,
                                 const std::vector<Eigen::MatrixXd>& x,
                                 const std::vector<Eigen::MatrixXd>& xhat,
                                 const BoolArray& mask, double kl_weight) {
  const long B = mu_z.rows();
  if (B == 0) throw std::invalid_argument("elbo_terms_from: empty batch");
  double recon_sum = 0.0;
  for (std::size_t m = 0; m < x.size(); ++m) {
    for (long i = 0; i < B; ++i) {
      if (!mask(i, static_cast<long>(m))) continue;
      for (long j = 0; j < x[m].cols(); ++j) {
        recon_sum += detail::bernoulli_ce(x[m](i, j), xhat[m](i, j));
      }
    }
  }
  double kl_sum = 0.0;
  for (long i = 0; i < B; ++i) {
    double kl_i = 0.0;
    for (long d = 0; d < mu_z.cols(); ++d) {
      const double mu = mu_z(i, d);
      const double lv = lv_z(i, d);
      kl_i += 0.5 * (mu * mu + std::exp(lv) - lv - 1.0);
    }
    kl_sum += kl_i;
  }
  ElboTerms t;
  t.recon = recon_sum / static_cast<double>(B);
  t.kl = kl_sum / static_cast<double>(B);
  t.total = t.recon + kl_weight * t.kl;
  return t;
}

struct MvvaeGrads {
  std::vector<MlpGrads> enc_mean, enc_logvar, dec;

  static MvvaeGrads zeros_like(const MvvaeModel& model) {
    MvvaeGrads g;
    for (int m = 0; m < model.config.n_views(); ++m) {
      g.enc_mean.push_back(MlpGrads::zeros_like(model.enc_mean[m]));
      g.enc_logvar.push_back(MlpGrads::zeros_like(model.enc_logvar[m]));
      g.dec.push_back(MlpGrads::zeros_like(model.dec[m]));
    }
    return g;
  }
};

namespace detail {

struct ElboWork {
  ElboTerms terms;
  std::vector<ForwardTape> tape_mu, tape_lv, tape_dec;
  std::vector<Eigen::MatrixXd> lv_raw;  // pre-clamp encoder-logvar outputs
  std::vector<Eigen::MatrixXd> lv_clamped;
  std::vector<Eigen::MatrixXd> mu_views;
  std::vector<Eigen::MatrixXd> xhat;
  FusedBatch fused;
  Eigen::MatrixXd z;
};

inline ElboWork elbo_forward(const MvvaeModel& model, const MultiViewBatch& batch,
                             const Eigen::MatrixXd& eps) {
  const int M = model.config.n_views();
  if (static_cast<int>(batch.views.size()) != M || batch.mask.cols() != M) {
    throw std::invalid_argument("elbo: batch does not match model view count");
  }
  const long B = batch.rows();
  const long D = model.config.latent_dim;
  if (eps.rows() != B || eps.cols() != D) {
    throw std::invalid_argument("elbo: eps must be batch x latent_dim");
  }
  ElboWork w;
  w.tape_mu.reserve(static_cast<std::size_t>(M));
  w.tape_lv.reserve(static_cast<std::size_t>(M));
  for (int m = 0; m < M; ++m) {
    w.tape_mu.push_back(forward(model.enc_mean[m], batch.views[static_cast<std::size_t>(m)]));
    w.tape_lv.push_back(forward(model.enc_logvar[m], batch.views[static_cast<std::size_t>(m)]));
    w.mu_views.push_back(w.tape_mu.back().output());
    const Eigen::MatrixXd& raw = w.tape_lv.back().output();
    w.lv_raw.push_back(raw);
    w.lv_clamped.push_back(raw.cwiseMax(kLogVarMin).cwiseMin(kLogVarMax));
  }
  w.fused = fuse_batch(w.mu_views, w.lv_clamped, batch.mask);
  w.z.resize(B, D);
  for (long i = 0; i < B; ++i) {
    for (long d = 0; d < D; ++d) {
      w.z(i, d) = w.fused.mu(i, d) + std::exp(0.5 * w.fused.lv(i, d)) * eps(i, d);
    }
  }
  w.tape_dec.reserve(static_cast<std::size_t>(M));
  for (int m = 0; m < M; ++m) {
    w.tape_dec.push_back(forward(model.dec[m], w.z));
    w.xhat.push_back(w.tape_dec.back().output());
  }
  w.terms = elbo_terms_from(w.fused.mu, w.fused.lv, batch.views, w.xhat, batch.mask,
                            model.config.kl_weight);
  return w;
}

}  // namespace detail

// Closed-form loss of one batch: total = recon + kl_weight * kl with a single
// shared reparameterized sample feeding every decoder.
inline ElboTerms elbo_loss(const MvvaeModel& model, const MultiViewBatch& batch,
                           const Eigen::MatrixXd& eps) {
  return detail::elbo_forward(model, batch, eps).terms;
}

// Loss plus exact gradients for every network parameter.
inline std::pair<ElboTerms, MvvaeGrads> elbo_with_gradients(
    const MvvaeModel& model, const MultiViewBatch& batch, const Eigen::MatrixXd& eps) {
  const int M = model.config.n_views();
  const long B = batch.rows();
  const long D = model.config.latent_dim;
  detail::ElboWork w = detail::elbo_forward(model, batch, eps);
  const double inv_b = 1.0 / static_cast<double>(B);
  const double kw = model.config.kl_weight;

  MvvaeGrads grads;
  grads.enc_mean.resize(static_cast<std::size_t>(M));
  grads.enc_logvar.resize(static_cast<std::size_t>(M));
  grads.dec.resize(static_cast<std::size_t>(M));

  // Reconstruction path: d loss / d xhat, masked rows contribute nothing.
  Eigen::MatrixXd dz = Eigen::MatrixXd::Zero(B, D);
  for (int m = 0; m < M; ++m) {
    const auto& x = batch.views[static_cast<std::size_t>(m)];
    const auto& xhat = w.xhat[static_cast<std::size_t>(m)];
    Eigen::MatrixXd dxhat = Eigen::MatrixXd::Zero(B, x.cols());
    for (long i = 0; i < B; ++i) {
      if (!batch.mask(i, m)) continue;
      for (long j = 0; j < x.cols(); ++j) {
        dxhat(i, j) = detail::bernoulli_ce_grad(x(i, j), xhat(i, j)) * inv_b;
      }
    }
    auto [dec_grads, dz_m] = backward(model.dec[m], w.tape_dec[static_cast<std::size_t>(m)], dxhat);
    grads.dec[static_cast<std::size_t>(m)] = std::move(dec_grads);
    dz += dz_m;
  }

  // Gradients with respect to the fused posterior parameters: sampling path
  // plus the closed-form KL term.
  Eigen::MatrixXd dmu_z(B, D);
  Eigen::MatrixXd dlv_z(B, D);
  for (long i = 0; i < B; ++i) {
    for (long d = 0; d < D; ++d) {
      const double lv = w.fused.lv(i, d);
      dmu_z(i, d) = dz(i, d) + kw * inv_b * w.fused.mu(i, d);
      dlv_z(i, d) = dz(i, d) * eps(i, d) * 0.5 * std::exp(0.5 * lv) +
                    kw * inv_b * 0.5 * (std::exp(lv) - 1.0);
    }
  }

  // Fusion backward: single-view rows pass gradients straight through;
  // multi-view rows use the precision-weighted chain rule.
  std::vector<Eigen::MatrixXd> dmu_m(static_cast<std::size_t>(M),
                                     Eigen::MatrixXd::Zero(B, D));
  std::vector<Eigen::MatrixXd> dlv_m(static_cast<std::size_t>(M),
                                     Eigen::MatrixXd::Zero(B, D));
  for (long i = 0; i < B; ++i) {
    const auto& avail = w.fused.avail[static_cast<std::size_t>(i)];
    if (avail.size() == 1) {
      const int m = avail[0];
      dmu_m[static_cast<std::size_t>(m)].row(i) = dmu_z.row(i);
      dlv_m[static_cast<std::size_t>(m)].row(i) = dlv_z.row(i);
      continue;
    }
    for (long d = 0; d < D; ++d) {
      const double total_prec = w.fused.prec_sum(i, d);
      const double a = dmu_z(i, d);
      const double b = dlv_z(i, d);
      for (int m : avail) {
        const double p = w.fused.prec[static_cast<std::size_t>(m)](i, d);
        const double mu_m = w.mu_views[static_cast<std::size_t>(m)](i, d);
        dmu_m[static_cast<std::size_t>(m)](i, d) = a * p / total_prec;
        dlv_m[static_cast<std::size_t>(m)](i, d) =
            p * (b - a * (mu_m - w.fused.mu(i, d))) / total_prec;
      }
    }
  }

  for (int m = 0; m < M; ++m) {
    // Clamp derivative: zero outside the admissible log-variance range.
    Eigen::MatrixXd dlv_raw = dlv_m[static_cast<std::size_t>(m)];
    const auto& raw = w.lv_raw[static_cast<std::size_t>(m)];
    for (long i = 0; i < B; ++i)
      for (long d = 0; d < D; ++d)
        if (raw(i, d) < kLogVarMin || raw(i, d) > kLogVarMax) dlv_raw(i, d) = 0.0;
    grads.enc_mean[static_cast<std::size_t>(m)] =
        backward(model.enc_mean[m], w.tape_mu[static_cast<std::size_t>(m)],
                 dmu_m[static_cast<std::size_t>(m)]).first;
    grads.enc_logvar[static_cast<std::size_t>(m)] =
        backward(model.enc_logvar[m], w.tape_lv[static_cast<std::size_t>(m)], dlv_raw).first;
  }
  return {w.terms, std::move(grads)};
}

struct TrainConfig {
  int epochs = 100;
  int batch_size = 64;
  std::uint64_t seed = 0;
  AdamConfig adam;
  bool shuffle = true;
};

struct TrainHistory {
  std::vector<double> total, recon, kl;
};

// Minibatch gradient descent on the closed-form loss. Deterministic given the
// seed: shuffling, eps draws and (upstream) parameter init are all seeded.
inline TrainHistory train(MvvaeModel& model, const MultiViewDataset& ds,
                          const TrainConfig& cfg) {
  ds.validate();
  if (ds.n_views() != model.config.n_views()) {
    throw std::invalid_argument("train: dataset view count does not match model");
  }
  for (int m = 0; m < ds.n_views(); ++m) {
    if (ds.views[static_cast<std::size_t>(m)].cols() != model.config.view_dims[static_cast<std::size_t>(m)]) {
      throw std::invalid_argument("train: view '" + ds.view_names[static_cast<std::size_t>(m)] +
                                  "' dimension mismatch");
    }
    check_unit_interval(ds.views[static_cast<std::size_t>(m)],
                        "train view '" + ds.view_names[static_cast<std::size_t>(m)] + "'");
  }
  const long n = ds.n_subjects();
  if (cfg.batch_size < 1 || cfg.batch_size > n) {
    throw std::invalid_argument("train: batch_size must be in [1, n_subjects]");
  }
  const long D = model.config.latent_dim;
  Rng rng_shuffle(derive_seed(cfg.seed, "train.shuffle"));
  Rng rng_eps(derive_seed(cfg.seed, "train.eps"));

  std::vector<OptimizerState> st_mean, st_logvar, st_dec;
  for (int m = 0; m < model.config.n_views(); ++m) {
    st_mean.push_back(OptimizerState::for_params(model.enc_mean[m], cfg.adam));
    st_logvar.push_back(OptimizerState::for_params(model.enc_logvar[m], cfg.adam));
    st_dec.push_back(OptimizerState::for_params(model.dec[m], cfg.adam));
  }

  TrainHistory hist;
  std::vector<long> order(static_cast<std::size_t>(n));
  for (long i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (cfg.shuffle) rng_shuffle.shuffle(order);
    double sum_total = 0.0, sum_recon = 0.0, sum_kl = 0.0;
    for (long start = 0; start < n; start += cfg.batch_size) {
      const long b = std::min<long>(cfg.batch_size, n - start);
      std::vector<long> idx(order.begin() + start, order.begin() + start + b);
      MultiViewBatch batch = batch_from_dataset(ds, idx);
      Eigen::MatrixXd eps(b, D);
      for (long i = 0; i < b; ++i)
        for (long d = 0; d < D; ++d) eps(i, d) = rng_eps.normal();
      const std::string where = "epoch " + std::to_string(epoch) + " batch " +
                                std::to_string(start / cfg.batch_size);
      ElboTerms terms;
      try {
        auto [t, grads] = elbo_with_gradients(model, batch, eps);
        terms = t;
        if (!std::isfinite(terms.total)) {
          throw NumericError("non-finite loss");
        }
        for (int m = 0; m < model.config.n_views(); ++m) {
          adam_step(model.enc_mean[m], grads.enc_mean[static_cast<std::size_t>(m)], st_mean[static_cast<std::size_t>(m)]);
          adam_step(model.enc_logvar[m], grads.enc_logvar[static_cast<std::size_t>(m)], st_logvar[static_cast<std::size_t>(m)]);
          adam_step(model.dec[m], grads.dec[static_cast<std::size_t>(m)], st_dec[static_cast<std::size_t>(m)]);
        }
      } catch (const std::exception& e) {
        throw NumericError("train: numerical failure at " + where + ": " + e.what());
      }
      sum_total += terms.total * static_cast<double>(b);
      sum_recon += terms.recon * static_cast<double>(b);
      sum_kl += terms.kl * static_cast<double>(b);
    }
    hist.total.push_back(sum_total / static_cast<double>(n));
    hist.recon.push_back(sum_recon / static_cast<double>(n));
    hist.kl.push_back(sum_kl / static_cast<double>(n));
  }
  return hist;
}

// Inference-time latent: the fused posterior mean (no sampling), for a whole
// batch at once.
inline Eigen::MatrixXd extract_latents(const MvvaeModel& model, const MultiViewBatch& batch) {
  const int M = model.config.n_views();
  if (static_cast<int>(batch.views.size()) != M || batch.mask.cols() != M) {
    throw std::invalid_argument("extract_latents: batch does not match model");
  }
  std::vector<Eigen::MatrixXd> mu_m, lv_m;
  for (int m = 0; m < M; ++m) {
    mu_m.push_back(forward(model.enc_mean[m], batch.views[static_cast<std::size_t>(m)]).output());
    Eigen::MatrixXd lv = forward(model.enc_logvar[m], batch.views[static_cast<std::size_t>(m)]).output();
    lv_m.push_back(lv.cwiseMax(kLogVarMin).cwiseMin(kLogVarMax));
  }
  return detail::fuse_batch(mu_m, lv_m, batch.mask).mu;
}

// Single-sample convenience wrapper.
inline Vector extract_latent(const MvvaeModel& model,
                             const std::vector<Vector>& features,
                             const std::vector<bool>& available) {
  const int M = model.config.n_views();
  if (static_cast<int>(features.size()) != M || static_cast<int>(available.size()) != M) {
    throw std::invalid_argument("extract_latent: need one feature vector and flag per view");
  }
  MultiViewBatch batch;
  batch.mask.resize(1, M);
  for (int m = 0; m < M; ++m) {
    Eigen::MatrixXd row(1, model.config.view_dims[static_cast<std::size_t>(m)]);
    if (available[static_cast<std::size_t>(m)]) {
      if (features[static_cast<std::size_t>(m)].size() != row.cols()) {
        throw std::invalid_argument("extract_latent: view dimension mismatch");
      }
      row = features[static_cast<std::size_t>(m)].transpose();
    } else {
      row.setZero();
    }
    batch.views.push_back(std::move(row));
    batch.mask(0, m) = available[static_cast<std::size_t>(m)];
  }
  return extract_latents(model, batch).row(0).transpose();
}

}  // namespace mvfuse
