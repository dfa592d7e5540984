#pragma once

// Shared test utilities: random dataset builders, a finite-difference check
// of the full ELBO gradient, and a reference single-view VAE assembled
// directly from the mlp/gaussian primitives (used to pin down the claim that
// the multi-view model with M = 1 degenerates into a standard VAE).

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "mvfuse/dataset.hpp"
#include "mvfuse/gaussian.hpp"
#include "mvfuse/mlp.hpp"
#include "mvfuse/mvvae.hpp"
#include "mvfuse/rng.hpp"

namespace mvfuse_test {

using namespace mvfuse;

inline MultiViewDataset make_random_dataset(long n, const std::vector<int>& dims,
                                            std::uint64_t seed) {
  Rng rng(seed);
  MultiViewDataset ds;
  for (std::size_t m = 0; m < dims.size(); ++m) {
    ds.view_names.push_back("view" + std::to_string(m));
    Eigen::MatrixXd v(n, dims[m]);
    for (long i = 0; i < n; ++i)
      for (int j = 0; j < dims[m]; ++j) v(i, j) = rng.uniform();
    ds.views.push_back(std::move(v));
  }
  ds.presence.resize(n, static_cast<long>(dims.size()));
  ds.presence.setConstant(true);
  ds.phenotype.resize(n);
  for (long i = 0; i < n; ++i) ds.phenotype[i] = rng.normal();
  for (long i = 0; i < n; ++i) ds.subject_ids.push_back("S" + std::to_string(i));
  return ds;
}

inline void zero_params(MlpParams& p) {
  for (auto& w : p.weights) w.setZero();
  for (auto& b : p.biases) b.setZero();
}

// Central finite differences of elbo_loss().total over every parameter of
// every network, against elbo_with_gradients.
inline double fd_elbo_max_rel_error(MvvaeModel model, const MultiViewBatch& batch,
                                    const Eigen::MatrixXd& eps, double h = 1e-5) {
  const auto [terms, grads] = elbo_with_gradients(model, batch, eps);
  (void)terms;
  double max_rel = 0.0;
  const auto check_net = [&](MlpParams& params, const MlpGrads& net_grads) {
    for (std::size_t l = 0; l < params.weights.size(); ++l) {
      auto& w = params.weights[l];
      for (Eigen::Index r = 0; r < w.rows(); ++r) {
        for (Eigen::Index c = 0; c < w.cols(); ++c) {
          const double saved = w(r, c);
          w(r, c) = saved + h;
          const double up = elbo_loss(model, batch, eps).total;
          w(r, c) = saved - h;
          const double dn = elbo_loss(model, batch, eps).total;
          w(r, c) = saved;
          max_rel = std::max(max_rel,
                             relative_error(net_grads.weights[l](r, c), (up - dn) / (2 * h)));
        }
      }
      auto& b = params.biases[l];
      for (Eigen::Index r = 0; r < b.size(); ++r) {
        const double saved = b[r];
        b[r] = saved + h;
        const double up = elbo_loss(model, batch, eps).total;
        b[r] = saved - h;
        const double dn = elbo_loss(model, batch, eps).total;
        b[r] = saved;
        max_rel = std::max(max_rel, relative_error(net_grads.biases[l][r], (up - dn) / (2 * h)));
      }
    }
  };
  for (int m = 0; m < model.config.n_views(); ++m) {
    check_net(model.enc_mean[m], grads.enc_mean[static_cast<std::size_t>(m)]);
    check_net(model.enc_logvar[m], grads.enc_logvar[static_cast<std::size_t>(m)]);
    check_net(model.dec[m], grads.dec[static_cast<std::size_t>(m)]);
  }
  return max_rel;
}

// Standard single-view VAE: encoder-mean/encoder-logvar nets, the
// reparameterization trick, per-view sigmoid decoder, Bernoulli
// cross-entropy + closed-form KL, trained with the same optimizer and seeded
// streams as mvfuse::train.
struct ReferenceVae {
  MlpParams enc_mu, enc_lv, dec;
  double kl_weight = 1.0;
};

inline TrainHistory reference_vae_train(ReferenceVae& net, const MultiViewDataset& ds,
                                        const TrainConfig& cfg) {
  const long n = ds.n_subjects();
  const long latent = net.enc_mu.output_dim();
  Rng rng_shuffle(derive_seed(cfg.seed, "train.shuffle"));
  Rng rng_eps(derive_seed(cfg.seed, "train.eps"));
  OptimizerState st_mu = OptimizerState::for_params(net.enc_mu, cfg.adam);
  OptimizerState st_lv = OptimizerState::for_params(net.enc_lv, cfg.adam);
  OptimizerState st_dec = OptimizerState::for_params(net.dec, cfg.adam);

  TrainHistory hist;
  std::vector<long> order(static_cast<std::size_t>(n));
  for (long i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (cfg.shuffle) rng_shuffle.shuffle(order);
    double sum_total = 0.0, sum_recon = 0.0, sum_kl = 0.0;
    for (long start = 0; start < n; start += cfg.batch_size) {
      const long b = std::min<long>(cfg.batch_size, n - start);
      Eigen::MatrixXd x(b, ds.views[0].cols());
      for (long i = 0; i < b; ++i) x.row(i) = ds.views[0].row(order[static_cast<std::size_t>(start + i)]);
      Eigen::MatrixXd eps(b, latent);
      for (long i = 0; i < b; ++i)
        for (long d = 0; d < latent; ++d) eps(i, d) = rng_eps.normal();

      const ForwardTape tape_mu = forward(net.enc_mu, x);
      const ForwardTape tape_lv = forward(net.enc_lv, x);
      const Eigen::MatrixXd& mu = tape_mu.output();
      const Eigen::MatrixXd& lv_raw = tape_lv.output();
      const Eigen::MatrixXd lv = lv_raw.cwiseMax(kLogVarMin).cwiseMin(kLogVarMax);
      Eigen::MatrixXd z(b, latent);
      for (long i = 0; i < b; ++i)
        for (long d = 0; d < latent; ++d)
          z(i, d) = mu(i, d) + std::exp(0.5 * lv(i, d)) * eps(i, d);
      const ForwardTape tape_dec = forward(net.dec, z);
      const Eigen::MatrixXd& xhat = tape_dec.output();

      double recon_sum = 0.0;
      for (long i = 0; i < b; ++i)
        for (long j = 0; j < x.cols(); ++j)
          recon_sum += detail::bernoulli_ce(x(i, j), xhat(i, j));
      double kl_sum = 0.0;
      for (long i = 0; i < b; ++i) {
        kl_sum += kl_to_standard_normal(
            DiagGaussian::unchecked(mu.row(i).transpose(), lv.row(i).transpose()));
      }
      const double inv_b = 1.0 / static_cast<double>(b);
      const double recon = recon_sum / static_cast<double>(b);
      const double kl = kl_sum / static_cast<double>(b);
      const double total = recon + net.kl_weight * kl;

      Eigen::MatrixXd dxhat(b, x.cols());
      for (long i = 0; i < b; ++i)
        for (long j = 0; j < x.cols(); ++j)
          dxhat(i, j) = detail::bernoulli_ce_grad(x(i, j), xhat(i, j)) * inv_b;
      auto [dec_grads, dz] = backward(net.dec, tape_dec, dxhat);

      Eigen::MatrixXd dmu(b, latent), dlv(b, latent);
      for (long i = 0; i < b; ++i) {
        for (long d = 0; d < latent; ++d) {
          dmu(i, d) = dz(i, d) + net.kl_weight * inv_b * mu(i, d);
          dlv(i, d) = dz(i, d) * eps(i, d) * 0.5 * std::exp(0.5 * lv(i, d)) +
                      net.kl_weight * inv_b * 0.5 * (std::exp(lv(i, d)) - 1.0);
        }
      }
      for (long i = 0; i < b; ++i)
        for (long d = 0; d < latent; ++d)
          if (lv_raw(i, d) < kLogVarMin || lv_raw(i, d) > kLogVarMax) dlv(i, d) = 0.0;

      auto mu_grads = backward(net.enc_mu, tape_mu, dmu).first;
      auto lv_grads = backward(net.enc_lv, tape_lv, dlv).first;
      adam_step(net.enc_mu, mu_grads, st_mu);
      adam_step(net.enc_lv, lv_grads, st_lv);
      adam_step(net.dec, dec_grads, st_dec);

      sum_total += total * static_cast<double>(b);
      sum_recon += recon * static_cast<double>(b);
      sum_kl += kl * static_cast<double>(b);
    }
    hist.total.push_back(sum_total / static_cast<double>(n));
    hist.recon.push_back(sum_recon / static_cast<double>(n));
    hist.kl.push_back(sum_kl / static_cast<double>(n));
  }
  return hist;
}

}  // namespace mvfuse_test
