#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mvfuse/dataset.hpp"
#include "mvfuse/genetics.hpp"
#include "mvfuse/mvvae.hpp"
#include "mvfuse/rng.hpp"

namespace mvfuse {

// Minimum-norm least squares for y ~ [1 | Z]; intercept first. The SVD-based
// solve keeps degenerate designs (e.g. an all-zero latent) well defined.
inline Eigen::VectorXd fit_linear_head(const Eigen::MatrixXd& Z, const Eigen::VectorXd& y) {
  if (Z.rows() != y.size()) throw std::invalid_argument("fit_linear_head: row count mismatch");
  if (Z.rows() <= Z.cols() + 1) {
    throw std::invalid_argument("fit_linear_head: need more subjects than latent dims + 1");
  }
  Eigen::MatrixXd design(Z.rows(), Z.cols() + 1);
  design.col(0).setOnes();
  design.rightCols(Z.cols()) = Z;
  Eigen::BDCSVD<Eigen::MatrixXd> svd(design, Eigen::ComputeThinU | Eigen::ComputeThinV);
  return svd.solve(y);
}

inline Eigen::VectorXd predict_linear(const Eigen::VectorXd& weights, const Eigen::MatrixXd& Z) {
  if (weights.size() != Z.cols() + 1) {
    throw std::invalid_argument("predict_linear: weight length must be latent dims + 1");
  }
  return (Z * weights.tail(Z.cols())).array() + weights[0];
}

struct MetricsReport {
  double mae = 0.0;
  double mape = 0.0;
  double rmse = 0.0;
  double r2 = 0.0;
};

// MAE, MAPE, RMSE and R^2 of one prediction run. MAPE requires nonzero
// targets; R^2 requires nonconstant targets.
inline MetricsReport compute_metrics(const Eigen::VectorXd& y, const Eigen::VectorXd& y_hat) {
  if (y.size() != y_hat.size() || y.size() == 0) {
    throw std::invalid_argument("compute_metrics: vectors must have equal nonzero length");
  }
  const double n = static_cast<double>(y.size());
  MetricsReport m;
  double abs_sum = 0.0, ape_sum = 0.0, sq_sum = 0.0;
  for (long i = 0; i < y.size(); ++i) {
    const double e = y[i] - y_hat[i];
    abs_sum += std::abs(e);
    sq_sum += e * e;
    if (y[i] == 0.0) throw NumericError("compute_metrics: zero target value breaks MAPE");
    ape_sum += std::abs(e) / std::abs(y[i]);
  }
  m.mae = abs_sum / n;
  m.mape = ape_sum / n;
  m.rmse = std::sqrt(sq_sum / n);
  const double mean = y.mean();
  const double ss_tot = (y.array() - mean).square().sum();
  if (ss_tot <= 0.0) throw NumericError("compute_metrics: zero target variance breaks R^2");
  m.r2 = 1.0 - sq_sum / ss_tot;
  return m;
}

// Per-view min-max statistics fit on a training split (present rows only).
struct DatasetScaling {
  std::vector<ScaleParams> per_view;
};

inline std::pair<MultiViewDataset, DatasetScaling> fit_and_scale(const MultiViewDataset& train) {
  MultiViewDataset scaled = train;
  DatasetScaling s;
  s.per_view.reserve(train.views.size());
  for (std::size_t m = 0; m < train.views.size(); ++m) {
    std::vector<bool> present(static_cast<std::size_t>(train.n_subjects()));
    for (long i = 0; i < train.n_subjects(); ++i) {
      present[static_cast<std::size_t>(i)] = train.presence(i, static_cast<long>(m));
    }
    auto [mat, params] = minmax_scale(train.views[m], present);
    // Rows of absent views stay zero so they cannot leak into the loss.
    for (long i = 0; i < mat.rows(); ++i) {
      if (!train.presence(i, static_cast<long>(m))) mat.row(i).setZero();
    }
    scaled.views[m] = std::move(mat);
    s.per_view.push_back(std::move(params));
  }
  return {std::move(scaled), std::move(s)};
}

inline MultiViewDataset apply_scaling(const MultiViewDataset& ds, const DatasetScaling& s) {
  if (s.per_view.size() != ds.views.size()) {
    throw std::invalid_argument("apply_scaling: parameter count does not match views");
  }
  MultiViewDataset scaled = ds;
  for (std::size_t m = 0; m < ds.views.size(); ++m) {
    Eigen::MatrixXd mat = minmax_scale(ds.views[m], s.per_view[m]);
    for (long i = 0; i < mat.rows(); ++i) {
      if (!ds.presence(i, static_cast<long>(m))) mat.row(i).setZero();
    }
    scaled.views[m] = std::move(mat);
  }
  return scaled;
}

// ---------------------------------------------------------------------------
// Hyperparameter grid search (layer count, latent dim, hidden width) crossed
// with view subsets.

struct GridSpec {
  std::vector<int> layers = {2, 3, 4, 5};
  std::vector<int> latent_dims = {2, 8, 32};
  std::vector<int> hidden_units = {3, 16, 32, 128};
};

struct GridResult {
  int layers = 0;
  int latent_dim = 0;
  int hidden_units = 0;
  std::vector<bool> view_subset;
  MetricsReport metrics;
  double wall_seconds = 0.0;
  bool ok = false;
  std::string error;
};

// Every nonempty subset of the dataset's views, in mask-ascending order.
inline std::vector<std::vector<bool>> all_view_subsets(int n_views) {
  std::vector<std::vector<bool>> subsets;
  for (unsigned mask = 1; mask < (1u << n_views); ++mask) {
    std::vector<bool> subset(static_cast<std::size_t>(n_views));
    for (int m = 0; m < n_views; ++m) subset[static_cast<std::size_t>(m)] = (mask >> m) & 1u;
    subsets.push_back(std::move(subset));
  }
  return subsets;
}

// Subjects with no available view (possible after selecting a view subset)
// cannot be encoded and are excluded from a run.
inline MultiViewDataset drop_subjects_without_views(const MultiViewDataset& ds) {
  std::vector<long> keep;
  for (long i = 0; i < ds.n_subjects(); ++i) {
    bool any = false;
    for (long m = 0; m < ds.presence.cols(); ++m) any = any || ds.presence(i, m);
    if (any) keep.push_back(i);
  }
  if (keep.empty()) throw DataError("no subject has any available view");
  if (keep.size() == static_cast<std::size_t>(ds.n_subjects())) return ds;
  return ds.select_rows(keep);
}

// One train/evaluate cycle: scale on the training split, train the model,
// fit the linear head on training latents, score the test split.
inline MetricsReport train_and_score(const MultiViewDataset& train_input,
                                     const MultiViewDataset& test_input,
                                     const MvvaeConfig& model_cfg,
                                     const TrainConfig& train_cfg,
                                     std::uint64_t seed) {
  const MultiViewDataset train_ds = drop_subjects_without_views(train_input);
  const MultiViewDataset test_ds = drop_subjects_without_views(test_input);
  auto [train_scaled, scaling] = fit_and_scale(train_ds);
  const MultiViewDataset test_scaled = apply_scaling(test_ds, scaling);
  MvvaeModel model = MvvaeModel::init(model_cfg, derive_seed(seed, "init"));
  TrainConfig cfg = train_cfg;
  cfg.seed = derive_seed(seed, "train");
  cfg.batch_size = static_cast<int>(std::min<long>(cfg.batch_size, train_ds.n_subjects()));
  train(model, train_scaled, cfg);

  std::vector<long> all_train(static_cast<std::size_t>(train_ds.n_subjects()));
  for (long i = 0; i < train_ds.n_subjects(); ++i) all_train[static_cast<std::size_t>(i)] = i;
  std::vector<long> all_test(static_cast<std::size_t>(test_ds.n_subjects()));
  for (long i = 0; i < test_ds.n_subjects(); ++i) all_test[static_cast<std::size_t>(i)] = i;

  const Eigen::MatrixXd z_train =
      extract_latents(model, batch_from_dataset(train_scaled, all_train));
  const Eigen::VectorXd head = fit_linear_head(z_train, train_ds.phenotype);
  const Eigen::MatrixXd z_test =
      extract_latents(model, batch_from_dataset(test_scaled, all_test));
  return compute_metrics(test_ds.phenotype, predict_linear(head, z_test));
}

// Trains one model per (view subset x grid point) on a shared 80/20-style
// split and reports the table sorted by descending test R^2 (failed runs
// last). Per-point seeds are root_seed ^ point_index.
inline std::vector<GridResult> grid_search(const MultiViewDataset& ds, const GridSpec& grid,
                                           const std::vector<std::vector<bool>>& view_subsets,
                                           const TrainConfig& train_cfg, std::uint64_t seed,
                                           double test_fraction = 0.2) {
  if (grid.layers.empty() || grid.latent_dims.empty() || grid.hidden_units.empty()) {
    throw std::invalid_argument("grid_search: empty grid");
  }
  if (view_subsets.empty()) throw std::invalid_argument("grid_search: no view subsets");
  const auto [train_idx, test_idx] =
      train_test_split_indices(ds.n_subjects(), test_fraction, seed);
  const MultiViewDataset train_ds = ds.select_rows(train_idx);
  const MultiViewDataset test_ds = ds.select_rows(test_idx);

  std::vector<GridResult> results;
  std::uint64_t point_index = 0;
  for (const auto& subset : view_subsets) {
    for (int layers : grid.layers) {
      for (int latent : grid.latent_dims) {
        for (int hidden : grid.hidden_units) {
          GridResult row;
          row.layers = layers;
          row.latent_dim = latent;
          row.hidden_units = hidden;
          row.view_subset = subset;
          const std::uint64_t point_seed = seed ^ point_index;
          const auto t0 = std::chrono::steady_clock::now();
          try {
            if (layers < 2) throw std::invalid_argument("grid_search: layers must be >= 2");
            const MultiViewDataset sub_train = train_ds.select_views(subset);
            const MultiViewDataset sub_test = test_ds.select_views(subset);
            MvvaeConfig cfg;
            cfg.view_names = sub_train.view_names;
            cfg.view_dims = sub_train.view_dims();
            cfg.latent_dim = latent;
            cfg.encoder_hidden.assign(static_cast<std::size_t>(layers - 1), hidden);
            cfg.decoder_hidden.assign(static_cast<std::size_t>(layers - 1), hidden);
            row.metrics = train_and_score(sub_train, sub_test, cfg, train_cfg, point_seed);
            row.ok = true;
          } catch (const std::exception& e) {
            row.error = e.what();
          }
          row.wall_seconds =
              std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
          results.push_back(std::move(row));
          ++point_index;
        }
      }
    }
  }
  std::stable_sort(results.begin(), results.end(), [](const GridResult& a, const GridResult& b) {
    if (a.ok != b.ok) return a.ok;
    if (!a.ok) return false;
    return a.metrics.r2 > b.metrics.r2;
  });
  return results;
}

// ---------------------------------------------------------------------------
// Synthetic multi-view cohort generator.
//
// Latent factors drive the non-genetic views through a fixed random
// one-hidden-layer map plus per-view noise; the phenotype is a linear
// combination of the factors, standardized causal-SNP dosages and covariates
// plus noise, shifted to a positive fracture-load-like range. Causal SNPs
// come in LD blocks (a causal column plus correlated proxies) so that
// threshold selection yields panels larger than the causal count.

struct SynthSpec {
  long n_subjects = 1000;
  std::vector<std::string> view_names = {"dxa", "clinical"};
  std::vector<int> view_dims = {205, 102};
  std::vector<double> view_noise = {0.3, 1.2};
  std::vector<double> view_missing_rate = {};  // defaults to 0 per view
  int n_factors = 8;
  long n_snps = 3000;
  int n_causal = 10;
  int ld_proxies = 12;
  double ld_flip_rate = 0.015;
  double factor_share = 0.50;
  double genetic_share = 0.30;
  double covariate_share = 0.02;
  int n_covariates = 3;
  double pheno_mean = 4300.0;
  double pheno_sd = 560.0;
  double geno_missing_rate = 0.0;
  // Allele-frequency offset between two equal subpopulations, carried by the
  // background SNPs; gives the stratification PCs a real ancestry axis.
  double population_offset = 0.0;

  double noise_share() const {
    return 1.0 - factor_share - genetic_share - covariate_share;
  }

  void validate() const {
    if (n_subjects < 4) throw std::invalid_argument("synth: need at least 4 subjects");
    if (view_names.size() != view_dims.size() || view_names.size() != view_noise.size()) {
      throw std::invalid_argument("synth: view name/dim/noise lengths differ");
    }
    if (!view_missing_rate.empty() && view_missing_rate.size() != view_names.size()) {
      throw std::invalid_argument("synth: view_missing_rate length mismatch");
    }
    if (n_factors < 1) throw std::invalid_argument("synth: need at least one factor");
    if (n_causal < 0 || ld_proxies < 0) throw std::invalid_argument("synth: negative SNP counts");
    if (static_cast<long>(n_causal) * (1 + ld_proxies) > n_snps) {
      throw std::invalid_argument("synth: causal blocks exceed SNP count");
    }
    if (noise_share() < 0.0) throw std::invalid_argument("synth: variance shares exceed 1");
    if (pheno_sd <= 0.0) throw std::invalid_argument("synth: pheno_sd must be positive");
  }
};

struct SynthTruth {
  std::vector<std::string> causal_snps;
  std::vector<double> causal_effects;          // standardized-phenotype units
  std::vector<std::vector<std::string>> ld_blocks;  // causal id + its proxies
  std::vector<std::string> view_names;         // non-genetic views
  std::vector<double> view_snr;                // mean feature signal var / noise var
  std::vector<double> view_r2_ceiling;         // heuristic ceiling per view
  double wgs_r2_ceiling = 0.0;                 // = genetic share
  std::string least_informative_view;          // among wgs + non-genetic views
  double factor_share = 0.0, genetic_share = 0.0, covariate_share = 0.0, noise_share = 0.0;
};

struct SynthCohort {
  MultiViewDataset dataset;     // non-genetic views + phenotype
  GenotypeMatrix genotypes;
  Eigen::MatrixXd covariates;   // N x C
  SynthTruth truth;
};

inline SynthCohort synth_generate(const SynthSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(derive_seed(seed, "synth"));
  const long n = spec.n_subjects;
  const int k = spec.n_factors;

  Eigen::MatrixXd f(n, k);
  for (long i = 0; i < n; ++i)
    for (int d = 0; d < k; ++d) f(i, d) = rng.normal();

  SynthCohort cohort;
  cohort.truth.factor_share = spec.factor_share;
  cohort.truth.genetic_share = spec.genetic_share;
  cohort.truth.covariate_share = spec.covariate_share;
  cohort.truth.noise_share = spec.noise_share();

  // Non-genetic views: one-hidden-layer tanh map of the factors, mild enough
  // that the factors stay approximately linearly decodable.
  auto& ds = cohort.dataset;
  ds.view_names = spec.view_names;
  ds.presence.resize(n, static_cast<long>(spec.view_names.size()));
  ds.presence.setConstant(true);
  for (std::size_t v = 0; v < spec.view_names.size(); ++v) {
    const int d_v = spec.view_dims[v];
    const int h = 2 * k;
    Eigen::MatrixXd w1(k, h);
    for (int a = 0; a < k; ++a)
      for (int b = 0; b < h; ++b) w1(a, b) = rng.normal() * (0.8 / std::sqrt(static_cast<double>(k)));
    Eigen::MatrixXd w2(h, d_v);
    for (int a = 0; a < h; ++a)
      for (int b = 0; b < d_v; ++b) w2(a, b) = rng.normal() / std::sqrt(static_cast<double>(h));
    const Eigen::MatrixXd signal = (f * w1).array().tanh().matrix() * w2;
    Eigen::MatrixXd view = signal;
    const double noise_sd = spec.view_noise[v];
    for (long i = 0; i < n; ++i)
      for (int j = 0; j < d_v; ++j) view(i, j) += noise_sd * rng.normal();
    ds.views.push_back(std::move(view));

    double mean_signal_var = 0.0;
    for (int j = 0; j < d_v; ++j) {
      const double mean = signal.col(j).mean();
      mean_signal_var += (signal.col(j).array() - mean).square().sum() /
                         static_cast<double>(n - 1);
    }
    mean_signal_var /= static_cast<double>(d_v);
    const double snr = noise_sd > 0.0 ? mean_signal_var / (noise_sd * noise_sd)
                                      : std::numeric_limits<double>::infinity();
    cohort.truth.view_names.push_back(spec.view_names[v]);
    cohort.truth.view_snr.push_back(snr);
    cohort.truth.view_r2_ceiling.push_back(spec.factor_share * snr / (1.0 + snr));
  }

  cohort.covariates.resize(n, spec.n_covariates);
  for (long i = 0; i < n; ++i)
    for (int c = 0; c < spec.n_covariates; ++c) cohort.covariates(i, c) = rng.normal();

  // Genotypes: causal LD blocks first, then independent null SNPs. Columns
  // are laid out in (chromosome, position) order.
  auto& G = cohort.genotypes;
  G.values.resize(n, spec.n_snps);
  G.snps.reserve(static_cast<std::size_t>(spec.n_snps));
  for (long j = 0; j < spec.n_snps; ++j) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "snp%06ld", j + 1);
    const std::string chrom = std::to_string(1 + (j * 22) / spec.n_snps);
    G.snps.push_back({buf, chrom, j + 1});
  }
  std::vector<double> snp_maf(static_cast<std::size_t>(spec.n_snps), 0.0);
  std::vector<long> causal_cols;
  long col = 0;
  for (int c = 0; c < spec.n_causal; ++c) {
    const double maf = rng.uniform(0.05, 0.5);
    std::vector<int> h1(static_cast<std::size_t>(n)), h2(static_cast<std::size_t>(n));
    for (long i = 0; i < n; ++i) {
      h1[static_cast<std::size_t>(i)] = rng.bernoulli(maf);
      h2[static_cast<std::size_t>(i)] = rng.bernoulli(maf);
      G.values(i, col) = h1[static_cast<std::size_t>(i)] + h2[static_cast<std::size_t>(i)];
    }
    snp_maf[static_cast<std::size_t>(col)] = maf;
    causal_cols.push_back(col);
    std::vector<std::string> block = {G.snps[static_cast<std::size_t>(col)].id};
    ++col;
    for (int p = 0; p < spec.ld_proxies; ++p) {
      for (long i = 0; i < n; ++i) {
        int a = h1[static_cast<std::size_t>(i)];
        int b = h2[static_cast<std::size_t>(i)];
        if (rng.bernoulli(spec.ld_flip_rate)) a = 1 - a;
        if (rng.bernoulli(spec.ld_flip_rate)) b = 1 - b;
        G.values(i, col) = a + b;
      }
      snp_maf[static_cast<std::size_t>(col)] = maf;
      block.push_back(G.snps[static_cast<std::size_t>(col)].id);
      ++col;
    }
    cohort.truth.ld_blocks.push_back(std::move(block));
  }
  for (; col < spec.n_snps; ++col) {
    const double maf = rng.uniform(0.05, 0.5);
    snp_maf[static_cast<std::size_t>(col)] = maf;
    const double off = spec.population_offset * 0.5;
    const double maf_a = std::clamp(maf - off, 0.02, 0.98);
    const double maf_b = std::clamp(maf + off, 0.02, 0.98);
    for (long i = 0; i < n; ++i) {
      const double p = i < n / 2 ? maf_a : maf_b;
      G.values(i, col) = rng.bernoulli(p) + rng.bernoulli(p);
    }
  }
  G.subject_ids.reserve(static_cast<std::size_t>(n));
  for (long i = 0; i < n; ++i) {
    char buf[24];
    std::snprintf(buf, sizeof(buf), "S%05ld", i + 1);
    G.subject_ids.push_back(buf);
  }
  ds.subject_ids = G.subject_ids;

  // Phenotype on the standardized scale, then shifted to load-like units.
  Eigen::VectorXd u_f(k);
  for (int d = 0; d < k; ++d) u_f[d] = rng.normal();
  u_f.normalize();
  Eigen::VectorXd y = std::sqrt(spec.factor_share) * (f * u_f);

  const double beta_mag = spec.n_causal > 0
                              ? std::sqrt(spec.genetic_share / static_cast<double>(spec.n_causal))
                              : 0.0;
  for (long c : causal_cols) {
    const double maf = snp_maf[static_cast<std::size_t>(c)];
    const double scale = std::sqrt(2.0 * maf * (1.0 - maf));
    const double beta = (rng.bernoulli(0.5) ? 1.0 : -1.0) * beta_mag;
    cohort.truth.causal_snps.push_back(G.snps[static_cast<std::size_t>(c)].id);
    cohort.truth.causal_effects.push_back(beta);
    for (long i = 0; i < n; ++i) {
      y[i] += beta * (G.values(i, c) - 2.0 * maf) / scale;
    }
  }
  if (spec.n_covariates > 0 && spec.covariate_share > 0.0) {
    Eigen::VectorXd u_c(spec.n_covariates);
    for (int c = 0; c < spec.n_covariates; ++c) u_c[c] = rng.normal();
    u_c.normalize();
    y += std::sqrt(spec.covariate_share) * (cohort.covariates * u_c);
  }
  const double noise_sd = std::sqrt(spec.noise_share());
  for (long i = 0; i < n; ++i) y[i] += noise_sd * rng.normal();
  ds.phenotype = (y.array() * spec.pheno_sd + spec.pheno_mean).matrix();

  // Optional missingness, drawn after the complete cohort so the same seed
  // with and without missingness shares all other values.
  if (spec.geno_missing_rate > 0.0) {
    for (long j = 0; j < spec.n_snps; ++j)
      for (long i = 0; i < n; ++i)
        if (rng.uniform() < spec.geno_missing_rate)
          G.values(i, j) = std::numeric_limits<double>::quiet_NaN();
  }
  if (!spec.view_missing_rate.empty()) {
    for (std::size_t v = 0; v < spec.view_names.size(); ++v) {
      const double rate = spec.view_missing_rate[v];
      if (rate <= 0.0) continue;
      for (long i = 0; i < n; ++i) {
        if (rng.uniform() < rate) {
          ds.presence(i, static_cast<long>(v)) = false;
          ds.views[v].row(i).setZero();
        }
      }
    }
    for (long i = 0; i < n; ++i) {
      bool any = false;
      for (long v = 0; v < ds.presence.cols(); ++v) any = any || ds.presence(i, v);
      if (!any) ds.presence(i, 0) = true;  // keep every subject usable
    }
  }

  cohort.truth.wgs_r2_ceiling = spec.genetic_share;
  {
    // The genotype-derived view enters the ranking only when there is a
    // genetic signal for a selected panel to carry.
    std::string least;
    double best = std::numeric_limits<double>::infinity();
    if (spec.n_causal > 0 && spec.genetic_share > 0.0) {
      least = "wgs";
      best = cohort.truth.wgs_r2_ceiling;
    }
    for (std::size_t v = 0; v < cohort.truth.view_names.size(); ++v) {
      if (cohort.truth.view_r2_ceiling[v] < best) {
        best = cohort.truth.view_r2_ceiling[v];
        least = cohort.truth.view_names[v];
      }
    }
    cohort.truth.least_informative_view = least;
  }
  ds.validate();
  G.validate();
  return cohort;
}

}  // namespace mvfuse
