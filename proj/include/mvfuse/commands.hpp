#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mvfuse/checkpoint.hpp"
#include "mvfuse/csv.hpp"
#include "mvfuse/dataset.hpp"
#include "mvfuse/genetics.hpp"
#include "mvfuse/mvvae.hpp"
#include "mvfuse/pipeline.hpp"
#include "mvfuse/rng.hpp"

namespace mvfuse {

using Json = nlohmann::ordered_json;

// Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical
// failure.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitNumeric = 3;

// Everything a command needs, parsed from one JSON config document. Every
// field is optional and defaulted; --seed/--out override the file.
struct RunConfig {
  std::string out = "out";
  std::uint64_t seed = 20240801;

  SynthSpec synth;

  std::vector<std::pair<std::string, std::string>> view_files;  // config order
  std::string phenotype_file;
  std::string genotype_file;
  std::string covariates_file;
  std::string selected_snps_file;

  QcConfig qc;
  double gwas_threshold = 1e-5;
  int gwas_num_pcs = 10;
  bool gwas_permute = false;

  int latent_dim = 8;
  std::vector<int> encoder_hidden = {32};
  std::vector<int> decoder_hidden = {32};
  double kl_weight = 1.0;
  Activation hidden_activation = Activation::kRelu;

  int epochs = 100;
  int batch_size = 64;
  AdamConfig adam;
  bool shuffle = true;
  double test_fraction = 0.2;

  GridSpec grid;

  Json effective;  // the fully-defaulted document, echoed for provenance
};

namespace detail {

template <class T>
void maybe(const Json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

inline std::string resolve_path(const std::string& base_dir, const std::string& path) {
  if (path.empty()) return path;
  const std::filesystem::path p(path);
  if (p.is_absolute() || base_dir.empty()) return path;
  return (std::filesystem::path(base_dir) / p).string();
}

}  // namespace detail

inline RunConfig parse_run_config(const Json& doc, const std::string& base_dir = "") {
  RunConfig cfg;
  try {
    detail::maybe(doc, "out", cfg.out);
    detail::maybe(doc, "seed", cfg.seed);
    if (doc.contains("synth")) {
      const Json& s = doc.at("synth");
      detail::maybe(s, "n_subjects", cfg.synth.n_subjects);
      if (s.contains("views")) {
        cfg.synth.view_names.clear();
        cfg.synth.view_dims.clear();
        cfg.synth.view_noise.clear();
        for (const auto& [name, spec] : s.at("views").items()) {
          cfg.synth.view_names.push_back(name);
          cfg.synth.view_dims.push_back(spec.at("dim").get<int>());
          cfg.synth.view_noise.push_back(spec.value("noise", 0.3));
        }
      }
      detail::maybe(s, "n_factors", cfg.synth.n_factors);
      detail::maybe(s, "n_snps", cfg.synth.n_snps);
      detail::maybe(s, "n_causal", cfg.synth.n_causal);
      detail::maybe(s, "ld_proxies", cfg.synth.ld_proxies);
      detail::maybe(s, "ld_flip_rate", cfg.synth.ld_flip_rate);
      detail::maybe(s, "factor_share", cfg.synth.factor_share);
      detail::maybe(s, "genetic_share", cfg.synth.genetic_share);
      detail::maybe(s, "covariate_share", cfg.synth.covariate_share);
      detail::maybe(s, "n_covariates", cfg.synth.n_covariates);
      detail::maybe(s, "pheno_mean", cfg.synth.pheno_mean);
      detail::maybe(s, "pheno_sd", cfg.synth.pheno_sd);
      detail::maybe(s, "geno_missing_rate", cfg.synth.geno_missing_rate);
      detail::maybe(s, "population_offset", cfg.synth.population_offset);
    }
    if (doc.contains("data")) {
      const Json& d = doc.at("data");
      if (d.contains("views")) {
        for (const auto& [name, path] : d.at("views").items()) {
          cfg.view_files.emplace_back(name,
                                      detail::resolve_path(base_dir, path.get<std::string>()));
        }
      }
      std::string p;
      detail::maybe(d, "phenotype", p);
      cfg.phenotype_file = detail::resolve_path(base_dir, p);
      p.clear();
      detail::maybe(d, "genotypes", p);
      cfg.genotype_file = detail::resolve_path(base_dir, p);
      p.clear();
      detail::maybe(d, "covariates", p);
      cfg.covariates_file = detail::resolve_path(base_dir, p);
      p.clear();
      detail::maybe(d, "selected_snps", p);
      cfg.selected_snps_file = detail::resolve_path(base_dir, p);
    }
    if (doc.contains("qc")) {
      const Json& q = doc.at("qc");
      detail::maybe(q, "snp_missing_max", cfg.qc.snp_missing_max);
      detail::maybe(q, "indiv_missing_max", cfg.qc.indiv_missing_max);
      detail::maybe(q, "maf_min", cfg.qc.maf_min);
      detail::maybe(q, "hwe_p_min", cfg.qc.hwe_p_min);
    }
    if (doc.contains("gwas")) {
      const Json& g = doc.at("gwas");
      detail::maybe(g, "threshold", cfg.gwas_threshold);
      detail::maybe(g, "num_pcs", cfg.gwas_num_pcs);
      detail::maybe(g, "permute_phenotype", cfg.gwas_permute);
    }
    if (doc.contains("model")) {
      const Json& m = doc.at("model");
      detail::maybe(m, "latent_dim", cfg.latent_dim);
      detail::maybe(m, "encoder_hidden", cfg.encoder_hidden);
      detail::maybe(m, "decoder_hidden", cfg.decoder_hidden);
      detail::maybe(m, "kl_weight", cfg.kl_weight);
      if (m.contains("hidden_activation")) {
        cfg.hidden_activation = activation_from_name(m.at("hidden_activation").get<std::string>());
      }
    }
    if (doc.contains("train")) {
      const Json& t = doc.at("train");
      detail::maybe(t, "epochs", cfg.epochs);
      detail::maybe(t, "batch_size", cfg.batch_size);
      detail::maybe(t, "learning_rate", cfg.adam.learning_rate);
      detail::maybe(t, "beta1", cfg.adam.beta1);
      detail::maybe(t, "beta2", cfg.adam.beta2);
      detail::maybe(t, "epsilon", cfg.adam.epsilon);
      detail::maybe(t, "shuffle", cfg.shuffle);
      detail::maybe(t, "test_fraction", cfg.test_fraction);
    }
    if (doc.contains("grid")) {
      const Json& g = doc.at("grid");
      detail::maybe(g, "layers", cfg.grid.layers);
      detail::maybe(g, "latent", cfg.grid.latent_dims);
      detail::maybe(g, "hidden", cfg.grid.hidden_units);
    }
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  cfg.effective = doc;
  return cfg;
}

inline RunConfig load_run_config(const std::string& config_path,
                                 std::optional<std::uint64_t> seed_override = std::nullopt,
                                 const std::string& out_override = "") {
  Json doc = Json::object();
  std::string base_dir;
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) throw ConfigError("cannot open config file: " + config_path);
    try {
      in >> doc;
    } catch (const Json::exception& e) {
      throw ConfigError("config parse error in " + config_path + ": " + e.what());
    }
    base_dir = std::filesystem::path(config_path).parent_path().string();
  }
  RunConfig cfg = parse_run_config(doc, base_dir);
  if (seed_override) cfg.seed = *seed_override;
  if (!out_override.empty()) cfg.out = out_override;
  return cfg;
}

namespace detail {

inline void ensure_out_dir(const RunConfig& cfg) {
  std::error_code ec;
  std::filesystem::create_directories(cfg.out, ec);
  if (ec) throw DataError("cannot create output directory: " + cfg.out);
}

inline Json effective_config_json(const RunConfig& cfg) {
  Json j = cfg.effective;
  j["out"] = cfg.out;
  j["seed"] = cfg.seed;
  return j;
}

inline void write_json(const std::string& path, const Json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write file: " + path);
  out << j.dump(2) << '\n';
}

inline void echo_config(const RunConfig& cfg) {
  write_json((std::filesystem::path(cfg.out) / "effective_config.json").string(),
             effective_config_json(cfg));
}

inline std::string out_path(const RunConfig& cfg, const std::string& name) {
  return (std::filesystem::path(cfg.out) / name).string();
}

inline void write_view_csv(const std::string& path, const std::vector<std::string>& ids,
                           const Eigen::MatrixXd& mat, const std::string& prefix,
                           const std::vector<bool>& present = {}) {
  std::vector<std::string> lines;
  lines.reserve(ids.size() + 1);
  std::string header = "subject_id";
  for (long j = 0; j < mat.cols(); ++j) header += "," + prefix + std::to_string(j + 1);
  lines.push_back(std::move(header));
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::string line = ids[i];
    const bool row_present = present.empty() || present[i];
    for (long j = 0; j < mat.cols(); ++j) {
      line += ",";
      line += row_present ? format_double(mat(static_cast<long>(i), j)) : "NA";
    }
    lines.push_back(std::move(line));
  }
  write_lines(path, lines);
}

inline std::pair<std::vector<std::string>, Eigen::VectorXd> load_phenotype(
    const std::string& path) {
  const CsvTable t = read_csv(path);
  if (t.header.size() != 2 || t.header[0] != "subject_id") {
    throw DataError(path + ": phenotype file must have columns subject_id,value");
  }
  std::vector<std::string> ids;
  Eigen::VectorXd values(static_cast<long>(t.rows.size()));
  std::map<std::string, bool> seen;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const std::string& id = t.rows[i][0];
    if (seen.count(id)) throw DataError(path + ": duplicate subject id " + id);
    seen[id] = true;
    ids.push_back(id);
    values[static_cast<long>(i)] = parse_double(t.rows[i][1], path + " subject " + id);
  }
  return {std::move(ids), std::move(values)};
}

inline Eigen::MatrixXd load_covariates(const std::string& path,
                                       const std::vector<std::string>& subject_ids) {
  const KeyedRows rows = read_keyed_csv(path);
  Eigen::MatrixXd cov(static_cast<long>(subject_ids.size()),
                      static_cast<long>(rows.header.size()));
  for (std::size_t i = 0; i < subject_ids.size(); ++i) {
    const auto it = rows.by_id.find(subject_ids[i]);
    if (it == rows.by_id.end()) {
      throw DataError(path + ": missing covariates for subject " + subject_ids[i]);
    }
    for (std::size_t c = 0; c < rows.header.size(); ++c) {
      cov(static_cast<long>(i), static_cast<long>(c)) =
          parse_double(it->second[c], path + " subject " + subject_ids[i]);
    }
  }
  return cov;
}

inline std::vector<std::string> read_id_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open file: " + path);
  std::vector<std::string> ids;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) ids.push_back(line);
  }
  return ids;
}

// Dataset for train/eval/predict: the configured CSV views plus, when a
// selected-SNP list is configured, a leading "wgs" view assembled from the
// genotype file (raw 0/1/2 dosages, missing entries imputed to the column
// mean). Subjects are the phenotype-file order restricted to ids present in
// at least one source.
inline MultiViewDataset load_model_dataset(const RunConfig& cfg) {
  if (cfg.phenotype_file.empty()) throw ConfigError("data.phenotype is required");
  const bool with_wgs = !cfg.selected_snps_file.empty();
  if (with_wgs && cfg.genotype_file.empty()) {
    throw ConfigError("data.genotypes is required when data.selected_snps is set");
  }
  if (!with_wgs && cfg.view_files.empty()) {
    throw ConfigError("no views configured: set data.views and/or data.selected_snps");
  }
  auto [pheno_ids, pheno_values] = load_phenotype(cfg.phenotype_file);

  std::optional<GenotypeMatrix> genotypes;
  std::vector<std::string> selected;
  std::map<std::string, long> geno_row;
  std::vector<long> selected_cols;
  if (with_wgs) {
    genotypes = read_genotype_csv(cfg.genotype_file);
    selected = read_id_lines(cfg.selected_snps_file);
    if (selected.empty()) throw DataError(cfg.selected_snps_file + ": no SNP ids");
    std::map<std::string, long> col_of;
    for (long j = 0; j < genotypes->n_snps(); ++j) {
      col_of[genotypes->snps[static_cast<std::size_t>(j)].id] = j;
    }
    for (const auto& id : selected) {
      const auto it = col_of.find(id);
      if (it == col_of.end()) {
        throw DataError("selected SNP " + id + " not present in " + cfg.genotype_file);
      }
      selected_cols.push_back(it->second);
    }
    for (long i = 0; i < genotypes->n_subjects(); ++i) {
      geno_row[genotypes->subject_ids[static_cast<std::size_t>(i)]] = i;
    }
  }

  std::vector<KeyedRows> csv_views;
  for (const auto& [name, path] : cfg.view_files) {
    (void)name;
    csv_views.push_back(read_keyed_csv(path));
  }

  std::vector<std::string> ids;
  Eigen::VectorXd phenotype;
  {
    std::vector<long> keep;
    for (std::size_t i = 0; i < pheno_ids.size(); ++i) {
      bool in_some = with_wgs && geno_row.count(pheno_ids[i]);
      for (const auto& v : csv_views) in_some = in_some || v.by_id.count(pheno_ids[i]);
      if (in_some) keep.push_back(static_cast<long>(i));
    }
    if (keep.empty()) throw DataError("no subjects shared between phenotype and view sources");
    phenotype.resize(static_cast<long>(keep.size()));
    for (std::size_t i = 0; i < keep.size(); ++i) {
      ids.push_back(pheno_ids[static_cast<std::size_t>(keep[i])]);
      phenotype[static_cast<long>(i)] = pheno_values[keep[i]];
    }
  }
  const long n = static_cast<long>(ids.size());
  const int n_views = static_cast<int>(csv_views.size()) + (with_wgs ? 1 : 0);

  MultiViewDataset ds;
  ds.subject_ids = ids;
  ds.phenotype = phenotype;
  ds.presence.resize(n, n_views);
  int view_idx = 0;
  if (with_wgs) {
    const long d = static_cast<long>(selected_cols.size());
    Eigen::MatrixXd wgs = Eigen::MatrixXd::Zero(n, d);
    std::vector<double> col_mean(static_cast<std::size_t>(d), 0.0);
    for (long j = 0; j < d; ++j) {
      const auto col = genotypes->values.col(selected_cols[static_cast<std::size_t>(j)]);
      double total = 0.0;
      long count = 0;
      for (long i = 0; i < col.size(); ++i) {
        if (!std::isnan(col[i])) {
          total += col[i];
          ++count;
        }
      }
      if (count == 0) throw DataError("selected SNP column is entirely missing");
      col_mean[static_cast<std::size_t>(j)] = total / static_cast<double>(count);
    }
    for (long i = 0; i < n; ++i) {
      const auto it = geno_row.find(ids[static_cast<std::size_t>(i)]);
      if (it == geno_row.end()) {
        ds.presence(i, view_idx) = false;
        continue;
      }
      ds.presence(i, view_idx) = true;
      for (long j = 0; j < d; ++j) {
        const double v = genotypes->values(it->second, selected_cols[static_cast<std::size_t>(j)]);
        wgs(i, j) = std::isnan(v) ? col_mean[static_cast<std::size_t>(j)] : v;
      }
    }
    ds.view_names.push_back("wgs");
    ds.views.push_back(std::move(wgs));
    ++view_idx;
  }
  for (std::size_t m = 0; m < csv_views.size(); ++m) {
    const auto& [name, path] = cfg.view_files[m];
    const long d = static_cast<long>(csv_views[m].header.size());
    Eigen::MatrixXd mat = Eigen::MatrixXd::Zero(n, d);
    for (long i = 0; i < n; ++i) {
      const auto it = csv_views[m].by_id.find(ids[static_cast<std::size_t>(i)]);
      if (it == csv_views[m].by_id.end()) {
        ds.presence(i, view_idx) = false;
        continue;
      }
      long n_na = 0;
      for (const auto& c : it->second)
        if (c == "NA") ++n_na;
      if (n_na == d) {
        ds.presence(i, view_idx) = false;
        continue;
      }
      if (n_na > 0) {
        throw DataError(path + ": subject " + ids[static_cast<std::size_t>(i)] +
                        " has partial NA cells; NA is allowed only as a full-row view absence");
      }
      for (long j = 0; j < d; ++j) {
        mat(i, j) = parse_double(it->second[static_cast<std::size_t>(j)],
                                 path + " subject " + ids[static_cast<std::size_t>(i)]);
      }
      ds.presence(i, view_idx) = true;
    }
    ds.view_names.push_back(name);
    ds.views.push_back(std::move(mat));
    ++view_idx;
  }
  ds.validate();
  return ds;
}

inline Json metrics_json(const MetricsReport& m) {
  return Json{{"mae", m.mae}, {"mape", m.mape}, {"rmse", m.rmse}, {"r2", m.r2}};
}

inline void write_metrics_csv(const std::string& path,
                              const std::vector<std::pair<std::string, MetricsReport>>& rows) {
  std::vector<std::string> lines = {"split,mae,mape,rmse,r2"};
  for (const auto& [name, m] : rows) {
    lines.push_back(name + "," + format_double(m.mae) + "," + format_double(m.mape) + "," +
                    format_double(m.rmse) + "," + format_double(m.r2));
  }
  write_lines(path, lines);
}

inline Json scale_params_json(const DatasetScaling& scaling,
                              const std::vector<std::string>& view_names) {
  Json views = Json::object();
  for (std::size_t m = 0; m < scaling.per_view.size(); ++m) {
    Json v;
    v["min"] = std::vector<double>(scaling.per_view[m].a.data(),
                                   scaling.per_view[m].a.data() + scaling.per_view[m].a.size());
    v["max"] = std::vector<double>(scaling.per_view[m].b.data(),
                                   scaling.per_view[m].b.data() + scaling.per_view[m].b.size());
    views[view_names[m]] = std::move(v);
  }
  return Json{{"mode", "minmax"}, {"views", std::move(views)}};
}

inline DatasetScaling scale_params_from_json(const Json& j,
                                             const std::vector<std::string>& view_names) {
  if (j.value("mode", "") != std::string("minmax")) {
    throw DataError("scale params: unsupported mode");
  }
  DatasetScaling scaling;
  for (const auto& name : view_names) {
    if (!j.at("views").contains(name)) {
      throw DataError("scale params: missing view " + name);
    }
    const auto mins = j.at("views").at(name).at("min").get<std::vector<double>>();
    const auto maxs = j.at("views").at(name).at("max").get<std::vector<double>>();
    ScaleParams p;
    p.mode = ScaleParams::Mode::kMinMax;
    p.a = Eigen::Map<const Eigen::VectorXd>(mins.data(), static_cast<long>(mins.size()));
    p.b = Eigen::Map<const Eigen::VectorXd>(maxs.data(), static_cast<long>(maxs.size()));
    scaling.per_view.push_back(std::move(p));
  }
  return scaling;
}

inline std::vector<long> rows_for_ids(const MultiViewDataset& ds,
                                      const std::vector<std::string>& ids) {
  std::map<std::string, long> row_of;
  for (long i = 0; i < ds.n_subjects(); ++i) row_of[ds.subject_ids[static_cast<std::size_t>(i)]] = i;
  std::vector<long> rows;
  rows.reserve(ids.size());
  for (const auto& id : ids) {
    const auto it = row_of.find(id);
    if (it == row_of.end()) throw DataError("split manifest subject " + id + " not in dataset");
    rows.push_back(it->second);
  }
  return rows;
}

inline std::vector<long> all_rows(const MultiViewDataset& ds) {
  std::vector<long> rows(static_cast<std::size_t>(ds.n_subjects()));
  for (long i = 0; i < ds.n_subjects(); ++i) rows[static_cast<std::size_t>(i)] = i;
  return rows;
}

}  // namespace detail

// synth: write a seeded synthetic cohort (view CSVs, genotype CSV, phenotype
// CSV, covariates CSV, ground-truth JSON).
inline int cmd_synth(const RunConfig& cfg) {
  detail::ensure_out_dir(cfg);
  const SynthCohort cohort = synth_generate(cfg.synth, cfg.seed);
  const auto& ds = cohort.dataset;

  for (std::size_t m = 0; m < ds.view_names.size(); ++m) {
    std::vector<bool> present(static_cast<std::size_t>(ds.n_subjects()));
    for (long i = 0; i < ds.n_subjects(); ++i) {
      present[static_cast<std::size_t>(i)] = ds.presence(i, static_cast<long>(m));
    }
    detail::write_view_csv(detail::out_path(cfg, ds.view_names[m] + ".csv"), ds.subject_ids,
                           ds.views[m], ds.view_names[m] + "_f", present);
  }
  write_genotype_csv(detail::out_path(cfg, "genotypes.csv"), cohort.genotypes);
  {
    std::vector<std::string> lines = {"subject_id,value"};
    for (long i = 0; i < ds.n_subjects(); ++i) {
      lines.push_back(ds.subject_ids[static_cast<std::size_t>(i)] + "," +
                      format_double(ds.phenotype[i]));
    }
    write_lines(detail::out_path(cfg, "phenotype.csv"), lines);
  }
  detail::write_view_csv(detail::out_path(cfg, "covariates.csv"), ds.subject_ids,
                         cohort.covariates, "cov");

  Json truth;
  truth["causal_snps"] = cohort.truth.causal_snps;
  truth["causal_effects"] = cohort.truth.causal_effects;
  truth["ld_blocks"] = cohort.truth.ld_blocks;
  {
    Json views = Json::object();
    for (std::size_t v = 0; v < cohort.truth.view_names.size(); ++v) {
      views[cohort.truth.view_names[v]] = Json{{"snr", cohort.truth.view_snr[v]},
                                               {"r2_ceiling", cohort.truth.view_r2_ceiling[v]}};
    }
    truth["views"] = std::move(views);
  }
  truth["wgs_r2_ceiling"] = cohort.truth.wgs_r2_ceiling;
  truth["least_informative_view"] = cohort.truth.least_informative_view;
  truth["variance_shares"] = Json{{"factors", cohort.truth.factor_share},
                                  {"genetics", cohort.truth.genetic_share},
                                  {"covariates", cohort.truth.covariate_share},
                                  {"noise", cohort.truth.noise_share}};
  detail::write_json(detail::out_path(cfg, "truth.json"), truth);
  detail::echo_config(cfg);
  std::cout << "event=synth subjects=" << ds.n_subjects() << " snps=" << cohort.genotypes.n_snps()
            << " views=" << ds.view_names.size() << " out=" << cfg.out << "\n";
  return kExitOk;
}

// gwas: QC + score-test scan, results CSV plus selected_snps.txt.
inline int cmd_gwas(const RunConfig& cfg) {
  detail::ensure_out_dir(cfg);
  if (cfg.genotype_file.empty() || cfg.phenotype_file.empty()) {
    throw ConfigError("gwas requires data.genotypes and data.phenotype");
  }
  const GenotypeMatrix genotypes = read_genotype_csv(cfg.genotype_file);
  auto [pheno_ids, pheno_raw] = detail::load_phenotype(cfg.phenotype_file);
  if (pheno_ids != genotypes.subject_ids) {
    throw DataError("gwas: phenotype and genotype subject ids must match row-for-row");
  }
  Eigen::VectorXd phenotype = zscore(pheno_raw);
  if (cfg.gwas_permute) {
    Rng rng(derive_seed(cfg.seed, "gwas.permute"));
    std::vector<double> values(phenotype.data(), phenotype.data() + phenotype.size());
    rng.shuffle(values);
    phenotype = Eigen::Map<const Eigen::VectorXd>(values.data(),
                                                  static_cast<long>(values.size()));
  }
  Eigen::MatrixXd covariates;
  if (!cfg.covariates_file.empty()) {
    covariates = detail::load_covariates(cfg.covariates_file, genotypes.subject_ids);
  }
  const GwasOutput out =
      run_gwas(genotypes, phenotype, covariates, cfg.qc, cfg.gwas_threshold, cfg.gwas_num_pcs);

  std::vector<std::string> lines = {"snp_id,chrom,pos,U,V,t_score,p_value,beta_hat,selected"};
  for (const auto& r : out.results) {
    lines.push_back(r.snp_id + "," + r.chrom + "," + std::to_string(r.pos) + "," +
                    format_double(r.U) + "," + format_double(r.V) + "," +
                    format_double(r.t_score) + "," + format_scientific(r.p_value) + "," +
                    format_double(r.beta_hat) + "," + (r.selected ? "1" : "0"));
  }
  write_lines(detail::out_path(cfg, "gwas_results.csv"), lines);
  write_lines(detail::out_path(cfg, "selected_snps.txt"), out.selected);
  detail::echo_config(cfg);

  long removed_missing = 0, removed_maf = 0, removed_hwe = 0;
  for (const auto& r : out.qc_report.snps) {
    if (r.reason == "missing_rate") ++removed_missing;
    if (r.reason == "maf") ++removed_maf;
    if (r.reason == "hwe") ++removed_hwe;
  }
  std::cout << "event=gwas tested=" << out.n_tested
            << " removed_subjects=" << out.qc_report.subjects.size()
            << " removed_snp_missing=" << removed_missing << " removed_snp_maf=" << removed_maf
            << " removed_snp_hwe=" << removed_hwe << " degenerate=" << out.n_degenerate
            << " selected=" << out.selected.size() << " out=" << cfg.out << "\n";
  return kExitOk;
}

// train: split, scale, train, fit the linear head, write all artifacts.
inline int cmd_train(const RunConfig& cfg) {
  detail::ensure_out_dir(cfg);
  const MultiViewDataset ds = detail::load_model_dataset(cfg);
  const auto [train_idx, test_idx] =
      train_test_split_indices(ds.n_subjects(), cfg.test_fraction, cfg.seed);
  const MultiViewDataset train_ds = ds.select_rows(train_idx);
  const MultiViewDataset test_ds = ds.select_rows(test_idx);

  auto [train_scaled, scaling] = fit_and_scale(train_ds);
  const MultiViewDataset test_scaled = apply_scaling(test_ds, scaling);

  MvvaeConfig model_cfg;
  model_cfg.view_names = ds.view_names;
  model_cfg.view_dims = ds.view_dims();
  model_cfg.latent_dim = cfg.latent_dim;
  model_cfg.encoder_hidden = cfg.encoder_hidden;
  model_cfg.decoder_hidden = cfg.decoder_hidden;
  model_cfg.kl_weight = cfg.kl_weight;
  model_cfg.hidden_activation = cfg.hidden_activation;

  MvvaeModel model = MvvaeModel::init(model_cfg, derive_seed(cfg.seed, "init"));
  TrainConfig tc;
  tc.epochs = cfg.epochs;
  tc.batch_size = static_cast<int>(std::min<long>(cfg.batch_size, train_ds.n_subjects()));
  tc.seed = derive_seed(cfg.seed, "train");
  tc.adam = cfg.adam;
  tc.shuffle = cfg.shuffle;
  const TrainHistory hist = train(model, train_scaled, tc);

  const Eigen::MatrixXd z_train =
      extract_latents(model, batch_from_dataset(train_scaled, detail::all_rows(train_scaled)));
  const Eigen::VectorXd head = fit_linear_head(z_train, train_ds.phenotype);
  const MetricsReport train_metrics =
      compute_metrics(train_ds.phenotype, predict_linear(head, z_train));
  const Eigen::MatrixXd z_test =
      extract_latents(model, batch_from_dataset(test_scaled, detail::all_rows(test_scaled)));
  const MetricsReport test_metrics =
      compute_metrics(test_ds.phenotype, predict_linear(head, z_test));

  save_checkpoint(detail::out_path(cfg, "model.ckpt"), model, head);
  detail::write_json(detail::out_path(cfg, "scale_params.json"),
                     detail::scale_params_json(scaling, ds.view_names));
  {
    Json manifest;
    manifest["seed"] = cfg.seed;
    manifest["test_fraction"] = cfg.test_fraction;
    manifest["train"] = train_ds.subject_ids;
    manifest["test"] = test_ds.subject_ids;
    detail::write_json(detail::out_path(cfg, "split_manifest.json"), manifest);
  }
  {
    std::vector<std::string> lines = {"epoch,total,recon,kl"};
    for (std::size_t e = 0; e < hist.total.size(); ++e) {
      lines.push_back(std::to_string(e + 1) + "," + format_double(hist.total[e]) + "," +
                      format_double(hist.recon[e]) + "," + format_double(hist.kl[e]));
    }
    write_lines(detail::out_path(cfg, "history.csv"), lines);
  }
  {
    Json metrics;
    metrics["train"] = detail::metrics_json(train_metrics);
    metrics["test"] = detail::metrics_json(test_metrics);
    metrics["n_train"] = train_ds.n_subjects();
    metrics["n_test"] = test_ds.n_subjects();
    detail::write_json(detail::out_path(cfg, "metrics.json"), metrics);
    detail::write_metrics_csv(detail::out_path(cfg, "metrics.csv"),
                              {{"train", train_metrics}, {"test", test_metrics}});
  }
  detail::echo_config(cfg);
  std::cout << "event=train n_train=" << train_ds.n_subjects()
            << " n_test=" << test_ds.n_subjects() << " epochs=" << cfg.epochs
            << " final_loss=" << (hist.total.empty() ? 0.0 : hist.total.back())
            << " test_r2=" << test_metrics.r2 << " out=" << cfg.out << "\n";
  return kExitOk;
}

// eval: reload a checkpoint and score one split, optionally with views
// dropped at inference time.
inline int cmd_eval(const RunConfig& cfg, const std::string& checkpoint_path,
                    const std::vector<std::string>& drop_views,
                    const std::string& split = "test") {
  detail::ensure_out_dir(cfg);
  if (split != "test" && split != "train") {
    throw ConfigError("eval: --split must be 'test' or 'train'");
  }
  const Checkpoint ckpt = load_checkpoint(checkpoint_path);
  if (!ckpt.head) throw DataError("checkpoint has no regression head; run train first");
  const MultiViewDataset ds = detail::load_model_dataset(cfg);
  if (ds.view_names != ckpt.model.config.view_names ||
      ds.view_dims() != ckpt.model.config.view_dims) {
    throw DataError("eval: dataset views do not match checkpoint (names and dims must agree)");
  }

  Json manifest;
  {
    const std::string path = detail::out_path(cfg, "split_manifest.json");
    std::ifstream in(path);
    if (!in) throw DataError("cannot open split manifest: " + path);
    in >> manifest;
  }
  const auto ids = manifest.at(split).get<std::vector<std::string>>();
  const MultiViewDataset split_ds = ds.select_rows(detail::rows_for_ids(ds, ids));

  DatasetScaling scaling;
  {
    const std::string path = detail::out_path(cfg, "scale_params.json");
    std::ifstream in(path);
    if (!in) throw DataError("cannot open scale params: " + path);
    Json j;
    in >> j;
    scaling = detail::scale_params_from_json(j, ds.view_names);
  }
  MultiViewDataset scaled = apply_scaling(split_ds, scaling);
  for (const auto& name : drop_views) {
    const int m = scaled.view_index(name);  // throws on unknown view
    scaled.presence.col(m).setConstant(false);
  }

  const Eigen::MatrixXd z =
      extract_latents(ckpt.model, batch_from_dataset(scaled, detail::all_rows(scaled)));
  const MetricsReport metrics =
      compute_metrics(split_ds.phenotype, predict_linear(*ckpt.head, z));

  Json out = detail::metrics_json(metrics);
  out["split"] = split;
  out["n_subjects"] = split_ds.n_subjects();
  out["dropped_views"] = drop_views;
  detail::write_json(detail::out_path(cfg, "eval_metrics.json"), out);
  detail::write_metrics_csv(detail::out_path(cfg, "eval_metrics.csv"), {{split, metrics}});
  std::cout << "event=eval split=" << split << " n=" << split_ds.n_subjects()
            << " dropped=" << drop_views.size() << " mae=" << metrics.mae
            << " mape=" << metrics.mape << " rmse=" << metrics.rmse << " r2=" << metrics.r2
            << "\n";
  return kExitOk;
}

// predict: latent extraction plus the linear head for every subject.
inline int cmd_predict(const RunConfig& cfg, const std::string& checkpoint_path) {
  detail::ensure_out_dir(cfg);
  const Checkpoint ckpt = load_checkpoint(checkpoint_path);
  if (!ckpt.head) throw DataError("checkpoint has no regression head; run train first");
  const MultiViewDataset ds = detail::load_model_dataset(cfg);
  if (ds.view_names != ckpt.model.config.view_names ||
      ds.view_dims() != ckpt.model.config.view_dims) {
    throw DataError("predict: dataset views do not match checkpoint");
  }
  DatasetScaling scaling;
  {
    const std::string path = detail::out_path(cfg, "scale_params.json");
    std::ifstream in(path);
    if (!in) throw DataError("cannot open scale params: " + path);
    Json j;
    in >> j;
    scaling = detail::scale_params_from_json(j, ds.view_names);
  }
  const MultiViewDataset scaled = apply_scaling(ds, scaling);
  const Eigen::MatrixXd z =
      extract_latents(ckpt.model, batch_from_dataset(scaled, detail::all_rows(scaled)));
  const Eigen::VectorXd pred = predict_linear(*ckpt.head, z);
  std::vector<std::string> lines = {"subject_id,prediction"};
  for (long i = 0; i < ds.n_subjects(); ++i) {
    lines.push_back(ds.subject_ids[static_cast<std::size_t>(i)] + "," + format_double(pred[i]));
  }
  write_lines(detail::out_path(cfg, "predictions.csv"), lines);
  std::cout << "event=predict n=" << ds.n_subjects() << " out=" << cfg.out << "\n";
  return kExitOk;
}

// grid: hyperparameter sweep over every nonempty view subset; table sorted by
// descending test R^2. Wall times go to stdout only so reruns stay
// byte-identical.
inline int cmd_grid(const RunConfig& cfg) {
  detail::ensure_out_dir(cfg);
  const MultiViewDataset ds = detail::load_model_dataset(cfg);
  TrainConfig tc;
  tc.epochs = cfg.epochs;
  tc.batch_size = cfg.batch_size;
  tc.adam = cfg.adam;
  tc.shuffle = cfg.shuffle;
  const auto results = grid_search(ds, cfg.grid, all_view_subsets(ds.n_views()), tc, cfg.seed,
                                   cfg.test_fraction);
  long n_failed = 0;
  for (const auto& r : results) {
    if (!r.ok) ++n_failed;
  }
  if (n_failed == static_cast<long>(results.size())) {
    throw NumericError("grid: every run failed; first error: " + results.front().error);
  }

  std::string header = "layers,latent_dim,hidden_units";
  for (const auto& name : ds.view_names) header += "," + name;
  header += ",mae,mape,rmse,r2,ok,error";
  std::vector<std::string> lines = {header};
  Json runs = Json::array();
  for (const auto& r : results) {
    std::string line = std::to_string(r.layers) + "," + std::to_string(r.latent_dim) + "," +
                       std::to_string(r.hidden_units);
    Json views = Json::object();
    for (std::size_t m = 0; m < r.view_subset.size(); ++m) {
      line += r.view_subset[m] ? ",Y" : ",N";
      views[ds.view_names[m]] = r.view_subset[m] ? "Y" : "N";
    }
    if (r.ok) {
      line += "," + format_double(r.metrics.mae) + "," + format_double(r.metrics.mape) + "," +
              format_double(r.metrics.rmse) + "," + format_double(r.metrics.r2) + ",1,";
    } else {
      line += ",,,,,0," + r.error;
    }
    lines.push_back(std::move(line));
    Json run;
    run["config"] = Json{{"layers", r.layers},
                         {"latent_dim", r.latent_dim},
                         {"hidden_units", r.hidden_units},
                         {"views", std::move(views)}};
    if (r.ok) {
      run["metrics"] = detail::metrics_json(r.metrics);
    } else {
      run["error"] = r.error;
    }
    runs.push_back(std::move(run));
    std::cout << "event=grid_point layers=" << r.layers << " latent=" << r.latent_dim
              << " hidden=" << r.hidden_units << " ok=" << (r.ok ? 1 : 0)
              << " r2=" << (r.ok ? r.metrics.r2 : std::nan("")) << " wall_s=" << r.wall_seconds
              << "\n";
  }
  write_lines(detail::out_path(cfg, "grid_results.csv"), lines);
  detail::write_json(detail::out_path(cfg, "grid_results.json"), Json{{"runs", std::move(runs)}});
  detail::echo_config(cfg);
  std::cout << "event=grid rows=" << results.size() << " failed=" << n_failed
            << " out=" << cfg.out << "\n";
  return kExitOk;
}

}  // namespace mvfuse
