#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mvfuse/csv.hpp"

namespace mvfuse {

struct SnpInfo {
  std::string id;
  std::string chrom;
  long pos = 0;
};

// Additive-coded genotypes: entries 0/1/2 = minor-allele count, NaN = missing.
struct GenotypeMatrix {
  Eigen::MatrixXd values;  // N x S
  std::vector<SnpInfo> snps;
  std::vector<std::string> subject_ids;

  long n_subjects() const { return values.rows(); }
  long n_snps() const { return values.cols(); }

  void validate() const {
    if (static_cast<long>(snps.size()) != n_snps()) throw DataError("snp metadata length mismatch");
    if (static_cast<long>(subject_ids.size()) != n_subjects()) {
      throw DataError("subject id count mismatch");
    }
    for (long j = 0; j < values.cols(); ++j) {
      for (long i = 0; i < values.rows(); ++i) {
        const double v = values(i, j);
        if (std::isnan(v)) continue;
        if (v != 0.0 && v != 1.0 && v != 2.0) {
          throw DataError("genotype entry for snp " + snps[static_cast<std::size_t>(j)].id +
                          " not in {0,1,2,NA}");
        }
      }
    }
  }
};

struct QcConfig {
  double snp_missing_max = 0.05;
  double indiv_missing_max = 0.20;
  double maf_min = 0.01;
  double hwe_p_min = 1e-4;

  void validate() const {
    for (double v : {snp_missing_max, indiv_missing_max, maf_min, hwe_p_min}) {
      if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("QcConfig: thresholds must be in [0,1]");
    }
  }
};

struct QcRemoval {
  std::string id;
  std::string reason;  // "missing_rate" | "maf" | "hwe"
  double value = 0.0;
};

struct QcReport {
  std::vector<QcRemoval> subjects;
  std::vector<QcRemoval> snps;
};

struct QcOutput {
  GenotypeMatrix genotypes;        // filtered, missing entries still NaN
  Eigen::MatrixXd dosage;          // filtered with missing imputed to the SNP mean
  QcReport report;
  std::vector<long> kept_subjects; // row indices into the input matrix
  std::vector<long> kept_snps;     // column indices into the input matrix
};

// Folded minor allele frequency of one genotype column, NaN-aware.
inline double minor_allele_frequency(const Eigen::VectorXd& column) {
  double total = 0.0;
  long n = 0;
  for (long i = 0; i < column.size(); ++i) {
    if (std::isnan(column[i])) continue;
    total += column[i];
    ++n;
  }
  if (n == 0) throw DataError("minor_allele_frequency: all entries missing");
  const double f = total / (2.0 * static_cast<double>(n));
  return std::min(f, 1.0 - f);
}

// Two-sided exact Hardy-Weinberg test: the sum of the probabilities of every
// heterozygote count (with the observed allele totals) no more probable than
// the observed one, under the hypergeometric null. Probabilities are built
// with the standard mid-out recurrence; kTieSlack absorbs last-ulp noise when
// comparing analytically tied configurations.
inline double hwe_exact_test(long n_AA, long n_Aa, long n_aa) {
  if (n_AA < 0 || n_Aa < 0 || n_aa < 0) {
    throw std::invalid_argument("hwe_exact_test: negative count");
  }
  const long n_genotypes = n_AA + n_Aa + n_aa;
  if (n_genotypes < 1) throw std::invalid_argument("hwe_exact_test: no genotypes");

  const long rare_copies = 2 * std::min(n_AA, n_aa) + n_Aa;
  if (rare_copies == 0) return 1.0;

  std::vector<double> het_probs(static_cast<std::size_t>(rare_copies) + 1, 0.0);

  // Mode of the het distribution, adjusted to the parity of rare_copies.
  long mid = static_cast<long>(std::llround(
      static_cast<double>(rare_copies) *
      static_cast<double>(2 * n_genotypes - rare_copies) /
      static_cast<double>(2 * n_genotypes)));
  if ((rare_copies & 1) != (mid & 1)) ++mid;

  het_probs[static_cast<std::size_t>(mid)] = 1.0;
  double sum = 1.0;
  {
    long het = mid;
    long homr = (rare_copies - mid) / 2;
    long homc = n_genotypes - het - homr;
    for (; het > 1; het -= 2) {
      het_probs[static_cast<std::size_t>(het - 2)] =
          het_probs[static_cast<std::size_t>(het)] * static_cast<double>(het) *
          static_cast<double>(het - 1) /
          (4.0 * static_cast<double>(homr + 1) * static_cast<double>(homc + 1));
      sum += het_probs[static_cast<std::size_t>(het - 2)];
      ++homr;
      ++homc;
    }
  }
  {
    long het = mid;
    long homr = (rare_copies - mid) / 2;
    long homc = n_genotypes - het - homr;
    for (; het <= rare_copies - 2; het += 2) {
      het_probs[static_cast<std::size_t>(het + 2)] =
          het_probs[static_cast<std::size_t>(het)] * 4.0 * static_cast<double>(homr) *
          static_cast<double>(homc) /
          (static_cast<double>(het + 2) * static_cast<double>(het + 1));
      sum += het_probs[static_cast<std::size_t>(het + 2)];
      --homr;
      --homc;
    }
  }
  for (auto& p : het_probs) p /= sum;

  constexpr double kTieSlack = 1e-9;
  const double p_obs = het_probs[static_cast<std::size_t>(n_Aa)];
  double p_value = 0.0;
  for (long het = rare_copies & 1; het <= rare_copies; het += 2) {
    const double p = het_probs[static_cast<std::size_t>(het)];
    if (p <= p_obs * (1.0 + kTieSlack)) p_value += p;
  }
  return std::min(p_value, 1.0);
}

// Upper tail of chi-square with 1 degree of freedom.
inline double chisq1_upper_tail(double t) {
  if (t < 0.0) throw std::invalid_argument("chisq1_upper_tail: negative statistic");
  const double p = std::erfc(std::sqrt(0.5 * t));
  return std::max(p, std::numeric_limits<double>::min());
}

struct OlsFit {
  Eigen::VectorXd coefficients;  // intercept first
  Eigen::VectorXd fitted;
  Eigen::VectorXd residuals;
};

// OLS with intercept through an orthogonal (QR) decomposition; the factored
// design is reused across responses, which is what makes the per-SNP
// residualization in run_gwas O(S) instead of O(S) QR factorizations.
class OlsProjector {
 public:
  explicit OlsProjector(const Eigen::MatrixXd& covariates) {
    const long n = covariates.rows();
    const long c = covariates.cols();
    if (n <= c + 1) {
      throw std::invalid_argument("residualize: need more observations than covariates");
    }
    design_.resize(n, c + 1);
    design_.col(0).setOnes();
    if (c > 0) design_.rightCols(c) = covariates;
    qr_.compute(design_);
    const long rank = qr_.rank();
    if (rank < design_.cols()) {
      std::string dependent;
      const auto& perm = qr_.colsPermutation().indices();
      for (long k = rank; k < design_.cols(); ++k) {
        const long col = perm[k];
        if (!dependent.empty()) dependent += ", ";
        dependent += (col == 0) ? "intercept" : ("covariate " + std::to_string(col - 1));
      }
      throw std::invalid_argument("residualize: rank-deficient design; dependent columns: " +
                                  dependent);
    }
  }

  OlsFit fit(const Eigen::VectorXd& response) const {
    if (response.size() != design_.rows()) {
      throw std::invalid_argument("residualize: response length mismatch");
    }
    OlsFit f;
    f.coefficients = qr_.solve(response);
    f.fitted = design_ * f.coefficients;
    f.residuals = response - f.fitted;
    return f;
  }

  Eigen::VectorXd residuals(const Eigen::VectorXd& response) const {
    return response - design_ * qr_.solve(response);
  }

 private:
  Eigen::MatrixXd design_;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr_;
};

inline OlsFit residualize(const Eigen::VectorXd& response, const Eigen::MatrixXd& covariates) {
  return OlsProjector(covariates).fit(response);
}

struct ScoreTestResult {
  double U = 0.0;
  double V = 0.0;
  double t_score = 0.0;
  double p_value = 1.0;
};

// Score test from covariate-adjusted residuals:
// U = sum y~ g~, V = (1/N)(sum y~^2)(sum g~^2), T = U^2 / V, p = chi1 tail.
inline ScoreTestResult score_test(const Eigen::VectorXd& y_resid,
                                  const Eigen::VectorXd& g_resid) {
  if (y_resid.size() != g_resid.size() || y_resid.size() == 0) {
    throw std::invalid_argument("score_test: residual vectors must have equal nonzero length");
  }
  const double n = static_cast<double>(y_resid.size());
  ScoreTestResult r;
  r.U = y_resid.dot(g_resid);
  r.V = (y_resid.squaredNorm() * g_resid.squaredNorm()) / n;
  if (r.V <= 0.0) throw NumericError("score_test: degenerate_snp (V = 0)");
  r.t_score = r.U * r.U / r.V;
  r.p_value = chisq1_upper_tail(r.t_score);
  return r;
}

// (v - mean) / std with the N-1 standard deviation.
inline Eigen::VectorXd zscore(const Eigen::VectorXd& v) {
  if (v.size() < 2) throw std::invalid_argument("zscore: need at least 2 values");
  const double mean = v.mean();
  const double var = (v.array() - mean).square().sum() / static_cast<double>(v.size() - 1);
  if (var <= 0.0) throw NumericError("zscore: zero variance");
  return (v.array() - mean).matrix() / std::sqrt(var);
}

// Subjects are filtered before any SNP statistic, so MAF/HWE reflect the
// retained cohort; remaining missing entries are mean-imputed per SNP.
inline QcOutput qc_filter(const GenotypeMatrix& G, const QcConfig& cfg) {
  cfg.validate();
  G.validate();
  QcOutput out;

  const long n = G.n_subjects();
  const long s = G.n_snps();
  for (long i = 0; i < n; ++i) {
    long missing = 0;
    for (long j = 0; j < s; ++j)
      if (std::isnan(G.values(i, j))) ++missing;
    const double rate = s > 0 ? static_cast<double>(missing) / static_cast<double>(s) : 0.0;
    if (rate > cfg.indiv_missing_max) {
      out.report.subjects.push_back({G.subject_ids[static_cast<std::size_t>(i)], "missing_rate", rate});
    } else {
      out.kept_subjects.push_back(i);
    }
  }
  if (out.kept_subjects.empty()) throw DataError("qc_filter: no subjects pass QC");
  const long nk = static_cast<long>(out.kept_subjects.size());

  for (long j = 0; j < s; ++j) {
    long missing = 0, n0 = 0, n1 = 0, n2 = 0;
    for (long idx = 0; idx < nk; ++idx) {
      const double v = G.values(out.kept_subjects[static_cast<std::size_t>(idx)], j);
      if (std::isnan(v)) {
        ++missing;
      } else if (v == 0.0) {
        ++n0;
      } else if (v == 1.0) {
        ++n1;
      } else {
        ++n2;
      }
    }
    const std::string& id = G.snps[static_cast<std::size_t>(j)].id;
    const double miss_rate = static_cast<double>(missing) / static_cast<double>(nk);
    if (miss_rate > cfg.snp_missing_max) {
      out.report.snps.push_back({id, "missing_rate", miss_rate});
      continue;
    }
    if (n0 + n1 + n2 == 0) {
      out.report.snps.push_back({id, "missing_rate", miss_rate});
      continue;
    }
    const double freq = static_cast<double>(n1 + 2 * n2) /
                        (2.0 * static_cast<double>(n0 + n1 + n2));
    const double maf = std::min(freq, 1.0 - freq);
    if (maf < cfg.maf_min) {
      out.report.snps.push_back({id, "maf", maf});
      continue;
    }
    const double hwe_p = hwe_exact_test(n0, n1, n2);
    if (hwe_p < cfg.hwe_p_min) {
      out.report.snps.push_back({id, "hwe", hwe_p});
      continue;
    }
    out.kept_snps.push_back(j);
  }
  if (out.kept_snps.empty()) throw DataError("qc_filter: no SNPs pass QC");

  const long sk = static_cast<long>(out.kept_snps.size());
  out.genotypes.values.resize(nk, sk);
  out.dosage.resize(nk, sk);
  out.genotypes.subject_ids.reserve(static_cast<std::size_t>(nk));
  for (long i = 0; i < nk; ++i) {
    out.genotypes.subject_ids.push_back(
        G.subject_ids[static_cast<std::size_t>(out.kept_subjects[static_cast<std::size_t>(i)])]);
  }
  out.genotypes.snps.reserve(static_cast<std::size_t>(sk));
  for (long jk = 0; jk < sk; ++jk) {
    const long j = out.kept_snps[static_cast<std::size_t>(jk)];
    out.genotypes.snps.push_back(G.snps[static_cast<std::size_t>(j)]);
    double total = 0.0;
    long n_obs = 0;
    for (long i = 0; i < nk; ++i) {
      const double v = G.values(out.kept_subjects[static_cast<std::size_t>(i)], j);
      out.genotypes.values(i, jk) = v;
      if (!std::isnan(v)) {
        total += v;
        ++n_obs;
      }
    }
    const double mean = total / static_cast<double>(n_obs);
    for (long i = 0; i < nk; ++i) {
      const double v = out.genotypes.values(i, jk);
      out.dosage(i, jk) = std::isnan(v) ? mean : v;
    }
  }
  return out;
}

struct PcaResult {
  Eigen::MatrixXd scores;       // N x k
  std::vector<long> excluded;   // zero-variance column indices, left out of the PCA
};

// Principal-component scores of the column-standardized matrix, ordered by
// decreasing eigenvalue. The sign of each component is fixed so that its
// largest-magnitude SNP loading is positive.
inline PcaResult genotype_pca(const Eigen::MatrixXd& dosage, int k = 10) {
  const long n = dosage.rows();
  if (!dosage.allFinite()) throw std::invalid_argument("genotype_pca: missing values present");
  PcaResult out;
  std::vector<long> cols;
  for (long j = 0; j < dosage.cols(); ++j) {
    const double mean = dosage.col(j).mean();
    const double var = (dosage.col(j).array() - mean).square().sum();
    if (var > 0.0) {
      cols.push_back(j);
    } else {
      out.excluded.push_back(j);
    }
  }
  const long s = static_cast<long>(cols.size());
  if (k < 1 || k > std::min(n, s)) {
    throw std::invalid_argument("genotype_pca: k must be in [1, min(N, S)]");
  }
  Eigen::MatrixXd x(n, s);
  for (long jj = 0; jj < s; ++jj) {
    const auto col = dosage.col(cols[static_cast<std::size_t>(jj)]);
    const double mean = col.mean();
    const double sd = std::sqrt((col.array() - mean).square().sum() /
                                static_cast<double>(n - 1));
    x.col(jj) = (col.array() - mean) / sd;
  }
  const Eigen::MatrixXd gram = x * x.transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
  if (eig.info() != Eigen::Success) throw NumericError("genotype_pca: eigendecomposition failed");

  out.scores.resize(n, k);
  for (int comp = 0; comp < k; ++comp) {
    const long idx = n - 1 - comp;  // eigenvalues come back ascending
    const double lambda = std::max(eig.eigenvalues()[idx], 0.0);
    Eigen::VectorXd u = eig.eigenvectors().col(idx);
    const Eigen::VectorXd loading = x.transpose() * u;
    long arg = 0;
    for (long j = 1; j < loading.size(); ++j) {
      if (std::abs(loading[j]) > std::abs(loading[arg])) arg = j;
    }
    if (loading[arg] < 0.0) u = -u;
    out.scores.col(comp) = u * std::sqrt(lambda);
  }
  return out;
}

struct GwasResult {
  std::string snp_id;
  std::string chrom;
  long pos = 0;
  double U = 0.0;
  double V = 0.0;
  double t_score = 0.0;
  double p_value = 1.0;
  double beta_hat = 0.0;
  bool degenerate = false;
  bool selected = false;
};

struct GwasOutput {
  std::vector<GwasResult> results;     // ordered by (chromosome, position)
  std::vector<std::string> selected;   // snp ids with p < threshold
  QcReport qc_report;
  std::vector<std::string> kept_subject_ids;
  long n_tested = 0;
  long n_degenerate = 0;
};

namespace detail {

inline bool chrom_pos_less(const GwasResult& a, const GwasResult& b) {
  const auto as_num = [](const std::string& c) -> std::pair<bool, long> {
    try {
      std::size_t pos = 0;
      const long v = std::stol(c, &pos);
      if (pos == c.size()) return {true, v};
    } catch (const std::exception&) {
    }
    return {false, 0};
  };
  const auto [a_num, a_val] = as_num(a.chrom);
  const auto [b_num, b_val] = as_num(b.chrom);
  if (a_num != b_num) return a_num;  // numeric chromosomes first
  if (a_num && a_val != b_val) return a_val < b_val;
  if (!a_num && a.chrom != b.chrom) return a.chrom < b.chrom;
  if (a.pos != b.pos) return a.pos < b.pos;
  return a.snp_id < b.snp_id;
}

}  // namespace detail

// QC, stratification PCs appended to the covariates, one phenotype
// residualization shared across SNPs, then a per-SNP score test. The
// phenotype is expected to be z-score normalized by the caller.
inline GwasOutput run_gwas(const GenotypeMatrix& G, const Eigen::VectorXd& phenotype,
                           const Eigen::MatrixXd& covariates, const QcConfig& cfg,
                           double threshold = 1e-5, int num_pcs = 10) {
  if (phenotype.size() != G.n_subjects()) {
    throw std::invalid_argument("run_gwas: phenotype length does not match genotypes");
  }
  if (covariates.rows() != 0 && covariates.rows() != G.n_subjects()) {
    throw std::invalid_argument("run_gwas: covariate rows do not match genotypes");
  }
  GwasOutput out;
  QcOutput qc = qc_filter(G, cfg);
  out.qc_report = std::move(qc.report);
  out.kept_subject_ids = qc.genotypes.subject_ids;
  const long nk = static_cast<long>(qc.kept_subjects.size());

  Eigen::VectorXd y(nk);
  for (long i = 0; i < nk; ++i) y[i] = phenotype[qc.kept_subjects[static_cast<std::size_t>(i)]];
  const long n_cov = covariates.rows() == 0 ? 0 : covariates.cols();
  Eigen::MatrixXd cov(nk, n_cov);
  for (long i = 0; i < nk; ++i) {
    for (long c = 0; c < n_cov; ++c) {
      cov(i, c) = covariates(qc.kept_subjects[static_cast<std::size_t>(i)], c);
    }
  }

  const int k = static_cast<int>(std::min<long>(num_pcs, std::min(nk - 1, qc.dosage.cols())));
  Eigen::MatrixXd design(nk, n_cov + k);
  if (n_cov > 0) design.leftCols(n_cov) = cov;
  if (k > 0) design.rightCols(k) = genotype_pca(qc.dosage, k).scores;

  const OlsProjector proj(design);
  const Eigen::VectorXd y_resid = proj.residuals(y);

  out.results.reserve(static_cast<std::size_t>(qc.dosage.cols()));
  for (long j = 0; j < qc.dosage.cols(); ++j) {
    const SnpInfo& info = qc.genotypes.snps[static_cast<std::size_t>(j)];
    GwasResult r;
    r.snp_id = info.id;
    r.chrom = info.chrom;
    r.pos = info.pos;
    const Eigen::VectorXd g = qc.dosage.col(j);
    const Eigen::VectorXd g_resid = proj.residuals(g);
    const double g_var = (g.array() - g.mean()).square().sum();
    const double sg2 = g_resid.squaredNorm();
    if (g_var <= 0.0 || sg2 <= 1e-12 * g_var) {
      r.degenerate = true;
      ++out.n_degenerate;
    } else {
      const ScoreTestResult st = score_test(y_resid, g_resid);
      r.U = st.U;
      r.V = st.V;
      r.t_score = st.t_score;
      r.p_value = st.p_value;
      r.beta_hat = st.U / sg2;
      r.selected = st.p_value < threshold;
    }
    out.results.push_back(std::move(r));
    ++out.n_tested;
  }
  std::sort(out.results.begin(), out.results.end(), detail::chrom_pos_less);
  for (const auto& r : out.results) {
    if (r.selected) out.selected.push_back(r.snp_id);
  }
  return out;
}

// Genotype CSV: header `subject_id,<snp_id>,...`, cells 0|1|2|NA. Chromosome
// and position metadata are not part of the format; on load they default to
// chromosome "0" and the 1-based column position.
inline GenotypeMatrix read_genotype_csv(const std::string& path) {
  const CsvTable t = read_csv(path);
  if (t.header.empty() || t.header[0] != "subject_id") {
    throw DataError(path + ": first column must be subject_id");
  }
  GenotypeMatrix g;
  const long s = static_cast<long>(t.header.size()) - 1;
  const long n = static_cast<long>(t.rows.size());
  g.values.resize(n, s);
  g.snps.reserve(static_cast<std::size_t>(s));
  for (long j = 0; j < s; ++j) {
    g.snps.push_back({t.header[static_cast<std::size_t>(j) + 1], "0", j + 1});
  }
  for (long i = 0; i < n; ++i) {
    const auto& row = t.rows[static_cast<std::size_t>(i)];
    g.subject_ids.push_back(row[0]);
    for (long j = 0; j < s; ++j) {
      const std::string& cell = row[static_cast<std::size_t>(j) + 1];
      if (cell == "NA") {
        g.values(i, j) = std::numeric_limits<double>::quiet_NaN();
      } else if (cell == "0" || cell == "1" || cell == "2") {
        g.values(i, j) = static_cast<double>(cell[0] - '0');
      } else {
        throw DataError(path + ": genotype cell must be 0, 1, 2 or NA; got '" + cell + "'");
      }
    }
  }
  g.validate();
  return g;
}

inline void write_genotype_csv(const std::string& path, const GenotypeMatrix& g) {
  std::vector<std::string> lines;
  lines.reserve(static_cast<std::size_t>(g.n_subjects()) + 1);
  std::string header = "subject_id";
  for (const auto& snp : g.snps) header += "," + snp.id;
  lines.push_back(std::move(header));
  for (long i = 0; i < g.n_subjects(); ++i) {
    std::string line = g.subject_ids[static_cast<std::size_t>(i)];
    for (long j = 0; j < g.n_snps(); ++j) {
      const double v = g.values(i, j);
      if (std::isnan(v)) {
        line += ",NA";
      } else {
        line += ",";
        line += static_cast<char>('0' + static_cast<int>(v));
      }
    }
    lines.push_back(std::move(line));
  }
  write_lines(path, lines);
}

}  // namespace mvfuse
