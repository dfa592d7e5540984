#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "mvfuse/csv.hpp"
#include "mvfuse/rng.hpp"

namespace mvfuse {

using BoolArray = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

// Named per-view feature matrices with per-subject view-presence flags, a
// phenotype vector, and subject ids. All views share N rows aligned by id;
// rows with presence == false hold zeros and are ignored by every consumer.
struct MultiViewDataset {
  std::vector<std::string> view_names;
  std::vector<Eigen::MatrixXd> views;  // each N x d_m
  BoolArray presence;                  // N x M
  Eigen::VectorXd phenotype;           // N
  std::vector<std::string> subject_ids;

  long n_subjects() const { return static_cast<long>(subject_ids.size()); }
  int n_views() const { return static_cast<int>(view_names.size()); }

  int view_index(const std::string& name) const {
    for (int m = 0; m < n_views(); ++m)
      if (view_names[m] == name) return m;
    throw DataError("unknown view: " + name);
  }

  std::vector<int> view_dims() const {
    std::vector<int> dims;
    dims.reserve(views.size());
    for (const auto& v : views) dims.push_back(static_cast<int>(v.cols()));
    return dims;
  }

  MultiViewDataset select_rows(const std::vector<long>& idx) const {
    MultiViewDataset out;
    out.view_names = view_names;
    out.views.reserve(views.size());
    for (const auto& v : views) {
      Eigen::MatrixXd sub(static_cast<long>(idx.size()), v.cols());
      for (std::size_t i = 0; i < idx.size(); ++i) sub.row(static_cast<long>(i)) = v.row(idx[i]);
      out.views.push_back(std::move(sub));
    }
    out.presence.resize(static_cast<long>(idx.size()), presence.cols());
    out.phenotype.resize(static_cast<long>(idx.size()));
    out.subject_ids.reserve(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      out.presence.row(static_cast<long>(i)) = presence.row(idx[i]);
      out.phenotype[static_cast<long>(i)] = phenotype[idx[i]];
      out.subject_ids.push_back(subject_ids[idx[i]]);
    }
    return out;
  }

  // Keep only the views flagged in the mask (Table-style Y/N subset).
  MultiViewDataset select_views(const std::vector<bool>& keep) const {
    if (keep.size() != view_names.size()) throw DataError("view mask length mismatch");
    MultiViewDataset out;
    out.phenotype = phenotype;
    out.subject_ids = subject_ids;
    std::vector<int> kept;
    for (int m = 0; m < n_views(); ++m) {
      if (!keep[m]) continue;
      kept.push_back(m);
      out.view_names.push_back(view_names[m]);
      out.views.push_back(views[m]);
    }
    if (kept.empty()) throw DataError("view subset is empty");
    out.presence.resize(presence.rows(), static_cast<long>(kept.size()));
    for (std::size_t j = 0; j < kept.size(); ++j)
      out.presence.col(static_cast<long>(j)) = presence.col(kept[j]);
    return out;
  }

  void validate() const {
    const long n = n_subjects();
    if (static_cast<long>(views.size()) != n_views()) throw DataError("views/view_names mismatch");
    for (const auto& v : views)
      if (v.rows() != n) throw DataError("view row count differs from subject count");
    if (presence.rows() != n || presence.cols() != n_views())
      throw DataError("presence mask shape mismatch");
    if (phenotype.size() != n) throw DataError("phenotype length mismatch");
  }
};

namespace detail {

struct KeyedRows {
  std::vector<std::string> header;
  std::map<std::string, std::vector<std::string>> by_id;  // id -> cells (sans id)
  std::vector<std::string> id_order;
};

inline KeyedRows read_keyed_csv(const std::string& path) {
  const CsvTable t = read_csv(path);
  if (t.header.empty() || t.header[0] != "subject_id") {
    throw DataError(path + ": first column must be subject_id");
  }
  KeyedRows out;
  out.header.assign(t.header.begin() + 1, t.header.end());
  for (const auto& row : t.rows) {
    const std::string& id = row[0];
    if (out.by_id.count(id)) throw DataError(path + ": duplicate subject id " + id);
    out.by_id[id] = std::vector<std::string>(row.begin() + 1, row.end());
    out.id_order.push_back(id);
  }
  return out;
}

}  // namespace detail

// Inner-join of the phenotype file with the view files on subject_id. The
// subject order is the phenotype-file order restricted to ids that appear in
// at least one view. A subject absent from a view file, or present with every
// cell NA, gets presence = false for that view; NA on only part of a present
// row is an error.
inline MultiViewDataset load_dataset(
    const std::vector<std::pair<std::string, std::string>>& view_files,
    const std::string& phenotype_file) {
  if (view_files.empty()) throw DataError("no view files given");
  const detail::KeyedRows pheno = detail::read_keyed_csv(phenotype_file);
  if (pheno.header.size() != 1) {
    throw DataError(phenotype_file + ": phenotype file must have exactly subject_id,value");
  }
  std::vector<detail::KeyedRows> views;
  views.reserve(view_files.size());
  for (const auto& [name, path] : view_files) {
    (void)name;
    views.push_back(detail::read_keyed_csv(path));
  }

  std::vector<std::string> ids;
  for (const auto& id : pheno.id_order) {
    bool in_some_view = false;
    for (const auto& v : views)
      if (v.by_id.count(id)) in_some_view = true;
    if (in_some_view) ids.push_back(id);
  }
  if (ids.empty()) throw DataError("no subjects shared between phenotype and view files");

  MultiViewDataset ds;
  ds.subject_ids = ids;
  const long n = static_cast<long>(ids.size());
  ds.phenotype.resize(n);
  for (long i = 0; i < n; ++i) {
    ds.phenotype[i] = parse_double(pheno.by_id.at(ids[i])[0],
                                   phenotype_file + " subject " + ids[i]);
  }
  ds.presence.resize(n, static_cast<long>(views.size()));
  for (std::size_t m = 0; m < views.size(); ++m) {
    const auto& [name, path] = view_files[m];
    ds.view_names.push_back(name);
    const long dim = static_cast<long>(views[m].header.size());
    Eigen::MatrixXd mat = Eigen::MatrixXd::Zero(n, dim);
    for (long i = 0; i < n; ++i) {
      const auto it = views[m].by_id.find(ids[i]);
      if (it == views[m].by_id.end()) {
        ds.presence(i, static_cast<long>(m)) = false;
        continue;
      }
      const auto& cells = it->second;
      long n_na = 0;
      for (const auto& c : cells)
        if (c == "NA") ++n_na;
      if (n_na == dim) {
        ds.presence(i, static_cast<long>(m)) = false;
        continue;
      }
      if (n_na > 0) {
        throw DataError(path + ": subject " + ids[i] +
                        " has partial NA cells; NA is allowed only as a full-row view absence");
      }
      for (long j = 0; j < dim; ++j) {
        mat(i, j) = parse_double(cells[j], path + " subject " + ids[i]);
      }
      ds.presence(i, static_cast<long>(m)) = true;
    }
    ds.views.push_back(std::move(mat));
  }
  ds.validate();
  return ds;
}

// Per-feature scaling statistics fit on training data only.
struct ScaleParams {
  enum class Mode { kMinMax, kZscore };
  Mode mode = Mode::kMinMax;
  Eigen::VectorXd a;  // min (minmax) or mean (zscore)
  Eigen::VectorXd b;  // max (minmax) or std  (zscore)
};

// Fit min-max parameters on the given rows and scale them into [0,1].
// Constant features map to 0.5. Rows where `rows_present` is false (absent
// view rows holding zeros) are excluded from the statistics.
inline std::pair<Eigen::MatrixXd, ScaleParams> minmax_scale(
    const Eigen::MatrixXd& x,
    const std::vector<bool>& rows_present = {}) {
  ScaleParams p;
  p.mode = ScaleParams::Mode::kMinMax;
  p.a.resize(x.cols());
  p.b.resize(x.cols());
  for (long j = 0; j < x.cols(); ++j) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (long i = 0; i < x.rows(); ++i) {
      if (!rows_present.empty() && !rows_present[static_cast<std::size_t>(i)]) continue;
      lo = std::min(lo, x(i, j));
      hi = std::max(hi, x(i, j));
    }
    if (!std::isfinite(lo) || !std::isfinite(hi)) {
      throw DataError("minmax_scale: feature " + std::to_string(j) + " has no present rows");
    }
    p.a[j] = lo;
    p.b[j] = hi;
  }
  Eigen::MatrixXd scaled(x.rows(), x.cols());
  for (long j = 0; j < x.cols(); ++j) {
    const double lo = p.a[j], hi = p.b[j];
    for (long i = 0; i < x.rows(); ++i) {
      scaled(i, j) = (hi > lo) ? (x(i, j) - lo) / (hi - lo) : 0.5;
    }
  }
  return {std::move(scaled), std::move(p)};
}

// Test-set path: parameters are mandatory (they must come from the training
// set) and out-of-range values are clipped into [0,1].
inline Eigen::MatrixXd minmax_scale(const Eigen::MatrixXd& x, const ScaleParams& p) {
  if (p.mode != ScaleParams::Mode::kMinMax || p.a.size() != x.cols()) {
    throw DataError("minmax_scale: parameter shape mismatch");
  }
  Eigen::MatrixXd scaled(x.rows(), x.cols());
  for (long j = 0; j < x.cols(); ++j) {
    const double lo = p.a[j], hi = p.b[j];
    for (long i = 0; i < x.rows(); ++i) {
      double v = (hi > lo) ? (x(i, j) - lo) / (hi - lo) : 0.5;
      scaled(i, j) = std::clamp(v, 0.0, 1.0);
    }
  }
  return scaled;
}

inline Eigen::MatrixXd minmax_unscale(const Eigen::MatrixXd& scaled, const ScaleParams& p) {
  if (p.mode != ScaleParams::Mode::kMinMax || p.a.size() != scaled.cols()) {
    throw DataError("minmax_unscale: parameter shape mismatch");
  }
  Eigen::MatrixXd x(scaled.rows(), scaled.cols());
  for (long j = 0; j < scaled.cols(); ++j) {
    const double lo = p.a[j], hi = p.b[j];
    for (long i = 0; i < scaled.rows(); ++i) {
      x(i, j) = (hi > lo) ? lo + scaled(i, j) * (hi - lo) : lo;
    }
  }
  return x;
}

// Uniform random partition by subject: ceil(N * fraction) test rows, the
// rest train. Deterministic given the seed.
inline std::pair<std::vector<long>, std::vector<long>> train_test_split_indices(
    long n, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw std::invalid_argument("train_test_split: fraction must be in (0,1)");
  }
  std::vector<long> order(static_cast<std::size_t>(n));
  for (long i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  Rng rng(derive_seed(seed, "split"));
  rng.shuffle(order);
  const long n_test = static_cast<long>(std::ceil(static_cast<double>(n) * test_fraction));
  std::vector<long> test(order.begin(), order.begin() + n_test);
  std::vector<long> train(order.begin() + n_test, order.end());
  std::sort(test.begin(), test.end());
  std::sort(train.begin(), train.end());
  return {std::move(train), std::move(test)};
}

inline std::pair<MultiViewDataset, MultiViewDataset> train_test_split(
    const MultiViewDataset& ds, double test_fraction, std::uint64_t seed) {
  const auto [train_idx, test_idx] =
      train_test_split_indices(ds.n_subjects(), test_fraction, seed);
  return {ds.select_rows(train_idx), ds.select_rows(test_idx)};
}

}  // namespace mvfuse
