#pragma once

#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mvfuse/csv.hpp"
#include "mvfuse/mvvae.hpp"

namespace mvfuse {

inline constexpr const char* kCheckpointMagic = "MVFUSE-CKPT-1";

namespace detail {

inline void expect_token(std::istream& in, const std::string& expected) {
  std::string tok;
  if (!(in >> tok) || tok != expected) {
    throw DataError("checkpoint: expected '" + expected + "', got '" + tok + "'");
  }
}

template <class T>
T read_value(std::istream& in, const std::string& what) {
  T v{};
  if (!(in >> v)) throw DataError("checkpoint: failed to read " + what);
  return v;
}

inline void write_mlp(std::ostream& out, const MlpParams& p) {
  out << "mlp " << p.spec.num_affine_layers() << ' '
      << activation_name(p.spec.hidden_activation) << ' '
      << activation_name(p.spec.output_activation) << '\n';
  out << "sizes";
  for (int s : p.spec.layer_sizes) out << ' ' << s;
  out << '\n';
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    const auto& w = p.weights[l];
    out << "layer " << l << ' ' << w.rows() << ' ' << w.cols() << '\n';
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) {
        out << (c ? " " : "") << format_double(w(r, c));
      }
      out << '\n';
    }
    out << "bias";
    for (Eigen::Index r = 0; r < p.biases[l].size(); ++r) {
      out << ' ' << format_double(p.biases[l][r]);
    }
    out << '\n';
  }
}

inline MlpParams read_mlp(std::istream& in) {
  expect_token(in, "mlp");
  const int n_layers = read_value<int>(in, "layer count");
  MlpSpec spec;
  spec.hidden_activation = activation_from_name(read_value<std::string>(in, "hidden activation"));
  spec.output_activation = activation_from_name(read_value<std::string>(in, "output activation"));
  expect_token(in, "sizes");
  spec.layer_sizes.resize(static_cast<std::size_t>(n_layers) + 1);
  for (auto& s : spec.layer_sizes) s = read_value<int>(in, "layer size");
  spec.validate();
  MlpParams p;
  p.spec = spec;
  for (int l = 0; l < n_layers; ++l) {
    expect_token(in, "layer");
    const int idx = read_value<int>(in, "layer index");
    if (idx != l) throw DataError("checkpoint: layer index out of order");
    const long rows = read_value<long>(in, "rows");
    const long cols = read_value<long>(in, "cols");
    if (rows != spec.layer_sizes[static_cast<std::size_t>(l) + 1] ||
        cols != spec.layer_sizes[static_cast<std::size_t>(l)]) {
      throw DataError("checkpoint: layer shape does not match sizes header");
    }
    Eigen::MatrixXd w(rows, cols);
    for (long r = 0; r < rows; ++r)
      for (long c = 0; c < cols; ++c) w(r, c) = read_value<double>(in, "weight");
    expect_token(in, "bias");
    Eigen::VectorXd b(rows);
    for (long r = 0; r < rows; ++r) b[r] = read_value<double>(in, "bias value");
    p.weights.push_back(std::move(w));
    p.biases.push_back(std::move(b));
  }
  return p;
}

}  // namespace detail

// Standalone network checkpoint: magic header, then layer shapes and
// row-major weight/bias values. Round-trips bit-exactly.
inline void save_mlp_checkpoint(const std::string& path, const MlpParams& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint: " + path);
  out << kCheckpointMagic << '\n';
  detail::write_mlp(out, params);
  out << "end\n";
  if (!out) throw DataError("write failed: " + path);
}

inline MlpParams load_mlp_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  std::string magic;
  if (!std::getline(in, magic) || magic != kCheckpointMagic) {
    throw DataError("checkpoint: bad magic header in " + path);
  }
  MlpParams p = detail::read_mlp(in);
  detail::expect_token(in, "end");
  return p;
}

struct Checkpoint {
  MvvaeModel model;
  // Downstream linear regression head over the latents: intercept first,
  // then one weight per latent dimension.
  std::optional<Eigen::VectorXd> head;
};

inline void save_checkpoint(const std::string& path, const MvvaeModel& model,
                            const std::optional<Eigen::VectorXd>& head = std::nullopt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint: " + path);
  const auto& cfg = model.config;
  out << kCheckpointMagic << '\n';
  out << "views " << cfg.n_views() << '\n';
  for (int m = 0; m < cfg.n_views(); ++m) {
    out << "view " << cfg.view_names[static_cast<std::size_t>(m)] << ' '
        << cfg.view_dims[static_cast<std::size_t>(m)] << '\n';
  }
  out << "latent " << cfg.latent_dim << '\n';
  out << "kl_weight " << format_double(cfg.kl_weight) << '\n';
  out << "hidden_activation " << activation_name(cfg.hidden_activation) << '\n';
  out << "encoder_hidden " << cfg.encoder_hidden.size();
  for (int h : cfg.encoder_hidden) out << ' ' << h;
  out << '\n';
  out << "decoder_hidden " << cfg.decoder_hidden.size();
  for (int h : cfg.decoder_hidden) out << ' ' << h;
  out << '\n';
  for (int m = 0; m < cfg.n_views(); ++m) {
    out << "net enc_mean " << m << '\n';
    detail::write_mlp(out, model.enc_mean[static_cast<std::size_t>(m)]);
    out << "net enc_logvar " << m << '\n';
    detail::write_mlp(out, model.enc_logvar[static_cast<std::size_t>(m)]);
    out << "net dec " << m << '\n';
    detail::write_mlp(out, model.dec[static_cast<std::size_t>(m)]);
  }
  if (head) {
    out << "head " << head->size();
    for (Eigen::Index i = 0; i < head->size(); ++i) out << ' ' << format_double((*head)[i]);
    out << '\n';
  }
  out << "end\n";
  if (!out) throw DataError("write failed: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  std::string magic;
  if (!std::getline(in, magic) || magic != kCheckpointMagic) {
    throw DataError("checkpoint: bad magic header in " + path);
  }
  detail::expect_token(in, "views");
  const int n_views = detail::read_value<int>(in, "view count");
  MvvaeConfig cfg;
  for (int m = 0; m < n_views; ++m) {
    detail::expect_token(in, "view");
    cfg.view_names.push_back(detail::read_value<std::string>(in, "view name"));
    cfg.view_dims.push_back(detail::read_value<int>(in, "view dim"));
  }
  detail::expect_token(in, "latent");
  cfg.latent_dim = detail::read_value<int>(in, "latent dim");
  detail::expect_token(in, "kl_weight");
  cfg.kl_weight = detail::read_value<double>(in, "kl weight");
  detail::expect_token(in, "hidden_activation");
  cfg.hidden_activation =
      activation_from_name(detail::read_value<std::string>(in, "hidden activation"));
  detail::expect_token(in, "encoder_hidden");
  cfg.encoder_hidden.resize(detail::read_value<std::size_t>(in, "encoder hidden count"));
  for (auto& h : cfg.encoder_hidden) h = detail::read_value<int>(in, "encoder hidden size");
  detail::expect_token(in, "decoder_hidden");
  cfg.decoder_hidden.resize(detail::read_value<std::size_t>(in, "decoder hidden count"));
  for (auto& h : cfg.decoder_hidden) h = detail::read_value<int>(in, "decoder hidden size");
  cfg.validate();

  Checkpoint ckpt;
  ckpt.model.config = cfg;
  for (int m = 0; m < n_views; ++m) {
    detail::expect_token(in, "net");
    detail::expect_token(in, "enc_mean");
    if (detail::read_value<int>(in, "net index") != m) throw DataError("checkpoint: net order");
    ckpt.model.enc_mean.push_back(detail::read_mlp(in));
    detail::expect_token(in, "net");
    detail::expect_token(in, "enc_logvar");
    if (detail::read_value<int>(in, "net index") != m) throw DataError("checkpoint: net order");
    ckpt.model.enc_logvar.push_back(detail::read_mlp(in));
    detail::expect_token(in, "net");
    detail::expect_token(in, "dec");
    if (detail::read_value<int>(in, "net index") != m) throw DataError("checkpoint: net order");
    ckpt.model.dec.push_back(detail::read_mlp(in));
  }
  std::string tok;
  if (!(in >> tok)) throw DataError("checkpoint: truncated file");
  if (tok == "head") {
    const long n = detail::read_value<long>(in, "head size");
    Eigen::VectorXd head(n);
    for (long i = 0; i < n; ++i) head[i] = detail::read_value<double>(in, "head value");
    ckpt.head = std::move(head);
    if (!(in >> tok)) throw DataError("checkpoint: truncated file");
  }
  if (tok != "end") throw DataError("checkpoint: missing end marker");
  return ckpt;
}

}  // namespace mvfuse
