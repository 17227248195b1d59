#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tsembed/data.hpp"
#include "tsembed/errors.hpp"
#include "tsembed/io_util.hpp"
#include "tsembed/losses.hpp"
#include "tsembed/rng.hpp"

namespace tsembed {

// The embedding function f: trial -> R^d, with exact reverse-mode gradients
// written by hand. Two architectures:
//
// LINEAR   flatten (time-major: index t*channels + c) -> dense to d.
//
// MINICONV a reduced EEGNet-style stack, batch-norm and dropout replaced by
//          input standardization and ELU:
//            temporal conv      f1 filters, kernel temporal_kernel, applied
//                               along time, shared across channels, zero
//                               "same" padding (left (k-1)/2)
//            depthwise spatial  depth_mult filters per temporal map, full
//                               channel extent, collapses channels
//            ELU, average-pool pool1 (non-overlapping, tail dropped)
//            depthwise temporal conv kernel sep_kernel ("same" padding)
//            pointwise conv to f2 maps, ELU, average-pool pool2
//            flatten (map-major: index g*T2 + t) -> dense to d
//
// Embeddings are NOT length-normalized. All arithmetic is double precision;
// checkpoints store float32.

enum class ArchKind { kLinear, kMiniConv };

struct ArchitectureSpec {
  ArchKind kind = ArchKind::kMiniConv;
  int time_steps = 0;
  int channels = 0;
  int embed_dim = 8;
  // MINICONV only:
  int f1 = 8;
  int depth_mult = 2;
  int f2 = 16;
  int temporal_kernel = 32;
  int sep_kernel = 16;
  int pool1 = 4;
  int pool2 = 8;

  int spatial_maps() const { return f1 * depth_mult; }
  int pooled1_len() const { return time_steps / pool1; }
  int pooled2_len() const { return pooled1_len() / pool2; }
  int flat_len() const {
    return kind == ArchKind::kLinear ? time_steps * channels
                                     : f2 * pooled2_len();
  }
};

inline void validate_arch(const ArchitectureSpec& a) {
  if (a.time_steps < 1 || a.channels < 1)
    throw UsageError("architecture input shape must be >= 1x1");
  if (a.embed_dim < 1) throw UsageError("embed_dim must be >= 1");
  if (a.kind == ArchKind::kLinear) return;
  if (a.f1 < 1 || a.depth_mult < 1 || a.f2 < 1 || a.temporal_kernel < 1 ||
      a.sep_kernel < 1 || a.pool1 < 1 || a.pool2 < 1)
    throw UsageError("miniconv hyperparameters must be >= 1");
  if (a.temporal_kernel > a.time_steps)
    throw UsageError("temporal_kernel exceeds time_steps");
  if (a.pooled1_len() < 1)
    throw UsageError("pool1 leaves no time steps");
  if (a.sep_kernel > a.pooled1_len())
    throw UsageError("sep_kernel exceeds the pooled sequence length");
  if (a.pooled2_len() < 1)
    throw UsageError("pool2 leaves no time steps");
}

struct Tensor {
  std::string name;
  Eigen::MatrixXd value;
};

// Parameter tensors in fixed (serialization) order:
//   LINEAR:   dense.weight (d x T*C), dense.bias (d x 1)
//   MINICONV: temporal.weight (f1 x k1), temporal.bias (f1 x 1),
//             spatial.weight (M1 x C),  spatial.bias (M1 x 1),
//             sep_depth.weight (M1 x k2),
//             sep_point.weight (f2 x M1), sep_point.bias (f2 x 1),
//             dense.weight (d x f2*T2), dense.bias (d x 1)
// with M1 = f1*depth_mult, T1 = time_steps/pool1, T2 = T1/pool2.
//
// Closed-form parameter counts:
//   LINEAR:   d*(T*C + 1)
//   MINICONV: f1*(k1+1) + M1*(C+1) + M1*k2 + f2*(M1+1) + d*(f2*T2 + 1)
// e.g. MINICONV defaults on a 128x8 input: 264 + 144 + 256 + 272 + 520 = 1456.
struct EmbedderParams {
  ArchitectureSpec arch;
  std::vector<Tensor> tensors;

  std::int64_t parameter_count() const {
    std::int64_t n = 0;
    for (const Tensor& t : tensors) n += t.value.size();
    return n;
  }
};

namespace detail {

inline std::vector<std::pair<std::string, std::pair<int, int>>> tensor_shapes(
    const ArchitectureSpec& a) {
  if (a.kind == ArchKind::kLinear)
    return {{"dense.weight", {a.embed_dim, a.time_steps * a.channels}},
            {"dense.bias", {a.embed_dim, 1}}};
  const int m1 = a.spatial_maps();
  return {{"temporal.weight", {a.f1, a.temporal_kernel}},
          {"temporal.bias", {a.f1, 1}},
          {"spatial.weight", {m1, a.channels}},
          {"spatial.bias", {m1, 1}},
          {"sep_depth.weight", {m1, a.sep_kernel}},
          {"sep_point.weight", {a.f2, m1}},
          {"sep_point.bias", {a.f2, 1}},
          {"dense.weight", {a.embed_dim, a.f2 * a.pooled2_len()}},
          {"dense.bias", {a.embed_dim, 1}}};
}

inline double elu(double z) { return z > 0.0 ? z : std::expm1(z); }
inline double elu_grad(double z) { return z > 0.0 ? 1.0 : std::exp(z); }

}  // namespace detail

inline std::int64_t parameter_count(const ArchitectureSpec& arch) {
  std::int64_t n = 0;
  for (const auto& [name, shape] : detail::tensor_shapes(arch))
    n += static_cast<std::int64_t>(shape.first) * shape.second;
  return n;
}

// Glorot-uniform weights (fan_in = columns, fan_out = rows), zero biases.
// Entries are drawn tensor by tensor, row-major.
inline EmbedderParams init_params(const ArchitectureSpec& arch,
                                  std::uint64_t seed) {
  validate_arch(arch);
  EmbedderParams params;
  params.arch = arch;
  RngStream rng(seed);
  for (const auto& [name, shape] : detail::tensor_shapes(arch)) {
    Tensor t;
    t.name = name;
    t.value.setZero(shape.first, shape.second);
    const bool is_bias = name.size() > 4 && name.substr(name.size() - 4) == "bias";
    if (!is_bias) {
      const double bound =
          std::sqrt(6.0 / static_cast<double>(shape.first + shape.second));
      for (int r = 0; r < shape.first; ++r)
        for (int c = 0; c < shape.second; ++c)
          t.value(r, c) = (2.0 * rng.uniform() - 1.0) * bound;
    }
    params.tensors.push_back(std::move(t));
  }
  return params;
}

inline std::vector<Eigen::MatrixXd> zero_like(const EmbedderParams& params) {
  std::vector<Eigen::MatrixXd> grads;
  grads.reserve(params.tensors.size());
  for (const Tensor& t : params.tensors)
    grads.push_back(Eigen::MatrixXd::Zero(t.value.rows(), t.value.cols()));
  return grads;
}

namespace detail {

struct ForwardCache {
  Eigen::VectorXd flat;  // input to the dense layer
  // MINICONV intermediates (empty for LINEAR):
  std::vector<Eigen::MatrixXd> y1;  // f1 maps, each T x C
  Eigen::MatrixXd y2;               // M1 x T, pre-ELU
  Eigen::MatrixXd p1;               // M1 x T1
  Eigen::MatrixXd z3;               // M1 x T1
  Eigen::MatrixXd y3;               // f2 x T1, pre-ELU
  Eigen::MatrixXd p2;               // f2 x T2
};

inline void check_trial_shape(const ArchitectureSpec& arch,
                              const Eigen::MatrixXd& x) {
  if (x.rows() != arch.time_steps || x.cols() != arch.channels)
    throw ShapeMismatch("trial shape " + std::to_string(x.rows()) + "x" +
                        std::to_string(x.cols()) +
                        " does not match architecture input " +
                        std::to_string(arch.time_steps) + "x" +
                        std::to_string(arch.channels));
}

inline Eigen::VectorXd forward_impl(const EmbedderParams& params,
                                    const Eigen::MatrixXd& x,
                                    ForwardCache* cache) {
  const ArchitectureSpec& a = params.arch;
  check_trial_shape(a, x);
  ForwardCache local;
  ForwardCache& cc = cache ? *cache : local;

  if (a.kind == ArchKind::kLinear) {
    cc.flat.resize(a.time_steps * a.channels);
    for (int t = 0; t < a.time_steps; ++t)
      for (int c = 0; c < a.channels; ++c)
        cc.flat[t * a.channels + c] = x(t, c);
    return params.tensors[0].value * cc.flat + params.tensors[1].value.col(0);
  }

  const Eigen::MatrixXd& w1 = params.tensors[0].value;
  const Eigen::MatrixXd& b1 = params.tensors[1].value;
  const Eigen::MatrixXd& w2 = params.tensors[2].value;
  const Eigen::MatrixXd& b2 = params.tensors[3].value;
  const Eigen::MatrixXd& w3 = params.tensors[4].value;
  const Eigen::MatrixXd& w4 = params.tensors[5].value;
  const Eigen::MatrixXd& b4 = params.tensors[6].value;
  const Eigen::MatrixXd& w5 = params.tensors[7].value;
  const Eigen::MatrixXd& b5 = params.tensors[8].value;

  const int T = a.time_steps, C = a.channels, k1 = a.temporal_kernel;
  const int m1 = a.spatial_maps(), T1 = a.pooled1_len(), k2 = a.sep_kernel;
  const int T2 = a.pooled2_len();
  const int pad1 = (k1 - 1) / 2, pad2 = (k2 - 1) / 2;

  // Temporal conv: same kernel along time for every channel.
  cc.y1.assign(a.f1, Eigen::MatrixXd(T, C));
  for (int f = 0; f < a.f1; ++f) {
    for (int t = 0; t < T; ++t) {
      const int tau_lo = std::max(0, pad1 - t);
      const int tau_hi = std::min(k1, T + pad1 - t);
      for (int c = 0; c < C; ++c) {
        double acc = b1(f, 0);
        for (int tau = tau_lo; tau < tau_hi; ++tau)
          acc += w1(f, tau) * x(t + tau - pad1, c);
        cc.y1[f](t, c) = acc;
      }
    }
  }

  // Depthwise spatial conv collapses channels.
  cc.y2.resize(m1, T);
  for (int j = 0; j < m1; ++j) {
    const int f = j / a.depth_mult;
    for (int t = 0; t < T; ++t)
      cc.y2(j, t) = b2(j, 0) + cc.y1[f].row(t).dot(w2.row(j));
  }

  // ELU then average-pool pool1 (tail beyond T1*pool1 dropped).
  cc.p1.setZero(m1, T1);
  for (int j = 0; j < m1; ++j)
    for (int u = 0; u < T1; ++u) {
      double acc = 0.0;
      for (int t = u * a.pool1; t < (u + 1) * a.pool1; ++t)
        acc += elu(cc.y2(j, t));
      cc.p1(j, u) = acc / a.pool1;
    }

  // Separable stage: depthwise temporal conv, then pointwise to f2.
  cc.z3.setZero(m1, T1);
  for (int j = 0; j < m1; ++j)
    for (int u = 0; u < T1; ++u) {
      const int tau_lo = std::max(0, pad2 - u);
      const int tau_hi = std::min(k2, T1 + pad2 - u);
      double acc = 0.0;
      for (int tau = tau_lo; tau < tau_hi; ++tau)
        acc += w3(j, tau) * cc.p1(j, u + tau - pad2);
      cc.z3(j, u) = acc;
    }
  cc.y3 = w4 * cc.z3;
  cc.y3.colwise() += b4.col(0);

  // ELU then average-pool pool2.
  cc.p2.setZero(a.f2, T2);
  for (int g = 0; g < a.f2; ++g)
    for (int u = 0; u < T2; ++u) {
      double acc = 0.0;
      for (int t = u * a.pool2; t < (u + 1) * a.pool2; ++t)
        acc += elu(cc.y3(g, t));
      cc.p2(g, u) = acc / a.pool2;
    }

  cc.flat.resize(a.f2 * T2);
  for (int g = 0; g < a.f2; ++g)
    for (int u = 0; u < T2; ++u) cc.flat[g * T2 + u] = cc.p2(g, u);
  return w5 * cc.flat + b5.col(0);
}

// Accumulates parameter gradients for one trial given dLoss/dEmbedding.
inline void backward_impl(const EmbedderParams& params,
                          const Eigen::MatrixXd& x, const ForwardCache& cc,
                          const Eigen::VectorXd& d_emb,
                          std::vector<Eigen::MatrixXd>& grads) {
  const ArchitectureSpec& a = params.arch;
  if (a.kind == ArchKind::kLinear) {
    grads[0] += d_emb * cc.flat.transpose();
    grads[1].col(0) += d_emb;
    return;
  }

  const Eigen::MatrixXd& w2 = params.tensors[2].value;
  const Eigen::MatrixXd& w3 = params.tensors[4].value;
  const Eigen::MatrixXd& w4 = params.tensors[5].value;
  const Eigen::MatrixXd& w5 = params.tensors[7].value;

  const int T = a.time_steps, C = a.channels, k1 = a.temporal_kernel;
  const int m1 = a.spatial_maps(), T1 = a.pooled1_len(), k2 = a.sep_kernel;
  const int T2 = a.pooled2_len();
  const int pad1 = (k1 - 1) / 2, pad2 = (k2 - 1) / 2;

  // Dense.
  grads[7] += d_emb * cc.flat.transpose();
  grads[8].col(0) += d_emb;
  const Eigen::VectorXd d_flat = w5.transpose() * d_emb;

  // Unflatten, pool2, ELU.
  Eigen::MatrixXd d_y3 = Eigen::MatrixXd::Zero(a.f2, T1);
  for (int g = 0; g < a.f2; ++g)
    for (int u = 0; u < T2; ++u) {
      const double spread = d_flat[g * T2 + u] / a.pool2;
      for (int t = u * a.pool2; t < (u + 1) * a.pool2; ++t)
        d_y3(g, t) = spread * elu_grad(cc.y3(g, t));
    }

  // Pointwise conv.
  grads[5] += d_y3 * cc.z3.transpose();
  grads[6].col(0) += d_y3.rowwise().sum();
  const Eigen::MatrixXd d_z3 = w4.transpose() * d_y3;

  // Depthwise temporal conv.
  Eigen::MatrixXd d_p1 = Eigen::MatrixXd::Zero(m1, T1);
  for (int j = 0; j < m1; ++j)
    for (int u = 0; u < T1; ++u) {
      const double g = d_z3(j, u);
      if (g == 0.0) continue;
      const int tau_lo = std::max(0, pad2 - u);
      const int tau_hi = std::min(k2, T1 + pad2 - u);
      for (int tau = tau_lo; tau < tau_hi; ++tau) {
        grads[4](j, tau) += g * cc.p1(j, u + tau - pad2);
        d_p1(j, u + tau - pad2) += g * w3(j, tau);
      }
    }

  // Pool1, ELU.
  Eigen::MatrixXd d_y2 = Eigen::MatrixXd::Zero(m1, T);
  for (int j = 0; j < m1; ++j)
    for (int u = 0; u < T1; ++u) {
      const double spread = d_p1(j, u) / a.pool1;
      for (int t = u * a.pool1; t < (u + 1) * a.pool1; ++t)
        d_y2(j, t) = spread * elu_grad(cc.y2(j, t));
    }

  // Depthwise spatial conv; d_y1 is accumulated per temporal map.
  std::vector<Eigen::MatrixXd> d_y1(a.f1, Eigen::MatrixXd::Zero(T, C));
  for (int j = 0; j < m1; ++j) {
    const int f = j / a.depth_mult;
    for (int t = 0; t < T; ++t) {
      const double g = d_y2(j, t);
      if (g == 0.0) continue;
      grads[2].row(j) += g * cc.y1[f].row(t);
      d_y1[f].row(t) += g * w2.row(j);
    }
    grads[3](j, 0) += d_y2.row(j).sum();
  }

  // Temporal conv.
  for (int f = 0; f < a.f1; ++f) {
    double db = 0.0;
    for (int t = 0; t < T; ++t) {
      const int tau_lo = std::max(0, pad1 - t);
      const int tau_hi = std::min(k1, T + pad1 - t);
      for (int c = 0; c < C; ++c) {
        const double g = d_y1[f](t, c);
        if (g == 0.0) continue;
        db += g;
        for (int tau = tau_lo; tau < tau_hi; ++tau)
          grads[0](f, tau) += g * x(t + tau - pad1, c);
      }
    }
    grads[1](f, 0) += db;
  }
}

}  // namespace detail

inline Eigen::VectorXd forward(const EmbedderParams& params, const Trial& trial) {
  return detail::forward_impl(params, trial.samples, nullptr);
}

// Row i is forward(params, trials[i]); rows are computed sequentially so the
// result is bit-identical across runs.
inline Eigen::MatrixXd forward_batch(const EmbedderParams& params,
                                     const std::vector<Trial>& trials) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(trials.size()),
                      params.arch.embed_dim);
  for (std::size_t i = 0; i < trials.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = forward(params, trials[i]);
  return out;
}

struct LossAndGrads {
  double loss = 0.0;
  std::vector<Eigen::MatrixXd> grads;  // parallel to params.tensors
};

// Product ladder loss of the batch embeddings plus its exact gradient with
// respect to every parameter tensor.
inline LossAndGrads loss_gradient(const EmbedderParams& params,
                                  const std::vector<Trial>& batch,
                                  const std::vector<LabelVector>& labels,
                                  const LossConfig& config) {
  if (batch.empty()) throw UsageError("loss_gradient needs a non-empty batch");
  if (batch.size() != labels.size())
    throw ShapeMismatch("batch and labels have different lengths");

  const int n = static_cast<int>(batch.size());
  std::vector<detail::ForwardCache> caches(n);
  Eigen::MatrixXd V(n, params.arch.embed_dim);
  for (int i = 0; i < n; ++i)
    V.row(i) = detail::forward_impl(params, batch[i].samples, &caches[i]);

  LossAndGrads out;
  Eigen::MatrixXd dV;
  out.loss = product_ladder_loss_grad(V, labels, config, dV);
  out.grads = zero_like(params);
  for (int i = 0; i < n; ++i)
    detail::backward_impl(params, batch[i].samples, caches[i],
                          dV.row(i).transpose(), out.grads);
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints: directory with meta.csv (architecture fields + the input
// scale the embedder was trained at) and params.bin (tensors concatenated in
// declaration order, row-major, little-endian float32).

struct Checkpoint {
  EmbedderParams params;
  double input_scale = 1.0;
};

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const ArchitectureSpec& a = ckpt.params.arch;
  std::string meta =
      "kind,time_steps,channels,embed_dim,f1,depth_mult,f2,temporal_kernel,"
      "sep_kernel,pool1,pool2,input_scale\n";
  meta += std::string(a.kind == ArchKind::kLinear ? "linear" : "miniconv") +
          "," + std::to_string(a.time_steps) + "," + std::to_string(a.channels) +
          "," + std::to_string(a.embed_dim) + "," + std::to_string(a.f1) + "," +
          std::to_string(a.depth_mult) + "," + std::to_string(a.f2) + "," +
          std::to_string(a.temporal_kernel) + "," + std::to_string(a.sep_kernel) +
          "," + std::to_string(a.pool1) + "," + std::to_string(a.pool2) + "," +
          ioutil::format_double(ckpt.input_scale) + "\n";

  std::string blob;
  for (const Tensor& t : ckpt.params.tensors)
    for (Eigen::Index r = 0; r < t.value.rows(); ++r)
      for (Eigen::Index c = 0; c < t.value.cols(); ++c)
        ioutil::append_f32_le(blob, static_cast<float>(t.value(r, c)));

  ioutil::write_file((fs::path(dir) / "meta.csv").string(), meta);
  ioutil::write_file((fs::path(dir) / "params.bin").string(), blob);
}

inline Checkpoint load_checkpoint(const std::string& dir) {
  namespace fs = std::filesystem;
  const std::string meta_path = (fs::path(dir) / "meta.csv").string();
  const auto lines = ioutil::read_lines(meta_path);
  if (lines.size() < 2)
    throw FormatError(meta_path + ": missing header or data row");
  const auto cells = ioutil::split(lines[1], ',');
  if (cells.size() != 12)
    throw FormatError(meta_path + ":2: expected 12 cells");

  ArchitectureSpec a;
  const std::string kind = ioutil::strip(cells[0]);
  if (kind == "linear")
    a.kind = ArchKind::kLinear;
  else if (kind == "miniconv")
    a.kind = ArchKind::kMiniConv;
  else
    throw FormatError(meta_path + ":2: unknown architecture '" + kind + "'");
  const std::string where = meta_path + ":2";
  a.time_steps = static_cast<int>(ioutil::parse_int(cells[1], where));
  a.channels = static_cast<int>(ioutil::parse_int(cells[2], where));
  a.embed_dim = static_cast<int>(ioutil::parse_int(cells[3], where));
  a.f1 = static_cast<int>(ioutil::parse_int(cells[4], where));
  a.depth_mult = static_cast<int>(ioutil::parse_int(cells[5], where));
  a.f2 = static_cast<int>(ioutil::parse_int(cells[6], where));
  a.temporal_kernel = static_cast<int>(ioutil::parse_int(cells[7], where));
  a.sep_kernel = static_cast<int>(ioutil::parse_int(cells[8], where));
  a.pool1 = static_cast<int>(ioutil::parse_int(cells[9], where));
  a.pool2 = static_cast<int>(ioutil::parse_int(cells[10], where));
  validate_arch(a);

  Checkpoint ckpt;
  ckpt.input_scale = ioutil::parse_double(cells[11], where);
  ckpt.params.arch = a;

  const std::string blob =
      ioutil::read_binary_file((fs::path(dir) / "params.bin").string());
  const std::size_t expected = static_cast<std::size_t>(parameter_count(a)) * 4;
  if (blob.size() != expected)
    throw ShapeMismatch(dir + "/params.bin: length " +
                        std::to_string(blob.size()) + " != expected " +
                        std::to_string(expected));
  const unsigned char* p = reinterpret_cast<const unsigned char*>(blob.data());
  for (const auto& [name, shape] : detail::tensor_shapes(a)) {
    Tensor t;
    t.name = name;
    t.value.resize(shape.first, shape.second);
    for (int r = 0; r < shape.first; ++r)
      for (int c = 0; c < shape.second; ++c) {
        t.value(r, c) = static_cast<double>(ioutil::read_f32_le(p));
        p += 4;
      }
    ckpt.params.tensors.push_back(std::move(t));
  }
  return ckpt;
}

}  // namespace tsembed
