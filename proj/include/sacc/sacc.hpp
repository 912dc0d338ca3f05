#pragma once

// Self-attention channel combinator: frame-level channel weights from
// query/key/value projections of the normalized log magnitude, applied to
// the magnitude spectrogram.

#include "sacc/spectral.hpp"

#include <cstdint>
#include <cstring>
#include <random>

namespace sacc {

inline constexpr int kDefaultAttentionWidth = 256;

template <typename Scalar>
struct SaccParams {
  Mat<Scalar> wq;  // F x D
  Vec<Scalar> bq;  // D
  Mat<Scalar> wk;  // F x D
  Vec<Scalar> bk;  // D
  Vec<Scalar> wv;  // F
  Scalar bv = 0;

  Eigen::Index num_bins() const { return wq.rows(); }
  Eigen::Index width() const { return wq.cols(); }

  static SaccParams zeros(Eigen::Index F, Eigen::Index D) {
    SaccParams p;
    p.wq = Mat<Scalar>::Zero(F, D);
    p.bq = Vec<Scalar>::Zero(D);
    p.wk = Mat<Scalar>::Zero(F, D);
    p.bk = Vec<Scalar>::Zero(D);
    p.wv = Vec<Scalar>::Zero(F);
    p.bv = 0;
    return p;
  }

  template <typename Other>
  SaccParams<Other> cast() const {
    SaccParams<Other> p;
    p.wq = wq.template cast<Other>();
    p.bq = bq.template cast<Other>();
    p.wk = wk.template cast<Other>();
    p.bk = bk.template cast<Other>();
    p.wv = wv.template cast<Other>();
    p.bv = static_cast<Other>(bv);
    return p;
  }
};

// 2 (F D + D) + (F + 1).
constexpr std::int64_t param_count(std::int64_t F, std::int64_t D) {
  return 2 * (F * D + D) + (F + 1);
}

template <typename Scalar>
std::int64_t param_count(const SaccParams<Scalar>& p) {
  return param_count(p.num_bins(), p.width());
}

// Flat view in checkpoint order: Wq (row-major), bq, Wk (row-major), bk, Wv, bv.
template <typename Scalar>
Vec<Scalar> flatten(const SaccParams<Scalar>& p) {
  Vec<Scalar> out(param_count(p));
  Eigen::Index i = 0;
  const auto put_rows = [&](const Mat<Scalar>& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) out[i++] = m(r, c);
  };
  put_rows(p.wq);
  out.segment(i, p.bq.size()) = p.bq; i += p.bq.size();
  put_rows(p.wk);
  out.segment(i, p.bk.size()) = p.bk; i += p.bk.size();
  out.segment(i, p.wv.size()) = p.wv; i += p.wv.size();
  out[i] = p.bv;
  return out;
}

template <typename Scalar>
SaccParams<Scalar> unflatten(const Vec<Scalar>& flat, Eigen::Index F, Eigen::Index D) {
  require_contract(flat.size() == param_count(F, D), "unflatten: size does not match F and D");
  SaccParams<Scalar> p = SaccParams<Scalar>::zeros(F, D);
  Eigen::Index i = 0;
  const auto get_rows = [&](Mat<Scalar>& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = flat[i++];
  };
  get_rows(p.wq);
  p.bq = flat.segment(i, D); i += D;
  get_rows(p.wk);
  p.bk = flat.segment(i, D); i += D;
  p.wv = flat.segment(i, F); i += F;
  p.bv = flat[i];
  return p;
}

// Glorot-uniform weights, zero biases; a pure function of the seed.
template <typename Scalar = double>
SaccParams<Scalar> init_params(std::uint64_t seed, Eigen::Index F, Eigen::Index D = kDefaultAttentionWidth) {
  require_contract(F >= 1 && D >= 1, "init_params: F and D must be positive");
  std::mt19937_64 rng(seed);
  const auto fill = [&](auto& m, double fan_in, double fan_out) {
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = static_cast<Scalar>(dist(rng));
  };
  SaccParams<Scalar> p = SaccParams<Scalar>::zeros(F, D);
  fill(p.wq, F, D);
  fill(p.wk, F, D);
  fill(p.wv, F, 1);
  return p;
}

// Which magnitude Eq. (3)-style combination consumes. Linear is the default.
enum class CombineOn { kLinearMagnitude, kNormalizedLogMagnitude };

template <typename Scalar>
struct SaccActivations {
  FrameStack<Scalar> query;  // T x (C x D)
  FrameStack<Scalar> key;    // T x (C x D)
  FrameStack<Scalar> value;  // T x (C x 1)
  FrameStack<Scalar> att;    // T x (C x C), row-stochastic
  FrameStack<Scalar> w;      // T x (C x 1), sums to one per frame
  Mat<Scalar> S;             // T x F
  CombineOn combine = CombineOn::kLinearMagnitude;
  std::uint64_t provenance = 0;

  // T x C matrix of combination weights.
  Mat<Scalar> weights() const {
    Mat<Scalar> out(static_cast<Eigen::Index>(w.size()), w.empty() ? 0 : w.front().rows());
    for (std::size_t t = 0; t < w.size(); ++t) out.row(static_cast<Eigen::Index>(t)) = w[t].transpose();
    return out;
  }
};

template <typename Scalar>
struct SaccGradients {
  SaccParams<Scalar> params;
  FrameStack<Scalar> mag;  // T x (C x F)
};

namespace detail {

inline std::uint64_t mix_hash(std::uint64_t h, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof bits);
  h ^= bits + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
  return h;
}

// Cheap fingerprint tying activations to the features and parameters that
// produced them.
template <typename Scalar>
std::uint64_t fingerprint(const MagnitudeFeatures<Scalar>& feats, const SaccParams<Scalar>& p) {
  std::uint64_t h = 1469598103934665603ULL;
  h = mix_hash(h, static_cast<double>(feats.num_frames()));
  h = mix_hash(h, static_cast<double>(feats.num_channels()));
  for (const auto& m : feats.mag) h = mix_hash(h, static_cast<double>(m.sum()));
  for (const auto& m : feats.normalized_logmag) h = mix_hash(h, static_cast<double>(m.sum()));
  h = mix_hash(h, static_cast<double>(p.wq.sum()));
  h = mix_hash(h, static_cast<double>(p.bq.sum()));
  h = mix_hash(h, static_cast<double>(p.wk.sum()));
  h = mix_hash(h, static_cast<double>(p.bk.sum()));
  h = mix_hash(h, static_cast<double>(p.wv.sum()));
  h = mix_hash(h, static_cast<double>(p.bv));
  return h;
}

template <typename Derived>
void softmax_rows_inplace(Eigen::MatrixBase<Derived>& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    row.array() = (row.array() - row.maxCoeff()).exp();
    row /= row.sum();
  }
}

template <typename Scalar>
void check_shapes(const MagnitudeFeatures<Scalar>& feats, const SaccParams<Scalar>& p) {
  require_contract(feats.num_frames() >= 1 && feats.num_channels() >= 1, "sacc: empty features");
  require_contract(feats.normalized_logmag.size() == feats.mag.size(), "sacc: features not normalized");
  require_contract(feats.num_bins() == p.num_bins(),
                   "sacc: feature bins " + std::to_string(feats.num_bins()) +
                       " do not match parameter bins " + std::to_string(p.num_bins()));
  require_contract(p.bq.size() == p.width() && p.wk.rows() == p.num_bins() && p.wk.cols() == p.width() &&
                       p.bk.size() == p.width() && p.wv.size() == p.num_bins(),
                   "sacc: inconsistent parameter shapes");
}

}  // namespace detail

template <typename Scalar>
SaccActivations<Scalar> forward(const MagnitudeFeatures<Scalar>& feats, const SaccParams<Scalar>& p,
                                CombineOn combine = CombineOn::kLinearMagnitude) {
  detail::check_shapes(feats, p);
  const Eigen::Index T = feats.num_frames();
  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(p.width()));

  SaccActivations<Scalar> a;
  a.combine = combine;
  a.S.resize(T, feats.num_bins());
  for (Eigen::Index t = 0; t < T; ++t) {
    const Mat<Scalar>& z = feats.normalized_logmag[t];
    Mat<Scalar> q = (z * p.wq).rowwise() + p.bq.transpose();
    Mat<Scalar> k = (z * p.wk).rowwise() + p.bk.transpose();
    Mat<Scalar> v = (z * p.wv).array() + p.bv;
    Mat<Scalar> att = (q * k.transpose()) * scale;
    detail::softmax_rows_inplace(att);
    Mat<Scalar> w = (att * v).transpose();
    detail::softmax_rows_inplace(w);
    w.transposeInPlace();
    const Mat<Scalar>& combined = combine == CombineOn::kLinearMagnitude ? feats.mag[t] : z;
    a.S.row(t) = w.transpose() * combined;
    a.query.push_back(std::move(q));
    a.key.push_back(std::move(k));
    a.value.push_back(std::move(v));
    a.att.push_back(std::move(att));
    a.w.push_back(std::move(w));
  }
  a.provenance = detail::fingerprint(feats, p);
  return a;
}

// Reverse-mode gradients of <dS, S> through the combination, both softmaxes,
// the projections and the log/MVN normalization of the input magnitude.
template <typename Scalar>
SaccGradients<Scalar> backward(const MagnitudeFeatures<Scalar>& feats, const SaccParams<Scalar>& p,
                               const SaccActivations<Scalar>& acts, const Mat<Scalar>& dS) {
  detail::check_shapes(feats, p);
  const Eigen::Index T = feats.num_frames();
  require_contract(static_cast<Eigen::Index>(acts.w.size()) == T && acts.S.rows() == T &&
                       acts.S.cols() == feats.num_bins() && acts.provenance == detail::fingerprint(feats, p),
                   "sacc backward: activations were not produced from these features and parameters");
  require_contract(dS.rows() == T && dS.cols() == feats.num_bins(), "sacc backward: dS shape mismatch");

  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(p.width()));
  const bool linear = acts.combine == CombineOn::kLinearMagnitude;

  SaccGradients<Scalar> g;
  g.params = SaccParams<Scalar>::zeros(p.num_bins(), p.width());
  FrameStack<Scalar> dz(T);
  g.mag.resize(T);

  for (Eigen::Index t = 0; t < T; ++t) {
    const Mat<Scalar>& z = feats.normalized_logmag[t];
    const Mat<Scalar>& combined = linear ? feats.mag[t] : z;
    const Vec<Scalar> w = acts.w[t].col(0);
    const Vec<Scalar> ds = dS.row(t).transpose();

    // S = w^T combined
    const Vec<Scalar> dw = combined * ds;
    const Mat<Scalar> d_combined = w * ds.transpose();
    // w = softmax(logits)
    const Vec<Scalar> dlogits = (w.array() * (dw.array() - w.dot(dw))).matrix();
    // logits = att v
    const Mat<Scalar>& att = acts.att[t];
    const Vec<Scalar> v = acts.value[t].col(0);
    const Mat<Scalar> datt = dlogits * v.transpose();
    const Vec<Scalar> dv = att.transpose() * dlogits;
    // att = row softmax(q k^T * scale)
    const Vec<Scalar> row_dot = (att.array() * datt.array()).rowwise().sum();
    const Mat<Scalar> dscores = (att.array() * (datt.colwise() - row_dot).array()).matrix() * scale;
    const Mat<Scalar> dq = dscores * acts.key[t];
    const Mat<Scalar> dk = dscores.transpose() * acts.query[t];

    g.params.wq.noalias() += z.transpose() * dq;
    g.params.bq += dq.colwise().sum().transpose();
    g.params.wk.noalias() += z.transpose() * dk;
    g.params.bk += dk.colwise().sum().transpose();
    g.params.wv.noalias() += z.transpose() * dv;
    g.params.bv += dv.sum();

    dz[t] = dq * p.wq.transpose() + dk * p.wk.transpose() + dv * p.wv.transpose();
    if (linear) {
      g.mag[t] = d_combined;
    } else {
      dz[t] += d_combined;
      g.mag[t] = Mat<Scalar>::Zero(z.rows(), z.cols());
    }
  }

  const FrameStack<Scalar> dmag_log = normalized_logmag_backward(feats, dz);
  for (Eigen::Index t = 0; t < T; ++t) g.mag[t] += dmag_log[t];
  return g;
}

}  // namespace sacc
