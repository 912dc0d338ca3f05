#include "sacc/beamformers.hpp"

#include "sacc/error.hpp"

#include <algorithm>
#include <numbers>
#include <random>

namespace sacc {

Eigen::VectorXd ReferenceSelector::one_hot(Eigen::Index channels) const {
  require_contract(index >= 0 && index < channels, "reference microphone out of range");
  Eigen::VectorXd u = Eigen::VectorXd::Zero(channels);
  u[index] = 1.0;
  return u;
}

double diffuse_coherence(double freq_hz, double spacing_m, double speed_of_sound) {
  const double x = 2.0 * std::numbers::pi * freq_hz * spacing_m / speed_of_sound;
  return std::abs(x) < 1e-12 ? 1.0 : std::sin(x) / x;
}

double cdr_from_coherence(std::complex<double> coherence, double diffuse) {
  // Bound |coherence| away from one; the estimator has a pole there.
  constexpr double kMaxMagnitude = 1.0 - 1e-6;
  const double mag = std::abs(coherence);
  if (mag > kMaxMagnitude) coherence *= kMaxMagnitude / mag;
  const double re = coherence.real();
  const double mag2 = std::norm(coherence);
  const double g = diffuse;
  const double radicand = g * g * re * re - g * g * mag2 + g * g - 2.0 * g * re + mag2;
  const double cdr = (g * re - mag2 - std::sqrt(std::max(radicand, 0.0))) / (mag2 - 1.0);
  return std::max(cdr, 0.0);
}

CdrMask estimate_cdr_mask(const Spectrogram& spec, std::pair<Eigen::Index, Eigen::Index> mic_pair,
                          double spacing_m, const CdrConfig& cfg) {
  const auto [a, b] = mic_pair;
  require_contract(a != b, "cdr: microphone pair must use two distinct channels");
  require_contract(a >= 0 && b >= 0 && a < spec.num_channels() && b < spec.num_channels(),
                   "cdr: microphone index out of range");
  require_contract(spacing_m > 0.0, "cdr: spacing must be positive");
  require_contract(cfg.smoothing >= 0.0 && cfg.smoothing < 1.0, "cdr: smoothing must be in [0, 1)");
  require_contract(spec.num_bins() == cfg.stft.num_bins(), "cdr: spectrogram does not match the STFT config");

  const Eigen::Index T = spec.num_frames();
  const Eigen::Index F = spec.num_bins();
  const double alpha = cfg.smoothing;

  // Seed the recursion with the average over its effective memory so the
  // first frames do not start from single-frame (unit) coherence.
  const Eigen::Index warmup = std::clamp<Eigen::Index>(
      static_cast<Eigen::Index>(std::lround(1.0 / (1.0 - alpha))), 1, std::max<Eigen::Index>(T, 1));
  Eigen::ArrayXd paa = Eigen::ArrayXd::Zero(F), pbb = Eigen::ArrayXd::Zero(F);
  Eigen::ArrayXcd pab = Eigen::ArrayXcd::Zero(F);
  for (Eigen::Index t = 0; t < warmup; ++t) {
    const Eigen::ArrayXcd xa = spec.frames[t].row(a).transpose().array();
    const Eigen::ArrayXcd xb = spec.frames[t].row(b).transpose().array();
    paa += xa.abs2();
    pbb += xb.abs2();
    pab += xa * xb.conjugate();
  }
  paa /= static_cast<double>(warmup);
  pbb /= static_cast<double>(warmup);
  pab /= static_cast<double>(warmup);

  Eigen::VectorXd diffuse(F);
  for (Eigen::Index f = 0; f < F; ++f) {
    diffuse[f] = diffuse_coherence(cfg.stft.bin_hz(static_cast<int>(f)), spacing_m, cfg.speed_of_sound);
  }

  CdrMask out;
  out.mask.resize(T, F);
  for (Eigen::Index t = 0; t < T; ++t) {
    const Eigen::ArrayXcd xa = spec.frames[t].row(a).transpose().array();
    const Eigen::ArrayXcd xb = spec.frames[t].row(b).transpose().array();
    paa = alpha * paa + (1.0 - alpha) * xa.abs2();
    pbb = alpha * pbb + (1.0 - alpha) * xb.abs2();
    pab = alpha * pab + (1.0 - alpha) * xa * xb.conjugate();
    for (Eigen::Index f = 0; f < F; ++f) {
      const double denom = std::sqrt(paa[f] * pbb[f]);
      if (!(denom > 0.0)) {
        out.mask(t, f) = 0.0;
        continue;
      }
      const double cdr = cdr_from_coherence(pab[f] / denom, diffuse[f]);
      out.mask(t, f) = std::clamp(cdr / (cdr + 1.0), 0.0, 1.0);
    }
  }
  return out;
}

CovariancePair estimate_covariances(const Spectrogram& spec, const CdrMask& mask) {
  const Eigen::Index T = spec.num_frames();
  const Eigen::Index F = spec.num_bins();
  const Eigen::Index C = spec.num_channels();
  require_contract(mask.mask.rows() == T && mask.mask.cols() == F, "covariance: mask shape mismatch");
  require_contract(T >= 1, "covariance: empty spectrogram");

  CovariancePair cov;
  cov.phi_s.assign(F, Eigen::MatrixXcd::Zero(C, C));
  cov.phi_v.assign(F, Eigen::MatrixXcd::Zero(C, C));
  Eigen::MatrixXcd plain(C, C);
  for (Eigen::Index f = 0; f < F; ++f) {
    double ws = 0.0, wv = 0.0;
    plain.setZero();
    for (Eigen::Index t = 0; t < T; ++t) {
      const Eigen::VectorXcd x = spec.frames[t].col(f);
      const Eigen::MatrixXcd outer = x * x.adjoint();
      const double m = mask.mask(t, f);
      cov.phi_s[f] += m * outer;
      cov.phi_v[f] += (1.0 - m) * outer;
      plain += outer;
      ws += m;
      wv += 1.0 - m;
    }
    if (ws > 0.0) {
      cov.phi_s[f] /= ws;
    } else {
      cov.phi_s[f] = plain / static_cast<double>(T);
      ++cov.fallback_bins;
    }
    if (wv > 0.0) cov.phi_v[f] /= wv;

    cov.phi_s[f] = 0.5 * (cov.phi_s[f] + cov.phi_s[f].adjoint()).eval();
    cov.phi_v[f] = 0.5 * (cov.phi_v[f] + cov.phi_v[f].adjoint()).eval();
    // Loading scales with the noise trace; an all-speech bin borrows the
    // speech trace so the loaded matrix stays invertible.
    double trace = cov.phi_v[f].trace().real();
    if (!(trace > 0.0)) trace = cov.phi_s[f].trace().real();
    cov.phi_v[f].diagonal().array() += kDiagonalLoading * trace / static_cast<double>(C);
  }
  return cov;
}

BeamformerWeights mvdr_weights(const CovariancePair& cov, const ReferenceSelector& ref) {
  require_contract(cov.phi_v.size() == cov.phi_s.size() && !cov.phi_v.empty(), "mvdr: covariance shape mismatch");
  const auto F = static_cast<Eigen::Index>(cov.phi_v.size());
  const Eigen::Index C = cov.phi_v.front().rows();
  const Eigen::VectorXcd u = ref.one_hot(C).cast<std::complex<double>>();

  BeamformerWeights w;
  w.h.resize(F, C);
  for (Eigen::Index f = 0; f < F; ++f) {
    Eigen::FullPivLU<Eigen::MatrixXcd> lu(cov.phi_v[f]);
    if (!lu.isInvertible()) {
      throw Error(ErrorKind::kNumeric, "mvdr: noise covariance singular at frequency bin " + std::to_string(f));
    }
    const Eigen::MatrixXcd m = lu.solve(cov.phi_s[f]);
    const std::complex<double> trace = m.trace();
    if (!(std::abs(trace) > 0.0) || !m.allFinite()) {
      throw Error(ErrorKind::kNumeric, "mvdr: degenerate normalization at frequency bin " + std::to_string(f));
    }
    w.h.row(f) = (m * u / trace).transpose();
  }
  return w;
}

Eigen::MatrixXcd apply_beamformer(const Spectrogram& spec, const BeamformerWeights& w) {
  require_contract(w.h.rows() == spec.num_bins() && w.h.cols() == spec.num_channels(),
                   "apply_beamformer: weight shape mismatch");
  Eigen::MatrixXcd y(spec.num_frames(), spec.num_bins());
  const Eigen::MatrixXcd hc = w.h.conjugate().transpose();  // C x F
  for (Eigen::Index t = 0; t < spec.num_frames(); ++t) {
    y.row(t) = (spec.frames[t].array() * hc.array()).colwise().sum();
  }
  return y;
}

Eigen::MatrixXcd delay_and_sum(const Spectrogram& spec, const Eigen::VectorXd& steering_delay_s,
                               const StftConfig& cfg) {
  const Eigen::Index C = spec.num_channels();
  require_contract(steering_delay_s.size() == C, "delay_and_sum: one delay per channel required");
  require_contract(steering_delay_s.allFinite(), "delay_and_sum: delays must be finite");
  require_contract(spec.num_bins() == cfg.num_bins(), "delay_and_sum: spectrogram does not match the STFT config");
  const Eigen::Index F = spec.num_bins();
  Eigen::MatrixXcd steer(C, F);
  for (Eigen::Index c = 0; c < C; ++c)
    for (Eigen::Index f = 0; f < F; ++f)
      steer(c, f) = std::polar(1.0 / static_cast<double>(C),
                               2.0 * std::numbers::pi * cfg.bin_hz(static_cast<int>(f)) * steering_delay_s[c]);
  Eigen::MatrixXcd y(spec.num_frames(), F);
  for (Eigen::Index t = 0; t < spec.num_frames(); ++t) {
    y.row(t) = (spec.frames[t].array() * steer.array()).colwise().sum();
  }
  return y;
}

Eigen::VectorXd ula_steering_delays(Eigen::Index channels, double spacing_m, double cos_angle,
                                    double speed_of_sound) {
  Eigen::VectorXd tau(channels);
  for (Eigen::Index c = 0; c < channels; ++c) {
    const double position = (static_cast<double>(c) - 0.5 * static_cast<double>(channels - 1)) * spacing_m;
    tau[c] = -position * cos_angle / speed_of_sound;
  }
  return tau;
}

Eigen::MatrixXcd mvdr_frontend(const Spectrogram& spec, const MvdrConfig& cfg) {
  const CdrMask mask = estimate_cdr_mask(spec, cfg.cdr_pair, cfg.spacing_m, cfg.cdr);
  return apply_beamformer(spec, mvdr_weights(estimate_covariances(spec, mask), cfg.reference));
}

Eigen::Index selected_channel(Eigen::Index channels, const SelectionPolicy& policy) {
  require_contract(channels >= 1, "select_channel: no channels");
  if (policy.kind == ChannelPolicy::kRdm && policy.training) {
    std::seed_seq seq{static_cast<std::uint32_t>(policy.seed), static_cast<std::uint32_t>(policy.seed >> 32),
                      static_cast<std::uint32_t>(policy.utterance_id),
                      static_cast<std::uint32_t>(policy.utterance_id >> 32)};
    std::mt19937_64 rng(seq);
    return static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(channels));
  }
  require_contract(policy.middle >= 0 && policy.middle < channels,
                   "select_channel: middle channel " + std::to_string(policy.middle) + " out of range for " +
                       std::to_string(channels) + " channels");
  return policy.middle;
}

MultichannelWaveform select_channel(const MultichannelWaveform& wave, const SelectionPolicy& policy) {
  MultichannelWaveform out;
  out.sample_rate_hz = wave.sample_rate_hz;
  out.samples = wave.samples.col(selected_channel(wave.num_channels(), policy));
  return out;
}

}  // namespace sacc
