#pragma once

// End-to-end SACC feature map: STFT -> magnitude/MVN -> SACC -> log-Mel,
// with the matching reverse pass.

#include "sacc/sacc.hpp"

namespace sacc {

struct FeatureConfig {
  StftConfig stft;
  MelConfig mel;
  CombineOn combine = CombineOn::kLinearMagnitude;
};

template <typename Scalar>
struct PipelineTrace {
  MagnitudeFeatures<Scalar> feats;
  SaccActivations<Scalar> acts;
  LogMelResult<Scalar> logmel;

  const Mat<Scalar>& output() const { return logmel.normalized; }
};

template <typename Scalar>
PipelineTrace<Scalar> pipeline_forward(MagnitudeFeatures<Scalar> feats, const SaccParams<Scalar>& params,
                                       const Eigen::MatrixXd& filterbank,
                                       CombineOn combine = CombineOn::kLinearMagnitude) {
  PipelineTrace<Scalar> trace;
  trace.feats = std::move(feats);
  trace.acts = forward(trace.feats, params, combine);
  trace.logmel = log_mel<Scalar>(trace.acts.S, filterbank);
  return trace;
}

template <typename Scalar>
SaccGradients<Scalar> pipeline_backward(const PipelineTrace<Scalar>& trace, const SaccParams<Scalar>& params,
                                        const Eigen::MatrixXd& filterbank, const Mat<Scalar>& d_out) {
  const Mat<Scalar> dS = log_mel_backward(trace.logmel, filterbank, d_out);
  return backward(trace.feats, params, trace.acts, dS);
}

// T x n_filters features for any channel count.
template <typename Scalar = double>
Mat<Scalar> sacc_features(const MultichannelWaveform& wave, const SaccParams<Scalar>& params,
                          const FeatureConfig& cfg = {}) {
  const Eigen::MatrixXd bank = mel_filterbank(cfg.mel, cfg.stft);
  auto feats = magnitude_and_normalize<Scalar>(stft(wave, cfg.stft));
  return pipeline_forward(std::move(feats), params, bank, cfg.combine).output();
}

// Log-Mel of a single-channel magnitude path (baselines, clean references).
template <typename Scalar = double>
Mat<Scalar> magnitude_log_mel(const Mat<Scalar>& mag, const Eigen::MatrixXd& filterbank) {
  return log_mel<Scalar>(mag, filterbank).normalized;
}

}  // namespace sacc
