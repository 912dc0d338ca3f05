#pragma once

// Baseline frontends: CDR-masked MVDR, channel selection (SDM/RDM) and
// delay-and-sum.

#include "sacc/audio_io.hpp"
#include "sacc/spectral.hpp"

#include <cstdint>
#include <utility>
#include <vector>

namespace sacc {

inline constexpr double kSpeedOfSound = 343.0;
inline constexpr double kDiagonalLoading = 1e-6;

struct CovariancePair {
  std::vector<Eigen::MatrixXcd> phi_v;  // F x (C x C), noise
  std::vector<Eigen::MatrixXcd> phi_s;  // F x (C x C), speech
  int fallback_bins = 0;                // bins whose speech mask summed to zero
};

struct BeamformerWeights {
  Eigen::MatrixXcd h;  // F x C
};

struct CdrMask {
  Eigen::MatrixXd mask;  // T x F, in [0, 1]
};

struct ReferenceSelector {
  Eigen::Index index = 3;

  Eigen::VectorXd one_hot(Eigen::Index channels) const;
  // The middle microphone of an even array (index 3 of 8).
  static ReferenceSelector middle(Eigen::Index channels) { return {channels / 2 - 1 < 0 ? 0 : channels / 2 - 1}; }
};

struct CdrConfig {
  double smoothing = 0.95;  // first-order recursion on the auto/cross spectra
  double speed_of_sound = kSpeedOfSound;
  StftConfig stft;          // for the bin -> Hz mapping
};

// Diffuse-field coherence sin(x)/x with x = 2 pi f d / c.
double diffuse_coherence(double freq_hz, double spacing_m, double speed_of_sound = kSpeedOfSound);

// DOA-independent CDR estimate for one coherence value against a real
// diffuse model coherence; result >= 0.
double cdr_from_coherence(std::complex<double> coherence, double diffuse);

CdrMask estimate_cdr_mask(const Spectrogram& spec, std::pair<Eigen::Index, Eigen::Index> mic_pair,
                          double spacing_m, const CdrConfig& cfg = {});

CovariancePair estimate_covariances(const Spectrogram& spec, const CdrMask& mask);

// h_f = inv(phi_v) phi_s u / tr(inv(phi_v) phi_s) per bin.
BeamformerWeights mvdr_weights(const CovariancePair& cov, const ReferenceSelector& ref);

// Y[t, f] = sum_c X[t, c, f] conj(h[f, c]).
Eigen::MatrixXcd apply_beamformer(const Spectrogram& spec, const BeamformerWeights& w);

// Y[t, f] = (1/C) sum_c X[t, c, f] exp(+j 2 pi f_hz tau_c).
Eigen::MatrixXcd delay_and_sum(const Spectrogram& spec, const Eigen::VectorXd& steering_delay_s,
                               const StftConfig& cfg = {});

// Relative arrival times of a far-field plane wave at a uniform linear
// array centred on the origin. `cos_angle` is the cosine between the array
// axis and the direction towards the source.
Eigen::VectorXd ula_steering_delays(Eigen::Index channels, double spacing_m, double cos_angle,
                                    double speed_of_sound = kSpeedOfSound);

struct MvdrConfig {
  std::pair<Eigen::Index, Eigen::Index> cdr_pair{3, 4};
  double spacing_m = 0.033;
  CdrConfig cdr;
  ReferenceSelector reference;
};

// Utterance-level CDR-masked MVDR: mask, covariances, weights, output.
Eigen::MatrixXcd mvdr_frontend(const Spectrogram& spec, const MvdrConfig& cfg = {});

enum class ChannelPolicy { kSdm, kRdm };

struct SelectionPolicy {
  ChannelPolicy kind = ChannelPolicy::kSdm;
  std::uint64_t seed = 0;
  std::uint64_t utterance_id = 0;
  bool training = false;  // RDM draws at random only while training
  Eigen::Index middle = 3;
};

Eigen::Index selected_channel(Eigen::Index channels, const SelectionPolicy& policy);
MultichannelWaveform select_channel(const MultichannelWaveform& wave, const SelectionPolicy& policy);

}  // namespace sacc
