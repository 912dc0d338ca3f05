#pragma once

#include "sacc/audio_io.hpp"
#include "sacc/error.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <vector>

namespace sacc {

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

// A T x C x F tensor stored as T frames of C x F matrices.
template <typename Scalar>
using FrameStack = std::vector<Mat<Scalar>>;

inline constexpr double kLogFloor = 1e-10;    // on linear magnitude
inline constexpr double kMvnEpsilon = 1e-8;   // added to the variance

struct StftConfig {
  double win_ms = 25.0;
  double hop_ms = 10.0;
  int fft_size = 512;
  int sample_rate_hz = kSampleRateHz;

  int win_samples() const { return static_cast<int>(std::lround(win_ms * sample_rate_hz / 1000.0)); }
  int hop_samples() const { return static_cast<int>(std::lround(hop_ms * sample_rate_hz / 1000.0)); }
  int num_bins() const { return fft_size / 2 + 1; }
  double bin_hz(int f) const { return static_cast<double>(f) * sample_rate_hz / fft_size; }
  // Throws unless fft_size >= window and hop >= 1.
  void validate() const;
};

struct Spectrogram {
  std::vector<Eigen::MatrixXcd> frames;  // T x (C x F)

  Eigen::Index num_frames() const { return static_cast<Eigen::Index>(frames.size()); }
  Eigen::Index num_channels() const { return frames.empty() ? 0 : frames.front().rows(); }
  Eigen::Index num_bins() const { return frames.empty() ? 0 : frames.front().cols(); }

  // One channel as a T x F matrix.
  Eigen::MatrixXcd channel(Eigen::Index c) const;
};

// Periodic Hann window of the configured length.
Eigen::VectorXd hann_window(int length);

// T = 1 + floor((N - win) / hop); Hann-windowed frames zero-padded to
// fft_size, one-sided spectrum.
Spectrogram stft(const MultichannelWaveform& wave, const StftConfig& cfg = {});

// ---------------------------------------------------------------------------
// Utterance-level mean/variance normalization over the time axis.

template <typename Scalar>
struct MvnStats {
  Mat<Scalar> mean;
  Mat<Scalar> inv_std;  // 1 / sqrt(var + eps), biased variance
};

template <typename Scalar>
MvnStats<Scalar> mvn_stats(const FrameStack<Scalar>& x) {
  require_contract(x.size() >= 2, "MVN needs at least two frames");
  const auto T = static_cast<Scalar>(x.size());
  MvnStats<Scalar> s;
  s.mean = Mat<Scalar>::Zero(x[0].rows(), x[0].cols());
  for (const auto& frame : x) s.mean += frame;
  s.mean /= T;
  Mat<Scalar> var = Mat<Scalar>::Zero(x[0].rows(), x[0].cols());
  for (const auto& frame : x) var.array() += (frame - s.mean).array().square();
  var /= T;
  s.inv_std = (var.array() + static_cast<Scalar>(kMvnEpsilon)).rsqrt().matrix();
  return s;
}

template <typename Scalar>
FrameStack<Scalar> mvn_apply(const FrameStack<Scalar>& x, const MvnStats<Scalar>& s) {
  FrameStack<Scalar> y;
  y.reserve(x.size());
  for (const auto& frame : x) y.push_back(((frame - s.mean).array() * s.inv_std.array()).matrix());
  return y;
}

// dx = inv_std * (dy - mean_t(dy) - y * mean_t(dy * y)); exact for the
// biased variance, the epsilon guard included.
template <typename Scalar>
FrameStack<Scalar> mvn_backward(const FrameStack<Scalar>& y,
                                const MvnStats<Scalar>& s,
                                const FrameStack<Scalar>& dy) {
  const auto T = static_cast<Scalar>(y.size());
  Mat<Scalar> mean_dy = Mat<Scalar>::Zero(s.mean.rows(), s.mean.cols());
  Mat<Scalar> mean_dy_y = mean_dy;
  for (std::size_t t = 0; t < y.size(); ++t) {
    mean_dy += dy[t];
    mean_dy_y.array() += dy[t].array() * y[t].array();
  }
  mean_dy /= T;
  mean_dy_y /= T;
  FrameStack<Scalar> dx;
  dx.reserve(y.size());
  for (std::size_t t = 0; t < y.size(); ++t) {
    dx.push_back((s.inv_std.array() *
                  (dy[t].array() - mean_dy.array() - y[t].array() * mean_dy_y.array()))
                     .matrix());
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Magnitude features: linear magnitude plus normalized log magnitude.

template <typename Scalar>
struct MagnitudeFeatures {
  FrameStack<Scalar> mag;                // |X|, T x (C x F)
  FrameStack<Scalar> normalized_logmag;  // MVN(log(max(mag, floor))) per (c, f)
  MvnStats<Scalar> stats;

  Eigen::Index num_frames() const { return static_cast<Eigen::Index>(mag.size()); }
  Eigen::Index num_channels() const { return mag.empty() ? 0 : mag.front().rows(); }
  Eigen::Index num_bins() const { return mag.empty() ? 0 : mag.front().cols(); }
};

template <typename Scalar>
MagnitudeFeatures<Scalar> features_from_magnitude(FrameStack<Scalar> mag) {
  require_contract(mag.size() >= 2, "degenerate utterance: need at least two frames");
  const auto floor = static_cast<Scalar>(kLogFloor);
  FrameStack<Scalar> logmag;
  logmag.reserve(mag.size());
  for (const auto& frame : mag) {
    require_contract(frame.rows() == mag.front().rows() && frame.cols() == mag.front().cols(),
                     "ragged magnitude frames");
    logmag.push_back(frame.array().max(floor).log().matrix());
  }
  MagnitudeFeatures<Scalar> out;
  out.stats = mvn_stats(logmag);
  out.normalized_logmag = mvn_apply(logmag, out.stats);
  out.mag = std::move(mag);
  return out;
}

template <typename Scalar = double>
MagnitudeFeatures<Scalar> magnitude_and_normalize(const Spectrogram& spec) {
  require_contract(spec.num_frames() >= 2, "degenerate utterance: need at least two frames");
  FrameStack<Scalar> mag;
  mag.reserve(spec.frames.size());
  for (const auto& frame : spec.frames) mag.push_back(frame.cwiseAbs().template cast<Scalar>());
  return features_from_magnitude(std::move(mag));
}

// Chain rule from d(normalized_logmag) back to d(mag).
template <typename Scalar>
FrameStack<Scalar> normalized_logmag_backward(const MagnitudeFeatures<Scalar>& feats,
                                              const FrameStack<Scalar>& d_normalized) {
  FrameStack<Scalar> dlog = mvn_backward(feats.normalized_logmag, feats.stats, d_normalized);
  const auto floor = static_cast<Scalar>(kLogFloor);
  for (std::size_t t = 0; t < dlog.size(); ++t) {
    const auto& m = feats.mag[t].array();
    dlog[t] = (m > floor).select(dlog[t].array() / m, Scalar(0)).matrix();
  }
  return dlog;
}

// ---------------------------------------------------------------------------
// Log-Mel features.

struct MelConfig {
  int n_filters = 64;
  double f_min_hz = 0.0;
  double f_max_hz = 8000.0;
};

double hz_to_mel(double hz);
double mel_to_hz(double mel);

// Triangular filters, n_filters x F, equally spaced on the Mel scale.
// Throws if any filter covers no FFT bin.
Eigen::MatrixXd mel_filterbank(const MelConfig& mel, const StftConfig& stft_cfg);

template <typename Scalar>
struct LogMelResult {
  Mat<Scalar> energies;    // T x M, filterbank output before the log
  Mat<Scalar> normalized;  // T x M, MVN(log(max(energies, floor)))
  Vec<Scalar> inv_std;     // per band
};

// Column-wise MVN of a T x K matrix.
template <typename Scalar>
Mat<Scalar> mvn_columns(const Mat<Scalar>& x, Vec<Scalar>* inv_std_out = nullptr) {
  require_contract(x.rows() >= 2, "MVN needs at least two frames");
  const Eigen::Matrix<Scalar, 1, Eigen::Dynamic> mean = x.colwise().mean();
  const Mat<Scalar> centered = x.rowwise() - mean;
  const Vec<Scalar> inv_std =
      (centered.array().square().colwise().mean().transpose() + static_cast<Scalar>(kMvnEpsilon))
          .rsqrt()
          .matrix();
  if (inv_std_out != nullptr) *inv_std_out = inv_std;
  return centered * inv_std.asDiagonal();
}

template <typename Scalar>
LogMelResult<Scalar> log_mel(const Mat<Scalar>& frames, const Eigen::MatrixXd& filterbank) {
  require_contract(frames.cols() == filterbank.cols(), "log_mel: bin count mismatch with filterbank");
  LogMelResult<Scalar> r;
  r.energies = frames * filterbank.transpose().template cast<Scalar>();
  const Mat<Scalar> logs = r.energies.array().max(static_cast<Scalar>(kLogFloor)).log().matrix();
  r.normalized = mvn_columns(logs, &r.inv_std);
  return r;
}

// d(out) -> d(frames) through MVN, log floor and the filterbank.
template <typename Scalar>
Mat<Scalar> log_mel_backward(const LogMelResult<Scalar>& r, const Eigen::MatrixXd& filterbank,
                             const Mat<Scalar>& d_out) {
  const Eigen::Matrix<Scalar, 1, Eigen::Dynamic> mean_d = d_out.colwise().mean();
  const Eigen::Matrix<Scalar, 1, Eigen::Dynamic> mean_dy =
      (d_out.array() * r.normalized.array()).colwise().mean();
  Mat<Scalar> dlog = (d_out.rowwise() - mean_d) - r.normalized * mean_dy.asDiagonal();
  dlog = dlog * r.inv_std.asDiagonal();
  const auto floor = static_cast<Scalar>(kLogFloor);
  const Mat<Scalar> d_energy =
      (r.energies.array() > floor).select(dlog.array() / r.energies.array(), Scalar(0)).matrix();
  return d_energy * filterbank.template cast<Scalar>();
}

}  // namespace sacc
