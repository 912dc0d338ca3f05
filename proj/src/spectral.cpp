#include "sacc/spectral.hpp"

#include <unsupported/Eigen/FFT>

#include <numbers>

namespace sacc {

void StftConfig::validate() const {
  require_contract(sample_rate_hz > 0, "stft: sample rate must be positive");
  require_contract(win_samples() >= 2, "stft: window shorter than two samples");
  require_contract(hop_samples() >= 1, "stft: hop must be at least one sample");
  require_contract(fft_size >= win_samples(), "stft: fft_size smaller than the window");
}

Eigen::MatrixXcd Spectrogram::channel(Eigen::Index c) const {
  Eigen::MatrixXcd out(num_frames(), num_bins());
  for (Eigen::Index t = 0; t < num_frames(); ++t) out.row(t) = frames[t].row(c);
  return out;
}

Eigen::VectorXd hann_window(int length) {
  Eigen::VectorXd w(length);
  for (int n = 0; n < length; ++n) {
    w[n] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * n / length);
  }
  return w;
}

Spectrogram stft(const MultichannelWaveform& wave, const StftConfig& cfg) {
  cfg.validate();
  require_contract(wave.sample_rate_hz == cfg.sample_rate_hz,
                   "stft: waveform rate " + std::to_string(wave.sample_rate_hz) +
                       " Hz does not match configured " + std::to_string(cfg.sample_rate_hz) + " Hz");
  const int win = cfg.win_samples();
  const int hop = cfg.hop_samples();
  const Eigen::Index N = wave.num_samples();
  const Eigen::Index C = wave.num_channels();
  require_contract(C >= 1, "stft: no channels");
  require_contract(N >= win, "stft: input too short (" + std::to_string(N) +
                                 " samples, window is " + std::to_string(win) + ")");

  const Eigen::Index T = 1 + (N - win) / hop;
  const int F = cfg.num_bins();
  const Eigen::VectorXd window = hann_window(win);

  Eigen::FFT<double> fft;
  std::vector<double> buffer(cfg.fft_size, 0.0);
  std::vector<std::complex<double>> spectrum;

  Spectrogram spec;
  spec.frames.assign(T, Eigen::MatrixXcd(C, F));
  for (Eigen::Index t = 0; t < T; ++t) {
    for (Eigen::Index c = 0; c < C; ++c) {
      for (int n = 0; n < win; ++n) buffer[n] = wave.samples(t * hop + n, c) * window[n];
      fft.fwd(spectrum, buffer);
      for (int f = 0; f < F; ++f) spec.frames[t](c, f) = spectrum[f];
    }
  }
  return spec;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }

double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

Eigen::MatrixXd mel_filterbank(const MelConfig& mel, const StftConfig& stft_cfg) {
  require_contract(mel.n_filters >= 1, "mel: need at least one filter");
  require_contract(mel.f_min_hz >= 0.0 && mel.f_max_hz > mel.f_min_hz, "mel: bad frequency range");
  require_contract(mel.f_max_hz <= stft_cfg.sample_rate_hz / 2.0 + 1e-9, "mel: f_max above Nyquist");

  const int M = mel.n_filters;
  const int F = stft_cfg.num_bins();
  const double lo = hz_to_mel(mel.f_min_hz);
  const double hi = hz_to_mel(mel.f_max_hz);
  std::vector<double> edges(M + 2);
  for (int i = 0; i < M + 2; ++i) edges[i] = mel_to_hz(lo + (hi - lo) * i / (M + 1));

  Eigen::MatrixXd bank = Eigen::MatrixXd::Zero(M, F);
  for (int m = 0; m < M; ++m) {
    const double left = edges[m], center = edges[m + 1], right = edges[m + 2];
    for (int f = 0; f < F; ++f) {
      const double hz = stft_cfg.bin_hz(f);
      if (hz > left && hz < right) {
        bank(m, f) = hz <= center ? (hz - left) / (center - left) : (right - hz) / (right - center);
      }
    }
    require_contract(bank.row(m).sum() > 0.0,
                     "mel: filter " + std::to_string(m) + " covers no FFT bin; use fewer filters");
  }
  return bank;
}

}  // namespace sacc
