#pragma once

// Intermediate SACC outputs for inspection: per-channel normalized log
// spectrograms, time-averaged channel attention and smoothed weight traces.

#include "sacc/audio_io.hpp"
#include "sacc/sacc.hpp"

#include <filesystem>
#include <vector>

namespace sacc {

inline constexpr int kTraceSmoothingFrames = 30;

struct AnalysisBundle {
  std::vector<Eigen::MatrixXd> norm_logmag_per_channel;  // C entries of T x F
  Eigen::MatrixXd time_avg_attention;  // C x C, diagonal set to zero
  Eigen::MatrixXd raw_weights;         // C x T
  Eigen::MatrixXd weight_traces;       // C x T, smoothed
  int smoothing_frames = kTraceSmoothingFrames;
};

// Centered moving average over `window` frames (offsets -window/2 ..
// window - window/2 - 1); near the edges only the available frames count.
Eigen::VectorXd moving_average(const Eigen::VectorXd& x, int window);

AnalysisBundle analyze(const MagnitudeFeatures<double>& feats, const SaccParams<double>& params,
                       CombineOn combine = CombineOn::kLinearMagnitude, int window = kTraceSmoothingFrames);

// analysis.json plus attention.csv, weight_traces.csv and
// norm_logmag_ch<c>.csv in `dir`.
void write_analysis(const AnalysisBundle& bundle, const std::filesystem::path& dir);

}  // namespace sacc
