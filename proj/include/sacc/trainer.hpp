#pragma once

// Surrogate training of the SACC parameters: log-Mel regression of the
// combined output onto the direct-path clean reference, optimized with Adam.
// Also the finite-difference gradient harness and the frontend comparison.

#include "sacc/audio_io.hpp"
#include "sacc/beamformers.hpp"
#include "sacc/pipeline.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace sacc {

enum class LossKind { kL1LogMel, kL2LogMel };

struct LossResult {
  double loss = 0.0;
  Eigen::MatrixXd grad;  // d loss / d output, same shape as the inputs
};

LossResult surrogate_loss(const Eigen::MatrixXd& output, const Eigen::MatrixXd& reference, LossKind kind);

struct TrainConfig {
  double lr = 1e-3;
  int batch_size = 4;
  int max_epochs = 30;
  int patience = 5;
  LossKind loss = LossKind::kL2LogMel;
  std::uint64_t seed = 0;
  int max_frames = 300;              // crop budget per utterance
  int max_steps = 0;                 // 0 = no limit
  double validation_fraction = 0.1;
  CombineOn combine = CombineOn::kLinearMagnitude;

  static TrainConfig from_json_text(const std::string& text);
  static TrainConfig from_json_file(const std::filesystem::path& path);
  void validate() const;
};

struct TrainReport {
  std::vector<double> train_loss;  // per epoch, mean over the epoch's batches
  std::vector<double> val_loss;    // per epoch, after the epoch's updates
  std::vector<double> step_loss;   // per optimizer step, before the update
  double initial_train_loss = 0.0;  // full training set at the initial parameters
  double final_train_loss = 0.0;    // full training set at the final parameters
  double initial_val_loss = 0.0;
  int best_epoch = -1;  // -1: no epoch improved on the initialization
  int steps = 0;
  bool early_stopped = false;
  std::filesystem::path checkpoint_path;
  std::vector<std::string> train_ids;
  std::vector<std::string> val_ids;
};

// Cached per-utterance inputs of the training objective.
struct TrainingExample {
  std::string scene_id;
  int position_id = 0;
  MagnitudeFeatures<double> feats;  // mixture
  Eigen::MatrixXd clean_mag;        // T x F, reference channel
};

TrainingExample load_example(const ManifestEntry& entry, const StftConfig& stft = {});

// Frames [begin, begin + count) of an example; MVN statistics of the
// mixture features stay those of the full utterance.
TrainingExample crop_example(const TrainingExample& ex, Eigen::Index begin, Eigen::Index count);

// Loss of one example and, when `grad` is given, its parameter gradient.
double example_loss(const TrainingExample& ex, const SaccParams<double>& params, const Eigen::MatrixXd& filterbank,
                    LossKind kind, CombineOn combine, SaccParams<double>* grad = nullptr);

class Adam {
 public:
  Adam(Eigen::Index size, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void step(Eigen::VectorXd& params, const Eigen::VectorXd& grad);
  int steps() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  Eigen::VectorXd m_, v_;
  int t_ = 0;
};

struct ManifestSplit {
  DatasetManifest train;
  DatasetManifest validation;
  bool validation_is_train = false;  // too few scenes to hold any out
};

// Seed-stable hash split on scene_id.
ManifestSplit split_manifest(const DatasetManifest& manifest, std::uint64_t seed, double validation_fraction);

TrainReport train(const DatasetManifest& manifest, const TrainConfig& cfg, const SaccParams<double>& init,
                  const std::filesystem::path& checkpoint_path, SaccParams<double>* final_params = nullptr,
                  std::ostream* log = nullptr);

// Small configuration for gradient verification.
struct ProbeSpec {
  int frames = 10;
  int channels = 4;
  int attention_width = 8;
  StftConfig stft{4.0, 2.0, 64, kSampleRateHz};  // F = 33
  MelConfig mel{8, 0.0, 8000.0};
  LossKind loss = LossKind::kL2LogMel;
  CombineOn combine = CombineOn::kLinearMagnitude;
  std::uint64_t seed = 1;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::vector<Eigen::Index> coords;  // flat parameter indices
  std::vector<double> analytic;
  std::vector<double> numeric;
};

// Backward gradients against central differences through the full
// waveform -> STFT -> SACC -> log-Mel -> loss pipeline. Relative error is
// |a - n| / max(|a|, |n|, floor).
GradCheckResult grad_check(const SaccParams<double>& params, const ProbeSpec& probe, int n_coords = 20,
                           double h = 1e-5, double floor = 1e-4);
GradCheckResult grad_check_coords(const SaccParams<double>& params, const ProbeSpec& probe,
                                  const std::vector<Eigen::Index>& coords, double h = 1e-5, double floor = 1e-4);

// ---------------------------------------------------------------------------
// Frontend comparison

enum class FrontendKind { kSacc, kMvdr, kSdm, kRdm, kDas, kCleanReference };

struct FrontendSpec {
  std::string name;
  FrontendKind kind = FrontendKind::kSdm;
  std::optional<SaccParams<double>> params;  // kSacc only
  CombineOn combine = CombineOn::kLinearMagnitude;
};

struct PositionStats {
  double distortion_db = 0.0;
  double snr_db = 0.0;
  int count = 0;
};

struct MetricRow {
  std::string frontend;
  std::int64_t param_count = 0;
  int utterances = 0;
  double logmel_distortion_db = 0.0;  // mean over utterances
  double snr_db = 0.0;                // mean Mel-domain SNR
  std::map<int, PositionStats> per_position;
};

struct MetricTable {
  std::vector<MetricRow> rows;
  std::vector<std::string> skipped;  // "scene_id: reason"

  const MetricRow* find(const std::string& frontend) const;
  std::string to_csv() const;
  std::string to_json() const;
};

// Mean-normalized log-Mel distance in dB: RMS over frames and bands of the
// difference of 10 log10 Mel energies after removing each band's mean.
double logmel_distortion_db(const Eigen::MatrixXd& mel_energy, const Eigen::MatrixXd& ref_mel_energy);

// 10 log10(|r|^2 / |r - g y|^2) with the least-squares gain g, capped at 100 dB.
double mel_snr_db(const Eigen::MatrixXd& mel_energy, const Eigen::MatrixXd& ref_mel_energy);

// Single-channel output magnitude (T x F) of a frontend on one mixture.
Eigen::MatrixXd frontend_magnitude(const FrontendSpec& frontend, const MultichannelWaveform& mixture,
                                   const Spectrogram& spec, const ManifestEntry& entry, const StftConfig& stft);

MetricTable evaluate(const DatasetManifest& manifest, const std::vector<FrontendSpec>& frontends,
                     const StftConfig& stft = {}, const MelConfig& mel = {});

}  // namespace sacc
