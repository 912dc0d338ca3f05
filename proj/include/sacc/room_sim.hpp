#pragma once

// Simulated far-field training data: shoebox-room impulse responses from
// the image method for a uniform linear array, reverberant speech mixed
// with diffuse noise, microphone self-noise, per-mic gain offsets and an
// overall level augmentation.

#include "sacc/audio_io.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace sacc {

struct RoomProfile {
  Eigen::Vector3d dims_min{4.0, 3.0, 2.5};
  Eigen::Vector3d dims_max{8.0, 6.0, 3.5};
  double t60_min_s = 0.27;
  double t60_max_s = 0.79;
  int num_mics = 8;
  double mic_spacing_m = 0.033;
  double wall_margin_m = 0.1;
  double min_source_distance_m = 0.5;
  int max_order = -1;  // negative keeps every image within the response length
  double utterance_s = 3.0;  // length of synthesized source utterances

  // Keys mirror the field names; missing keys keep their defaults.
  static RoomProfile from_json_file(const std::filesystem::path& path);
  static RoomProfile from_json_text(const std::string& text);
  void validate() const;
};

struct SceneSpec {
  Eigen::Vector3d room_dims_m;
  double t60_s = 0.5;
  Eigen::Vector3d array_center_m;
  Eigen::Vector3d array_axis{1.0, 0.0, 0.0};
  Eigen::Vector3d source_pos_m;
  std::uint64_t seed = 0;
  int num_mics = 8;
  double mic_spacing_m = 0.033;

  // 3 x num_mics, centred on array_center_m along array_axis.
  Eigen::Matrix3Xd mic_positions() const;
  // Cosine between the array axis and the direction to the source.
  double source_cos_angle() const;
  // Throws unless every mic and the source keep `margin` from each wall.
  void validate(double wall_margin_m, double t60_min_s = 0.27, double t60_max_s = 0.79) const;
};

struct RirSet {
  Eigen::MatrixXd rirs;    // M x L, full response
  Eigen::MatrixXd direct;  // M x L, direct path only
  double wall_reflection = 0.0;
};

struct MixSpec {
  double noise_snr_db = 10.0;       // +inf disables the ambient noise
  double self_noise_snr_db = 45.0;  // +inf disables self-noise
  Eigen::VectorXd gain_offsets_db;  // one per mic; empty means 0 dB
  double level_dbfs = -6.0;         // target peak level of the mixture
};

enum class NoisePreset { kAmbient, kBabble, kFan };

// Uniform wall absorption from Eyring's formula.
double eyring_absorption(const Eigen::Vector3d& room_dims_m, double t60_s);

// kEyring uses sqrt(1 - alpha) directly. A specular shoebox decays slower
// than the diffuse-field formula assumes, so kDecayMatched instead picks the
// wall reflection whose direction-averaged image-source decay has the
// requested Schroeder T60.
enum class AbsorptionModel { kEyring, kDecayMatched };

double wall_reflection(const Eigen::Vector3d& room_dims_m, double t60_s,
                       AbsorptionModel model = AbsorptionModel::kDecayMatched);

SceneSpec sample_scene(std::uint64_t seed, const RoomProfile& profile = {});

// max_order < 0 keeps every image that arrives within the response length.
RirSet image_method_rir(const SceneSpec& scene, int max_order = -1,
                        AbsorptionModel model = AbsorptionModel::kDecayMatched);

// Length of the generated responses: ceil(1.2 * t60 * fs).
Eigen::Index rir_length(double t60_s);

// Schroeder backward integration; T60 extrapolated from the -5..-25 dB fit.
double schroeder_t60(const Eigen::VectorXd& rir, int sample_rate_hz = kSampleRateHz);

MixSpec sample_mix_spec(std::uint64_t seed, int num_mics = 8);

struct RenderedMixture {
  MultichannelWaveform mixture;    // M channels
  MultichannelWaveform clean_ref;  // direct path at the reference mic
  MultichannelWaveform reverberant_speech;  // pre-noise components, final scale
  MultichannelWaveform additive_noise;
  double measured_snr_db = 0.0;    // at the reference mic
  int noise_loops = 0;             // times the noise was wrapped around
};

RenderedMixture render_mixture(const MultichannelWaveform& clean, const RirSet& rirs,
                               const MultichannelWaveform& noise, const MixSpec& mix, std::uint64_t seed,
                               Eigen::Index reference_mic = 3);

// Spectrally shaped noise with the spherically diffuse coherence between
// every mic pair; unit RMS per channel.
MultichannelWaveform diffuse_noise(NoisePreset preset, Eigen::Index num_samples, const Eigen::Matrix3Xd& mics,
                                   std::uint64_t seed);

// Random blend of the three presets.
MultichannelWaveform synthetic_noise_mix(Eigen::Index num_samples, const Eigen::Matrix3Xd& mics,
                                         std::uint64_t seed);

// Speech-like source: voiced syllables (harmonic excitation through formant
// resonators), unvoiced bursts and pauses.
MultichannelWaveform synth_utterance(std::uint64_t seed, double seconds);

struct BuildOptions {
  RoomProfile profile;
  std::optional<std::filesystem::path> noise_dir;
  std::vector<std::filesystem::path> sources;  // mono clean utterances; empty = synthesize
};

// Writes mixture_NNNN.wav / clean_NNNN.wav (float32) and manifest.jsonl.
DatasetManifest build_dataset(std::size_t n_scenes, const std::filesystem::path& out_dir, std::uint64_t seed,
                              const BuildOptions& options = {});

// Stable per-item seed derived from a base seed.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index, std::uint64_t salt = 0);

}  // namespace sacc
