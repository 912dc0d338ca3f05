#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace sacc {

inline constexpr int kSampleRateHz = 16000;

// Time-domain samples, one column per channel, full scale = 1.0.
struct MultichannelWaveform {
  Eigen::MatrixXd samples;  // N x C
  int sample_rate_hz = kSampleRateHz;

  Eigen::Index num_samples() const { return samples.rows(); }
  Eigen::Index num_channels() const { return samples.cols(); }
};

enum class WavEncoding { kPcm16, kFloat32 };

struct WriteReport {
  std::size_t clipped_samples = 0;
};

MultichannelWaveform read_wav(const std::filesystem::path& path);

// PCM16 saturates out-of-range samples and counts them instead of failing.
WriteReport write_wav(const MultichannelWaveform& wave,
                      const std::filesystem::path& path,
                      WavEncoding encoding);

// Throws unless the waveform is at the pipeline rate.
void require_pipeline_rate(const MultichannelWaveform& wave);

struct ManifestEntry {
  std::filesystem::path mixture_path;
  std::filesystem::path clean_reference_path;
  std::string scene_id;
  double snr_db = 0.0;
  int position_id = 0;
  // Scene and mixing metadata kept verbatim; not interpreted by the loader.
  std::string metadata_json = "{}";
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
};

// Line-delimited JSON. Relative paths are resolved against the manifest's
// directory on load and written relative to it on save.
DatasetManifest read_manifest(const std::filesystem::path& path);
void write_manifest(const DatasetManifest& manifest,
                    const std::filesystem::path& path);

}  // namespace sacc
