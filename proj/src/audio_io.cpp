#include "sacc/audio_io.hpp"

#include "sacc/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <set>

namespace sacc {
namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

std::uint16_t le16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

std::uint32_t le32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) |
         (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) |
         (static_cast<std::uint32_t>(p[3]) << 24);
}

void put16(std::vector<unsigned char>& out, std::uint16_t v) {
  out.push_back(static_cast<unsigned char>(v & 0xFF));
  out.push_back(static_cast<unsigned char>(v >> 8));
}

void put32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xFF));
}

void put_tag(std::vector<unsigned char>& out, const char* tag) {
  out.insert(out.end(), tag, tag + 4);
}

}  // namespace

MultichannelWaveform read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::kIo, "cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());

  const auto bad = [&](const std::string& why) {
    return Error(ErrorKind::kFormat, path.string() + ": " + why);
  };
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw bad("not a RIFF/WAVE file");
  }

  std::uint16_t format = 0, channels = 0, bits = 0, block_align = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  const unsigned char* data = nullptr;
  std::size_t data_size = 0;

  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    const std::uint32_t size = le32(chunk + 4);
    const std::size_t body = pos + 8;
    if (body + size > bytes.size()) {
      // Tolerate a truncated trailing data chunk, as many writers produce.
      if (std::memcmp(chunk, "data", 4) != 0) throw bad("chunk overruns file");
    }
    const std::size_t avail = std::min<std::size_t>(size, bytes.size() - body);
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (avail < 16) throw bad("short fmt chunk");
      const unsigned char* f = bytes.data() + body;
      format = le16(f);
      channels = le16(f + 2);
      rate = le32(f + 4);
      block_align = le16(f + 12);
      bits = le16(f + 14);
      if (format == kFormatExtensible) {
        if (avail < 40) throw bad("short extensible fmt chunk");
        format = le16(f + 24);
      }
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = bytes.data() + body;
      data_size = avail;
    }
    pos = body + size + (size & 1u);
  }

  if (!have_fmt) throw bad("missing fmt chunk");
  if (data == nullptr) throw bad("missing data chunk");
  if (channels == 0 || rate == 0) throw bad("zero channels or sample rate");

  const bool pcm16 = format == kFormatPcm && bits == 16;
  const bool f32 = format == kFormatFloat && bits == 32;
  if (!pcm16 && !f32) {
    throw Error(ErrorKind::kUnsupported,
                path.string() + ": unsupported encoding (format " +
                    std::to_string(format) + ", " + std::to_string(bits) +
                    " bits)");
  }
  const std::size_t bytes_per_sample = bits / 8;
  if (block_align != channels * bytes_per_sample) throw bad("inconsistent block alignment");

  const std::size_t frames = data_size / block_align;
  MultichannelWaveform wave;
  wave.sample_rate_hz = static_cast<int>(rate);
  wave.samples.resize(static_cast<Eigen::Index>(frames), channels);
  for (std::size_t n = 0; n < frames; ++n) {
    for (std::uint16_t c = 0; c < channels; ++c) {
      const unsigned char* p = data + n * block_align + c * bytes_per_sample;
      double value;
      if (pcm16) {
        value = static_cast<std::int16_t>(le16(p)) / 32768.0;
      } else {
        value = std::bit_cast<float>(le32(p));
      }
      wave.samples(static_cast<Eigen::Index>(n), c) = value;
    }
  }
  return wave;
}

WriteReport write_wav(const MultichannelWaveform& wave,
                      const std::filesystem::path& path,
                      WavEncoding encoding) {
  require_contract(wave.num_channels() >= 1, "write_wav: no channels");
  require_contract(wave.samples.allFinite(), "write_wav: non-finite samples");

  const std::uint16_t channels = static_cast<std::uint16_t>(wave.num_channels());
  const bool pcm16 = encoding == WavEncoding::kPcm16;
  const std::uint16_t bits = pcm16 ? 16 : 32;
  const std::uint16_t block_align = static_cast<std::uint16_t>(channels * bits / 8);
  const auto frames = static_cast<std::uint32_t>(wave.num_samples());
  const std::uint32_t data_size = frames * block_align;

  std::vector<unsigned char> out;
  out.reserve(44 + data_size);
  put_tag(out, "RIFF");
  put32(out, 36 + data_size);
  put_tag(out, "WAVE");
  put_tag(out, "fmt ");
  put32(out, 16);
  put16(out, pcm16 ? kFormatPcm : kFormatFloat);
  put16(out, channels);
  put32(out, static_cast<std::uint32_t>(wave.sample_rate_hz));
  put32(out, static_cast<std::uint32_t>(wave.sample_rate_hz) * block_align);
  put16(out, block_align);
  put16(out, bits);
  put_tag(out, "data");
  put32(out, data_size);

  WriteReport report;
  for (std::uint32_t n = 0; n < frames; ++n) {
    for (std::uint16_t c = 0; c < channels; ++c) {
      const double x = wave.samples(n, c);
      if (pcm16) {
        double scaled = std::round(x * 32768.0);
        if (scaled > 32767.0 || scaled < -32768.0) {
          ++report.clipped_samples;
          scaled = std::clamp(scaled, -32768.0, 32767.0);
        }
        put16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(scaled)));
      } else {
        put32(out, std::bit_cast<std::uint32_t>(static_cast<float>(x)));
      }
    }
  }

  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  require(file.good(), ErrorKind::kIo, "cannot open " + path.string() + " for writing");
  file.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  require(file.good(), ErrorKind::kIo, "write failed: " + path.string());
  return report;
}

void require_pipeline_rate(const MultichannelWaveform& wave) {
  require_contract(wave.sample_rate_hz == kSampleRateHz,
                   "expected " + std::to_string(kSampleRateHz) +
                       " Hz input, got " + std::to_string(wave.sample_rate_hz) +
                       " Hz (resample before use)");
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::kIo, "cannot open manifest " + path.string());
  const std::filesystem::path base = path.parent_path();

  DatasetManifest manifest;
  std::set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    nlohmann::json record;
    try {
      record = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::kFormat, where + ": " + e.what());
    }
    ManifestEntry entry;
    try {
      entry.mixture_path = base / record.at("mixture_path").get<std::string>();
      entry.clean_reference_path = base / record.at("clean_reference_path").get<std::string>();
      entry.scene_id = record.at("scene_id").get<std::string>();
      entry.snr_db = record.at("snr_db").get<double>();
      entry.position_id = record.at("position_id").get<int>();
      if (record.contains("metadata")) entry.metadata_json = record["metadata"].dump();
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::kFormat, where + ": " + e.what());
    }
    require(std::filesystem::exists(entry.mixture_path), ErrorKind::kIo,
            where + ": missing " + entry.mixture_path.string());
    require(std::filesystem::exists(entry.clean_reference_path), ErrorKind::kIo,
            where + ": missing " + entry.clean_reference_path.string());
    require(seen.insert(entry.scene_id).second, ErrorKind::kFormat,
            where + ": duplicate scene_id " + entry.scene_id);
    manifest.entries.push_back(std::move(entry));
  }
  return manifest;
}

void write_manifest(const DatasetManifest& manifest,
                    const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  require(out.good(), ErrorKind::kIo, "cannot open " + path.string() + " for writing");
  const std::filesystem::path base = path.parent_path();
  const auto rel = [&](const std::filesystem::path& p) {
    return p.is_relative() ? p.generic_string()
                           : std::filesystem::relative(p, base.empty() ? "." : base).generic_string();
  };
  for (const auto& e : manifest.entries) {
    nlohmann::ordered_json record;
    record["mixture_path"] = rel(e.mixture_path);
    record["clean_reference_path"] = rel(e.clean_reference_path);
    record["scene_id"] = e.scene_id;
    record["snr_db"] = e.snr_db;
    record["position_id"] = e.position_id;
    record["metadata"] = nlohmann::ordered_json::parse(e.metadata_json);
    out << record.dump() << '\n';
  }
  require(out.good(), ErrorKind::kIo, "write failed: " + path.string());
}

}  // namespace sacc
