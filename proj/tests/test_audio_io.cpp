#include "sacc/audio_io.hpp"
#include "sacc/error.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <fstream>
#include <random>

using namespace sacc;

TEST_CASE("pcm16 header readback and scaling") {
  const auto dir = testing_util::scratch_dir("wav_pcm");
  MultichannelWaveform w;
  w.samples = Eigen::MatrixXd::Constant(160, 2, 32767.0 / 32768.0);
  const auto report = write_wav(w, dir / "a.wav", WavEncoding::kPcm16);
  CHECK(report.clipped_samples == 0);

  const auto r = read_wav(dir / "a.wav");
  CHECK(r.num_samples() == 160);
  CHECK(r.num_channels() == 2);
  CHECK(r.sample_rate_hz == 16000);
  CHECK((r.samples.array() == 32767.0 / 32768.0).all());
}

TEST_CASE("pcm16 silence has an all-zero payload") {
  const auto dir = testing_util::scratch_dir("wav_silence");
  MultichannelWaveform w;
  w.samples = Eigen::MatrixXd::Zero(100, 3);
  write_wav(w, dir / "s.wav", WavEncoding::kPcm16);
  std::ifstream in(dir / "s.wav", std::ios::binary);
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  REQUIRE(bytes.size() == 44 + 100 * 3 * 2);
  CHECK(std::all_of(bytes.begin() + 44, bytes.end(), [](char b) { return b == 0; }));
}

TEST_CASE("pcm16 saturates and counts clipped samples") {
  const auto dir = testing_util::scratch_dir("wav_clip");
  MultichannelWaveform w;
  w.samples = Eigen::MatrixXd::Zero(4, 1);
  w.samples(1, 0) = 1.5;
  const auto report = write_wav(w, dir / "c.wav", WavEncoding::kPcm16);
  CHECK(report.clipped_samples == 1);
  const auto r = read_wav(dir / "c.wav");
  CHECK(r.samples(1, 0) == 32767.0 / 32768.0);
}

TEST_CASE("float32 round trip is bitwise exact and preserves channel order") {
  const auto dir = testing_util::scratch_dir("wav_f32");
  std::mt19937_64 rng(11);
  std::normal_distribution<float> n(0.0f, 0.7f);
  for (int trial = 0; trial < 5; ++trial) {
    MultichannelWaveform w;
    w.sample_rate_hz = 8000 * (trial + 1);
    w.samples.resize(257 + trial, 1 + trial);
    for (Eigen::Index i = 0; i < w.samples.size(); ++i) w.samples.data()[i] = n(rng);
    write_wav(w, dir / "f.wav", WavEncoding::kFloat32);
    const auto r = read_wav(dir / "f.wav");
    CHECK(r.sample_rate_hz == w.sample_rate_hz);
    REQUIRE(r.samples.rows() == w.samples.rows());
    REQUIRE(r.samples.cols() == w.samples.cols());
    CHECK((r.samples.array() == w.samples.array()).all());
  }
}

TEST_CASE("malformed and unsupported files are rejected") {
  const auto dir = testing_util::scratch_dir("wav_bad");
  {
    std::ofstream out(dir / "junk.wav", std::ios::binary);
    out << "this is not a wave file at all";
  }
  try {
    read_wav(dir / "junk.wav");
    FAIL("expected format error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kFormat);
  }

  // 24-bit PCM header.
  MultichannelWaveform w;
  w.samples = Eigen::MatrixXd::Zero(10, 1);
  write_wav(w, dir / "p.wav", WavEncoding::kPcm16);
  std::fstream f(dir / "p.wav", std::ios::in | std::ios::out | std::ios::binary);
  f.seekp(34);
  const char bits24[2] = {24, 0};
  f.write(bits24, 2);
  f.close();
  try {
    read_wav(dir / "p.wav");
    FAIL("expected unsupported error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kUnsupported);
  }

  try {
    read_wav(dir / "does_not_exist.wav");
    FAIL("expected io error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kIo);
  }
}

TEST_CASE("pipeline rejects non-16 kHz input") {
  MultichannelWaveform w;
  w.samples = Eigen::MatrixXd::Zero(10, 1);
  w.sample_rate_hz = 48000;
  CHECK_THROWS_AS(require_pipeline_rate(w), Error);
}

TEST_CASE("manifest round trip with relative paths") {
  const auto dir = testing_util::scratch_dir("manifest");
  MultichannelWaveform w;
  w.samples = Eigen::MatrixXd::Zero(10, 1);
  write_wav(w, dir / "m0.wav", WavEncoding::kFloat32);
  write_wav(w, dir / "c0.wav", WavEncoding::kFloat32);

  DatasetManifest m;
  m.entries.push_back({dir / "m0.wav", dir / "c0.wav", "scene-0", 7.5, 2, R"({"t60_s":0.4})"});
  write_manifest(m, dir / "manifest.jsonl");

  std::ifstream raw(dir / "manifest.jsonl");
  std::string line;
  std::getline(raw, line);
  CHECK(line.find("\"mixture_path\":\"m0.wav\"") != std::string::npos);

  const auto r = read_manifest(dir / "manifest.jsonl");
  REQUIRE(r.entries.size() == 1);
  CHECK(r.entries[0].scene_id == "scene-0");
  CHECK(r.entries[0].snr_db == 7.5);
  CHECK(r.entries[0].position_id == 2);
  CHECK(std::filesystem::equivalent(r.entries[0].mixture_path, dir / "m0.wav"));
  CHECK(r.entries[0].metadata_json == R"({"t60_s":0.4})");
}

TEST_CASE("manifest rejects missing files and duplicate scene ids") {
  const auto dir = testing_util::scratch_dir("manifest_bad");
  MultichannelWaveform w;
  w.samples = Eigen::MatrixXd::Zero(10, 1);
  write_wav(w, dir / "a.wav", WavEncoding::kFloat32);
  {
    std::ofstream out(dir / "dup.jsonl");
    out << R"({"mixture_path":"a.wav","clean_reference_path":"a.wav","scene_id":"x","snr_db":3,"position_id":0})" << '\n';
    out << R"({"mixture_path":"a.wav","clean_reference_path":"a.wav","scene_id":"x","snr_db":3,"position_id":0})" << '\n';
  }
  CHECK_THROWS_AS(read_manifest(dir / "dup.jsonl"), Error);
  {
    std::ofstream out(dir / "missing.jsonl");
    out << R"({"mixture_path":"nope.wav","clean_reference_path":"a.wav","scene_id":"x","snr_db":3,"position_id":0})" << '\n';
  }
  try {
    read_manifest(dir / "missing.jsonl");
    FAIL("expected io error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kIo);
  }
}
