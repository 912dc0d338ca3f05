#include "sacc/checkpoint.hpp"
#include "sacc/cli.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

using namespace sacc;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string file_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream f(p);
  f << text;
}

std::map<std::string, std::string> dir_contents(const std::filesystem::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) files[e.path().filename().string()] = file_bytes(e.path());
  return files;
}

// Rows of a metrics CSV keyed by "frontend/position", value = the metric columns.
std::map<std::string, std::string> csv_rows(const std::string& csv) {
  std::map<std::string, std::string> rows;
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    std::vector<std::string> cols;
    std::stringstream ls(line);
    for (std::string c; std::getline(ls, c, ',');) cols.push_back(c);
    if (cols.size() == 6) rows[cols[0] + "/" + cols[2]] = cols[3] + "," + cols[4] + "," + cols[5];
  }
  return rows;
}

// A two-scene corpus simulated once through the CLI.
const std::filesystem::path& corpus() {
  static const std::filesystem::path dir = [] {
    const auto root = testing_util::scratch_dir("cli_corpus");
    write_file(root / "room.json", R"({"utterance_s": 0.6, "t60_max_s": 0.35})");
    const auto r = run({"simulate", "--seed", "7", "--n-scenes", "2", "--room-profile", (root / "room.json").string(),
                        "--out", (root / "data").string()});
    REQUIRE(r.code == 0);
    return root;
  }();
  return dir;
}

}  // namespace

TEST_CASE("usage errors exit 2") {
  CHECK(run({}).code == kExitUsage);
  CHECK(run({"frobnicate"}).code == kExitUsage);
  CHECK(run({"--help"}).code == kExitOk);
  CHECK(run({"simulate", "--help"}).code == kExitOk);
  const auto missing_out = run({"simulate", "--n-scenes", "2", "--seed", "7"});
  CHECK(missing_out.code == kExitUsage);
  CHECK(missing_out.err.find("--out") != std::string::npos);
  CHECK(run({"simulate", "--n-scenes", "two", "--out", "x"}).code == kExitUsage);
}

TEST_CASE("simulate is deterministic and writes one manifest entry per scene") {
  const auto root = corpus();
  const auto again = root / "data_again";
  REQUIRE(run({"simulate", "--seed", "7", "--n-scenes", "2", "--room-profile", (root / "room.json").string(), "--out",
               again.string()})
              .code == 0);
  CHECK(dir_contents(root / "data") == dir_contents(again));
  const auto manifest = read_manifest(root / "data" / "manifest.jsonl");
  CHECK(manifest.entries.size() == 2);
}

TEST_CASE("simulate maps config and io failures") {
  const auto root = testing_util::scratch_dir("cli_sim_errors");
  write_file(root / "bad.json", R"({"t60_min_s": 2.0, "t60_max_s": 1.0})");
  CHECK(run({"simulate", "--n-scenes", "1", "--room-profile", (root / "bad.json").string(), "--out",
             (root / "o").string()})
            .code == kExitUsage);
  CHECK(run({"simulate", "--n-scenes", "1", "--room-profile", (root / "absent.json").string(), "--out",
             (root / "o").string()})
            .code == kExitIo);
  CHECK(run({"simulate", "--n-scenes", "1", "--noise-dir", (root / "absent").string(), "--out",
             (root / "o").string()})
            .code == kExitIo);
}

TEST_CASE("train with lr 0 writes the initialization; fixed seeds give identical checkpoints") {
  const auto root = corpus();
  const auto manifest = (root / "data" / "manifest.jsonl").string();
  write_file(root / "lr0.json", R"({"lr": 0.0, "max_epochs": 1, "max_frames": 20})");
  write_file(root / "quick.json", R"({"lr": 0.01, "max_epochs": 2, "max_frames": 20, "batch_size": 1, "seed": 4})");
  REQUIRE(run({"train", "--manifest", manifest, "--config", (root / "lr0.json").string(), "--init-seed", "5",
               "--out-checkpoint", (root / "lr0.ckpt.json").string()})
              .code == 0);
  CHECK(flatten(load_checkpoint(root / "lr0.ckpt.json")) == flatten(init_params(5, 257)));

  for (const char* name : {"a.ckpt.json", "b.ckpt.json"}) {
    const auto r = run({"train", "--manifest", manifest, "--config", (root / "quick.json").string(), "--init-seed",
                        "5", "--out-checkpoint", (root / name).string()});
    REQUIRE(r.code == 0);
    CHECK(r.out.find("reduction") != std::string::npos);
  }
  CHECK(file_bytes(root / "a.ckpt.json") == file_bytes(root / "b.ckpt.json"));
  CHECK(file_bytes(root / "a.ckpt.json.report.json").size() > 0);
  CHECK(run({"train", "--manifest", manifest, "--config", (root / "absent.json").string(), "--out-checkpoint",
             (root / "c.json").string()})
            .code == kExitIo);
}

TEST_CASE("train reports numeric divergence with exit 3") {
  const auto root = testing_util::scratch_dir("cli_nan");
  MultichannelWaveform bad;
  bad.samples = Eigen::MatrixXd::Constant(4000, 8, 0.1);
  write_wav(bad, root / "mix.wav", WavEncoding::kFloat32);
  {
    // write_wav refuses non-finite samples, so patch one in place.
    std::string bytes = file_bytes(root / "mix.wav");
    const auto data = bytes.find("data");
    REQUIRE(data != std::string::npos);
    const float nan = std::numeric_limits<float>::quiet_NaN();
    std::memcpy(&bytes[data + 8 + 4 * (100 * 8 + 2)], &nan, sizeof nan);
    std::ofstream(root / "mix.wav", std::ios::binary) << bytes;
  }
  MultichannelWaveform clean;
  clean.samples = Eigen::MatrixXd::Constant(4000, 1, 0.1);
  write_wav(clean, root / "clean.wav", WavEncoding::kFloat32);
  DatasetManifest m;
  ManifestEntry e;
  e.mixture_path = root / "mix.wav";
  e.clean_reference_path = root / "clean.wav";
  e.scene_id = "scene-nan";
  m.entries.push_back(e);
  write_manifest(m, root / "manifest.jsonl");
  const auto r = run({"train", "--manifest", (root / "manifest.jsonl").string(), "--out-checkpoint",
                      (root / "ckpt.json").string()});
  CHECK(r.code == kExitNumeric);
  CHECK(r.err.find("scene-nan") != std::string::npos);
}

TEST_CASE("compare emits the metric table") {
  const auto root = corpus();
  const auto manifest = (root / "data" / "manifest.jsonl").string();
  CHECK(run({"compare", "--manifest", manifest}).code == kExitUsage);
  CHECK(run({"compare", "--manifest", manifest, "--checkpoint", (root / "absent.json").string()}).code == kExitUsage);

  save_checkpoint(init_params(9, 257), root / "compare.ckpt.json");
  const auto r = run({"compare", "--manifest", manifest, "--checkpoint", (root / "compare.ckpt.json").string(),
                      "--out", (root / "metrics").string(), "--untrained-seed", "9"});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("sacc,132354,all,2,") != std::string::npos);
  const auto rows = csv_rows(r.out);
  CHECK(rows.at("sdm/all") == rows.at("rdm/all"));
  CHECK(rows.at("sacc/all") == rows.at("sacc_untrained/all"));
  CHECK(rows.at("clean_reference/all").substr(0, 4) == "2,0,");
  CHECK(file_bytes(root / "metrics" / "metrics.csv") == r.out);
  CHECK(std::filesystem::exists(root / "metrics" / "metrics.json"));
  const auto again = run({"compare", "--manifest", manifest, "--checkpoint", (root / "compare.ckpt.json").string(),
                          "--untrained-seed", "9"});
  CHECK(again.out == r.out);
}

TEST_CASE("analyze accepts any multichannel input and rejects mono") {
  const auto root = corpus();
  const auto mixture = read_manifest(root / "data" / "manifest.jsonl").entries.front().mixture_path;
  const auto r = run({"analyze", "--input", mixture.string(), "--out", (root / "analysis8").string()});
  REQUIRE(r.code == 0);
  CHECK(std::filesystem::exists(root / "analysis8" / "analysis.json"));
  CHECK(std::filesystem::exists(root / "analysis8" / "norm_logmag_ch7.csv"));

  MultichannelWaveform two = read_wav(mixture);
  two.samples = two.samples.leftCols(2).eval();
  write_wav(two, root / "two.wav", WavEncoding::kFloat32);
  CHECK(run({"analyze", "--input", (root / "two.wav").string(), "--out", (root / "analysis2").string()}).code == 0);

  MultichannelWaveform mono = two;
  mono.samples = two.samples.leftCols(1).eval();
  write_wav(mono, root / "mono.wav", WavEncoding::kFloat32);
  CHECK(run({"analyze", "--input", (root / "mono.wav").string(), "--out", (root / "analysis1").string()}).code ==
        kExitUsage);
  CHECK(run({"analyze", "--input", (root / "absent.wav").string(), "--out", (root / "x").string()}).code == kExitIo);
}
