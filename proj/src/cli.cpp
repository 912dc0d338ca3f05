#include "sacc/cli.hpp"

#include "sacc/analysis.hpp"
#include "sacc/checkpoint.hpp"
#include "sacc/error.hpp"
#include "sacc/room_sim.hpp"
#include "sacc/trainer.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <functional>
#include <optional>

namespace sacc {
namespace {

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kIo:
    case ErrorKind::kFormat:
    case ErrorKind::kUnsupported:
      return kExitIo;
    case ErrorKind::kNumeric:
      return kExitNumeric;
    case ErrorKind::kConfig:
    case ErrorKind::kContract:
    case ErrorKind::kGeometry:
      return kExitUsage;
  }
  return kExitUsage;
}

// Parses `args` into `app` and runs `body`, mapping failures to exit codes.
int run_guarded(CLI::App& app, const std::vector<std::string>& args, std::ostream& out, std::ostream& err,
                const std::function<int()>& body) {
  std::vector<std::string> argv_storage{app.get_name()};
  argv_storage.insert(argv_storage.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : argv_storage) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << app.get_name() << ": " << e.what() << "\n";
    return kExitUsage;
  }
  try {
    return body();
  } catch (const Error& e) {
    err << app.get_name() << ": " << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const std::filesystem::filesystem_error& e) {
    err << app.get_name() << ": " << e.what() << "\n";
    return kExitIo;
  }
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  require(f.good(), ErrorKind::kIo, "cannot write " + path.string());
  f << text;
  require(f.good(), ErrorKind::kIo, "failed writing " + path.string());
}

}  // namespace

int cmd_simulate(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Simulate far-field 8-channel training scenes", "sacc simulate"};
  std::uint64_t seed = 0;
  std::size_t n_scenes = 0;
  std::string room_profile, noise_dir, sources_dir, out_dir;
  app.add_option("--seed", seed, "Base seed");
  app.add_option("--n-scenes", n_scenes, "Number of scenes")->required();
  app.add_option("--room-profile", room_profile, "Room profile JSON");
  app.add_option("--noise-dir", noise_dir, "Directory of noise WAVs (default: synthetic diffuse noise)");
  app.add_option("--sources", sources_dir, "Directory of mono clean WAVs (default: synthetic speech)");
  app.add_option("--out", out_dir, "Output directory")->required();
  return run_guarded(app, args, out, err, [&] {
    BuildOptions options;
    if (!room_profile.empty()) options.profile = RoomProfile::from_json_file(room_profile);
    if (!noise_dir.empty()) options.noise_dir = noise_dir;
    if (!sources_dir.empty()) {
      require(std::filesystem::is_directory(sources_dir), ErrorKind::kIo, "sources directory not found: " + sources_dir);
      for (const auto& e : std::filesystem::directory_iterator(sources_dir))
        if (e.is_regular_file() && e.path().extension() == ".wav") options.sources.push_back(e.path());
      std::sort(options.sources.begin(), options.sources.end());
      require(!options.sources.empty(), ErrorKind::kConfig, "no .wav files in " + sources_dir);
    }
    const auto manifest = build_dataset(n_scenes, out_dir, seed, options);
    out << "wrote " << manifest.entries.size() << " scenes to " << out_dir << "\n";
    return kExitOk;
  });
}

int cmd_train(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Train SACC parameters on a simulated manifest", "sacc train"};
  std::string manifest_path, config_path, checkpoint_path, init_checkpoint;
  std::uint64_t init_seed = 0;
  app.add_option("--manifest", manifest_path, "Dataset manifest (JSONL)")->required();
  app.add_option("--config", config_path, "Training config JSON");
  app.add_option("--init-seed", init_seed, "Seed for parameter initialization");
  app.add_option("--init-checkpoint", init_checkpoint, "Start from a checkpoint instead of a fresh init");
  app.add_option("--out-checkpoint", checkpoint_path, "Best-checkpoint output path")->required();
  return run_guarded(app, args, out, err, [&] {
    const TrainConfig cfg = config_path.empty() ? TrainConfig{} : TrainConfig::from_json_file(config_path);
    const auto manifest = read_manifest(manifest_path);
    const auto init = init_checkpoint.empty() ? init_params(init_seed, StftConfig{}.num_bins())
                                              : load_checkpoint(init_checkpoint);
    const TrainReport report = train(manifest, cfg, init, checkpoint_path, nullptr, &out);

    nlohmann::ordered_json j;
    j["train_loss"] = report.train_loss;
    j["val_loss"] = report.val_loss;
    j["step_loss"] = report.step_loss;
    j["initial_train_loss"] = report.initial_train_loss;
    j["final_train_loss"] = report.final_train_loss;
    j["initial_val_loss"] = report.initial_val_loss;
    j["best_epoch"] = report.best_epoch;
    j["steps"] = report.steps;
    j["early_stopped"] = report.early_stopped;
    j["train_ids"] = report.train_ids;
    j["val_ids"] = report.val_ids;
    j["checkpoint"] = std::filesystem::path(checkpoint_path).filename().string();
    write_text(std::filesystem::path(checkpoint_path).string() + ".report.json", j.dump(2) + "\n");
    const double reduction =
        report.initial_train_loss > 0.0 ? 1.0 - report.final_train_loss / report.initial_train_loss : 0.0;
    out << "training loss " << report.initial_train_loss << " -> " << report.final_train_loss << " ("
        << 100.0 * reduction << "% reduction), best epoch " << report.best_epoch << "\n";
    return kExitOk;
  });
}

int cmd_compare(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Compare SACC against the baseline frontends", "sacc compare"};
  std::string manifest_path, checkpoint_path, out_dir, split = "all";
  std::optional<std::uint64_t> untrained_seed;
  std::uint64_t split_seed = 0;
  double validation_fraction = 0.1;
  app.add_option("--manifest", manifest_path, "Dataset manifest (JSONL)")->required();
  app.add_option("--checkpoint", checkpoint_path, "Trained SACC checkpoint");
  app.add_option("--out", out_dir, "Directory for metrics.csv and metrics.json");
  app.add_option("--split", split, "Scenes to evaluate: all or validation")->check(CLI::IsMember({"all", "validation"}));
  app.add_option("--split-seed", split_seed, "Seed of the validation split (the training seed)");
  app.add_option("--validation-fraction", validation_fraction, "Validation fraction of the split");
  app.add_option("--untrained-seed", untrained_seed, "Also evaluate a freshly initialized SACC");
  return run_guarded(app, args, out, err, [&] {
    require(!checkpoint_path.empty(), ErrorKind::kConfig, "the sacc frontend needs --checkpoint");
    require(std::filesystem::exists(checkpoint_path), ErrorKind::kConfig, "checkpoint not found: " + checkpoint_path);
    const auto params = load_checkpoint(checkpoint_path);
    auto manifest = read_manifest(manifest_path);
    if (split == "validation") manifest = split_manifest(manifest, split_seed, validation_fraction).validation;

    std::vector<FrontendSpec> frontends{{"sdm", FrontendKind::kSdm, std::nullopt},
                                        {"rdm", FrontendKind::kRdm, std::nullopt},
                                        {"mvdr", FrontendKind::kMvdr, std::nullopt},
                                        {"das", FrontendKind::kDas, std::nullopt},
                                        {"sacc", FrontendKind::kSacc, params}};
    if (untrained_seed) {
      frontends.push_back({"sacc_untrained", FrontendKind::kSacc, init_params(*untrained_seed, params.num_bins(), params.width())});
    }
    frontends.push_back({"clean_reference", FrontendKind::kCleanReference, std::nullopt});
    const MetricTable table = evaluate(manifest, frontends);
    for (const auto& s : table.skipped) err << "skipped " << s << "\n";
    if (!out_dir.empty()) {
      write_text(std::filesystem::path(out_dir) / "metrics.csv", table.to_csv());
      write_text(std::filesystem::path(out_dir) / "metrics.json", table.to_json());
    }
    out << table.to_csv();
    return kExitOk;
  });
}

int cmd_analyze(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Emit SACC intermediate outputs for one utterance", "sacc analyze"};
  std::string input, checkpoint_path, out_dir;
  std::uint64_t init_seed = 0;
  int window = kTraceSmoothingFrames;
  app.add_option("--input", input, "Multichannel mixture WAV")->required();
  app.add_option("--checkpoint", checkpoint_path, "SACC checkpoint (default: fresh init from --init-seed)");
  app.add_option("--init-seed", init_seed, "Seed for a fresh initialization");
  app.add_option("--window", window, "Moving-average window in frames")->check(CLI::PositiveNumber);
  app.add_option("--out", out_dir, "Output directory")->required();
  return run_guarded(app, args, out, err, [&] {
    const auto wave = read_wav(input);
    require_pipeline_rate(wave);
    require(wave.num_channels() >= 2, ErrorKind::kConfig,
            "analysis needs a multichannel input; got " + std::to_string(wave.num_channels()) + " channel");
    const StftConfig cfg;
    const auto params = checkpoint_path.empty() ? init_params(init_seed, cfg.num_bins()) : load_checkpoint(checkpoint_path);
    const auto feats = magnitude_and_normalize<double>(stft(wave, cfg));
    const auto bundle = analyze(feats, params, CombineOn::kLinearMagnitude, window);
    write_analysis(bundle, out_dir);
    out << "wrote analysis of " << wave.num_channels() << " channels x " << feats.num_frames() << " frames to "
        << out_dir << "\n";
    return kExitOk;
  });
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  static const char* kUsage =
      "usage: sacc <simulate|train|compare|analyze> [options]\n"
      "run 'sacc <command> --help' for the options of a command\n";
  if (args.empty()) {
    err << kUsage;
    return kExitUsage;
  }
  const std::vector<std::string> rest(args.begin() + 1, args.end());
  const std::string& cmd = args.front();
  if (cmd == "simulate") return cmd_simulate(rest, out, err);
  if (cmd == "train") return cmd_train(rest, out, err);
  if (cmd == "compare") return cmd_compare(rest, out, err);
  if (cmd == "analyze") return cmd_analyze(rest, out, err);
  if (cmd == "--help" || cmd == "-h") {
    out << kUsage;
    return kExitOk;
  }
  err << "unknown command '" << cmd << "'\n" << kUsage;
  return kExitUsage;
}

}  // namespace sacc
