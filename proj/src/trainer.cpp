#include "sacc/trainer.hpp"

#include "sacc/checkpoint.hpp"
#include "sacc/error.hpp"
#include "sacc/room_sim.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

namespace sacc {
namespace {

std::uint64_t fnv1a(const std::string& s, std::uint64_t seed) {
  std::uint64_t h = 0xcbf29ce484222325ULL ^ seed;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

LossResult surrogate_loss(const Eigen::MatrixXd& output, const Eigen::MatrixXd& reference, LossKind kind) {
  require_contract(output.rows() == reference.rows() && output.cols() == reference.cols(),
                   "surrogate_loss: output " + std::to_string(output.rows()) + "x" + std::to_string(output.cols()) +
                       " vs reference " + std::to_string(reference.rows()) + "x" + std::to_string(reference.cols()));
  require_contract(output.size() > 0, "surrogate_loss: empty input");
  const double n = static_cast<double>(output.size());
  const Eigen::ArrayXXd diff = (output - reference).array();
  LossResult r;
  if (kind == LossKind::kL2LogMel) {
    r.loss = diff.square().sum() / n;
    r.grad = (2.0 / n) * diff.matrix();
  } else {
    r.loss = diff.abs().sum() / n;
    r.grad = (diff.sign() / n).matrix();
  }
  return r;
}

// ---------------------------------------------------------------------------
// Config

TrainConfig TrainConfig::from_json_text(const std::string& text) {
  TrainConfig cfg;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kConfig, std::string("train config: ") + e.what());
  }
  require(j.is_object(), ErrorKind::kConfig, "train config must be a JSON object");
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "lr") cfg.lr = value.get<double>();
      else if (key == "batch_size") cfg.batch_size = value.get<int>();
      else if (key == "max_epochs") cfg.max_epochs = value.get<int>();
      else if (key == "patience") cfg.patience = value.get<int>();
      else if (key == "seed") cfg.seed = value.get<std::uint64_t>();
      else if (key == "max_frames") cfg.max_frames = value.get<int>();
      else if (key == "max_steps") cfg.max_steps = value.get<int>();
      else if (key == "validation_fraction") cfg.validation_fraction = value.get<double>();
      else if (key == "loss") {
        const auto s = value.get<std::string>();
        if (s == "l1_logmel") cfg.loss = LossKind::kL1LogMel;
        else if (s == "l2_logmel") cfg.loss = LossKind::kL2LogMel;
        else throw Error(ErrorKind::kConfig, "train config: loss must be l1_logmel or l2_logmel");
      } else if (key == "combine") {
        const auto s = value.get<std::string>();
        if (s == "linear_magnitude") cfg.combine = CombineOn::kLinearMagnitude;
        else if (s == "normalized_log_magnitude") cfg.combine = CombineOn::kNormalizedLogMagnitude;
        else throw Error(ErrorKind::kConfig, "train config: combine must be linear_magnitude or normalized_log_magnitude");
      } else {
        throw Error(ErrorKind::kConfig, "train config: unknown key '" + key + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kConfig, std::string("train config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

TrainConfig TrainConfig::from_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::kIo, "cannot open train config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json_text(ss.str());
}

void TrainConfig::validate() const {
  require(std::isfinite(lr) && lr >= 0.0, ErrorKind::kConfig, "train config: lr must be non-negative");
  require(batch_size >= 1, ErrorKind::kConfig, "train config: batch_size must be >= 1");
  require(max_epochs >= 1, ErrorKind::kConfig, "train config: max_epochs must be >= 1");
  require(patience >= 1, ErrorKind::kConfig, "train config: patience must be >= 1");
  require(max_frames >= 2, ErrorKind::kConfig, "train config: max_frames must be >= 2");
  require(max_steps >= 0, ErrorKind::kConfig, "train config: max_steps must be >= 0");
  require(validation_fraction >= 0.0 && validation_fraction < 1.0, ErrorKind::kConfig,
          "train config: validation_fraction must be in [0, 1)");
}

// ---------------------------------------------------------------------------
// Examples

TrainingExample load_example(const ManifestEntry& entry, const StftConfig& stft_cfg) {
  const MultichannelWaveform mixture = read_wav(entry.mixture_path);
  const MultichannelWaveform clean = read_wav(entry.clean_reference_path);
  require_pipeline_rate(mixture);
  require_pipeline_rate(clean);
  TrainingExample ex;
  ex.scene_id = entry.scene_id;
  ex.position_id = entry.position_id;
  ex.feats = magnitude_and_normalize<double>(stft(mixture, stft_cfg));
  ex.clean_mag = stft(clean, stft_cfg).channel(0).cwiseAbs();
  const Eigen::Index T = std::min(ex.feats.num_frames(), ex.clean_mag.rows());
  require(T >= 2, ErrorKind::kContract, entry.scene_id + ": utterance too short");
  if (T < ex.feats.num_frames() || T < ex.clean_mag.rows()) ex = crop_example(ex, 0, T);
  return ex;
}

TrainingExample crop_example(const TrainingExample& ex, Eigen::Index begin, Eigen::Index count) {
  require_contract(begin >= 0 && count >= 2 && begin + count <= ex.feats.num_frames() &&
                       begin + count <= ex.clean_mag.rows(),
                   "crop_example: window outside the utterance");
  TrainingExample out;
  out.scene_id = ex.scene_id;
  out.position_id = ex.position_id;
  const auto first = ex.feats.mag.begin() + begin;
  out.feats.mag.assign(first, first + count);
  const auto nfirst = ex.feats.normalized_logmag.begin() + begin;
  out.feats.normalized_logmag.assign(nfirst, nfirst + count);
  out.feats.stats = ex.feats.stats;
  out.clean_mag = ex.clean_mag.middleRows(begin, count);
  return out;
}

double example_loss(const TrainingExample& ex, const SaccParams<double>& params, const Eigen::MatrixXd& filterbank,
                    LossKind kind, CombineOn combine, SaccParams<double>* grad) {
  const Eigen::MatrixXd target = magnitude_log_mel<double>(ex.clean_mag, filterbank);
  const auto trace = pipeline_forward(ex.feats, params, filterbank, combine);
  const LossResult r = surrogate_loss(trace.output(), target, kind);
  if (grad != nullptr) *grad = pipeline_backward(trace, params, filterbank, r.grad).params;
  return r.loss;
}

// ---------------------------------------------------------------------------
// Optimizer

Adam::Adam(Eigen::Index size, double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), m_(Eigen::VectorXd::Zero(size)),
      v_(Eigen::VectorXd::Zero(size)) {}

void Adam::step(Eigen::VectorXd& params, const Eigen::VectorXd& grad) {
  require_contract(params.size() == m_.size() && grad.size() == m_.size(), "adam: size mismatch");
  ++t_;
  m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
  v_ = beta2_ * v_ + (1.0 - beta2_) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(beta1_, t_);
  const double c2 = 1.0 - std::pow(beta2_, t_);
  params.array() -= lr_ * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps_);
}

// ---------------------------------------------------------------------------
// Training loop

namespace {

double mean_loss(const std::vector<TrainingExample>& set, const std::vector<Eigen::Index>& crop_len,
                 const SaccParams<double>& params, const Eigen::MatrixXd& bank, const TrainConfig& cfg) {
  double total = 0.0;
  for (std::size_t i = 0; i < set.size(); ++i) {
    // Fixed centre crop so evaluation does not depend on the epoch.
    const Eigen::Index T = set[i].feats.num_frames();
    const Eigen::Index len = crop_len[i];
    const TrainingExample ex = len < T ? crop_example(set[i], (T - len) / 2, len) : set[i];
    total += example_loss(ex, params, bank, cfg.loss, cfg.combine);
  }
  return set.empty() ? 0.0 : total / static_cast<double>(set.size());
}

}  // namespace

ManifestSplit split_manifest(const DatasetManifest& manifest, std::uint64_t seed, double validation_fraction) {
  ManifestSplit split;
  for (const auto& e : manifest.entries) {
    const double u = static_cast<double>(fnv1a(e.scene_id, seed) % 1000000ULL) / 1e6;
    (u < validation_fraction ? split.validation : split.train).entries.push_back(e);
  }
  if (split.train.entries.empty() || split.validation.entries.empty()) {
    split.train = manifest;
    split.validation = manifest;
    split.validation_is_train = true;
  }
  return split;
}

TrainReport train(const DatasetManifest& manifest, const TrainConfig& cfg, const SaccParams<double>& init,
                  const std::filesystem::path& checkpoint_path, SaccParams<double>* final_params, std::ostream* log) {
  cfg.validate();
  require(!manifest.entries.empty(), ErrorKind::kConfig, "train: empty manifest");
  const StftConfig stft_cfg;
  require_contract(init.num_bins() == stft_cfg.num_bins(), "train: parameter bin count does not match the STFT");
  const Eigen::MatrixXd bank = mel_filterbank(MelConfig{}, stft_cfg);

  const ManifestSplit split = split_manifest(manifest, cfg.seed, cfg.validation_fraction);
  TrainReport report;
  report.checkpoint_path = checkpoint_path;
  std::vector<TrainingExample> train_set, val_set;
  for (const auto& e : split.train.entries) {
    train_set.push_back(load_example(e, stft_cfg));
    report.train_ids.push_back(e.scene_id);
  }
  for (const auto& e : split.validation.entries) {
    val_set.push_back(load_example(e, stft_cfg));
    report.val_ids.push_back(e.scene_id);
  }
  if (log != nullptr && split.validation_is_train) *log << "train: too few scenes to hold out, validating on the training set\n";

  const auto crop_lengths = [&](const std::vector<TrainingExample>& set) {
    std::vector<Eigen::Index> len;
    for (const auto& ex : set) len.push_back(std::min<Eigen::Index>(ex.feats.num_frames(), cfg.max_frames));
    return len;
  };
  const auto train_len = crop_lengths(train_set);
  const auto val_len = crop_lengths(val_set);

  const Eigen::Index F = init.num_bins(), D = init.width();
  Eigen::VectorXd theta = flatten(init);
  SaccParams<double> params = init;
  SaccParams<double> best = init;
  Adam adam(theta.size(), cfg.lr);
  int since_best = 0;

  report.initial_train_loss = mean_loss(train_set, train_len, params, bank, cfg);
  report.initial_val_loss = mean_loss(val_set, val_len, params, bank, cfg);
  double best_val = report.initial_val_loss;
  if (!checkpoint_path.empty()) save_checkpoint(best, checkpoint_path);

  std::vector<std::size_t> order(train_set.size());
  bool out_of_steps = false;
  for (int epoch = 0; epoch < cfg.max_epochs && !out_of_steps; ++epoch) {
    std::mt19937_64 rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(epoch), 101));
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);

    double epoch_total = 0.0;
    int epoch_batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      if (cfg.max_steps > 0 && report.steps >= cfg.max_steps) {
        out_of_steps = true;
        break;
      }
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      Eigen::VectorXd grad = Eigen::VectorXd::Zero(theta.size());
      double batch_loss = 0.0;
      for (std::size_t b = start; b < stop; ++b) {
        const auto& full = train_set[order[b]];
        const Eigen::Index T = full.feats.num_frames();
        const Eigen::Index len = train_len[order[b]];
        const Eigen::Index begin = len < T ? static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(T - len + 1)) : 0;
        const TrainingExample ex = len < T ? crop_example(full, begin, len) : full;
        SaccParams<double> g;
        batch_loss += example_loss(ex, params, bank, cfg.loss, cfg.combine, &g);
        grad += flatten(g);
      }
      const double n = static_cast<double>(stop - start);
      batch_loss /= n;
      grad /= n;
      if (!std::isfinite(batch_loss) || !grad.allFinite()) {
        std::string ids;
        for (std::size_t b = start; b < stop; ++b) ids += (ids.empty() ? "" : ",") + train_set[order[b]].scene_id;
        throw Error(ErrorKind::kNumeric, "training diverged at epoch " + std::to_string(epoch) + " batch " +
                                             std::to_string(epoch_batches) + " (scenes " + ids + ")");
      }
      report.step_loss.push_back(batch_loss);
      adam.step(theta, grad);
      params = unflatten(theta, F, D);
      ++report.steps;
      epoch_total += batch_loss;
      ++epoch_batches;
    }
    if (epoch_batches == 0) break;

    report.train_loss.push_back(epoch_total / epoch_batches);
    const double val = mean_loss(val_set, val_len, params, bank, cfg);
    require(std::isfinite(val), ErrorKind::kNumeric, "validation loss is not finite after epoch " + std::to_string(epoch));
    report.val_loss.push_back(val);
    if (log != nullptr) {
      *log << "epoch " << epoch << " train " << std::setprecision(6) << report.train_loss.back() << " val " << val
           << " steps " << report.steps << "\n";
    }
    if (val < best_val) {
      best_val = val;
      best = params;
      report.best_epoch = epoch;
      since_best = 0;
      if (!checkpoint_path.empty()) save_checkpoint(best, checkpoint_path);
    } else if (++since_best >= cfg.patience) {
      report.early_stopped = true;
      break;
    }
  }
  report.final_train_loss = mean_loss(train_set, train_len, params, bank, cfg);
  if (final_params != nullptr) *final_params = params;
  return report;
}

// ---------------------------------------------------------------------------
// Gradient verification

namespace {

struct Probe {
  MagnitudeFeatures<double> feats;
  Eigen::MatrixXd target;
  Eigen::MatrixXd bank;
};

Probe make_probe(const ProbeSpec& spec, Eigen::Index F) {
  spec.stft.validate();
  require_contract(F == spec.stft.num_bins(), "grad_check: parameter bins do not match the probe STFT");
  const Eigen::Index N = spec.stft.win_samples() + static_cast<Eigen::Index>(spec.frames - 1) * spec.stft.hop_samples();
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> g(0.0, 1.0);
  MultichannelWaveform mix, clean;
  mix.samples.resize(N, spec.channels);
  clean.samples.resize(N, 1);
  for (Eigen::Index i = 0; i < mix.samples.size(); ++i) mix.samples.data()[i] = g(rng);
  for (Eigen::Index i = 0; i < clean.samples.size(); ++i) clean.samples.data()[i] = g(rng);
  Probe p;
  p.bank = mel_filterbank(spec.mel, spec.stft);
  p.feats = magnitude_and_normalize<double>(stft(mix, spec.stft));
  p.target = magnitude_log_mel<double>(stft(clean, spec.stft).channel(0).cwiseAbs(), p.bank);
  return p;
}

}  // namespace

GradCheckResult grad_check_coords(const SaccParams<double>& params, const ProbeSpec& spec,
                                  const std::vector<Eigen::Index>& coords, double h, double floor) {
  const Probe probe = make_probe(spec, params.num_bins());
  const Eigen::Index F = params.num_bins(), D = params.width();
  const auto loss_at = [&](const SaccParams<double>& p) {
    const auto trace = pipeline_forward(probe.feats, p, probe.bank, spec.combine);
    return surrogate_loss(trace.output(), probe.target, spec.loss).loss;
  };
  const auto trace = pipeline_forward(probe.feats, params, probe.bank, spec.combine);
  const LossResult r = surrogate_loss(trace.output(), probe.target, spec.loss);
  const Eigen::VectorXd analytic = flatten(pipeline_backward(trace, params, probe.bank, r.grad).params);

  GradCheckResult out;
  const Eigen::VectorXd theta = flatten(params);
  for (Eigen::Index i : coords) {
    require_contract(i >= 0 && i < theta.size(), "grad_check: coordinate out of range");
    Eigen::VectorXd plus = theta, minus = theta;
    plus[i] += h;
    minus[i] -= h;
    const double numeric = (loss_at(unflatten(plus, F, D)) - loss_at(unflatten(minus, F, D))) / (2.0 * h);
    const double a = analytic[i];
    const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
    out.coords.push_back(i);
    out.analytic.push_back(a);
    out.numeric.push_back(numeric);
    out.max_rel_error = std::max(out.max_rel_error, rel);
  }
  return out;
}

GradCheckResult grad_check(const SaccParams<double>& params, const ProbeSpec& spec, int n_coords, double h,
                           double floor) {
  std::mt19937_64 rng(derive_seed(spec.seed, 0, 29));
  const auto total = static_cast<std::uint64_t>(param_count(params));
  std::vector<Eigen::Index> coords;
  for (int i = 0; i < n_coords; ++i) coords.push_back(static_cast<Eigen::Index>(rng() % total));
  return grad_check_coords(params, spec, coords, h, floor);
}

// ---------------------------------------------------------------------------
// Evaluation

double logmel_distortion_db(const Eigen::MatrixXd& mel_energy, const Eigen::MatrixXd& ref_mel_energy) {
  require_contract(mel_energy.rows() == ref_mel_energy.rows() && mel_energy.cols() == ref_mel_energy.cols(),
                   "logmel_distortion_db: shape mismatch");
  const auto to_db = [](const Eigen::MatrixXd& e) {
    Eigen::MatrixXd db = 10.0 * e.array().max(kLogFloor).log10().matrix();
    db.rowwise() -= db.colwise().mean();
    return db;
  };
  const Eigen::MatrixXd d = to_db(mel_energy) - to_db(ref_mel_energy);
  return std::sqrt(d.squaredNorm() / static_cast<double>(d.size()));
}

double mel_snr_db(const Eigen::MatrixXd& mel_energy, const Eigen::MatrixXd& ref_mel_energy) {
  require_contract(mel_energy.rows() == ref_mel_energy.rows() && mel_energy.cols() == ref_mel_energy.cols(),
                   "mel_snr_db: shape mismatch");
  const double yy = mel_energy.squaredNorm();
  const double g = yy > 0.0 ? (mel_energy.array() * ref_mel_energy.array()).sum() / yy : 0.0;
  const double err = (ref_mel_energy - g * mel_energy).squaredNorm();
  const double ref = ref_mel_energy.squaredNorm();
  if (err <= ref * 1e-10) return 100.0;
  return std::min(100.0, 10.0 * std::log10(ref / err));
}

Eigen::MatrixXd frontend_magnitude(const FrontendSpec& frontend, const MultichannelWaveform& mixture,
                                   const Spectrogram& spec, const ManifestEntry& entry, const StftConfig& stft_cfg) {
  const Eigen::Index C = spec.num_channels();
  switch (frontend.kind) {
    case FrontendKind::kSdm:
    case FrontendKind::kRdm: {
      SelectionPolicy policy;
      policy.kind = frontend.kind == FrontendKind::kSdm ? ChannelPolicy::kSdm : ChannelPolicy::kRdm;
      policy.utterance_id = fnv1a(entry.scene_id, 0);
      return stft(select_channel(mixture, policy), stft_cfg).channel(0).cwiseAbs();
    }
    case FrontendKind::kMvdr: {
      MvdrConfig cfg;
      cfg.cdr.stft = stft_cfg;
      const auto meta = nlohmann::json::parse(entry.metadata_json, nullptr, false);
      if (meta.is_object() && meta.contains("mic_spacing_m")) cfg.spacing_m = meta["mic_spacing_m"].get<double>();
      const Eigen::Index mid = ReferenceSelector::middle(C).index;
      cfg.cdr_pair = {mid, mid + 1};
      cfg.reference.index = mid;
      return mvdr_frontend(spec, cfg).cwiseAbs();
    }
    case FrontendKind::kDas: {
      double spacing = 0.033, cos_angle = 0.0;
      const auto meta = nlohmann::json::parse(entry.metadata_json, nullptr, false);
      if (meta.is_object()) {
        spacing = meta.value("mic_spacing_m", spacing);
        cos_angle = meta.value("source_cos_angle", cos_angle);
      }
      return delay_and_sum(spec, ula_steering_delays(C, spacing, cos_angle), stft_cfg).cwiseAbs();
    }
    case FrontendKind::kSacc: {
      require(frontend.params.has_value(), ErrorKind::kConfig, "sacc frontend needs parameters");
      auto feats = magnitude_and_normalize<double>(spec);
      return forward(feats, *frontend.params, frontend.combine).S;
    }
    case FrontendKind::kCleanReference:
      break;
  }
  throw Error(ErrorKind::kContract, "frontend_magnitude: clean reference has no mixture path");
}

const MetricRow* MetricTable::find(const std::string& frontend) const {
  for (const auto& r : rows)
    if (r.frontend == frontend) return &r;
  return nullptr;
}

std::string MetricTable::to_csv() const {
  std::ostringstream out;
  out << std::setprecision(10);
  out << "frontend,param_count,position,utterances,logmel_distortion_db,snr_db\n";
  for (const auto& r : rows) {
    out << r.frontend << ',' << r.param_count << ",all," << r.utterances << ',' << r.logmel_distortion_db << ','
        << r.snr_db << '\n';
    for (const auto& [pos, s] : r.per_position) {
      out << r.frontend << ',' << r.param_count << ',' << pos << ',' << s.count << ',' << s.distortion_db << ','
          << s.snr_db << '\n';
    }
  }
  return out.str();
}

std::string MetricTable::to_json() const {
  nlohmann::ordered_json j;
  j["rows"] = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    nlohmann::ordered_json row;
    row["frontend"] = r.frontend;
    row["param_count"] = r.param_count;
    row["utterances"] = r.utterances;
    row["logmel_distortion_db"] = r.logmel_distortion_db;
    row["snr_db"] = r.snr_db;
    nlohmann::ordered_json per = nlohmann::ordered_json::object();
    for (const auto& [pos, s] : r.per_position) {
      per[std::to_string(pos)] = {{"utterances", s.count}, {"logmel_distortion_db", s.distortion_db}, {"snr_db", s.snr_db}};
    }
    row["per_position"] = per;
    j["rows"].push_back(row);
  }
  j["skipped"] = skipped;
  return j.dump(2) + "\n";
}

MetricTable evaluate(const DatasetManifest& manifest, const std::vector<FrontendSpec>& frontends,
                     const StftConfig& stft_cfg, const MelConfig& mel) {
  const Eigen::MatrixXd bank = mel_filterbank(mel, stft_cfg);
  MetricTable table;
  for (const auto& f : frontends) {
    MetricRow row;
    row.frontend = f.name;
    if (f.kind == FrontendKind::kSacc) {
      require(f.params.has_value(), ErrorKind::kConfig, "frontend " + f.name + " needs SACC parameters");
      row.param_count = param_count(*f.params);
    }
    table.rows.push_back(row);
  }

  for (const auto& entry : manifest.entries) {
    if (entry.clean_reference_path.empty() || !std::filesystem::exists(entry.clean_reference_path)) {
      table.skipped.push_back(entry.scene_id + ": missing clean reference");
      continue;
    }
    const MultichannelWaveform mixture = read_wav(entry.mixture_path);
    const MultichannelWaveform clean = read_wav(entry.clean_reference_path);
    require_pipeline_rate(mixture);
    require_pipeline_rate(clean);
    const Spectrogram spec = stft(mixture, stft_cfg);
    const Eigen::MatrixXd clean_mag = stft(clean, stft_cfg).channel(0).cwiseAbs();
    const Eigen::Index T = std::min(spec.num_frames(), clean_mag.rows());
    const Eigen::MatrixXd ref_mel = clean_mag.topRows(T) * bank.transpose();

    for (std::size_t k = 0; k < frontends.size(); ++k) {
      const auto& f = frontends[k];
      const Eigen::MatrixXd mag =
          f.kind == FrontendKind::kCleanReference ? clean_mag : frontend_magnitude(f, mixture, spec, entry, stft_cfg);
      const Eigen::MatrixXd out_mel = mag.topRows(T) * bank.transpose();
      const double dist = logmel_distortion_db(out_mel, ref_mel);
      const double snr = mel_snr_db(out_mel, ref_mel);
      auto& row = table.rows[k];
      row.logmel_distortion_db += dist;
      row.snr_db += snr;
      ++row.utterances;
      auto& pos = row.per_position[entry.position_id];
      pos.distortion_db += dist;
      pos.snr_db += snr;
      ++pos.count;
    }
  }
  for (auto& row : table.rows) {
    if (row.utterances > 0) {
      row.logmel_distortion_db /= row.utterances;
      row.snr_db /= row.utterances;
    }
    for (auto& [pos, s] : row.per_position) {
      s.distortion_db /= s.count;
      s.snr_db /= s.count;
    }
  }
  return table;
}

}  // namespace sacc
