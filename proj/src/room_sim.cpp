#include "sacc/room_sim.hpp"

#include "sacc/beamformers.hpp"
#include "sacc/error.hpp"

#include <json.hpp>
#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>

namespace sacc {
namespace {

constexpr double kPi = std::numbers::pi;
constexpr int kSincHalfWidth = 32;  // samples either side of a fractional delay
constexpr double kRirHighPassHz = 80.0;

std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

double mean_square(const Eigen::Ref<const Eigen::VectorXd>& x) {
  return x.size() == 0 ? 0.0 : x.squaredNorm() / static_cast<double>(x.size());
}

// Linear convolution truncated to the first `out_len` samples.
Eigen::VectorXd fft_convolve(const Eigen::VectorXd& a, const Eigen::VectorXd& b, Eigen::Index out_len) {
  const std::size_t n = next_pow2(static_cast<std::size_t>(a.size() + b.size() - 1));
  std::vector<double> pa(n, 0.0), pb(n, 0.0), out;
  std::copy(a.data(), a.data() + a.size(), pa.begin());
  std::copy(b.data(), b.data() + b.size(), pb.begin());
  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> fa, fb;
  fft.fwd(fa, pa);
  fft.fwd(fb, pb);
  for (std::size_t k = 0; k < fa.size(); ++k) fa[k] *= fb[k];
  fft.inv(out, fa);
  Eigen::VectorXd y = Eigen::VectorXd::Zero(out_len);
  const auto keep = std::min<Eigen::Index>(out_len, static_cast<Eigen::Index>(out.size()));
  for (Eigen::Index i = 0; i < keep; ++i) y[i] = out[static_cast<std::size_t>(i)];
  return y;
}

void add_fractional_impulse(Eigen::Ref<Eigen::RowVectorXd, 0, Eigen::InnerStride<>> h, double delay, double amplitude) {
  const auto L = h.size();
  const auto first = std::max<Eigen::Index>(static_cast<Eigen::Index>(std::ceil(delay - kSincHalfWidth)), 0);
  const auto last = std::min<Eigen::Index>(static_cast<Eigen::Index>(std::floor(delay + kSincHalfWidth)), L - 1);
  if (first > last) return;
  // sin(pi x) alternates sign per sample; the window phase advances by a fixed rotation.
  const double x0 = static_cast<double>(first) - delay;
  double sin_pi_x = std::sin(kPi * x0);
  const double step = kPi / kSincHalfWidth;
  const double cos_step = std::cos(step), sin_step = std::sin(step);
  double wc = std::cos(step * x0), ws = std::sin(step * x0);
  for (Eigen::Index n = first; n <= last; ++n) {
    const double x = static_cast<double>(n) - delay;
    const double sinc = std::abs(x) < 1e-9 ? 1.0 : sin_pi_x / (kPi * x);
    h[n] += amplitude * 0.5 * (1.0 + wc) * sinc;
    sin_pi_x = -sin_pi_x;
    const double next_wc = wc * cos_step - ws * sin_step;
    ws = ws * cos_step + wc * sin_step;
    wc = next_wc;
  }
}

// Second-order Butterworth high-pass, applied causally in place. Removes
// the DC build-up that the all-positive image pulses otherwise accumulate.
void high_pass_inplace(Eigen::Ref<Eigen::RowVectorXd, 0, Eigen::InnerStride<>> x, double cutoff_hz, double fs) {
  const double k = std::tan(kPi * cutoff_hz / fs);
  const double q = std::numbers::sqrt2 / 2.0;
  const double norm = 1.0 / (1.0 + k / q + k * k);
  const double b0 = norm, b1 = -2.0 * norm, b2 = norm;
  const double a1 = 2.0 * (k * k - 1.0) * norm, a2 = (1.0 - k / q + k * k) * norm;
  double x1 = 0.0, x2 = 0.0, y1 = 0.0, y2 = 0.0;
  for (Eigen::Index n = 0; n < x.size(); ++n) {
    const double y = b0 * x[n] + b1 * x1 + b2 * x2 - a1 * y1 - a2 * y2;
    x2 = x1;
    x1 = x[n];
    y2 = y1;
    y1 = y;
    x[n] = y;
  }
}

Eigen::Vector3d json_vec3(const nlohmann::json& j, const char* key) {
  const auto v = j.at(key).get<std::vector<double>>();
  require(v.size() == 3, ErrorKind::kConfig, std::string("room profile: ") + key + " needs 3 values");
  return {v[0], v[1], v[2]};
}

nlohmann::ordered_json vec_json(const Eigen::VectorXd& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index, std::uint64_t salt) {
  // splitmix64 over the combined words.
  std::uint64_t z = base ^ (index * 0x9e3779b97f4a7c15ULL) ^ (salt * 0xd1b54a32d192ed03ULL);
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// ---------------------------------------------------------------------------
// Profiles and scenes

RoomProfile RoomProfile::from_json_text(const std::string& text) {
  RoomProfile p;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kConfig, std::string("room profile: ") + e.what());
  }
  require(j.is_object(), ErrorKind::kConfig, "room profile must be a JSON object");
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "dims_min") p.dims_min = json_vec3(j, "dims_min");
      else if (key == "dims_max") p.dims_max = json_vec3(j, "dims_max");
      else if (key == "t60_min_s") p.t60_min_s = value.get<double>();
      else if (key == "t60_max_s") p.t60_max_s = value.get<double>();
      else if (key == "num_mics") p.num_mics = value.get<int>();
      else if (key == "mic_spacing_m") p.mic_spacing_m = value.get<double>();
      else if (key == "wall_margin_m") p.wall_margin_m = value.get<double>();
      else if (key == "min_source_distance_m") p.min_source_distance_m = value.get<double>();
      else if (key == "max_order") p.max_order = value.get<int>();
      else if (key == "utterance_s") p.utterance_s = value.get<double>();
      else throw Error(ErrorKind::kConfig, "room profile: unknown key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kConfig, std::string("room profile: ") + e.what());
  }
  p.validate();
  return p;
}

RoomProfile RoomProfile::from_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::kIo, "cannot open room profile " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json_text(ss.str());
}

void RoomProfile::validate() const {
  require((dims_min.array() > 0.0).all() && (dims_max.array() >= dims_min.array()).all(), ErrorKind::kConfig,
          "room profile: need 0 < dims_min <= dims_max");
  require(t60_min_s > 0.0 && t60_max_s >= t60_min_s, ErrorKind::kConfig, "room profile: need 0 < t60_min <= t60_max");
  require(num_mics >= 1 && mic_spacing_m > 0.0, ErrorKind::kConfig, "room profile: bad array geometry");
  require(wall_margin_m >= 0.0 && min_source_distance_m >= 0.0, ErrorKind::kConfig, "room profile: negative margin");
  require(utterance_s > 0.05, ErrorKind::kConfig, "room profile: utterance too short");
}

Eigen::Matrix3Xd SceneSpec::mic_positions() const {
  Eigen::Matrix3Xd pos(3, num_mics);
  const Eigen::Vector3d axis = array_axis.normalized();
  for (int m = 0; m < num_mics; ++m) {
    pos.col(m) = array_center_m + (m - 0.5 * (num_mics - 1)) * mic_spacing_m * axis;
  }
  return pos;
}

double SceneSpec::source_cos_angle() const {
  const Eigen::Vector3d to_source = source_pos_m - array_center_m;
  return array_axis.normalized().dot(to_source.normalized());
}

void SceneSpec::validate(double wall_margin_m, double t60_min_s, double t60_max_s) const {
  require(t60_s >= t60_min_s && t60_s <= t60_max_s, ErrorKind::kConfig,
          "scene: t60 " + std::to_string(t60_s) + " s outside the allowed range");
  const auto inside = [&](const Eigen::Vector3d& p) {
    return (p.array() >= wall_margin_m).all() && ((room_dims_m - p).array() >= wall_margin_m).all();
  };
  const Eigen::Matrix3Xd mics = mic_positions();
  for (int m = 0; m < num_mics; ++m) {
    require(inside(mics.col(m)), ErrorKind::kGeometry, "scene: microphone " + std::to_string(m) + " too close to a wall");
  }
  require(inside(source_pos_m), ErrorKind::kGeometry, "scene: source too close to a wall");
}

double eyring_absorption(const Eigen::Vector3d& d, double t60_s) {
  require(std::isfinite(t60_s) && t60_s > 0.0, ErrorKind::kGeometry, "eyring: t60 must be positive and finite");
  const double volume = d.prod();
  const double surface = 2.0 * (d.x() * d.y() + d.x() * d.z() + d.y() * d.z());
  const double alpha = 1.0 - std::exp(-0.161 * volume / (surface * t60_s));
  require(alpha > 0.0 && alpha <= 1.0, ErrorKind::kGeometry,
          "eyring: absorption " + std::to_string(alpha) + " outside (0, 1] for this room and t60");
  return alpha;
}

SceneSpec sample_scene(std::uint64_t seed, const RoomProfile& profile) {
  profile.validate();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double aperture = (profile.num_mics - 1) * profile.mic_spacing_m;
  for (int attempt = 0; attempt < 100; ++attempt) {
    SceneSpec s;
    s.seed = seed;
    s.num_mics = profile.num_mics;
    s.mic_spacing_m = profile.mic_spacing_m;
    for (int i = 0; i < 3; ++i) s.room_dims_m[i] = profile.dims_min[i] + unit(rng) * (profile.dims_max[i] - profile.dims_min[i]);
    s.t60_s = profile.t60_min_s + unit(rng) * (profile.t60_max_s - profile.t60_min_s);
    const double azimuth = 2.0 * kPi * unit(rng);
    s.array_axis = Eigen::Vector3d(std::cos(azimuth), std::sin(azimuth), 0.0);
    const double m = profile.wall_margin_m;
    for (int i = 0; i < 3; ++i) {
      const double half = i < 2 ? 0.5 * aperture * std::abs(s.array_axis[i]) : 0.0;
      s.array_center_m[i] = m + half + unit(rng) * (s.room_dims_m[i] - 2.0 * (m + half));
      s.source_pos_m[i] = m + unit(rng) * (s.room_dims_m[i] - 2.0 * m);
    }
    if ((s.source_pos_m - s.array_center_m).norm() < profile.min_source_distance_m) continue;
    try {
      s.validate(profile.wall_margin_m, profile.t60_min_s, profile.t60_max_s);
      eyring_absorption(s.room_dims_m, s.t60_s);
    } catch (const Error&) {
      continue;
    }
    return s;
  }
  throw Error(ErrorKind::kConfig, "sample_scene: no feasible geometry after 100 attempts (seed " +
                                      std::to_string(seed) + ")");
}

// ---------------------------------------------------------------------------
// Image method

namespace {

// Schroeder T60 of the direction-averaged image-source decay
// E(t) = mean_u exp(-rate * t * s(u)), s(u) = sum_i |u_i| / L_i.
double model_t60(const std::vector<double>& s, double rate, double horizon_s) {
  constexpr int kSteps = 500;
  const double dt = horizon_s / kSteps;
  std::vector<double> edc(kSteps + 1);
  for (int i = 0; i <= kSteps; ++i) {
    double acc = 0.0;
    for (double si : s) acc += std::exp(-rate * si * i * dt) / si;
    edc[i] = acc;
  }
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  int count = 0;
  for (int i = 0; i <= kSteps; ++i) {
    const double db = 10.0 * std::log10(edc[i] / edc[0]);
    if (db > -5.0) continue;
    if (db < -25.0) break;
    const double t = i * dt;
    sx += t;
    sy += db;
    sxx += t * t;
    sxy += t * db;
    ++count;
  }
  if (count < 2) return std::numeric_limits<double>::infinity();
  return -60.0 / ((count * sxy - sx * sy) / (count * sxx - sx * sx));
}

}  // namespace

double wall_reflection(const Eigen::Vector3d& dims, double t60_s, AbsorptionModel model) {
  const double alpha = eyring_absorption(dims, t60_s);
  const double eyring_beta = std::sqrt(1.0 - alpha);
  if (model == AbsorptionModel::kEyring) return eyring_beta;

  // Fibonacci sphere directions.
  constexpr int kDirections = 512;
  std::vector<double> s(kDirections);
  const double golden = kPi * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < kDirections; ++i) {
    const double z = 1.0 - (2.0 * i + 1.0) / kDirections;
    const double r = std::sqrt(1.0 - z * z);
    s[i] = std::abs(r * std::cos(golden * i)) / dims.x() + std::abs(r * std::sin(golden * i)) / dims.y() +
           std::abs(z) / dims.z();
  }
  // rate = -2 ln(beta) * c; bisect in log(rate) since the fitted T60 falls monotonically.
  double lo = std::log(1e-3), hi = std::log(1e4);
  for (int it = 0; it < 40; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (model_t60(s, std::exp(mid), 0.6 * t60_s) > t60_s) lo = mid;
    else hi = mid;
  }
  const double beta = std::exp(-std::exp(0.5 * (lo + hi)) / (2.0 * kSpeedOfSound));
  require(beta >= 0.0 && beta < 1.0, ErrorKind::kGeometry, "wall reflection outside [0, 1) for this room and t60");
  return beta;
}

Eigen::Index rir_length(double t60_s) {
  return static_cast<Eigen::Index>(std::ceil(1.2 * t60_s * kSampleRateHz));
}

RirSet image_method_rir(const SceneSpec& scene, int max_order, AbsorptionModel model) {
  const double beta = wall_reflection(scene.room_dims_m, scene.t60_s, model);
  const Eigen::Index L = rir_length(scene.t60_s);
  const double fs = kSampleRateHz;
  const double max_dist = (static_cast<double>(L) + kSincHalfWidth) * kSpeedOfSound / fs;
  const Eigen::Matrix3Xd mics = scene.mic_positions();
  const int M = scene.num_mics;

  RirSet out;
  out.rirs = Eigen::MatrixXd::Zero(M, L);
  out.direct = Eigen::MatrixXd::Zero(M, L);
  out.wall_reflection = beta;

  const int order_cap = max_order < 0 ? std::numeric_limits<int>::max() : max_order;
  std::vector<double> beta_pow(1, 1.0);

  struct AxisImage {
    double offset;
    int reflections;
  };
  for (int m = 0; m < M; ++m) {
    // Per-axis image offsets relative to the microphone and their
    // reflection counts: x = (1 - 2q) xs + 2 n Lx, |n - q| + |n| reflections.
    std::array<std::vector<AxisImage>, 3> axes;
    for (int a = 0; a < 3; ++a) {
      const double room = scene.room_dims_m[a];
      const int n_max = static_cast<int>(std::ceil(max_dist / (2.0 * room))) + 1;
      for (int n = -n_max; n <= n_max; ++n) {
        for (int q = 0; q <= 1; ++q) {
          const double offset = (1 - 2 * q) * scene.source_pos_m[a] + 2.0 * n * room - mics(a, m);
          const int refl = std::abs(n - q) + std::abs(n);
          if (std::abs(offset) <= max_dist && refl <= order_cap) axes[a].push_back({offset, refl});
        }
      }
    }
    for (const auto& ix : axes[0]) {
      for (const auto& iy : axes[1]) {
        const double dxy2 = ix.offset * ix.offset + iy.offset * iy.offset;
        if (dxy2 > max_dist * max_dist) continue;
        for (const auto& iz : axes[2]) {
          const int order = ix.reflections + iy.reflections + iz.reflections;
          if (order > order_cap) continue;
          const double dist = std::sqrt(dxy2 + iz.offset * iz.offset);
          if (dist > max_dist) continue;
          while (static_cast<int>(beta_pow.size()) <= order) beta_pow.push_back(beta_pow.back() * beta);
          const double delay = dist * fs / kSpeedOfSound;
          const double amplitude = beta_pow[order] / (4.0 * kPi * dist);
          add_fractional_impulse(out.rirs.row(m), delay, amplitude);
          if (order == 0) add_fractional_impulse(out.direct.row(m), delay, amplitude);
        }
      }
    }
    high_pass_inplace(out.rirs.row(m), kRirHighPassHz, fs);
    high_pass_inplace(out.direct.row(m), kRirHighPassHz, fs);
  }
  return out;
}

double schroeder_t60(const Eigen::VectorXd& rir, int sample_rate_hz) {
  const Eigen::Index L = rir.size();
  require_contract(L > 2, "schroeder: response too short");
  Eigen::VectorXd edc(L);
  double acc = 0.0;
  for (Eigen::Index i = L - 1; i >= 0; --i) {
    acc += rir[i] * rir[i];
    edc[i] = acc;
  }
  require(edc[0] > 0.0, ErrorKind::kNumeric, "schroeder: silent response");
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  int count = 0;
  for (Eigen::Index i = 0; i < L; ++i) {
    const double db = 10.0 * std::log10(edc[i] / edc[0]);
    if (db > -5.0) continue;
    if (db < -25.0) break;
    const double t = static_cast<double>(i) / sample_rate_hz;
    sx += t;
    sy += db;
    sxx += t * t;
    sxy += t * db;
    ++count;
  }
  require(count >= 2, ErrorKind::kNumeric, "schroeder: decay does not reach -25 dB");
  const double slope = (count * sxy - sx * sy) / (count * sxx - sx * sx);
  return -60.0 / slope;
}

// ---------------------------------------------------------------------------
// Mixing

MixSpec sample_mix_spec(std::uint64_t seed, int num_mics) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  MixSpec mix;
  mix.noise_snr_db = 3.0 + 22.0 * unit(rng);
  mix.self_noise_snr_db = 45.0;
  mix.gain_offsets_db.resize(num_mics);
  for (int m = 0; m < num_mics; ++m) {
    const double magnitude = 0.1 + 1.9 * unit(rng);
    mix.gain_offsets_db[m] = unit(rng) < 0.5 ? -magnitude : magnitude;
  }
  mix.level_dbfs = -15.0 + 14.0 * unit(rng);
  return mix;
}

RenderedMixture render_mixture(const MultichannelWaveform& clean, const RirSet& rirs,
                               const MultichannelWaveform& noise, const MixSpec& mix, std::uint64_t seed,
                               Eigen::Index reference_mic) {
  require_pipeline_rate(clean);
  require_contract(clean.num_channels() == 1, "render_mixture: clean input must be single channel");
  const Eigen::Index M = rirs.rirs.rows();
  const Eigen::Index N = clean.num_samples();
  require_contract(reference_mic >= 0 && reference_mic < M, "render_mixture: reference mic out of range");
  require_contract(N > 0, "render_mixture: empty clean input");
  const bool with_noise = std::isfinite(mix.noise_snr_db);
  if (with_noise) {
    require_contract(noise.num_channels() >= M, "render_mixture: noise has fewer channels than the array");
    require_contract(noise.num_samples() > 0, "render_mixture: empty noise");
  }
  require_contract(mix.gain_offsets_db.size() == 0 || mix.gain_offsets_db.size() == M,
                   "render_mixture: one gain offset per microphone required");

  RenderedMixture out;
  Eigen::MatrixXd speech(N, M);
  for (Eigen::Index m = 0; m < M; ++m) {
    speech.col(m) = fft_convolve(clean.samples.col(0), rirs.rirs.row(m).transpose(), N);
  }
  Eigen::VectorXd direct_ref = fft_convolve(clean.samples.col(0), rirs.direct.row(reference_mic).transpose(), N);

  const double speech_power = mean_square(speech.col(reference_mic));
  require_contract(speech_power > 0.0, "render_mixture: silent clean input, SNR undefined");

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::MatrixXd self = Eigen::MatrixXd::Zero(N, M);
  if (std::isfinite(mix.self_noise_snr_db)) {
    for (Eigen::Index m = 0; m < M; ++m) {
      const double sd = std::sqrt(mean_square(speech.col(m)) / std::pow(10.0, mix.self_noise_snr_db / 10.0));
      for (Eigen::Index n = 0; n < N; ++n) self(n, m) = sd * gauss(rng);
    }
  }

  Eigen::MatrixXd ambient = Eigen::MatrixXd::Zero(N, M);
  double gain = 0.0;
  if (with_noise) {
    const Eigen::Index len = noise.num_samples();
    out.noise_loops = static_cast<int>((N - 1) / len);
    for (Eigen::Index n = 0; n < N; ++n) ambient.row(n) = noise.samples.row(n % len).head(M);
    // Solve |g a + s|^2 = P_s / snr at the reference mic for g >= 0.
    const double pa = mean_square(ambient.col(reference_mic));
    require_contract(pa > 0.0, "render_mixture: silent noise at the reference mic");
    const double cross = ambient.col(reference_mic).dot(self.col(reference_mic)) / static_cast<double>(N);
    const double ps = mean_square(self.col(reference_mic));
    const double target = speech_power / std::pow(10.0, mix.noise_snr_db / 10.0);
    const double disc = cross * cross - pa * (ps - target);
    gain = disc > 0.0 ? std::max(0.0, (-cross + std::sqrt(disc)) / pa) : 0.0;
  }
  Eigen::MatrixXd additive = gain * ambient + self;

  Eigen::VectorXd channel_gain = Eigen::VectorXd::Ones(M);
  for (Eigen::Index m = 0; m < mix.gain_offsets_db.size(); ++m) channel_gain[m] = std::pow(10.0, mix.gain_offsets_db[m] / 20.0);
  speech = speech * channel_gain.asDiagonal();
  additive = additive * channel_gain.asDiagonal();
  Eigen::MatrixXd x = speech + additive;

  const double peak = x.cwiseAbs().maxCoeff();
  require(peak > 0.0, ErrorKind::kNumeric, "render_mixture: silent mixture");
  const double scale = std::pow(10.0, mix.level_dbfs / 20.0) / peak;

  out.mixture.samples = x * scale;
  out.reverberant_speech.samples = speech * scale;
  out.additive_noise.samples = additive * scale;
  out.clean_ref.samples = direct_ref * (scale * channel_gain[reference_mic]);
  const double noise_energy = out.additive_noise.samples.col(reference_mic).squaredNorm();
  out.measured_snr_db = noise_energy > 0.0
                            ? 10.0 * std::log10(out.reverberant_speech.samples.col(reference_mic).squaredNorm() / noise_energy)
                            : std::numeric_limits<double>::infinity();
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic sources

MultichannelWaveform diffuse_noise(NoisePreset preset, Eigen::Index num_samples, const Eigen::Matrix3Xd& mics,
                                   std::uint64_t seed) {
  require_contract(num_samples > 0, "diffuse_noise: need at least one sample");
  const Eigen::Index M = mics.cols();
  const std::size_t nfft = next_pow2(static_cast<std::size_t>(std::max<Eigen::Index>(num_samples, 2)));
  const std::size_t half = nfft / 2;

  const auto envelope = [preset](double f) {
    switch (preset) {
      case NoisePreset::kAmbient:
        return 1.0 / std::sqrt(std::max(f, 20.0));
      case NoisePreset::kBabble:
        return (f / (f + 150.0)) / std::sqrt(1.0 + (f / 600.0) * (f / 600.0));
      case NoisePreset::kFan: {
        const double p1 = (f - 120.0) / 30.0, p2 = (f - 240.0) / 40.0;
        return 1.0 / (1.0 + (f / 250.0) * (f / 250.0)) + 3.0 * std::exp(-p1 * p1) + 1.5 * std::exp(-p2 * p2);
      }
    }
    return 1.0;
  };

  Eigen::MatrixXd dist(M, M);
  for (Eigen::Index i = 0; i < M; ++i)
    for (Eigen::Index j = 0; j < M; ++j) dist(i, j) = (mics.col(i) - mics.col(j)).norm();

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, std::sqrt(0.5));
  std::vector<std::vector<std::complex<double>>> spectra(M, std::vector<std::complex<double>>(nfft, 0.0));
  Eigen::MatrixXd gamma(M, M);
  Eigen::VectorXcd z(M);
  for (std::size_t k = 0; k <= half; ++k) {
    const double f = static_cast<double>(k) * kSampleRateHz / static_cast<double>(nfft);
    for (Eigen::Index i = 0; i < M; ++i)
      for (Eigen::Index j = 0; j < M; ++j) gamma(i, j) = diffuse_coherence(f, dist(i, j));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gamma);
    const Eigen::MatrixXd mixing =
        eig.eigenvectors() * eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
    const bool real_bin = k == 0 || k == half;
    for (Eigen::Index i = 0; i < M; ++i) z[i] = std::complex<double>(gauss(rng), real_bin ? 0.0 : gauss(rng));
    const Eigen::VectorXcd x = envelope(f) * (mixing.cast<std::complex<double>>() * z);
    for (Eigen::Index i = 0; i < M; ++i) {
      spectra[i][k] = x[i];
      if (!real_bin) spectra[i][nfft - k] = std::conj(x[i]);
    }
  }

  Eigen::FFT<double> fft;
  MultichannelWaveform out;
  out.samples.resize(num_samples, M);
  std::vector<double> time;
  for (Eigen::Index i = 0; i < M; ++i) {
    fft.inv(time, spectra[i]);
    for (Eigen::Index n = 0; n < num_samples; ++n) out.samples(n, i) = time[static_cast<std::size_t>(n)];
  }
  const double rms = std::sqrt(out.samples.squaredNorm() / static_cast<double>(out.samples.size()));
  if (rms > 0.0) out.samples /= rms;
  return out;
}

MultichannelWaveform synthetic_noise_mix(Eigen::Index num_samples, const Eigen::Matrix3Xd& mics, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const std::array<NoisePreset, 3> presets{NoisePreset::kAmbient, NoisePreset::kBabble, NoisePreset::kFan};
  std::array<double, 3> weight{};
  for (auto& w : weight) w = unit(rng);
  const double total = weight[0] + weight[1] + weight[2];
  MultichannelWaveform out;
  out.samples = Eigen::MatrixXd::Zero(num_samples, mics.cols());
  for (std::size_t i = 0; i < presets.size(); ++i) {
    out.samples += std::sqrt(weight[i] / total) * diffuse_noise(presets[i], num_samples, mics, derive_seed(seed, i, 17)).samples;
  }
  const double rms = std::sqrt(out.samples.squaredNorm() / static_cast<double>(out.samples.size()));
  if (rms > 0.0) out.samples /= rms;
  return out;
}

MultichannelWaveform synth_utterance(std::uint64_t seed, double seconds) {
  require_contract(seconds > 0.0, "synth_utterance: duration must be positive");
  const double fs = kSampleRateHz;
  const auto N = static_cast<Eigen::Index>(std::lround(seconds * fs));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  Eigen::VectorXd x = Eigen::VectorXd::Zero(N);
  double t = uniform(0.05, 0.2);
  while (t < seconds - 0.1) {
    const double dur = uniform(0.12, 0.3);
    const auto start = static_cast<Eigen::Index>(t * fs);
    const auto len = std::min<Eigen::Index>(static_cast<Eigen::Index>(dur * fs), N - start);
    if (len <= 8) break;
    const double level = uniform(0.4, 1.0);
    if (unit(rng) < 0.75) {
      const double f0_start = uniform(100.0, 220.0);
      const double f0_end = f0_start * uniform(0.8, 1.2);
      const std::array<double, 3> formant{uniform(300.0, 800.0), uniform(900.0, 2300.0), uniform(2300.0, 3200.0)};
      const std::array<double, 3> bandwidth{80.0, 100.0, 150.0};
      const int harmonics = static_cast<int>(4000.0 / std::max(f0_start, f0_end));
      std::vector<double> phase(harmonics + 1, 0.0);
      for (int k = 1; k <= harmonics; ++k) phase[k] = uniform(0.0, 2.0 * kPi);
      for (Eigen::Index n = 0; n < len; ++n) {
        const double r = static_cast<double>(n) / static_cast<double>(len);
        const double f0 = f0_start + (f0_end - f0_start) * r;
        const double env = level * std::sin(kPi * r);
        double s = 0.0;
        for (int k = 1; k <= harmonics; ++k) {
          const double fk = k * f0;
          double a = 0.0;
          for (int i = 0; i < 3; ++i) {
            const double u = (fk - formant[i]) / (0.5 * bandwidth[i]);
            a += 1.0 / std::sqrt(1.0 + u * u) / (i + 1);
          }
          phase[k] += 2.0 * kPi * fk / fs;
          s += a / k * std::sin(phase[k]);
        }
        x[start + n] += env * s;
      }
    } else {
      double previous = 0.0;
      for (Eigen::Index n = 0; n < len; ++n) {
        const double r = static_cast<double>(n) / static_cast<double>(len);
        const double w = gauss(rng);
        x[start + n] += 0.3 * level * std::sin(kPi * r) * (w - previous);
        previous = w;
      }
    }
    t += dur + (unit(rng) < 0.15 ? uniform(0.2, 0.4) : uniform(0.03, 0.12));
  }
  const double peak = x.cwiseAbs().maxCoeff();
  if (peak > 0.0) x *= 0.5 / peak;
  for (Eigen::Index n = 0; n < N; ++n) x[n] += 1e-4 * gauss(rng);

  MultichannelWaveform out;
  out.samples = x;
  return out;
}

// ---------------------------------------------------------------------------
// Dataset assembly

namespace {

std::vector<MultichannelWaveform> load_noise_dir(const std::filesystem::path& dir) {
  require(std::filesystem::is_directory(dir), ErrorKind::kIo, "noise directory not found: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".wav") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  require(!files.empty(), ErrorKind::kConfig, "no .wav files in noise directory " + dir.string());
  std::vector<MultichannelWaveform> out;
  for (const auto& f : files) {
    auto w = read_wav(f);
    require_pipeline_rate(w);
    out.push_back(std::move(w));
  }
  return out;
}

// Multichannel noise from a recording: enough channels are used directly,
// otherwise each channel reads channel 0 at its own random offset.
MultichannelWaveform noise_from_recording(const MultichannelWaveform& rec, Eigen::Index M, Eigen::Index N,
                                          std::mt19937_64& rng) {
  MultichannelWaveform out;
  if (rec.num_channels() >= M) {
    out.samples = rec.samples.leftCols(M);
    return out;
  }
  const Eigen::Index len = rec.num_samples();
  out.samples.resize(N, M);
  for (Eigen::Index m = 0; m < M; ++m) {
    const auto offset = static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(len));
    for (Eigen::Index n = 0; n < N; ++n) out.samples(n, m) = rec.samples((offset + n) % len, 0);
  }
  return out;
}

int position_bin(double cos_angle) {
  const double angle = std::acos(std::clamp(cos_angle, -1.0, 1.0));
  return std::clamp(static_cast<int>(angle / (kPi / 4.0)), 0, 3);
}

}  // namespace

DatasetManifest build_dataset(std::size_t n_scenes, const std::filesystem::path& out_dir, std::uint64_t seed,
                              const BuildOptions& options) {
  options.profile.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  require(!ec && std::filesystem::is_directory(out_dir), ErrorKind::kIo, "cannot create output directory " + out_dir.string());

  std::vector<MultichannelWaveform> noises;
  if (options.noise_dir) noises = load_noise_dir(*options.noise_dir);

  DatasetManifest manifest;
  for (std::size_t i = 0; i < n_scenes; ++i) {
    const std::uint64_t scene_seed = derive_seed(seed, i);
    std::mt19937_64 pick(derive_seed(scene_seed, 0, 5));
    const SceneSpec scene = sample_scene(scene_seed, options.profile);
    const RirSet rirs = image_method_rir(scene, options.profile.max_order);

    MultichannelWaveform clean;
    std::string source_name = "synthetic";
    if (options.sources.empty()) {
      clean = synth_utterance(derive_seed(scene_seed, 1), options.profile.utterance_s);
    } else {
      const auto& path = options.sources[pick() % options.sources.size()];
      clean = read_wav(path);
      require_pipeline_rate(clean);
      clean.samples = clean.samples.col(0).eval();
      source_name = path.filename().string();
    }
    const Eigen::Index N = clean.num_samples();
    const Eigen::Index M = scene.num_mics;

    MultichannelWaveform noise;
    std::string noise_name = "synthetic_mix";
    if (noises.empty()) {
      noise = synthetic_noise_mix(N, scene.mic_positions(), derive_seed(scene_seed, 2));
    } else {
      const std::size_t k = pick() % noises.size();
      noise = noise_from_recording(noises[k], M, N, pick);
      noise_name = "noise_dir#" + std::to_string(k);
    }

    const MixSpec mix = sample_mix_spec(derive_seed(scene_seed, 3), static_cast<int>(M));
    const Eigen::Index reference = ReferenceSelector::middle(M).index;
    const RenderedMixture r = render_mixture(clean, rirs, noise, mix, derive_seed(scene_seed, 4), reference);

    char stem[32];
    std::snprintf(stem, sizeof stem, "%04zu", i);
    const auto mixture_path = out_dir / (std::string("mixture_") + stem + ".wav");
    const auto clean_path = out_dir / (std::string("clean_") + stem + ".wav");
    const auto clipped = write_wav(r.mixture, mixture_path, WavEncoding::kFloat32).clipped_samples;
    write_wav(r.clean_ref, clean_path, WavEncoding::kFloat32);

    nlohmann::ordered_json meta;
    meta["room_dims_m"] = vec_json(scene.room_dims_m);
    meta["t60_s"] = scene.t60_s;
    meta["array_center_m"] = vec_json(scene.array_center_m);
    meta["array_axis"] = vec_json(scene.array_axis);
    meta["source_pos_m"] = vec_json(scene.source_pos_m);
    meta["source_cos_angle"] = scene.source_cos_angle();
    meta["mic_spacing_m"] = scene.mic_spacing_m;
    meta["scene_seed"] = scene_seed;
    meta["self_noise_snr_db"] = mix.self_noise_snr_db;
    meta["gain_offsets_db"] = vec_json(mix.gain_offsets_db);
    meta["level_dbfs"] = mix.level_dbfs;
    meta["measured_snr_db"] = r.measured_snr_db;
    meta["noise"] = noise_name;
    meta["noise_loops"] = r.noise_loops;
    meta["source"] = source_name;
    meta["clipped_samples"] = clipped;

    ManifestEntry entry;
    entry.mixture_path = mixture_path;
    entry.clean_reference_path = clean_path;
    entry.scene_id = std::string("scene-") + stem;
    entry.snr_db = mix.noise_snr_db;
    entry.position_id = position_bin(scene.source_cos_angle());
    entry.metadata_json = meta.dump();
    manifest.entries.push_back(std::move(entry));
  }
  write_manifest(manifest, out_dir / "manifest.jsonl");
  return manifest;
}

}  // namespace sacc
