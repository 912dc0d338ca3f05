#include "sacc/analysis.hpp"

#include "sacc/error.hpp"

#include <json.hpp>

#include <fstream>
#include <iomanip>

namespace sacc {

Eigen::VectorXd moving_average(const Eigen::VectorXd& x, int window) {
  require_contract(window >= 1, "moving_average: window must be >= 1");
  const Eigen::Index n = x.size();
  const Eigen::Index before = window / 2;
  const Eigen::Index after = window - before - 1;
  Eigen::VectorXd prefix(n + 1);
  prefix[0] = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + x[i];
  Eigen::VectorXd out(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Index lo = std::max<Eigen::Index>(0, i - before);
    const Eigen::Index hi = std::min<Eigen::Index>(n - 1, i + after);
    out[i] = (prefix[hi + 1] - prefix[lo]) / static_cast<double>(hi - lo + 1);
  }
  return out;
}

AnalysisBundle analyze(const MagnitudeFeatures<double>& feats, const SaccParams<double>& params, CombineOn combine,
                       int window) {
  const Eigen::Index C = feats.num_channels();
  require(C >= 2, ErrorKind::kContract, "analysis needs at least two channels");
  const auto acts = forward(feats, params, combine);
  const Eigen::Index T = feats.num_frames();

  AnalysisBundle b;
  b.smoothing_frames = window;
  for (Eigen::Index c = 0; c < C; ++c) {
    Eigen::MatrixXd ch(T, feats.num_bins());
    for (Eigen::Index t = 0; t < T; ++t) ch.row(t) = feats.normalized_logmag[t].row(c);
    b.norm_logmag_per_channel.push_back(std::move(ch));
  }
  b.time_avg_attention = Eigen::MatrixXd::Zero(C, C);
  for (const auto& a : acts.att) b.time_avg_attention += a;
  b.time_avg_attention /= static_cast<double>(T);
  b.time_avg_attention.diagonal().setZero();

  b.raw_weights = acts.weights().transpose();
  b.weight_traces.resize(C, T);
  for (Eigen::Index c = 0; c < C; ++c) {
    b.weight_traces.row(c) = moving_average(b.raw_weights.row(c).transpose(), window).transpose();
  }
  return b;
}

namespace {

void write_csv(const Eigen::MatrixXd& m, const std::filesystem::path& path) {
  std::ofstream out(path);
  require(out.good(), ErrorKind::kIo, "cannot write " + path.string());
  out << std::setprecision(17);
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) out << (c ? "," : "") << m(r, c);
    out << '\n';
  }
  require(out.good(), ErrorKind::kIo, "failed writing " + path.string());
}

nlohmann::ordered_json rows_json(const Eigen::MatrixXd& m) {
  auto j = nlohmann::ordered_json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    std::vector<double> row(static_cast<std::size_t>(m.cols()));
    for (Eigen::Index c = 0; c < m.cols(); ++c) row[static_cast<std::size_t>(c)] = m(r, c);
    j.push_back(row);
  }
  return j;
}

}  // namespace

void write_analysis(const AnalysisBundle& b, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  require(!ec && std::filesystem::is_directory(dir), ErrorKind::kIo, "cannot create " + dir.string());
  const auto C = static_cast<Eigen::Index>(b.norm_logmag_per_channel.size());

  nlohmann::ordered_json j;
  j["channels"] = C;
  j["frames"] = b.raw_weights.cols();
  j["bins"] = C > 0 ? b.norm_logmag_per_channel.front().cols() : 0;
  j["smoothing_frames"] = b.smoothing_frames;
  j["time_avg_attention"] = rows_json(b.time_avg_attention);
  j["weight_traces"] = rows_json(b.weight_traces);
  j["raw_weights"] = rows_json(b.raw_weights);
  auto files = nlohmann::ordered_json::array();
  for (Eigen::Index c = 0; c < C; ++c) {
    const std::string name = "norm_logmag_ch" + std::to_string(c) + ".csv";
    write_csv(b.norm_logmag_per_channel[static_cast<std::size_t>(c)], dir / name);
    files.push_back(name);
  }
  j["norm_logmag_files"] = files;
  write_csv(b.time_avg_attention, dir / "attention.csv");
  write_csv(b.weight_traces, dir / "weight_traces.csv");

  std::ofstream out(dir / "analysis.json");
  require(out.good(), ErrorKind::kIo, "cannot write analysis.json");
  out << j.dump(2) << '\n';
}

}  // namespace sacc
