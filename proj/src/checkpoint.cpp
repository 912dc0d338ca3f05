#include "sacc/checkpoint.hpp"

#include <json.hpp>

#include <fstream>

namespace sacc {
namespace {

std::vector<double> row_major(const Eigen::MatrixXd& m) {
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) out.push_back(m(r, c));
  return out;
}

Eigen::MatrixXd from_row_major(const std::vector<double>& v, Eigen::Index rows, Eigen::Index cols,
                               const char* name) {
  require(static_cast<Eigen::Index>(v.size()) == rows * cols, ErrorKind::kFormat,
          std::string("checkpoint: field ") + name + " has wrong length");
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = v[static_cast<std::size_t>(r * cols + c)];
  return m;
}

}  // namespace

void save_checkpoint(const SaccParams<double>& p, const std::filesystem::path& path) {
  nlohmann::ordered_json j;
  j["layout_version"] = kCheckpointLayoutVersion;
  j["F"] = p.num_bins();
  j["D"] = p.width();
  j["Wq"] = row_major(p.wq);
  j["bq"] = row_major(p.bq);
  j["Wk"] = row_major(p.wk);
  j["bk"] = row_major(p.bk);
  j["Wv"] = row_major(p.wv);
  j["bv"] = p.bv;
  std::ofstream out(path, std::ios::trunc);
  require(out.good(), ErrorKind::kIo, "cannot write checkpoint " + path.string());
  out << j.dump() << '\n';
  require(out.good(), ErrorKind::kIo, "write failed: " + path.string());
}

SaccParams<double> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::kIo, "cannot open checkpoint " + path.string());
  try {
    const auto j = nlohmann::json::parse(in);
    const int version = j.at("layout_version").get<int>();
    require(version == kCheckpointLayoutVersion, ErrorKind::kUnsupported,
            "checkpoint layout version " + std::to_string(version) + " not supported");
    const auto F = j.at("F").get<Eigen::Index>();
    const auto D = j.at("D").get<Eigen::Index>();
    require(F >= 1 && D >= 1, ErrorKind::kFormat, "checkpoint: bad dimensions");
    SaccParams<double> p;
    p.wq = from_row_major(j.at("Wq").get<std::vector<double>>(), F, D, "Wq");
    p.bq = from_row_major(j.at("bq").get<std::vector<double>>(), D, 1, "bq");
    p.wk = from_row_major(j.at("Wk").get<std::vector<double>>(), F, D, "Wk");
    p.bk = from_row_major(j.at("bk").get<std::vector<double>>(), D, 1, "bk");
    p.wv = from_row_major(j.at("Wv").get<std::vector<double>>(), F, 1, "Wv");
    p.bv = j.at("bv").get<double>();
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kFormat, "checkpoint " + path.string() + ": " + e.what());
  }
}

}  // namespace sacc
