#pragma once

#include "oracles.hpp"
#include "sacc/sacc.hpp"

#include <filesystem>
#include <random>
#include <string>

namespace testing_util {

inline sacc::FrameStack<double> to_frames(const oracle::Tensor3& x) {
  sacc::FrameStack<double> out(x.T, Eigen::MatrixXd(x.C, x.F));
  for (std::size_t t = 0; t < x.T; ++t)
    for (std::size_t c = 0; c < x.C; ++c)
      for (std::size_t f = 0; f < x.F; ++f) out[t](c, f) = x(t, c, f);
  return out;
}

inline oracle::Tensor3 random_magnitude(std::mt19937_64& rng, std::size_t T, std::size_t C, std::size_t F) {
  std::uniform_real_distribution<double> u(0.05, 2.0);
  oracle::Tensor3 m(T, C, F);
  for (auto& v : m.data) v = u(rng);
  return m;
}

inline sacc::SaccParams<double> random_params(std::mt19937_64& rng, Eigen::Index F, Eigen::Index D,
                                              double scale = 0.5) {
  std::normal_distribution<double> n(0.0, scale);
  auto p = sacc::SaccParams<double>::zeros(F, D);
  for (Eigen::Index i = 0; i < p.wq.size(); ++i) p.wq.data()[i] = n(rng);
  for (Eigen::Index i = 0; i < p.wk.size(); ++i) p.wk.data()[i] = n(rng);
  for (Eigen::Index i = 0; i < D; ++i) p.bq[i] = n(rng), p.bk[i] = n(rng);
  for (Eigen::Index i = 0; i < F; ++i) p.wv[i] = n(rng);
  p.bv = n(rng);
  return p;
}

inline oracle::Params to_oracle(const sacc::SaccParams<double>& p) {
  oracle::Params o;
  o.F = static_cast<std::size_t>(p.num_bins());
  o.D = static_cast<std::size_t>(p.width());
  for (Eigen::Index f = 0; f < p.num_bins(); ++f)
    for (Eigen::Index d = 0; d < p.width(); ++d) {
      o.wq.push_back(p.wq(f, d));
      o.wk.push_back(p.wk(f, d));
    }
  o.bq.assign(p.bq.data(), p.bq.data() + p.bq.size());
  o.bk.assign(p.bk.data(), p.bk.data() + p.bk.size());
  o.wv.assign(p.wv.data(), p.wv.data() + p.wv.size());
  o.bv = p.bv;
  return o;
}

// Fresh scratch directory under the build tree's temp area.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("sacc_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testing_util
