#pragma once

// Test-only reference implementations. These are written with plain loops
// over std::vector and share no code with the library's Eigen paths.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <functional>
#include <numbers>
#include <random>
#include <vector>

namespace oracle {

// Dense T x C x F tensor, index (t * C + c) * F + f.
struct Tensor3 {
  std::size_t T = 0, C = 0, F = 0;
  std::vector<double> data;

  Tensor3() = default;
  Tensor3(std::size_t t, std::size_t c, std::size_t f) : T(t), C(c), F(f), data(t * c * f, 0.0) {}
  double& operator()(std::size_t t, std::size_t c, std::size_t f) { return data[(t * C + c) * F + f]; }
  double operator()(std::size_t t, std::size_t c, std::size_t f) const { return data[(t * C + c) * F + f]; }
};

struct Params {
  std::size_t F = 0, D = 0;
  std::vector<double> wq, bq, wk, bk, wv;  // wq/wk row-major F x D
  double bv = 0.0;
};

struct Result {
  std::vector<double> w;  // T x C
  std::vector<double> S;  // T x F
  std::vector<double> att;  // T x C x C
};

// log(max(mag, 1e-10)), then per (c, f) mean/biased-variance normalization
// over time with 1e-8 added to the variance.
inline Tensor3 normalized_log(const Tensor3& mag) {
  Tensor3 out(mag.T, mag.C, mag.F);
  for (std::size_t c = 0; c < mag.C; ++c) {
    for (std::size_t f = 0; f < mag.F; ++f) {
      double mean = 0.0;
      for (std::size_t t = 0; t < mag.T; ++t) mean += std::log(std::max(mag(t, c, f), 1e-10));
      mean /= static_cast<double>(mag.T);
      double var = 0.0;
      for (std::size_t t = 0; t < mag.T; ++t) {
        const double d = std::log(std::max(mag(t, c, f), 1e-10)) - mean;
        var += d * d;
      }
      var /= static_cast<double>(mag.T);
      for (std::size_t t = 0; t < mag.T; ++t) {
        out(t, c, f) = (std::log(std::max(mag(t, c, f), 1e-10)) - mean) / std::sqrt(var + 1e-8);
      }
    }
  }
  return out;
}

// Straight-line evaluation of query/key/value, the attention softmax over
// the last channel axis, the channel softmax of att * value, and the
// weighted channel sum of the linear magnitude.
inline Result sacc_forward(const Tensor3& mag, const Params& p) {
  const Tensor3 z = normalized_log(mag);
  const std::size_t T = mag.T, C = mag.C, F = mag.F, D = p.D;
  Result r;
  r.w.assign(T * C, 0.0);
  r.S.assign(T * F, 0.0);
  r.att.assign(T * C * C, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    std::vector<double> q(C * D), k(C * D), v(C);
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t d = 0; d < D; ++d) {
        double sq = p.bq[d], sk = p.bk[d];
        for (std::size_t f = 0; f < F; ++f) {
          sq += z(t, c, f) * p.wq[f * D + d];
          sk += z(t, c, f) * p.wk[f * D + d];
        }
        q[c * D + d] = sq;
        k[c * D + d] = sk;
      }
      double sv = p.bv;
      for (std::size_t f = 0; f < F; ++f) sv += z(t, c, f) * p.wv[f];
      v[c] = sv;
    }
    std::vector<double> logits(C);
    for (std::size_t i = 0; i < C; ++i) {
      std::vector<double> s(C);
      double mx = -1e300;
      for (std::size_t j = 0; j < C; ++j) {
        double dot = 0.0;
        for (std::size_t d = 0; d < D; ++d) dot += q[i * D + d] * k[j * D + d];
        s[j] = dot / std::sqrt(static_cast<double>(D));
        mx = std::max(mx, s[j]);
      }
      double total = 0.0;
      for (std::size_t j = 0; j < C; ++j) total += std::exp(s[j] - mx);
      double acc = 0.0;
      for (std::size_t j = 0; j < C; ++j) {
        const double a = std::exp(s[j] - mx) / total;
        r.att[(t * C + i) * C + j] = a;
        acc += a * v[j];
      }
      logits[i] = acc;
    }
    const double mx = *std::max_element(logits.begin(), logits.end());
    double total = 0.0;
    for (std::size_t c = 0; c < C; ++c) total += std::exp(logits[c] - mx);
    for (std::size_t c = 0; c < C; ++c) r.w[t * C + c] = std::exp(logits[c] - mx) / total;
    for (std::size_t f = 0; f < F; ++f) {
      double s = 0.0;
      for (std::size_t c = 0; c < C; ++c) s += r.w[t * C + c] * mag(t, c, f);
      r.S[t * F + f] = s;
    }
  }
  return r;
}

// Central difference of a scalar function along coordinate i.
inline double central_difference(const std::function<double(const std::vector<double>&)>& fn,
                                 std::vector<double> x, std::size_t i, double h) {
  const double x0 = x[i];
  x[i] = x0 + h;
  const double up = fn(x);
  x[i] = x0 - h;
  const double down = fn(x);
  return (up - down) / (2.0 * h);
}

// |a - b| / max(|a|, |b|, floor); the floor keeps coordinates whose true
// gradient is zero from dividing round-off by round-off.
inline double relative_error(double a, double b, double floor = 1e-4) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// Naive DFT of one real frame, bins 0..n/2.
inline std::vector<std::complex<double>> dft_one_sided(const std::vector<double>& x) {
  const std::size_t n = x.size();
  std::vector<std::complex<double>> out(n / 2 + 1);
  for (std::size_t k = 0; k <= n / 2; ++k) {
    std::complex<double> acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      acc += x[i] * std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>(k * i) / static_cast<double>(n));
    }
    out[k] = acc;
  }
  return out;
}

}  // namespace oracle

namespace oracle {

using cmat = std::vector<std::vector<std::complex<double>>>;

// Gauss-Jordan inverse with partial pivoting.
inline cmat inverse(cmat a) {
  const std::size_t n = a.size();
  cmat inv(n, std::vector<std::complex<double>>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) inv[i][i] = 1.0;
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(a[r][col]) > std::abs(a[pivot][col])) pivot = r;
    std::swap(a[col], a[pivot]);
    std::swap(inv[col], inv[pivot]);
    const std::complex<double> d = a[col][col];
    for (std::size_t k = 0; k < n; ++k) {
      a[col][k] /= d;
      inv[col][k] /= d;
    }
    for (std::size_t r = 0; r < n; ++r) {
      if (r == col) continue;
      const std::complex<double> factor = a[r][col];
      for (std::size_t k = 0; k < n; ++k) {
        a[r][k] -= factor * a[col][k];
        inv[r][k] -= factor * inv[col][k];
      }
    }
  }
  return inv;
}

inline cmat matmul(const cmat& a, const cmat& b) {
  const std::size_t n = a.size(), m = b[0].size(), k = b.size();
  cmat out(n, std::vector<std::complex<double>>(m, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j)
      for (std::size_t l = 0; l < k; ++l) out[i][j] += a[i][l] * b[l][j];
  return out;
}

// inv(phi_v) phi_s e_ref / trace(inv(phi_v) phi_s).
inline std::vector<std::complex<double>> mvdr(const cmat& phi_v, const cmat& phi_s, std::size_t ref) {
  const cmat m = matmul(inverse(phi_v), phi_s);
  std::complex<double> trace = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i) trace += m[i][i];
  std::vector<std::complex<double>> h(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) h[i] = m[i][ref] / trace;
  return h;
}

}  // namespace oracle
