#pragma once

// Shared helpers for the test suites: finite-difference gradient checking
// and scalar (loop-based) oracle implementations kept independent of the
// library's linear-algebra path.

#include <cmath>
#include <functional>
#include <vector>

#include "spd/ad.hpp"
#include "spd/rng.hpp"

namespace testsup {

using spd::ad::Mat;
using spd::ad::Parameter;

inline Mat random_mat(Eigen::Index r, Eigen::Index c, spd::Rng& rng, double lo = -1.0,
                      double hi = 1.0) {
  Mat m(r, c);
  for (Eigen::Index i = 0; i < r; ++i) {
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rng.uniform(lo, hi);
  }
  return m;
}

// Relative gradient error with an absolute floor so near-zero gradients do
// not amplify finite-difference noise.
inline double rel_err(double a, double b) {
  const double scale = std::max({1e-6, std::abs(a), std::abs(b)});
  return std::abs(a - b) / scale;
}

struct GradCheckResult {
  double max_rel_err = 0.0;
  long checked = 0;
};

// Computes analytic grads via `backward_fn` (which must run one
// forward+backward pass, leaving grads accumulated), then compares them
// against central finite differences of `loss_fn`. `stride` > 1 subsamples
// large matrices deterministically.
inline GradCheckResult grad_check(const std::vector<Parameter*>& params,
                                  const std::function<void()>& backward_fn,
                                  const std::function<double()>& loss_fn, double h = 1e-5,
                                  long stride = 1) {
  for (Parameter* p : params) p->zero_grad();
  backward_fn();
  std::vector<Mat> analytic;
  analytic.reserve(params.size());
  for (Parameter* p : params) analytic.push_back(p->grad);

  GradCheckResult result;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Parameter* p = params[pi];
    for (Eigen::Index idx = 0; idx < p->value.size(); idx += stride) {
      double* cell = p->value.data() + idx;
      const double saved = *cell;
      *cell = saved + h;
      const double up = loss_fn();
      *cell = saved - h;
      const double down = loss_fn();
      *cell = saved;
      const double fd = (up - down) / (2.0 * h);
      const double an = analytic[pi].data()[idx];
      result.max_rel_err = std::max(result.max_rel_err, rel_err(an, fd));
      ++result.checked;
    }
  }
  return result;
}

// ---- scalar oracles ------------------------------------------------------

using Vec2d = std::vector<std::vector<double>>;

inline Vec2d to_vec(const Mat& m) {
  Vec2d v(static_cast<size_t>(m.rows()), std::vector<double>(static_cast<size_t>(m.cols())));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      v[static_cast<size_t>(r)][static_cast<size_t>(c)] = m(r, c);
    }
  }
  return v;
}

// y = x * W, all plain loops.
inline std::vector<double> oracle_vecmat(const std::vector<double>& x, const Vec2d& w) {
  std::vector<double> y(w[0].size(), 0.0);
  for (size_t j = 0; j < y.size(); ++j) {
    for (size_t i = 0; i < x.size(); ++i) y[j] += x[i] * w[i][j];
  }
  return y;
}

inline double oracle_sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double oracle_relu(double x) { return x > 0.0 ? x : 0.0; }

struct OracleEdge {
  int src, dst;
};

// One gated graph-convolution step, scalar arithmetic only.
inline void oracle_ggcn_layer(const Vec2d& wa, const Vec2d& wb, const Vec2d& wu, const Vec2d& wv,
                              const Vec2d& ww, Vec2d& h, Vec2d& e,
                              const std::vector<OracleEdge>& edges) {
  const size_t n = h.size();
  const size_t d = h.empty() ? 0 : h[0].size();
  Vec2d h_next(n, std::vector<double>(d, 0.0));
  for (size_t i = 0; i < n; ++i) {
    std::vector<double> acc = oracle_vecmat(h[i], wa);
    for (size_t k = 0; k < edges.size(); ++k) {
      if (static_cast<size_t>(edges[k].dst) != i) continue;
      const std::vector<double> msg = oracle_vecmat(h[static_cast<size_t>(edges[k].src)], wb);
      for (size_t c = 0; c < d; ++c) acc[c] += oracle_sigmoid(e[k][c]) * msg[c];
    }
    for (size_t c = 0; c < d; ++c) h_next[i][c] = oracle_relu(acc[c]);
  }
  Vec2d e_next(edges.size(), std::vector<double>(d, 0.0));
  for (size_t k = 0; k < edges.size(); ++k) {
    const std::vector<double> ue = oracle_vecmat(e[k], wu);
    const std::vector<double> vs = oracle_vecmat(h[static_cast<size_t>(edges[k].src)], wv);
    const std::vector<double> wt = oracle_vecmat(h[static_cast<size_t>(edges[k].dst)], ww);
    for (size_t c = 0; c < d; ++c) e_next[k][c] = oracle_relu(ue[c] + vs[c] + wt[c]);
  }
  h = h_next;
  e = e_next;
}

// Single-query scaled dot-product attention over raw rows plus the 2-layer
// MLP head, scalar arithmetic only.
inline double oracle_cross_attend_mlp(const std::vector<double>& h_q, const Vec2d& f_llm,
                                      const Vec2d& wq, const std::vector<double>& bq,
                                      const Vec2d& w1, const std::vector<double>& b1,
                                      const Vec2d& w2, double b2) {
  const size_t d = h_q.size();
  std::vector<double> q = oracle_vecmat(h_q, wq);
  for (size_t j = 0; j < d; ++j) q[j] += bq[j];

  std::vector<double> scores(f_llm.size(), 0.0);
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  for (size_t r = 0; r < f_llm.size(); ++r) {
    double dot = 0.0;
    for (size_t j = 0; j < d; ++j) dot += q[j] * f_llm[r][j];
    scores[r] = dot * inv_sqrt_d;
  }
  double mx = scores[0];
  for (double s : scores) mx = std::max(mx, s);
  double z = 0.0;
  for (double& s : scores) {
    s = std::exp(s - mx);
    z += s;
  }
  std::vector<double> ctx(d, 0.0);
  for (size_t r = 0; r < f_llm.size(); ++r) {
    const double w = scores[r] / z;
    for (size_t j = 0; j < d; ++j) ctx[j] += w * f_llm[r][j];
  }

  std::vector<double> mid = oracle_vecmat(ctx, w1);
  for (size_t j = 0; j < mid.size(); ++j) mid[j] = oracle_relu(mid[j] + b1[j]);
  double out = b2;
  for (size_t j = 0; j < mid.size(); ++j) out += mid[j] * w2[j][0];
  return out;
}

// From-the-formula linear CKA in plain loops.
inline double oracle_linear_cka(const Vec2d& x_in, const Vec2d& y_in) {
  Vec2d x = x_in, y = y_in;
  const size_t n = x.size();
  auto center = [n](Vec2d& m) {
    const size_t p = m[0].size();
    for (size_t c = 0; c < p; ++c) {
      double mean = 0.0;
      for (size_t r = 0; r < n; ++r) mean += m[r][c];
      mean /= static_cast<double>(n);
      for (size_t r = 0; r < n; ++r) m[r][c] -= mean;
    }
  };
  center(x);
  center(y);
  const size_t p = x[0].size(), q = y[0].size();

  double cross = 0.0;  // |Y^T X|_F^2
  for (size_t a = 0; a < q; ++a) {
    for (size_t b = 0; b < p; ++b) {
      double s = 0.0;
      for (size_t r = 0; r < n; ++r) s += y[r][a] * x[r][b];
      cross += s * s;
    }
  }
  auto gram_norm = [n](const Vec2d& m) {
    const size_t pp = m[0].size();
    double total = 0.0;
    for (size_t a = 0; a < pp; ++a) {
      for (size_t b = 0; b < pp; ++b) {
        double s = 0.0;
        for (size_t r = 0; r < n; ++r) s += m[r][a] * m[r][b];
        total += s * s;
      }
    }
    return std::sqrt(total);
  };
  return cross / (gram_norm(x) * gram_norm(y));
}

}  // namespace testsup
