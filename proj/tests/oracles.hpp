#pragma once

// Brute-force reference implementations, written directly from the formulas
// with plain loops. They share no code with the library so they can serve as
// independent checks.

#include <cmath>
#include <cstdint>
#include <vector>

namespace oracle {

using Mat = std::vector<std::vector<double>>;
using Vec = std::vector<double>;

inline Mat matmul(const Mat& a, const Mat& b) {
  const std::size_t r = a.size(), k = b.size(), c = b[0].size();
  Mat out(r, Vec(c, 0.0));
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j)
      for (std::size_t p = 0; p < k; ++p) out[i][j] += a[i][p] * b[p][j];
  return out;
}

inline Vec softmax(const Vec& z) {
  double mx = z[0];
  for (double v : z) mx = std::max(mx, v);
  Vec e(z.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    e[i] = std::exp(z[i] - mx);
    sum += e[i];
  }
  for (auto& v : e) v /= sum;
  return e;
}

// softmax(Q K^T / sqrt(h)) V, one score row at a time. `live` flags the
// usable key positions; dead ones get a -1e9 additive score.
inline Mat scaled_dot_attention(const Mat& q, const Mat& k, const Mat& v,
                                const std::vector<int>& live) {
  const std::size_t nq = q.size(), nk = k.size(), h = q[0].size();
  const double inv = 1.0 / std::sqrt(static_cast<double>(h));
  Mat out(nq, Vec(v[0].size(), 0.0));
  for (std::size_t i = 0; i < nq; ++i) {
    Vec scores(nk);
    for (std::size_t j = 0; j < nk; ++j) {
      double dot = 0.0;
      for (std::size_t p = 0; p < h; ++p) dot += q[i][p] * k[j][p];
      scores[j] = dot * inv + (live[j] ? 0.0 : -1e9);
    }
    const Vec p = softmax(scores);
    for (std::size_t j = 0; j < nk; ++j)
      for (std::size_t c = 0; c < v[0].size(); ++c)
        out[i][c] += p[j] * v[j][c];
  }
  return out;
}

// I = Q Wq + V' Wv + b_i;  G = sigmoid(Q Wg + V' Wg2 + b_g);  I .* G
inline Mat aoa_block(const Mat& q, const Mat& vp, const Mat& wq,
                     const Mat& wv, const Vec& bi, const Mat& wg,
                     const Mat& wg2, const Vec& bg) {
  const std::size_t rows = q.size(), d = wq[0].size();
  Mat i_vec = matmul(q, wq);
  const Mat iv2 = matmul(vp, wv);
  Mat g_vec = matmul(q, wg);
  const Mat gv2 = matmul(vp, wg2);
  Mat out(rows, Vec(d, 0.0));
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < d; ++j) {
      const double info = i_vec[r][j] + iv2[r][j] + bi[j];
      const double gate =
          1.0 / (1.0 + std::exp(-(g_vec[r][j] + gv2[r][j] + bg[j])));
      out[r][j] = info * gate;
    }
  return out;
}

// Scalar score per row through FC(d)-ReLU-FC(1), softmax over live rows,
// weighted sum of rows (dropout off).
inline Vec attention_pool(const Mat& z, const Mat& w1, const Vec& b1,
                          const Mat& w2, const Vec& b2,
                          const std::vector<int>& live) {
  const std::size_t k = z.size(), d = z[0].size();
  Vec scores(k);
  for (std::size_t i = 0; i < k; ++i) {
    double s = 0.0;
    for (std::size_t h = 0; h < w1[0].size(); ++h) {
      double a = b1[h];
      for (std::size_t j = 0; j < d; ++j) a += z[i][j] * w1[j][h];
      if (a > 0.0) s += a * w2[h][0];
    }
    scores[i] = s + b2[0] + (live[i] ? 0.0 : -1e9);
  }
  const Vec alpha = softmax(scores);
  Vec out(d, 0.0);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < d; ++j) out[j] += alpha[i] * z[i][j];
  return out;
}

// z_l = sum_ij x_i y_j T[i][j][l] with the core tensor assembled from the
// rank factors: T[i][j][l] = sum_r U_r[i][l] V_r[j][l].
inline Vec mutan_trilinear(const Vec& x, const Vec& y,
                           const std::vector<Mat>& u,
                           const std::vector<Mat>& v) {
  const std::size_t d = x.size(), dz = u[0][0].size(), rank = u.size();
  std::vector<Mat> core(d, Mat(y.size(), Vec(dz, 0.0)));
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < y.size(); ++j)
      for (std::size_t l = 0; l < dz; ++l)
        for (std::size_t r = 0; r < rank; ++r)
          core[i][j][l] += u[r][i][l] * v[r][j][l];
  Vec z(dz, 0.0);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < y.size(); ++j)
      for (std::size_t l = 0; l < dz; ++l)
        z[l] += x[i] * y[j] * core[i][j][l];
  return z;
}

inline double bce(const Vec& probs, const Vec& target) {
  double acc = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = std::min(std::max(probs[i], 1e-7), 1.0 - 1e-7);
    acc += -(target[i] * std::log(p) + (1.0 - target[i]) * std::log(1.0 - p));
  }
  return acc / static_cast<double>(probs.size());
}

struct LstmWeights {
  Mat wi, wf, wo, wc;  // [e][d]
  Mat ui, uf, uo, uc;  // [d][d]
  Vec bi, bf, bo, bc;  // [d]
};

// Step-by-step scalar recurrence, zero initial state; returns h at every
// step.
inline Mat lstm(const Mat& x, const LstmWeights& w) {
  const std::size_t n = x.size(), d = w.bi.size(), e = x[0].size();
  const auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  Vec h(d, 0.0), c(d, 0.0);
  Mat out(n, Vec(d, 0.0));
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t j = 0; j < d; ++j) {
      double ai = w.bi[j], af = w.bf[j], ao = w.bo[j], ac = w.bc[j];
      for (std::size_t p = 0; p < e; ++p) {
        ai += x[t][p] * w.wi[p][j];
        af += x[t][p] * w.wf[p][j];
        ao += x[t][p] * w.wo[p][j];
        ac += x[t][p] * w.wc[p][j];
      }
      for (std::size_t p = 0; p < d; ++p) {
        ai += h[p] * w.ui[p][j];
        af += h[p] * w.uf[p][j];
        ao += h[p] * w.uo[p][j];
        ac += h[p] * w.uc[p][j];
      }
      out[t][j] = ai;  // stash pre-activations; finish after full h is read
      // (c update needs old h for every j, so do it in a second pass)
      // store gates packed: reuse out row then overwrite below
      (void)af;
      (void)ao;
      (void)ac;
    }
    // recompute properly with old h snapshot
    Vec h_old = h, c_old = c;
    for (std::size_t j = 0; j < d; ++j) {
      double ai = w.bi[j], af = w.bf[j], ao = w.bo[j], ac = w.bc[j];
      for (std::size_t p = 0; p < e; ++p) {
        ai += x[t][p] * w.wi[p][j];
        af += x[t][p] * w.wf[p][j];
        ao += x[t][p] * w.wo[p][j];
        ac += x[t][p] * w.wc[p][j];
      }
      for (std::size_t p = 0; p < d; ++p) {
        ai += h_old[p] * w.ui[p][j];
        af += h_old[p] * w.uf[p][j];
        ao += h_old[p] * w.uo[p][j];
        ac += h_old[p] * w.uc[p][j];
      }
      const double gi = sig(ai), gf = sig(af), go = sig(ao);
      const double cand = std::tanh(ac);
      c[j] = gf * c_old[j] + gi * cand;
      h[j] = go * std::tanh(c[j]);
      out[t][j] = h[j];
    }
  }
  return out;
}

// Bias-corrected Adam on one scalar.
struct ScalarAdam {
  double m = 0.0, v = 0.0;
  long t = 0;
  double beta1 = 0.9, beta2 = 0.98, eps = 1e-9;

  double step(double p, double g, double lr) {
    ++t;
    m = beta1 * m + (1.0 - beta1) * g;
    v = beta2 * v + (1.0 - beta2) * g * g;
    const double mh = m / (1.0 - std::pow(beta1, t));
    const double vh = v / (1.0 - std::pow(beta2, t));
    return p - lr * mh / (std::sqrt(vh) + eps);
  }
};

inline Vec layer_norm_row(const Vec& x, const Vec& gamma, const Vec& beta,
                          double eps = 1e-6) {
  const std::size_t d = x.size();
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(d);
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= static_cast<double>(d);
  Vec out(d);
  for (std::size_t j = 0; j < d; ++j)
    out[j] = gamma[j] * (x[j] - mean) / std::sqrt(var + eps) + beta[j];
  return out;
}

}  // namespace oracle
