#pragma once

#include <algorithm>
#include <cstddef>
#include <cstring>
#include <vector>

// Register-blocked batch kernels for the dense and strided conv layers.
// Every reduction runs in a fixed order that depends only on the shapes, so
// results are bit-identical for any thread count.

namespace nlosid::ann::kernels {

// Native vector width. Lane sums are always folded as ((l0 + l2) + (l1 + l3))
// for 4 lanes and emulated with two 2-lane partial sums otherwise, so both
// widths give identical results.
#if defined(__AVX__)
inline constexpr std::size_t kW = 4;
using vec = double __attribute__((vector_size(32)));
#else
inline constexpr std::size_t kW = 2;
using vec = double __attribute__((vector_size(16)));
#endif
inline constexpr int kRows = 4;
// Register blocking that fits 16 vector registers at either width.
inline constexpr int kCols = kW == 4 ? 2 : 1;

inline vec ld(const double* p) {
  vec v;
  std::memcpy(&v, p, sizeof v);
  return v;
}
inline void st(double* p, vec v) { std::memcpy(p, &v, sizeof v); }
inline vec splat(double x) {
  vec v;
  for (std::size_t i = 0; i < kW; ++i) v[i] = x;
  return v;
}

/// Four logical lanes for reductions, so the summation order does not depend
/// on the native width.
struct quad {
  vec v[4 / kW];
};
inline quad zero_quad() {
  quad q;
  for (auto& v : q.v) v = splat(0.0);
  return q;
}
inline quad ldq(const double* p) {
  quad q;
  for (std::size_t i = 0; i < 4 / kW; ++i) q.v[i] = ld(p + i * kW);
  return q;
}
inline void mac(quad& acc, const quad& a, const quad& b) {
  for (std::size_t i = 0; i < 4 / kW; ++i) acc.v[i] += a.v[i] * b.v[i];
}
inline double hsum(const quad& q) {
  double l[4];
  std::memcpy(l, q.v, sizeof l);
  return (l[0] + l[1]) + (l[2] + l[3]);
}

inline std::size_t round_up(std::size_t n, std::size_t m) { return (n + m - 1) / m * m; }

// ---------------------------------------------------------------------------
// Dense: Y[s][o] = b[o] + W[o]·X[s], W is m × n.
// ---------------------------------------------------------------------------

template <int R, int S>
inline void dense_fwd_block(const double* w, const double* b, const double* x, double* y, std::size_t n,
                            std::size_t m, std::size_t o, std::size_t s) {
  quad acc[R][S];
  for (int r = 0; r < R; ++r)
    for (int q = 0; q < S; ++q) acc[r][q] = zero_quad();
  const std::size_t n4 = n / 4 * 4;
  for (std::size_t k = 0; k < n4; k += 4) {
    quad xv[S];
    for (int q = 0; q < S; ++q) xv[q] = ldq(x + (s + q) * n + k);
    for (int r = 0; r < R; ++r) {
      const quad wv = ldq(w + (o + r) * n + k);
      for (int q = 0; q < S; ++q) mac(acc[r][q], wv, xv[q]);
    }
  }
  for (int r = 0; r < R; ++r)
    for (int q = 0; q < S; ++q) {
      double t = hsum(acc[r][q]);
      for (std::size_t k = n4; k < n; ++k) t += w[(o + r) * n + k] * x[(s + q) * n + k];
      y[(s + q) * m + o + r] = b[o + r] + t;
    }
}

inline void dense_forward_batch(const double* w, const double* b, const double* x, double* y, std::size_t batch,
                                std::size_t n, std::size_t m) {
  std::size_t o = 0;
  for (; o + kRows <= m; o += kRows) {
    std::size_t s = 0;
    for (; s + kCols <= batch; s += kCols) dense_fwd_block<kRows, kCols>(w, b, x, y, n, m, o, s);
    for (; s < batch; ++s) dense_fwd_block<kRows, 1>(w, b, x, y, n, m, o, s);
  }
  for (; o < m; ++o)
    for (std::size_t s = 0; s < batch; ++s) dense_fwd_block<1, 1>(w, b, x, y, n, m, o, s);
}

template <int R>
inline void dense_gw_block(const double* g, const double* x, double* gw, std::size_t batch, std::size_t n,
                           std::size_t m, std::size_t o) {
  const std::size_t nw = n / kW * kW;
  for (std::size_t k = 0; k < nw; k += kW) {
    vec acc[R];
    for (int r = 0; r < R; ++r) acc[r] = splat(0.0);
    for (std::size_t s = 0; s < batch; ++s) {
      const vec xv = ld(x + s * n + k);
      for (int r = 0; r < R; ++r) acc[r] += splat(g[s * m + o + r]) * xv;
    }
    for (int r = 0; r < R; ++r) st(gw + (o + r) * n + k, ld(gw + (o + r) * n + k) + acc[r]);
  }
  for (std::size_t k = nw; k < n; ++k)
    for (int r = 0; r < R; ++r) {
      double t = 0.0;
      for (std::size_t s = 0; s < batch; ++s) t += g[s * m + o + r] * x[s * n + k];
      gw[(o + r) * n + k] += t;
    }
}

template <int S>
inline void dense_dx_block(const double* g, const double* w, double* dx, std::size_t n, std::size_t m,
                           std::size_t s) {
  const std::size_t nw = n / kW * kW;
  for (std::size_t k = 0; k < nw; k += kW) {
    vec acc[S];
    for (int q = 0; q < S; ++q) acc[q] = splat(0.0);
    for (std::size_t o = 0; o < m; ++o) {
      const vec wv = ld(w + o * n + k);
      for (int q = 0; q < S; ++q) acc[q] += splat(g[(s + q) * m + o]) * wv;
    }
    for (int q = 0; q < S; ++q) st(dx + (s + q) * n + k, acc[q]);
  }
  for (std::size_t k = nw; k < n; ++k)
    for (int q = 0; q < S; ++q) {
      double t = 0.0;
      for (std::size_t o = 0; o < m; ++o) t += g[(s + q) * m + o] * w[o * n + k];
      dx[(s + q) * n + k] = t;
    }
}

/// Accumulates dW, db; writes dX when non-null.
inline void dense_backward_batch(const double* w, const double* x, const double* g, double* gw, double* gb,
                                 double* dx, std::size_t batch, std::size_t n, std::size_t m) {
  for (std::size_t o = 0; o < m; ++o) {
    double t = 0.0;
    for (std::size_t s = 0; s < batch; ++s) t += g[s * m + o];
    gb[o] += t;
  }
  std::size_t o = 0;
  for (; o + kRows <= m; o += kRows) dense_gw_block<kRows>(g, x, gw, batch, n, m, o);
  for (; o < m; ++o) dense_gw_block<1>(g, x, gw, batch, n, m, o);
  if (!dx) return;
  std::size_t s = 0;
  for (; s + kRows <= batch; s += kRows) dense_dx_block<kRows>(g, w, dx, n, m, s);
  for (; s < batch; ++s) dense_dx_block<1>(g, w, dx, n, m, s);
}

// ---------------------------------------------------------------------------
// Strided valid conv. Each input channel is split into `stride` phase rows so
// tap j of output p reads phase[c·stride + j % stride][p + j / stride]. Rows
// are zero-padded so blocked loops may run past the true output length.
// ---------------------------------------------------------------------------

struct ConvGeometry {
  std::size_t cin = 1, len_in = 0, k = 1, width = 1, stride = 1, len_out = 0;
  std::size_t q = 0;   // true phase-row length
  std::size_t lp = 0;  // padded output length (multiple of 8)
  std::size_t qp = 0;  // padded phase-row length
  std::size_t rows() const { return cin * stride; }
  std::size_t taps() const { return cin * width; }
  std::size_t row_of(std::size_t t) const { return (t / width) * stride + (t % width) % stride; }
  std::size_t off_of(std::size_t t) const { return (t % width) / stride; }

  ConvGeometry(std::size_t cin_, std::size_t len_in_, std::size_t k_, std::size_t width_, std::size_t stride_)
      : cin(cin_), len_in(len_in_), k(k_), width(width_), stride(stride_) {
    len_out = (len_in - width) / stride + 1;
    q = (len_in + stride - 1) / stride;
    lp = round_up(len_out, 8);
    qp = round_up(std::max(q, lp + (width - 1) / stride), 4);
    tap_offset.resize(taps());
    for (std::size_t t = 0; t < taps(); ++t) tap_offset[t] = row_of(t) * qp + off_of(t);
  }
  /// Start of tap t's input run inside the phase rows.
  std::vector<std::size_t> tap_offset;
};

/// Phase rows of one sample (rows() × qp, zero padded).
inline void split_phases(const ConvGeometry& g, const double* x, double* ph) {
  std::fill(ph, ph + g.rows() * g.qp, 0.0);
  for (std::size_t c = 0; c < g.cin; ++c)
    for (std::size_t i = 0; i < g.len_in; ++i) ph[(c * g.stride + i % g.stride) * g.qp + i / g.stride] = x[c * g.len_in + i];
}

template <int R>
inline void conv_fwd_block(const ConvGeometry& g, const double* w, const double* ph, double* tmp, std::size_t kk) {
  const std::size_t taps = g.taps();
  for (std::size_t p = 0; p < g.lp; p += 2 * kW) {
    vec acc[R][2];
    for (int r = 0; r < R; ++r) acc[r][0] = acc[r][1] = splat(0.0);
    for (std::size_t t = 0; t < taps; ++t) {
      const double* src = ph + g.tap_offset[t] + p;
      const vec x0 = ld(src), x1 = ld(src + kW);
      for (int r = 0; r < R; ++r) {
        const vec wv = splat(w[(kk + r) * taps + t]);
        acc[r][0] += wv * x0;
        acc[r][1] += wv * x1;
      }
    }
    for (int r = 0; r < R; ++r) {
      st(tmp + (kk + r) * g.lp + p, acc[r][0]);
      st(tmp + (kk + r) * g.lp + p + kW, acc[r][1]);
    }
  }
}

/// Y[s] = conv(X[s]) + b for a batch; `ph` and `tmp` are scratch.
inline void conv_forward_batch(const ConvGeometry& g, const double* w, const double* b, const double* x, double* y,
                               std::size_t batch, std::vector<double>& ph, std::vector<double>& tmp) {
  ph.resize(g.rows() * g.qp);
  tmp.resize(g.k * g.lp);
  const std::size_t n_in = g.cin * g.len_in, n_out = g.k * g.len_out;
  for (std::size_t s = 0; s < batch; ++s) {
    split_phases(g, x + s * n_in, ph.data());
    std::size_t kk = 0;
    for (; kk + kRows <= g.k; kk += kRows) conv_fwd_block<kRows>(g, w, ph.data(), tmp.data(), kk);
    for (; kk < g.k; ++kk) conv_fwd_block<1>(g, w, ph.data(), tmp.data(), kk);
    double* ys = y + s * n_out;
    for (std::size_t c = 0; c < g.k; ++c)
      for (std::size_t p = 0; p < g.len_out; ++p) ys[c * g.len_out + p] = b[c] + tmp[c * g.lp + p];
  }
}

template <int R, int T>
inline void conv_gw_block(const ConvGeometry& g, const double* ph_all, const double* dy_all, double* gw,
                          std::size_t batch, std::size_t kk, std::size_t t0) {
  const std::size_t taps = g.taps();
  quad acc[R][T];
  for (int r = 0; r < R; ++r)
    for (int u = 0; u < T; ++u) acc[r][u] = zero_quad();
  for (std::size_t s = 0; s < batch; ++s) {
    const double* ph = ph_all + s * g.rows() * g.qp;
    const double* dy = dy_all + s * g.k * g.lp;
    const double* src[T];
    for (int u = 0; u < T; ++u) src[u] = ph + g.tap_offset[t0 + u];
    for (std::size_t p = 0; p < g.lp; p += 4) {
      quad xv[T];
      for (int u = 0; u < T; ++u) xv[u] = ldq(src[u] + p);
      for (int r = 0; r < R; ++r) {
        const quad d = ldq(dy + (kk + r) * g.lp + p);
        for (int u = 0; u < T; ++u) mac(acc[r][u], d, xv[u]);
      }
    }
  }
  for (int r = 0; r < R; ++r)
    for (int u = 0; u < T; ++u) gw[(kk + r) * taps + t0 + u] += hsum(acc[r][u]);
}

template <int T>
inline void conv_dx_block(const ConvGeometry& g, const double* w, const double* dy, double* gt, std::size_t t0) {
  const std::size_t taps = g.taps();
  for (std::size_t p = 0; p < g.lp; p += 2 * kW) {
    vec acc[T][2];
    for (int u = 0; u < T; ++u) acc[u][0] = acc[u][1] = splat(0.0);
    for (std::size_t kk = 0; kk < g.k; ++kk) {
      const vec d0 = ld(dy + kk * g.lp + p), d1 = ld(dy + kk * g.lp + p + kW);
      for (int u = 0; u < T; ++u) {
        const vec wv = splat(w[kk * taps + t0 + u]);
        acc[u][0] += wv * d0;
        acc[u][1] += wv * d1;
      }
    }
    for (int u = 0; u < T; ++u) {
      st(gt + (t0 + u) * g.lp + p, acc[u][0]);
      st(gt + (t0 + u) * g.lp + p + kW, acc[u][1]);
    }
  }
}

struct ConvScratch {
  std::vector<double> ph, tmp, dy, gt, dph;
};

/// Accumulates dW, db over the batch; writes dX when non-null.
inline void conv_backward_batch(const ConvGeometry& g, const double* w, const double* x, const double* dout,
                                double* gw, double* gb, double* dx, std::size_t batch, ConvScratch& sc) {
  const std::size_t n_in = g.cin * g.len_in, n_out = g.k * g.len_out, taps = g.taps();
  const std::size_t ph_size = g.rows() * g.qp, dy_size = g.k * g.lp;
  sc.ph.resize(batch * ph_size);
  sc.dy.assign(batch * dy_size, 0.0);
  for (std::size_t s = 0; s < batch; ++s) {
    split_phases(g, x + s * n_in, sc.ph.data() + s * ph_size);
    for (std::size_t c = 0; c < g.k; ++c)
      std::copy_n(dout + s * n_out + c * g.len_out, g.len_out, sc.dy.data() + s * dy_size + c * g.lp);
  }
  for (std::size_t c = 0; c < g.k; ++c) {
    double t = 0.0;
    for (std::size_t s = 0; s < batch; ++s)
      for (std::size_t p = 0; p < g.len_out; ++p) t += dout[s * n_out + c * g.len_out + p];
    gb[c] += t;
  }
  std::size_t kk = 0;
  for (; kk + kRows <= g.k; kk += kRows) {
    std::size_t t = 0;
    for (; t + kCols <= taps; t += kCols) conv_gw_block<kRows, kCols>(g, sc.ph.data(), sc.dy.data(), gw, batch, kk, t);
    for (; t < taps; ++t) conv_gw_block<kRows, 1>(g, sc.ph.data(), sc.dy.data(), gw, batch, kk, t);
  }
  for (; kk < g.k; ++kk)
    for (std::size_t t = 0; t < taps; ++t) conv_gw_block<1, 1>(g, sc.ph.data(), sc.dy.data(), gw, batch, kk, t);
  if (!dx) return;

  sc.gt.resize(taps * g.lp);
  sc.dph.resize(ph_size);
  for (std::size_t s = 0; s < batch; ++s) {
    const double* dy = sc.dy.data() + s * dy_size;
    std::size_t t = 0;
    for (; t + kRows <= taps; t += kRows) conv_dx_block<kRows>(g, w, dy, sc.gt.data(), t);
    for (; t < taps; ++t) conv_dx_block<1>(g, w, dy, sc.gt.data(), t);
    std::fill(sc.dph.begin(), sc.dph.end(), 0.0);
    for (std::size_t tt = 0; tt < taps; ++tt) {
      double* dst = sc.dph.data() + g.tap_offset[tt];
      const double* src = sc.gt.data() + tt * g.lp;
      for (std::size_t p = 0; p < g.len_out; ++p) dst[p] += src[p];
    }
    double* dxs = dx + s * n_in;
    for (std::size_t c = 0; c < g.cin; ++c)
      for (std::size_t i = 0; i < g.len_in; ++i)
        dxs[c * g.len_in + i] = sc.dph[(c * g.stride + i % g.stride) * g.qp + i / g.stride];
  }
}

}  // namespace nlosid::ann::kernels
