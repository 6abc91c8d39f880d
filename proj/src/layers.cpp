#include "layers.hpp"

#include <algorithm>
#include <cstring>
#include <vector>

#include <Eigen/Core>

namespace lbnp::layers {

namespace {
template <class S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using MapR = Eigen::Map<RowMat<S>>;
template <class S>
using CMapR = Eigen::Map<const RowMat<S>>;
template <class S>
using CVec = Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, 1>>;
template <class S>
using Vec = Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, 1>>;

template <class S>
RowMat<S>& dcols_scratch() {
  thread_local RowMat<S> m;
  return m;
}

// cols[(ic*k + j), x] = in[ic, x + j]
template <class S>
void im2col1d(const S* in, std::size_t cin, std::size_t len, std::size_t k, Buffer<S>& cols) {
  const std::size_t lp = len + k - 1;
  cols.resize(cin * k * len);
  for (std::size_t ic = 0; ic < cin; ++ic)
    for (std::size_t j = 0; j < k; ++j)
      std::memcpy(cols.data() + (ic * k + j) * len, in + ic * lp + j, len * sizeof(S));
}

// cols[(ic*9 + ky*3 + kx), y*w + x] = in[ic, y + ky, x + kx]
template <class S>
void im2col3x3(const S* in, std::size_t cin, std::size_t h, std::size_t w, Buffer<S>& cols) {
  const std::size_t wp = w + 2, plane = (h + 2) * wp, hw = h * w;
  cols.resize(cin * 9 * hw);
  for (std::size_t ic = 0; ic < cin; ++ic)
    for (std::size_t ky = 0; ky < 3; ++ky)
      for (std::size_t kx = 0; kx < 3; ++kx) {
        S* dst = cols.data() + (ic * 9 + ky * 3 + kx) * hw;
        for (std::size_t y = 0; y < h; ++y)
          std::memcpy(dst + y * w, in + ic * plane + (y + ky) * wp + kx, w * sizeof(S));
      }
}

Eigen::Index idx(std::size_t n) { return static_cast<Eigen::Index>(n); }
}  // namespace

template <class S>
void conv1d_forward_gemm(const S* in, std::size_t cin, std::size_t len, const S* w, const S* b, std::size_t cout,
                         std::size_t k, S* out, Buffer<S>& cols) {
  im2col1d(in, cin, len, k, cols);
  const auto K = idx(cin * k), L = idx(len), C = idx(cout);
  MapR<S> o(out, C, L);
  o.noalias() = CMapR<S>(w, C, K) * CMapR<S>(cols.data(), K, L);
  o.colwise() += CVec<S>(b, C);
}

template <class S>
void conv1d_backward_gemm(const Buffer<S>& cols, std::size_t cin, std::size_t len, const S* w, std::size_t cout,
                          std::size_t k, const S* dout, S* dw, S* db, S* din) {
  const auto K = idx(cin * k), L = idx(len), C = idx(cout);
  CMapR<S> g(dout, C, L);
  Vec<S>(db, C) += g.rowwise().sum();
  MapR<S>(dw, C, K).noalias() += g * CMapR<S>(cols.data(), K, L).transpose();
  if (!din) return;
  RowMat<S>& dcols = dcols_scratch<S>();
  dcols.noalias() = CMapR<S>(w, C, K).transpose() * g;
  const std::size_t lp = len + k - 1;
  for (std::size_t ic = 0; ic < cin; ++ic)
    for (std::size_t j = 0; j < k; ++j) {
      const S* src = dcols.data() + (ic * k + j) * len;
      S* d = din + ic * lp + j;
      for (std::size_t x = 0; x < len; ++x) d[x] += src[x];
    }
}

template <class S>
void conv2d3_forward_gemm(const S* in, std::size_t cin, std::size_t h, std::size_t w, const S* wt, const S* b,
                          std::size_t cout, S* out, Buffer<S>& cols) {
  im2col3x3(in, cin, h, w, cols);
  const auto K = idx(cin * 9), N = idx(h * w), C = idx(cout);
  MapR<S> o(out, C, N);
  o.noalias() = CMapR<S>(wt, C, K) * CMapR<S>(cols.data(), K, N);
  o.colwise() += CVec<S>(b, C);
}

template <class S>
void conv2d3_backward_gemm(const Buffer<S>& cols, std::size_t cin, std::size_t h, std::size_t w, const S* wt,
                           std::size_t cout, const S* dout, S* dwt, S* db, S* din) {
  const auto K = idx(cin * 9), N = idx(h * w), C = idx(cout);
  CMapR<S> g(dout, C, N);
  Vec<S>(db, C) += g.rowwise().sum();
  MapR<S>(dwt, C, K).noalias() += g * CMapR<S>(cols.data(), K, N).transpose();
  if (!din) return;
  RowMat<S>& dcols = dcols_scratch<S>();
  dcols.noalias() = CMapR<S>(wt, C, K).transpose() * g;
  const std::size_t wp = w + 2, plane = (h + 2) * wp, hw = h * w;
  for (std::size_t ic = 0; ic < cin; ++ic)
    for (std::size_t ky = 0; ky < 3; ++ky)
      for (std::size_t kx = 0; kx < 3; ++kx) {
        const S* src = dcols.data() + (ic * 9 + ky * 3 + kx) * hw;
        for (std::size_t y = 0; y < h; ++y) {
          S* d = din + ic * plane + (y + ky) * wp + kx;
          const S* s = src + y * w;
          for (std::size_t x = 0; x < w; ++x) d[x] += s[x];
        }
      }
}

void conv1d_forward(const double* in, std::size_t cin, std::size_t len, const double* w, const double* b,
                    std::size_t cout, std::size_t k, double* out) {
  const std::size_t lp = len + k - 1;
  for (std::size_t oc = 0; oc < cout; ++oc) {
    double* dst = out + oc * len;
    std::fill(dst, dst + len, b[oc]);
    for (std::size_t ic = 0; ic < cin; ++ic) {
      const double* src = in + ic * lp;
      const double* wk = w + (oc * cin + ic) * k;
      for (std::size_t j = 0; j < k; ++j) {
        const double wv = wk[j];
        const double* s = src + j;
        for (std::size_t x = 0; x < len; ++x) dst[x] += wv * s[x];
      }
    }
  }
}

void conv1d_backward(const double* in, std::size_t cin, std::size_t len, const double* w, std::size_t cout,
                     std::size_t k, const double* dout, double* dw, double* db, double* din) {
  const std::size_t lp = len + k - 1;
  for (std::size_t oc = 0; oc < cout; ++oc) {
    const double* g = dout + oc * len;
    double sb = 0.0;
    for (std::size_t x = 0; x < len; ++x) sb += g[x];
    db[oc] += sb;
    for (std::size_t ic = 0; ic < cin; ++ic) {
      const double* src = in + ic * lp;
      double* dwk = dw + (oc * cin + ic) * k;
      const double* wk = w + (oc * cin + ic) * k;
      for (std::size_t j = 0; j < k; ++j) {
        const double* s = src + j;
        double acc = 0.0;
        for (std::size_t x = 0; x < len; ++x) acc += g[x] * s[x];
        dwk[j] += acc;
        if (din) {
          double* d = din + ic * lp + j;
          const double wv = wk[j];
          for (std::size_t x = 0; x < len; ++x) d[x] += wv * g[x];
        }
      }
    }
  }
}

void conv2d3_forward(const double* in, std::size_t cin, std::size_t h, std::size_t w, const double* wt,
                     const double* b, std::size_t cout, double* out) {
  const std::size_t wp = w + 2;
  const std::size_t plane = (h + 2) * wp;
  for (std::size_t oc = 0; oc < cout; ++oc) {
    for (std::size_t y = 0; y < h; ++y) {
      double* dst = out + (oc * h + y) * w;
      std::fill(dst, dst + w, b[oc]);
      for (std::size_t ic = 0; ic < cin; ++ic) {
        const double* kern = wt + (oc * cin + ic) * 9;
        for (std::size_t ky = 0; ky < 3; ++ky) {
          const double* row = in + ic * plane + (y + ky) * wp;
          const double w0 = kern[ky * 3], w1 = kern[ky * 3 + 1], w2 = kern[ky * 3 + 2];
          for (std::size_t x = 0; x < w; ++x) dst[x] += w0 * row[x] + w1 * row[x + 1] + w2 * row[x + 2];
        }
      }
    }
  }
}

void conv2d3_backward(const double* in, std::size_t cin, std::size_t h, std::size_t w, const double* wt,
                      std::size_t cout, const double* dout, double* dwt, double* db, double* din) {
  const std::size_t wp = w + 2;
  const std::size_t plane = (h + 2) * wp;
  // Row-wise partial products are summed into acc and reduced once per tap.
  std::vector<double> acc(9 * w);
  for (std::size_t oc = 0; oc < cout; ++oc) {
    const double* g = dout + oc * h * w;
    double sb = 0.0;
    for (std::size_t i = 0; i < h * w; ++i) sb += g[i];
    db[oc] += sb;
    for (std::size_t ic = 0; ic < cin; ++ic) {
      const double* kern = wt + (oc * cin + ic) * 9;
      std::fill(acc.begin(), acc.end(), 0.0);
      for (std::size_t y = 0; y < h; ++y) {
        const double* gr = g + y * w;
        for (std::size_t ky = 0; ky < 3; ++ky) {
          const double* row = in + ic * plane + (y + ky) * wp;
          double* a0 = acc.data() + (ky * 3) * w;
          double* a1 = a0 + w;
          double* a2 = a1 + w;
          for (std::size_t x = 0; x < w; ++x) {
            a0[x] += gr[x] * row[x];
            a1[x] += gr[x] * row[x + 1];
            a2[x] += gr[x] * row[x + 2];
          }
          if (din) {
            double* drow = din + ic * plane + (y + ky) * wp;
            const double w0 = kern[ky * 3], w1 = kern[ky * 3 + 1], w2 = kern[ky * 3 + 2];
            for (std::size_t x = 0; x < w; ++x) {
              drow[x] += w0 * gr[x];
              drow[x + 1] += w1 * gr[x];
              drow[x + 2] += w2 * gr[x];
            }
          }
        }
      }
      double* dk = dwt + (oc * cin + ic) * 9;
      for (std::size_t t = 0; t < 9; ++t) {
        const double* a = acc.data() + t * w;
        double s = 0.0;
        for (std::size_t x = 0; x < w; ++x) s += a[x];
        dk[t] += s;
      }
    }
  }
}

template <class S>
void relu_inplace(S* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) x[i] = x[i] > S(0) ? x[i] : S(0);
}

template <class S>
void maxpool2_forward(const S* in, std::size_t c, std::size_t h, std::size_t w, S* out, std::size_t* arg) {
  const std::size_t ho = h / 2, wo = w / 2;
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < ho; ++y) {
      for (std::size_t x = 0; x < wo; ++x) {
        std::size_t best = (ch * h + 2 * y) * w + 2 * x;
        const std::size_t cand[3] = {best + 1, best + w, best + w + 1};
        for (std::size_t q : cand)
          if (in[q] > in[best]) best = q;
        const std::size_t o = (ch * ho + y) * wo + x;
        out[o] = in[best];
        arg[o] = best;
      }
    }
  }
}

template <class S>
void pad2d(const S* in, std::size_t c, std::size_t h, std::size_t w, std::size_t p, S* out) {
  const std::size_t wp = w + 2 * p, hp = h + 2 * p;
  std::fill(out, out + c * hp * wp, S(0));
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y)
      std::memcpy(out + (ch * hp + y + p) * wp + p, in + (ch * h + y) * w, w * sizeof(S));
}

template <class S>
void pad1d(const S* in, std::size_t c, std::size_t len, std::size_t p, S* out) {
  const std::size_t lp = len + 2 * p;
  std::fill(out, out + c * lp, S(0));
  for (std::size_t ch = 0; ch < c; ++ch) std::memcpy(out + ch * lp + p, in + ch * len, len * sizeof(S));
}

#define LBNP_LAYERS_INSTANTIATE(S)                                                                               \
  template void conv1d_forward_gemm<S>(const S*, std::size_t, std::size_t, const S*, const S*, std::size_t,     \
                                       std::size_t, S*, Buffer<S>&);                                      \
  template void conv1d_backward_gemm<S>(const Buffer<S>&, std::size_t, std::size_t, const S*, std::size_t, \
                                        std::size_t, const S*, S*, S*, S*);                                    \
  template void conv2d3_forward_gemm<S>(const S*, std::size_t, std::size_t, std::size_t, const S*, const S*,    \
                                        std::size_t, S*, Buffer<S>&);                                     \
  template void conv2d3_backward_gemm<S>(const Buffer<S>&, std::size_t, std::size_t, std::size_t,         \
                                         const S*, std::size_t, const S*, S*, S*, S*);                         \
  template void relu_inplace<S>(S*, std::size_t);                                                              \
  template void maxpool2_forward<S>(const S*, std::size_t, std::size_t, std::size_t, S*, std::size_t*);        \
  template void pad2d<S>(const S*, std::size_t, std::size_t, std::size_t, std::size_t, S*);                    \
  template void pad1d<S>(const S*, std::size_t, std::size_t, std::size_t, S*);

LBNP_LAYERS_INSTANTIATE(float)
LBNP_LAYERS_INSTANTIATE(double)

#undef LBNP_LAYERS_INSTANTIATE

}  // namespace lbnp::layers
