#pragma once

// Numeric kernels behind the autodiff ops: GEMM-backed convolution pieces,
// pooling, normalization statistics, and the Adam update. Everything is
// single-threaded and uses fixed accumulation order, so results are
// bit-reproducible run to run. Templated on the scalar so the same code runs
// in float for training and double for finite-difference gradient checks.

#include <Eigen/Core>
#include <cstring>

#include "udit/array.hpp"

namespace udit::kern {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapM = Eigen::Map<MatR<T>>;
template <typename T>
using MapC = Eigen::Map<const MatR<T>>;

// C[M,N] = alpha * A[M,K] * B[K,N] + beta * C. Packed row-major operands.
template <typename T>
void gemm_nn(int M, int N, int K, T alpha, const T* A, const T* B, T beta,
             T* C) {
  MapC<T> a(A, M, K), b(B, K, N);
  MapM<T> c(C, M, N);
  if (beta == T(0)) {
    c.noalias() = alpha * (a * b);
  } else {
    if (beta != T(1)) c *= beta;
    c.noalias() += alpha * (a * b);
  }
}

// C[M,N] = alpha * A[M,K] * B[N,K]^T + beta * C.
template <typename T>
void gemm_nt(int M, int N, int K, T alpha, const T* A, const T* B, T beta,
             T* C) {
  MapC<T> a(A, M, K), b(B, N, K);
  MapM<T> c(C, M, N);
  if (beta == T(0)) {
    c.noalias() = alpha * (a * b.transpose());
  } else {
    if (beta != T(1)) c *= beta;
    c.noalias() += alpha * (a * b.transpose());
  }
}

// C[M,N] = alpha * A[K,M]^T * B[K,N] + beta * C.
template <typename T>
void gemm_tn(int M, int N, int K, T alpha, const T* A, const T* B, T beta,
             T* C) {
  MapC<T> a(A, K, M), b(B, K, N);
  MapM<T> c(C, M, N);
  if (beta == T(0)) {
    c.noalias() = alpha * (a.transpose() * b);
  } else {
    if (beta != T(1)) c *= beta;
    c.noalias() += alpha * (a.transpose() * b);
  }
}

inline int conv_out_dim(int in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

// im2col for one image x[C,H,W] -> col[C*KH*KW, OH*OW].
template <typename T>
void im2col(const T* x, int C, int H, int W, int k, int stride, int pad,
            T* col) {
  int OH = conv_out_dim(H, k, stride, pad);
  int OW = conv_out_dim(W, k, stride, pad);
  for (int c = 0; c < C; ++c) {
    const T* plane = x + static_cast<int64_t>(c) * H * W;
    for (int kh = 0; kh < k; ++kh) {
      for (int kw = 0; kw < k; ++kw) {
        T* row = col + (static_cast<int64_t>(c) * k * k + kh * k + kw) *
                           (static_cast<int64_t>(OH) * OW);
        for (int oh = 0; oh < OH; ++oh, row += OW) {
          int ih = oh * stride - pad + kh;
          if (ih < 0 || ih >= H) {
            std::memset(row, 0, sizeof(T) * static_cast<size_t>(OW));
            continue;
          }
          const T* src = plane + static_cast<int64_t>(ih) * W;
          if (stride == 1) {
            // iw = ow - pad + kw: one contiguous valid span.
            int lo = std::max(0, pad - kw);
            int hi = std::min(OW, W + pad - kw);
            if (lo > 0) std::memset(row, 0, sizeof(T) * size_t(lo));
            if (hi > lo)
              std::memcpy(row + lo, src + lo - pad + kw,
                          sizeof(T) * size_t(hi - lo));
            if (hi < OW)
              std::memset(row + std::max(hi, 0), 0,
                          sizeof(T) * size_t(OW - std::max(hi, 0)));
          } else {
            for (int ow = 0; ow < OW; ++ow) {
              int iw = ow * stride - pad + kw;
              row[ow] = (iw >= 0 && iw < W) ? src[iw] : T(0);
            }
          }
        }
      }
    }
  }
}

// Transpose of im2col: accumulates col[C*KH*KW, OH*OW] back into x[C,H,W].
// x must be zeroed by the caller first.
template <typename T>
void col2im_acc(const T* col, int C, int H, int W, int k, int stride, int pad,
                T* x) {
  int OH = conv_out_dim(H, k, stride, pad);
  int OW = conv_out_dim(W, k, stride, pad);
  for (int c = 0; c < C; ++c) {
    T* plane = x + static_cast<int64_t>(c) * H * W;
    for (int kh = 0; kh < k; ++kh) {
      for (int kw = 0; kw < k; ++kw) {
        const T* row = col + (static_cast<int64_t>(c) * k * k + kh * k + kw) *
                                 (static_cast<int64_t>(OH) * OW);
        for (int oh = 0; oh < OH; ++oh, row += OW) {
          int ih = oh * stride - pad + kh;
          if (ih < 0 || ih >= H) continue;
          T* dst = plane + static_cast<int64_t>(ih) * W;
          for (int ow = 0; ow < OW; ++ow) {
            int iw = ow * stride - pad + kw;
            if (iw >= 0 && iw < W) dst[iw] += row[ow];
          }
        }
      }
    }
  }
}

// 2x2 stride-2 max pooling over one NCHW tensor; even H and W required.
// idx records the argmax as an offset within each (n, c) plane; ties go to
// the first maximum in row-major scan order.
template <typename T>
void maxpool2x2(const T* x, int N, int C, int H, int W, T* y, int32_t* idx) {
  int OH = H / 2, OW = W / 2;
  for (int64_t nc = 0; nc < static_cast<int64_t>(N) * C; ++nc) {
    const T* plane = x + nc * H * W;
    T* out = y + nc * OH * OW;
    int32_t* oidx = idx + nc * OH * OW;
    for (int oh = 0; oh < OH; ++oh) {
      for (int ow = 0; ow < OW; ++ow) {
        int ih = 2 * oh, iw = 2 * ow;
        int32_t best = ih * W + iw;
        T best_v = plane[best];
        const int32_t cand[3] = {ih * W + iw + 1, (ih + 1) * W + iw,
                                 (ih + 1) * W + iw + 1};
        for (int32_t c2 : cand) {
          if (plane[c2] > best_v) {
            best_v = plane[c2];
            best = c2;
          }
        }
        out[oh * OW + ow] = best_v;
        oidx[oh * OW + ow] = best;
      }
    }
  }
}

template <typename T>
void maxpool2x2_bwd(const T* dy, const int32_t* idx, int N, int C, int OH,
                    int OW, int H, int W, T* dx) {
  for (int64_t nc = 0; nc < static_cast<int64_t>(N) * C; ++nc) {
    const T* g = dy + nc * OH * OW;
    const int32_t* oidx = idx + nc * OH * OW;
    T* dst = dx + nc * H * W;
    for (int64_t o = 0; o < static_cast<int64_t>(OH) * OW; ++o)
      dst[oidx[o]] += g[o];
  }
}

// Index-guided 2x unpooling: scatters each input value to its recorded
// argmax position; all other positions stay zero. y must be zeroed.
template <typename T>
void unpool2x2(const T* x, const int32_t* idx, int N, int C, int H, int W,
               T* y) {
  // x is [N,C,H,W]; y is [N,C,2H,2W]; idx holds offsets within y planes.
  for (int64_t nc = 0; nc < static_cast<int64_t>(N) * C; ++nc) {
    const T* src = x + nc * H * W;
    const int32_t* oidx = idx + nc * H * W;
    T* dst = y + nc * 4 * H * W;
    for (int64_t o = 0; o < static_cast<int64_t>(H) * W; ++o)
      dst[oidx[o]] = src[o];
  }
}

template <typename T>
void unpool2x2_bwd(const T* dy, const int32_t* idx, int N, int C, int H, int W,
                   T* dx) {
  for (int64_t nc = 0; nc < static_cast<int64_t>(N) * C; ++nc) {
    const T* g = dy + nc * 4 * H * W;
    const int32_t* oidx = idx + nc * H * W;
    T* dst = dx + nc * H * W;
    for (int64_t o = 0; o < static_cast<int64_t>(H) * W; ++o)
      dst[o] += g[oidx[o]];
  }
}

template <typename T>
void upsample2_nearest(const T* x, int N, int C, int H, int W, T* y) {
  for (int64_t nc = 0; nc < static_cast<int64_t>(N) * C; ++nc) {
    const T* src = x + nc * H * W;
    T* dst = y + nc * 4 * H * W;
    for (int ih = 0; ih < H; ++ih) {
      for (int iw = 0; iw < W; ++iw) {
        T v = src[ih * W + iw];
        T* d = dst + (2 * ih) * (2 * W) + 2 * iw;
        d[0] = v;
        d[1] = v;
        d[2 * W] = v;
        d[2 * W + 1] = v;
      }
    }
  }
}

template <typename T>
void upsample2_nearest_bwd(const T* dy, int N, int C, int H, int W, T* dx) {
  for (int64_t nc = 0; nc < static_cast<int64_t>(N) * C; ++nc) {
    const T* g = dy + nc * 4 * H * W;
    T* dst = dx + nc * H * W;
    for (int ih = 0; ih < H; ++ih) {
      for (int iw = 0; iw < W; ++iw) {
        const T* s = g + (2 * ih) * (2 * W) + 2 * iw;
        dst[ih * W + iw] += s[0] + s[1] + s[2 * W] + s[2 * W + 1];
      }
    }
  }
}

template <typename T>
void avgpool2x2(const T* x, int N, int C, int H, int W, T* y) {
  int OH = H / 2, OW = W / 2;
  for (int64_t nc = 0; nc < static_cast<int64_t>(N) * C; ++nc) {
    const T* plane = x + nc * H * W;
    T* out = y + nc * OH * OW;
    for (int oh = 0; oh < OH; ++oh) {
      for (int ow = 0; ow < OW; ++ow) {
        const T* s = plane + (2 * oh) * W + 2 * ow;
        out[oh * OW + ow] = (s[0] + s[1] + s[W] + s[W + 1]) * T(0.25);
      }
    }
  }
}

template <typename T>
void avgpool2x2_bwd(const T* dy, int N, int C, int OH, int OW, T* dx) {
  int H = 2 * OH, W = 2 * OW;
  for (int64_t nc = 0; nc < static_cast<int64_t>(N) * C; ++nc) {
    const T* g = dy + nc * OH * OW;
    T* dst = dx + nc * H * W;
    for (int oh = 0; oh < OH; ++oh) {
      for (int ow = 0; ow < OW; ++ow) {
        T v = g[oh * OW + ow] * T(0.25);
        T* d = dst + (2 * oh) * W + 2 * ow;
        d[0] += v;
        d[1] += v;
        d[W] += v;
        d[W + 1] += v;
      }
    }
  }
}

// Per-(n, c) mean and inverse standard deviation with biased variance, used
// by instance normalization and adaptive instance normalization. Statistics
// accumulate in double for accuracy regardless of T.
template <typename T>
void instnorm_stats(const T* x, int N, int C, int HW, T eps, T* mean,
                    T* invstd) {
  for (int64_t nc = 0; nc < static_cast<int64_t>(N) * C; ++nc) {
    const T* p = x + nc * HW;
    double s = 0.0;
    for (int i = 0; i < HW; ++i) s += static_cast<double>(p[i]);
    double mu = s / HW;
    double q = 0.0;
    for (int i = 0; i < HW; ++i) {
      double d = static_cast<double>(p[i]) - mu;
      q += d * d;
    }
    mean[nc] = static_cast<T>(mu);
    invstd[nc] = static_cast<T>(
        1.0 / std::sqrt(q / HW + static_cast<double>(eps)));
  }
}

template <typename T>
void adam_step(T* p, const T* g, T* m, T* v, int64_t n, T lr, T beta1, T beta2,
               T eps, int64_t t) {
  T bc1 = T(1) - static_cast<T>(std::pow(static_cast<double>(beta1),
                                         static_cast<double>(t)));
  T bc2 = T(1) - static_cast<T>(std::pow(static_cast<double>(beta2),
                                         static_cast<double>(t)));
  for (int64_t i = 0; i < n; ++i) {
    m[i] = beta1 * m[i] + (T(1) - beta1) * g[i];
    v[i] = beta2 * v[i] + (T(1) - beta2) * g[i] * g[i];
    T mhat = m[i] / bc1;
    T vhat = v[i] / bc2;
    p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

}  // namespace udit::kern
