#pragma once

#include <cstddef>

#ifdef _OPENMP
#include <omp.h>
#endif

// Dense inner loops behind the autodiff ops. Every kernel exists twice:
// kern::serial::* is the plain reference used by tests and the benchmark,
// kern::* dispatches to an OpenMP version when the work is large enough.
// Parallelism is always over independent output cells with a fixed
// reduction order per cell, so both paths produce bit-identical results
// at any thread count.

namespace emi::kern {

// Work below this many multiply-adds stays on the calling thread.
inline constexpr std::size_t parallel_grain = std::size_t(1) << 15;

namespace serial {

// c[m x n] = a[m x k] * b[k x n]
template <class S>
void matmul(const S* a, const S* b, S* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    S* ci = c + std::size_t(i) * n;
    for (int j = 0; j < n; ++j) ci[j] = S(0);
    const S* ai = a + std::size_t(i) * k;
    for (int p = 0; p < k; ++p) {
      const S aip = ai[p];
      const S* bp = b + std::size_t(p) * n;
      for (int j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

// ga[m x k] += g[m x n] * b^T   (b is [k x n])
template <class S>
void matmul_acc_gbt(const S* g, const S* b, S* ga, int m, int n, int k) {
  for (int i = 0; i < m; ++i) {
    const S* gi = g + std::size_t(i) * n;
    S* gai = ga + std::size_t(i) * k;
    for (int p = 0; p < k; ++p) {
      const S* bp = b + std::size_t(p) * n;
      S s = S(0);
      for (int j = 0; j < n; ++j) s += gi[j] * bp[j];
      gai[p] += s;
    }
  }
}

// gb[k x n] += a^T * g   (a is [m x k], g is [m x n])
template <class S>
void matmul_acc_atg(const S* a, const S* g, S* gb, int m, int k, int n) {
  for (int p = 0; p < k; ++p) {
    S* gbp = gb + std::size_t(p) * n;
    for (int i = 0; i < m; ++i) {
      const S aip = a[std::size_t(i) * k + p];
      const S* gi = g + std::size_t(i) * n;
      for (int j = 0; j < n; ++j) gbp[j] += aip * gi[j];
    }
  }
}

// y[T x dout] = b + w (*) x, left-padded causal conv.
// w is [dout x din x kk]; tap j looks back (kk-1-j)*dil steps.
template <class S>
void conv1d_causal(const S* x, const S* w, const S* b, S* y, int T, int din,
                   int dout, int kk, int dil) {
  for (int t = 0; t < T; ++t) {
    S* yt = y + std::size_t(t) * dout;
    for (int o = 0; o < dout; ++o) {
      const S* wo = w + std::size_t(o) * din * kk;
      S s = b[o];
      for (int j = 0; j < kk; ++j) {
        const int src = t - (kk - 1 - j) * dil;
        if (src < 0) continue;
        const S* xs = x + std::size_t(src) * din;
        for (int i = 0; i < din; ++i) s += wo[std::size_t(i) * kk + j] * xs[i];
      }
      yt[o] = s;
    }
  }
}

// dx[T x din] += conv backward wrt input.
template <class S>
void conv1d_acc_dx(const S* gy, const S* w, S* dx, int T, int din, int dout,
                   int kk, int dil) {
  for (int s = 0; s < T; ++s) {
    S* dxs = dx + std::size_t(s) * din;
    for (int j = 0; j < kk; ++j) {
      const int t = s + (kk - 1 - j) * dil;
      if (t >= T) continue;
      const S* gt = gy + std::size_t(t) * dout;
      for (int o = 0; o < dout; ++o) {
        const S go = gt[o];
        const S* wo = w + std::size_t(o) * din * kk;
        for (int i = 0; i < din; ++i) dxs[i] += go * wo[std::size_t(i) * kk + j];
      }
    }
  }
}

// dw[dout x din x kk] += ..., db[dout] += column sums of gy.
template <class S>
void conv1d_acc_dwdb(const S* gy, const S* x, S* dw, S* db, int T, int din,
                     int dout, int kk, int dil) {
  for (int o = 0; o < dout; ++o) {
    S* dwo = dw + std::size_t(o) * din * kk;
    S bs = S(0);
    for (int t = 0; t < T; ++t) {
      const S go = gy[std::size_t(t) * dout + o];
      bs += go;
      for (int j = 0; j < kk; ++j) {
        const int src = t - (kk - 1 - j) * dil;
        if (src < 0) continue;
        const S* xs = x + std::size_t(src) * din;
        for (int i = 0; i < din; ++i) dwo[std::size_t(i) * kk + j] += go * xs[i];
      }
    }
    db[o] += bs;
  }
}

}  // namespace serial

template <class S>
void matmul(const S* a, const S* b, S* c, int m, int k, int n) {
#ifdef _OPENMP
  if (std::size_t(m) * k * n >= parallel_grain) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
      S* ci = c + std::size_t(i) * n;
      for (int j = 0; j < n; ++j) ci[j] = S(0);
      const S* ai = a + std::size_t(i) * k;
      for (int p = 0; p < k; ++p) {
        const S aip = ai[p];
        const S* bp = b + std::size_t(p) * n;
        for (int j = 0; j < n; ++j) ci[j] += aip * bp[j];
      }
    }
    return;
  }
#endif
  serial::matmul(a, b, c, m, k, n);
}

template <class S>
void matmul_acc_gbt(const S* g, const S* b, S* ga, int m, int n, int k) {
#ifdef _OPENMP
  if (std::size_t(m) * n * k >= parallel_grain) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
      const S* gi = g + std::size_t(i) * n;
      S* gai = ga + std::size_t(i) * k;
      for (int p = 0; p < k; ++p) {
        const S* bp = b + std::size_t(p) * n;
        S s = S(0);
        for (int j = 0; j < n; ++j) s += gi[j] * bp[j];
        gai[p] += s;
      }
    }
    return;
  }
#endif
  serial::matmul_acc_gbt(g, b, ga, m, n, k);
}

template <class S>
void matmul_acc_atg(const S* a, const S* g, S* gb, int m, int k, int n) {
#ifdef _OPENMP
  if (std::size_t(m) * k * n >= parallel_grain) {
#pragma omp parallel for schedule(static)
    for (int p = 0; p < k; ++p) {
      S* gbp = gb + std::size_t(p) * n;
      for (int i = 0; i < m; ++i) {
        const S aip = a[std::size_t(i) * k + p];
        const S* gi = g + std::size_t(i) * n;
        for (int j = 0; j < n; ++j) gbp[j] += aip * gi[j];
      }
    }
    return;
  }
#endif
  serial::matmul_acc_atg(a, g, gb, m, k, n);
}

template <class S>
void conv1d_causal(const S* x, const S* w, const S* b, S* y, int T, int din,
                   int dout, int kk, int dil) {
#ifdef _OPENMP
  if (std::size_t(T) * din * dout * kk >= parallel_grain) {
#pragma omp parallel for schedule(static)
    for (int t = 0; t < T; ++t) {
      S* yt = y + std::size_t(t) * dout;
      for (int o = 0; o < dout; ++o) {
        const S* wo = w + std::size_t(o) * din * kk;
        S s = b[o];
        for (int j = 0; j < kk; ++j) {
          const int src = t - (kk - 1 - j) * dil;
          if (src < 0) continue;
          const S* xs = x + std::size_t(src) * din;
          for (int i = 0; i < din; ++i) s += wo[std::size_t(i) * kk + j] * xs[i];
        }
        yt[o] = s;
      }
    }
    return;
  }
#endif
  serial::conv1d_causal(x, w, b, y, T, din, dout, kk, dil);
}

template <class S>
void conv1d_acc_dx(const S* gy, const S* w, S* dx, int T, int din, int dout,
                   int kk, int dil) {
#ifdef _OPENMP
  if (std::size_t(T) * din * dout * kk >= parallel_grain) {
#pragma omp parallel for schedule(static)
    for (int s = 0; s < T; ++s) {
      S* dxs = dx + std::size_t(s) * din;
      for (int j = 0; j < kk; ++j) {
        const int t = s + (kk - 1 - j) * dil;
        if (t >= T) continue;
        const S* gt = gy + std::size_t(t) * dout;
        for (int o = 0; o < dout; ++o) {
          const S go = gt[o];
          const S* wo = w + std::size_t(o) * din * kk;
          for (int i = 0; i < din; ++i)
            dxs[i] += go * wo[std::size_t(i) * kk + j];
        }
      }
    }
    return;
  }
#endif
  serial::conv1d_acc_dx(gy, w, dx, T, din, dout, kk, dil);
}

template <class S>
void conv1d_acc_dwdb(const S* gy, const S* x, S* dw, S* db, int T, int din,
                     int dout, int kk, int dil) {
#ifdef _OPENMP
  if (std::size_t(T) * din * dout * kk >= parallel_grain) {
#pragma omp parallel for schedule(static)
    for (int o = 0; o < dout; ++o) {
      S* dwo = dw + std::size_t(o) * din * kk;
      S bs = S(0);
      for (int t = 0; t < T; ++t) {
        const S go = gy[std::size_t(t) * dout + o];
        bs += go;
        for (int j = 0; j < kk; ++j) {
          const int src = t - (kk - 1 - j) * dil;
          if (src < 0) continue;
          const S* xs = x + std::size_t(src) * din;
          for (int i = 0; i < din; ++i)
            dwo[std::size_t(i) * kk + j] += go * xs[i];
        }
      }
      db[o] += bs;
    }
    return;
  }
#endif
  serial::conv1d_acc_dwdb(gy, x, dw, db, T, din, dout, kk, dil);
}

}  // namespace emi::kern
