// SPDX-License-Identifier: Apache-2.0
#pragma once

// Raw channels-last kernels. Forward kernels overwrite their output; backward
// kernels accumulate into whichever gradient buffers are non-null. Every
// output element is produced by one fixed-order serial loop, so results are
// bit-reproducible.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

namespace slimconv {

/// Multiply-accumulate counter bumped by every convolution/linear kernel.
inline std::uint64_t& mac_counter() {
  thread_local std::uint64_t count = 0;
  return count;
}

class ScopedMacCount {
 public:
  ScopedMacCount() : start_(mac_counter()) {}
  std::uint64_t count() const { return mac_counter() - start_; }

 private:
  std::uint64_t start_;
};

namespace kernels {

// out[r, co] = b[co] + sum_ci x[r, ci] * w[ci, co]
template <typename T>
void pointwise_forward(const T* x, std::size_t rows, std::size_t cin, const T* w,
                       std::size_t cout, const T* b, T* out) {
  for (std::size_t r = 0; r < rows; ++r) {
    T* o = out + r * cout;
    for (std::size_t co = 0; co < cout; ++co) o[co] = b ? b[co] : T{0};
    const T* xr = x + r * cin;
    for (std::size_t ci = 0; ci < cin; ++ci) {
      const T xv = xr[ci];
      const T* wr = w + ci * cout;
      for (std::size_t co = 0; co < cout; ++co) o[co] += xv * wr[co];
    }
  }
  mac_counter() += static_cast<std::uint64_t>(rows) * cin * cout;
}

template <typename T>
void pointwise_backward(const T* x, std::size_t rows, std::size_t cin, const T* w,
                        std::size_t cout, const T* dy, T* dx, T* dw, T* db) {
  if (dx) {
    std::vector<T> wt(cin * cout);
    for (std::size_t ci = 0; ci < cin; ++ci)
      for (std::size_t co = 0; co < cout; ++co) wt[co * cin + ci] = w[ci * cout + co];
    for (std::size_t r = 0; r < rows; ++r) {
      T* dxr = dx + r * cin;
      const T* dyr = dy + r * cout;
      for (std::size_t co = 0; co < cout; ++co) {
        const T g = dyr[co];
        const T* wr = wt.data() + co * cin;
        for (std::size_t ci = 0; ci < cin; ++ci) dxr[ci] += g * wr[ci];
      }
    }
  }
  if (dw) {
    for (std::size_t r = 0; r < rows; ++r) {
      const T* xr = x + r * cin;
      const T* dyr = dy + r * cout;
      for (std::size_t ci = 0; ci < cin; ++ci) {
        const T xv = xr[ci];
        T* dwr = dw + ci * cout;
        for (std::size_t co = 0; co < cout; ++co) dwr[co] += xv * dyr[co];
      }
    }
  }
  if (db) {
    for (std::size_t r = 0; r < rows; ++r) {
      const T* dyr = dy + r * cout;
      for (std::size_t co = 0; co < cout; ++co) db[co] += dyr[co];
    }
  }
}

// Depthwise k x k convolution with zero padding k/2, weights laid out (k, k, C).
template <typename T>
void depthwise_forward(const T* x, std::size_t n, std::size_t h, std::size_t w, std::size_t c,
                       const T* wt, std::size_t k, const T* b, T* out) {
  const long pad = static_cast<long>(k / 2);
  const long hl = static_cast<long>(h), wl = static_cast<long>(w), kl = static_cast<long>(k);
  for (std::size_t in = 0; in < n; ++in) {
    const T* xn = x + in * h * w * c;
    for (long oy = 0; oy < hl; ++oy) {
      for (long ox = 0; ox < wl; ++ox) {
        T* o = out + ((in * h + oy) * w + ox) * c;
        for (std::size_t ch = 0; ch < c; ++ch) o[ch] = b ? b[ch] : T{0};
        for (long ky = 0; ky < kl; ++ky) {
          const long iy = oy + ky - pad;
          if (iy < 0 || iy >= hl) continue;
          for (long kx = 0; kx < kl; ++kx) {
            const long ix = ox + kx - pad;
            if (ix < 0 || ix >= wl) continue;
            const T* xp = xn + (iy * wl + ix) * c;
            const T* wp = wt + (ky * kl + kx) * c;
            for (std::size_t ch = 0; ch < c; ++ch) o[ch] += xp[ch] * wp[ch];
          }
        }
      }
    }
  }
  mac_counter() += static_cast<std::uint64_t>(n) * h * w * c * k * k;
}

template <typename T>
void depthwise_backward(const T* x, std::size_t n, std::size_t h, std::size_t w, std::size_t c,
                        const T* wt, std::size_t k, const T* dy, T* dx, T* dw, T* db) {
  const long pad = static_cast<long>(k / 2);
  const long hl = static_cast<long>(h), wl = static_cast<long>(w), kl = static_cast<long>(k);
  for (std::size_t in = 0; in < n; ++in) {
    const T* xn = x + in * h * w * c;
    T* dxn = dx ? dx + in * h * w * c : nullptr;
    for (long oy = 0; oy < hl; ++oy) {
      for (long ox = 0; ox < wl; ++ox) {
        const T* g = dy + ((in * h + oy) * w + ox) * c;
        if (db)
          for (std::size_t ch = 0; ch < c; ++ch) db[ch] += g[ch];
        for (long ky = 0; ky < kl; ++ky) {
          const long iy = oy + ky - pad;
          if (iy < 0 || iy >= hl) continue;
          for (long kx = 0; kx < kl; ++kx) {
            const long ix = ox + kx - pad;
            if (ix < 0 || ix >= wl) continue;
            const std::size_t xoff = (iy * wl + ix) * c;
            const std::size_t woff = (ky * kl + kx) * c;
            if (dxn) {
              T* dxp = dxn + xoff;
              const T* wp = wt + woff;
              for (std::size_t ch = 0; ch < c; ++ch) dxp[ch] += g[ch] * wp[ch];
            }
            if (dw) {
              const T* xp = xn + xoff;
              T* dwp = dw + woff;
              for (std::size_t ch = 0; ch < c; ++ch) dwp[ch] += g[ch] * xp[ch];
            }
          }
        }
      }
    }
  }
}

// Non-overlapping patch projection (kernel == stride), weights (k, k, Cin, Cout).
template <typename T>
void patchify_forward(const T* x, std::size_t n, std::size_t h, std::size_t w, std::size_t cin,
                      const T* wt, std::size_t k, std::size_t cout, const T* b, T* out) {
  const std::size_t oh = h / k, ow = w / k;
  for (std::size_t in = 0; in < n; ++in) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        T* o = out + ((in * oh + oy) * ow + ox) * cout;
        for (std::size_t co = 0; co < cout; ++co) o[co] = b ? b[co] : T{0};
        for (std::size_t ky = 0; ky < k; ++ky) {
          for (std::size_t kx = 0; kx < k; ++kx) {
            const T* xp = x + ((in * h + oy * k + ky) * w + ox * k + kx) * cin;
            const T* wp = wt + (ky * k + kx) * cin * cout;
            for (std::size_t ci = 0; ci < cin; ++ci) {
              const T xv = xp[ci];
              const T* wr = wp + ci * cout;
              for (std::size_t co = 0; co < cout; ++co) o[co] += xv * wr[co];
            }
          }
        }
      }
    }
  }
  mac_counter() += static_cast<std::uint64_t>(n) * oh * ow * k * k * cin * cout;
}

template <typename T>
void patchify_backward(const T* x, std::size_t n, std::size_t h, std::size_t w, std::size_t cin,
                       const T* wt, std::size_t k, std::size_t cout, const T* dy, T* dx, T* dw,
                       T* db) {
  const std::size_t oh = h / k, ow = w / k;
  std::vector<T> wtt;
  if (dx) {
    // (k, k, Cout, Cin) so the dx accumulation runs over a contiguous row.
    wtt.resize(k * k * cin * cout);
    for (std::size_t p = 0; p < k * k; ++p)
      for (std::size_t ci = 0; ci < cin; ++ci)
        for (std::size_t co = 0; co < cout; ++co)
          wtt[(p * cout + co) * cin + ci] = wt[(p * cin + ci) * cout + co];
  }
  for (std::size_t in = 0; in < n; ++in) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const T* g = dy + ((in * oh + oy) * ow + ox) * cout;
        if (db)
          for (std::size_t co = 0; co < cout; ++co) db[co] += g[co];
        for (std::size_t ky = 0; ky < k; ++ky) {
          for (std::size_t kx = 0; kx < k; ++kx) {
            const std::size_t xoff = ((in * h + oy * k + ky) * w + ox * k + kx) * cin;
            const std::size_t p = ky * k + kx;
            if (dx) {
              T* dxp = dx + xoff;
              for (std::size_t co = 0; co < cout; ++co) {
                const T gv = g[co];
                const T* wr = wtt.data() + (p * cout + co) * cin;
                for (std::size_t ci = 0; ci < cin; ++ci) dxp[ci] += gv * wr[ci];
              }
            }
            if (dw) {
              const T* xp = x + xoff;
              T* dwp = dw + p * cin * cout;
              for (std::size_t ci = 0; ci < cin; ++ci) {
                const T xv = xp[ci];
                T* dwr = dwp + ci * cout;
                for (std::size_t co = 0; co < cout; ++co) dwr[co] += xv * g[co];
              }
            }
          }
        }
      }
    }
  }
}

// Normalizes each row of length c with biased variance. xhat and rstd are
// saved for the backward pass.
template <typename T>
void layer_norm_forward(const T* x, std::size_t rows, std::size_t c, const T* gamma,
                        const T* beta, T eps, T* out, T* xhat, T* rstd) {
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x + r * c;
    T mean{0};
    for (std::size_t i = 0; i < c; ++i) mean += xr[i];
    mean /= static_cast<T>(c);
    T var{0};
    for (std::size_t i = 0; i < c; ++i) {
      const T d = xr[i] - mean;
      var += d * d;
    }
    var /= static_cast<T>(c);
    const T rs = T{1} / std::sqrt(var + eps);
    rstd[r] = rs;
    T* xh = xhat + r * c;
    T* o = out + r * c;
    for (std::size_t i = 0; i < c; ++i) {
      xh[i] = (xr[i] - mean) * rs;
      o[i] = gamma[i] * xh[i] + beta[i];
    }
  }
}

template <typename T>
void layer_norm_backward(const T* dy, const T* xhat, const T* rstd, std::size_t rows,
                         std::size_t c, const T* gamma, T* dx, T* dgamma, T* dbeta) {
  const T inv_c = T{1} / static_cast<T>(c);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* g = dy + r * c;
    const T* xh = xhat + r * c;
    if (dgamma)
      for (std::size_t i = 0; i < c; ++i) dgamma[i] += g[i] * xh[i];
    if (dbeta)
      for (std::size_t i = 0; i < c; ++i) dbeta[i] += g[i];
    if (dx) {
      T sum_d{0}, sum_dx{0};
      for (std::size_t i = 0; i < c; ++i) {
        const T d = g[i] * gamma[i];
        sum_d += d;
        sum_dx += d * xh[i];
      }
      const T mean_d = sum_d * inv_c, mean_dx = sum_dx * inv_c;
      T* dxr = dx + r * c;
      for (std::size_t i = 0; i < c; ++i)
        dxr[i] += rstd[r] * (g[i] * gamma[i] - mean_d - xh[i] * mean_dx);
    }
  }
}

// Exact GELU, x * Phi(x).
template <typename T>
T gelu(T x) {
  return T{0.5} * x * (T{1} + std::erf(x * T{0.70710678118654752440}));
}

template <typename T>
T gelu_grad(T x) {
  const T cdf = T{0.5} * (T{1} + std::erf(x * T{0.70710678118654752440}));
  const T pdf = T{0.39894228040143267794} * std::exp(T{-0.5} * x * x);
  return cdf + x * pdf;
}

}  // namespace kernels
}  // namespace slimconv
